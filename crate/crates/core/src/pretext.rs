//! Transformation-recognition network: a shared 1D conv trunk with one
//! sigmoid head per transformation, trained one-vs-all.

use std::io::Write;

use crate::dataset::PretextDataset;
use crate::error::{Error, Result};
use crate::nn::loss;
use crate::metrics::{binary_score, BinaryScore};
use crate::nn::init::{conv_params, dense_params};
use crate::nn::layers::{pooled_len, sigmoid_scalar};
use crate::nn::{
    Adam, AdamConfig, Checkpoint, Conv1d, Dense, Dropout, GlobalMaxPool, MaxPool1d, Mode, Relu, Scalar, Tensor,
};
use crate::rng::{self, StreamRng};
use crate::signal::SEGMENT_LEN;
use crate::transforms::TransformId;

/// Loss coefficient of the negation and temporal-inversion heads.
pub const FAST_HEAD_ALPHA: f64 = 0.0125;
/// Loss coefficient of the other five heads.
pub const HEAD_ALPHA: f64 = 0.195;
pub const HEAD_HIDDEN: usize = 128;
pub const HEAD_DROPOUT: f64 = 0.6;
pub const DEFAULT_BATCH: usize = 128;

pub fn default_alpha(id: TransformId) -> f64 {
    match id {
        TransformId::Negation | TransformId::TemporalInversion => FAST_HEAD_ALPHA,
        _ => HEAD_ALPHA,
    }
}

/// One conv-block: two same-padded convolutions with ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub kernel: usize,
    pub filters: usize,
}

/// Trunk geometry. Blocks are separated by max-pooling; the last block is
/// followed by global max-pooling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrunkConfig {
    pub input_len: usize,
    pub blocks: Vec<BlockSpec>,
    pub pool_size: usize,
    pub pool_stride: usize,
}

impl TrunkConfig {
    pub fn standard() -> Self {
        Self {
            input_len: SEGMENT_LEN,
            blocks: vec![
                BlockSpec { kernel: 32, filters: 32 },
                BlockSpec { kernel: 16, filters: 64 },
                BlockSpec { kernel: 8, filters: 128 },
            ],
            pool_size: 8,
            pool_stride: 2,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.filters)
    }

    /// `(length, channels)` after the input, every conv-block output and each
    /// pooling step, ending with the pooled embedding as `(1, channels)`.
    pub fn shape_trace(&self) -> Result<Vec<(usize, usize)>> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidParameter("trunk needs at least one block".into()));
        }
        let mut trace = vec![(self.input_len, 1)];
        let mut len = self.input_len;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.kernel == 0 || b.filters == 0 {
                return Err(Error::InvalidParameter(format!("block {} has a zero kernel or filter count", i + 1)));
            }
            trace.push((len, b.filters));
            if i + 1 < self.blocks.len() {
                len = pooled_len(len, self.pool_size, self.pool_stride).ok_or_else(|| {
                    Error::InvalidParameter(format!("input of {} samples too short for the trunk", self.input_len))
                })?;
                trace.push((len, b.filters));
            }
        }
        trace.push((1, self.embedding_dim()));
        Ok(trace)
    }
}

struct Block<T: Scalar> {
    convs: [Conv1d<T>; 2],
    relus: [Relu<T>; 2],
}

/// Shared convolutional feature extractor.
pub struct Trunk<T: Scalar> {
    config: TrunkConfig,
    blocks: Vec<Block<T>>,
    pools: Vec<MaxPool1d>,
    global: GlobalMaxPool,
    trainable: bool,
}

fn conv_name(block: usize, conv: usize) -> String {
    format!("trunk.block{}.conv{}", block + 1, conv + 1)
}

impl<T: Scalar> Trunk<T> {
    pub fn new(config: TrunkConfig, rng: &mut StreamRng) -> Result<Self> {
        config.shape_trace()?;
        let mut cin = 1;
        let mut blocks = Vec::new();
        for b in &config.blocks {
            let c1 = Conv1d::new(conv_params(b.kernel, cin, b.filters, rng))?;
            let c2 = Conv1d::new(conv_params(b.kernel, b.filters, b.filters, rng))?;
            blocks.push(Block { convs: [c1, c2], relus: [Relu::new(), Relu::new()] });
            cin = b.filters;
        }
        Ok(Self::assemble(config, blocks, true))
    }

    fn assemble(config: TrunkConfig, blocks: Vec<Block<T>>, trainable: bool) -> Self {
        let pools = (1..blocks.len()).map(|_| MaxPool1d::new(config.pool_size, config.pool_stride)).collect();
        Self { config, blocks, pools, global: GlobalMaxPool::new(), trainable }
    }

    /// Load trunk weights, checking every shape against `config`.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: TrunkConfig, trainable: bool) -> Result<Self> {
        config.shape_trace()?;
        let mut cin = 1;
        let mut blocks = Vec::new();
        for (bi, b) in config.blocks.iter().enumerate() {
            let load = |ci: usize, cin: usize| -> Result<Conv1d<T>> {
                Conv1d::new(ckpt.layer(&conv_name(bi, ci), &[b.kernel, cin, b.filters], trainable)?)
            };
            let c1 = load(0, cin)?;
            let c2 = load(1, b.filters)?;
            blocks.push(Block { convs: [c1, c2], relus: [Relu::new(), Relu::new()] });
            cin = b.filters;
        }
        let extra = ckpt
            .entries
            .iter()
            .filter(|e| e.name.starts_with("trunk.block"))
            .filter(|e| {
                !(0..config.blocks.len()).any(|bi| (0..2).any(|ci| e.name.starts_with(&format!("{}.", conv_name(bi, ci)))))
            })
            .map(|e| e.name.clone())
            .collect::<Vec<_>>();
        if !extra.is_empty() {
            return Err(Error::Checkpoint(format!("checkpoint has trunk layers the model lacks: {extra:?}")));
        }
        Ok(Self::assemble(config, blocks, trainable))
    }

    pub fn config(&self) -> &TrunkConfig {
        &self.config
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Freeze or unfreeze every trunk parameter.
    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
        for b in &mut self.blocks {
            for c in &mut b.convs {
                c.params.trainable = trainable;
                if !trainable {
                    c.params.weights.clear_grad();
                    c.params.bias.clear_grad();
                }
            }
        }
    }

    pub fn save_into(&self, ckpt: &mut Checkpoint) {
        for (bi, b) in self.blocks.iter().enumerate() {
            for (ci, c) in b.convs.iter().enumerate() {
                ckpt.push_layer(&conv_name(bi, ci), &c.params);
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().flat_map(|b| b.convs.iter()).map(|c| c.params.param_count()).sum()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            for c in &mut b.convs {
                if c.params.trainable {
                    out.push(&mut c.params.weights);
                    out.push(&mut c.params.bias);
                }
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for b in &mut self.blocks {
            for c in &mut b.convs {
                c.params.zero_grad();
            }
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        let (batch, len, ch) = x.dims3()?;
        if len != self.config.input_len || ch != 1 {
            return Err(Error::Shape(format!(
                "trunk expects {}×1 inputs, got {len}×{ch}",
                self.config.input_len
            )));
        }
        Ok(batch)
    }

    /// Run the trunk, recording `(length, channels)` at the same points as
    /// [`TrunkConfig::shape_trace`].
    pub fn forward_traced(&mut self, x: &Tensor<T>, trace: &mut Vec<(usize, usize)>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let dims = |t: &Tensor<T>| (t.shape()[1], t.shape()[2]);
        trace.clear();
        trace.push(dims(x));
        let n = self.blocks.len();
        let mut h = x.clone();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            for (conv, relu) in block.convs.iter_mut().zip(block.relus.iter_mut()) {
                h = relu.forward(conv.forward(&h)?);
            }
            trace.push(dims(&h));
            if i + 1 < n {
                h = self.pools[i].forward(&h)?;
                trace.push(dims(&h));
            }
        }
        let emb = self.global.forward(&h)?;
        trace.push((1, emb.shape()[1]));
        Ok(emb)
    }

    /// `[batch, input_len, 1]` → `[batch, embedding_dim]`.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut trace = Vec::new();
        self.forward_traced(x, &mut trace)
    }

    /// Back-propagate an embedding gradient into the conv parameters.
    /// A frozen trunk ignores the call.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<()> {
        if !self.trainable {
            return Ok(());
        }
        let mut g = self.global.backward(grad)?;
        let n = self.blocks.len();
        for i in (0..n).rev() {
            if i + 1 < n {
                g = self.pools[i].backward(&g)?;
            }
            let block = &mut self.blocks[i];
            for ci in (0..2).rev() {
                g = block.relus[ci].backward(g)?;
                let first = i == 0 && ci == 0;
                match block.convs[ci].backward(&g, !first)? {
                    Some(dx) => g = dx,
                    None => break,
                }
            }
        }
        Ok(())
    }

    /// Global-max-pooled activations after each of the first `depth` blocks.
    pub fn block_features(&mut self, x: &Tensor<T>, depth: usize) -> Result<Vec<Tensor<T>>> {
        self.check_input(x)?;
        if depth == 0 || depth > self.blocks.len() {
            return Err(Error::InvalidParameter(format!(
                "embedding depth {depth} outside 1..={}",
                self.blocks.len()
            )));
        }
        let n = self.blocks.len();
        let mut h = x.clone();
        let mut out = Vec::with_capacity(depth);
        for i in 0..depth {
            let block = &mut self.blocks[i];
            for (conv, relu) in block.convs.iter_mut().zip(block.relus.iter_mut()) {
                h = relu.forward(conv.forward(&h)?);
            }
            out.push(GlobalMaxPool::new().forward(&h)?);
            if i + 1 < depth && i + 1 < n {
                h = self.pools[i].forward(&h)?;
            }
        }
        Ok(out)
    }
}

/// Binary head: dense → ReLU → dropout → dense to one logit.
pub struct Head<T> {
    hidden: Dense<T>,
    relu: Relu<T>,
    dropout: Dropout<T>,
    out: Dense<T>,
}

impl<T: Scalar> Head<T> {
    fn new(inputs: usize, rng: &mut StreamRng) -> Result<Self> {
        Ok(Self {
            hidden: Dense::new(dense_params(inputs, HEAD_HIDDEN, true, rng))?,
            relu: Relu::new(),
            dropout: Dropout::new(HEAD_DROPOUT)?,
            out: Dense::new(dense_params(HEAD_HIDDEN, 1, false, rng))?,
        })
    }

    fn load(ckpt: &Checkpoint, prefix: &str, inputs: usize) -> Result<Self> {
        Ok(Self {
            hidden: Dense::new(ckpt.layer(&format!("{prefix}.hidden"), &[inputs, HEAD_HIDDEN], true)?)?,
            relu: Relu::new(),
            dropout: Dropout::new(HEAD_DROPOUT)?,
            out: Dense::new(ckpt.layer(&format!("{prefix}.out"), &[HEAD_HIDDEN, 1], true)?)?,
        })
    }

    fn forward(&mut self, emb: &Tensor<T>, mode: Mode, rng: &mut StreamRng) -> Result<Tensor<T>> {
        let h = self.relu.forward(self.hidden.forward(emb)?);
        let h = self.dropout.forward(h, mode, rng);
        self.out.forward(&h)
    }

    fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.out.backward(grad_logits, true)?.expect("input gradient requested");
        let g = self.relu.backward(self.dropout.backward(g)?)?;
        Ok(self.hidden.backward(&g, true)?.expect("input gradient requested"))
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let Self { hidden, out, .. } = self;
        vec![&mut hidden.params.weights, &mut hidden.params.bias, &mut out.params.weights, &mut out.params.bias]
    }

    fn zero_grad(&mut self) {
        self.hidden.params.zero_grad();
        self.out.params.zero_grad();
    }
}

/// Trunk plus one binary head per recognised transformation.
pub struct PretextModel<T: Scalar> {
    pub trunk: Trunk<T>,
    heads: Vec<Head<T>>,
    tasks: Vec<TransformId>,
    alpha: Vec<f64>,
}

/// Head outputs for one batch.
pub struct PretextOutput<T> {
    /// `logits[h][i]`: head `h`, sample `i`.
    pub logits: Vec<Vec<f64>>,
    pub embedding: Tensor<T>,
}

impl<T> PretextOutput<T> {
    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.logits.iter().map(|h| h.iter().map(|&z| sigmoid_scalar(z)).collect()).collect()
    }
}

fn head_name(id: TransformId) -> String {
    format!("head.{}", id.name())
}

impl<T: Scalar> PretextModel<T> {
    /// Seven-head model with the standard trunk and loss coefficients.
    pub fn multi_task(seed: u64) -> Result<Self> {
        Self::new(TrunkConfig::standard(), &TransformId::ALL, seed)
    }

    /// Model with one head per entry of `tasks`. A single head gets α = 1,
    /// several heads get the default coefficients.
    pub fn new(config: TrunkConfig, tasks: &[TransformId], seed: u64) -> Result<Self> {
        let alpha = if tasks.len() == 1 { vec![1.0] } else { tasks.iter().map(|&t| default_alpha(t)).collect() };
        Self::with_alpha(config, tasks, alpha, seed)
    }

    pub fn with_alpha(config: TrunkConfig, tasks: &[TransformId], alpha: Vec<f64>, seed: u64) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::InvalidParameter("pretext model needs at least one head".into()));
        }
        if alpha.len() != tasks.len() {
            return Err(Error::InvalidParameter(format!("{} coefficients for {} heads", alpha.len(), tasks.len())));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidParameter("loss coefficients must be finite and non-negative".into()));
        }
        let mut seen = [false; 7];
        for t in tasks {
            if std::mem::replace(&mut seen[usize::from(t.code())], true) {
                return Err(Error::InvalidParameter(format!("duplicate head {t}")));
            }
        }
        let mut rng = rng::stream(seed, "init", &[]);
        let trunk = Trunk::new(config, &mut rng)?;
        let dim = trunk.config().embedding_dim();
        let heads = tasks.iter().map(|_| Head::new(dim, &mut rng)).collect::<Result<_>>()?;
        Ok(Self { trunk, heads, tasks: tasks.to_vec(), alpha })
    }

    pub fn tasks(&self) -> &[TransformId] {
        &self.tasks
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn set_alpha(&mut self, alpha: Vec<f64>) -> Result<()> {
        if alpha.len() != self.tasks.len() {
            return Err(Error::InvalidParameter(format!("{} coefficients for {} heads", alpha.len(), self.tasks.len())));
        }
        self.alpha = alpha;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        self.trunk.save_into(&mut c);
        for (head, &id) in self.heads.iter().zip(&self.tasks) {
            c.push_layer(&format!("{}.hidden", head_name(id)), &head.hidden.params);
            c.push_layer(&format!("{}.out", head_name(id)), &head.out.params);
        }
        c
    }

    /// Rebuild a model from a checkpoint. Heads are discovered by name in
    /// transformation order; α takes the defaults.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: TrunkConfig) -> Result<Self> {
        let trunk = Trunk::from_checkpoint(ckpt, config, true)?;
        let dim = trunk.config().embedding_dim();
        let tasks: Vec<TransformId> = TransformId::ALL
            .into_iter()
            .filter(|&id| ckpt.get(&format!("{}.out.weight", head_name(id))).is_some())
            .collect();
        if tasks.is_empty() {
            return Err(Error::Checkpoint("checkpoint holds no pretext heads".into()));
        }
        let heads = tasks.iter().map(|&id| Head::load(ckpt, &head_name(id), dim)).collect::<Result<_>>()?;
        let alpha = if tasks.len() == 1 { vec![1.0] } else { tasks.iter().map(|&t| default_alpha(t)).collect() };
        Ok(Self { trunk, heads, tasks, alpha })
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut StreamRng) -> Result<PretextOutput<T>> {
        let embedding = self.trunk.forward(x)?;
        let mut logits = Vec::with_capacity(self.heads.len());
        for head in &mut self.heads {
            logits.push(head.forward(&embedding, mode, rng)?.to_vec_f64());
        }
        Ok(PretextOutput { logits, embedding })
    }

    /// Back-propagate per-head logit gradients through heads and trunk.
    pub fn backward(&mut self, grad_logits: &[Tensor<T>]) -> Result<()> {
        if grad_logits.len() != self.heads.len() {
            return Err(Error::Shape(format!("{} head gradients for {} heads", grad_logits.len(), self.heads.len())));
        }
        let mut emb_grad: Option<Tensor<T>> = None;
        for (head, g) in self.heads.iter_mut().zip(grad_logits) {
            let d = head.backward(g)?;
            match emb_grad.as_mut() {
                None => emb_grad = Some(d),
                Some(acc) => acc.data_mut().iter_mut().zip(d.data()).for_each(|(a, &b)| *a += b),
            }
        }
        self.trunk.backward(&emb_grad.expect("at least one head"))
    }

    pub fn zero_grad(&mut self) {
        self.trunk.zero_grad();
        self.heads.iter_mut().for_each(Head::zero_grad);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.trunk.params_mut();
        for h in &mut self.heads {
            p.extend(h.params_mut());
        }
        p
    }

    /// One-vs-all targets: 1 where the row's label is the head's transformation.
    pub fn targets(&self, labels: &[TransformId]) -> Vec<Vec<f64>> {
        self.tasks
            .iter()
            .map(|&t| labels.iter().map(|&l| if l == t { 1.0 } else { 0.0 }).collect())
            .collect()
    }
}

/// Stack rows into a `[batch, len, 1]` tensor.
pub fn batch_tensor<T: Scalar, R: AsRef<[f64]>>(rows: &[R]) -> Result<Tensor<T>> {
    let len = rows.first().map_or(0, |r| r.as_ref().len());
    let mut data = Vec::with_capacity(rows.len() * len);
    for r in rows {
        let r = r.as_ref();
        if r.len() != len {
            return Err(Error::Shape(format!("batch rows of length {} and {len}", r.len())));
        }
        data.extend(r.iter().map(|&v| T::of(v)));
    }
    Tensor::new(vec![rows.len(), len, 1], data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn pretext(seed: u64) -> Self {
        Self { epochs: 100, batch_size: DEFAULT_BATCH, adam: AdamConfig::default(), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate {}", self.adam.lr)));
        }
        Ok(())
    }
}

/// Mean training loss of one epoch, per head and weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub per_head: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTrace {
    pub tasks: Vec<TransformId>,
    pub epochs: Vec<EpochLoss>,
}

/// Stateful trainer, so callers can inspect the model between epochs.
pub struct PretextTrainer<T> {
    config: TrainConfig,
    adam: Adam<T>,
    dropout_rng: StreamRng,
    epoch: usize,
}

impl<T: Scalar> PretextTrainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            adam: Adam::new(config.adam),
            dropout_rng: rng::stream(config.seed, "dropout", &[]),
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over the dataset in stored order, in batches.
    pub fn run_epoch(&mut self, model: &mut PretextModel<T>, data: &PretextDataset) -> Result<EpochLoss> {
        if data.is_empty() {
            return Err(Error::InvalidInput("empty pretext dataset".into()));
        }
        let epoch = self.epoch + 1;
        let heads = model.tasks.len();
        let mut sums = vec![0.0; heads];
        for start in (0..data.len()).step_by(self.config.batch_size) {
            let end = (start + self.config.batch_size).min(data.len());
            let x = batch_tensor::<T, _>(&data.inputs[start..end])?;
            let targets = model.targets(&data.labels[start..end]);
            model.zero_grad();
            let out = model.forward(&x, Mode::Train, &mut self.dropout_rng)?;
            let mut grads = Vec::with_capacity(heads);
            for (h, (z, t)) in out.logits.iter().zip(&targets).enumerate() {
                let zt: Vec<T> = z.iter().map(|&v| T::of(v)).collect();
                let (l, g) = loss::bce_with_logits(&zt, t, model.alpha[h])?;
                if !l.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        detail: format!("non-finite loss on head {}", model.tasks[h]),
                    });
                }
                sums[h] += l * (end - start) as f64;
                grads.push(Tensor::new(vec![end - start, 1], g)?);
            }
            model.backward(&grads)?;
            self.adam.step(&mut model.params_mut());
        }
        let per_head: Vec<f64> = sums.iter().map(|s| s / data.len() as f64).collect();
        let total = loss::weighted_total_loss(&per_head, &model.alpha)?;
        if !total.is_finite() {
            return Err(Error::Divergence { epoch, detail: "non-finite epoch loss".into() });
        }
        self.epoch = epoch;
        log::debug!("pretext epoch {epoch}: loss {total:.5}");
        Ok(EpochLoss { epoch, per_head, total })
    }
}

/// Train for `config.epochs` epochs and return the loss trace.
pub fn train_pretext<T: Scalar>(
    model: &mut PretextModel<T>,
    data: &PretextDataset,
    config: TrainConfig,
) -> Result<LossTrace> {
    let mut trainer = PretextTrainer::new(config)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        epochs.push(trainer.run_epoch(model, data)?);
    }
    Ok(LossTrace { tasks: model.tasks.clone(), epochs })
}

/// Eval-mode head probabilities, `[head][row]`.
pub fn predict<T: Scalar, R: AsRef<[f64]>>(
    model: &mut PretextModel<T>,
    inputs: &[R],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut probs = vec![Vec::with_capacity(inputs.len()); model.tasks.len()];
    // Eval mode never draws from the stream.
    let mut rng = rng::stream(0, "unused", &[]);
    for chunk in inputs.chunks(batch_size.max(1)) {
        let out = model.forward(&batch_tensor(chunk)?, Mode::Eval, &mut rng)?;
        for (p, h) in probs.iter_mut().zip(out.probabilities()) {
            p.extend(h);
        }
    }
    Ok(probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadMetrics {
    pub task: TransformId,
    pub score: BinaryScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretextMetrics {
    pub heads: Vec<HeadMetrics>,
    pub mean_accuracy: f64,
    pub mean_f1: f64,
}

impl PretextMetrics {
    pub fn head(&self, task: TransformId) -> Option<&BinaryScore> {
        self.heads.iter().find(|h| h.task == task).map(|h| &h.score)
    }
}

/// One-vs-all scores at threshold 0.5 from head probabilities.
pub fn score_pretext(tasks: &[TransformId], probs: &[Vec<f64>], labels: &[TransformId]) -> Result<PretextMetrics> {
    if probs.len() != tasks.len() {
        return Err(Error::Shape(format!("{} probability rows for {} heads", probs.len(), tasks.len())));
    }
    let mut heads = Vec::with_capacity(tasks.len());
    for (&task, p) in tasks.iter().zip(probs) {
        let truth: Vec<bool> = labels.iter().map(|&l| l == task).collect();
        let pred: Vec<bool> = p.iter().map(|&q| q >= 0.5).collect();
        heads.push(HeadMetrics { task, score: binary_score(&truth, &pred)? });
    }
    let n = heads.len() as f64;
    let mean_accuracy = heads.iter().map(|h| h.score.accuracy).sum::<f64>() / n;
    let mean_f1 = heads.iter().map(|h| h.score.f1).sum::<f64>() / n;
    Ok(PretextMetrics { heads, mean_accuracy, mean_f1 })
}

pub fn evaluate_pretext<T: Scalar>(model: &mut PretextModel<T>, data: &PretextDataset) -> Result<PretextMetrics> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty pretext dataset".into()));
    }
    let probs = predict(model, &data.inputs, DEFAULT_BATCH)?;
    score_pretext(&model.tasks, &probs, &data.labels)
}

/// Trunk features for each row: global-max-pooled activations of the given
/// blocks (1-based), concatenated in the order given.
pub fn extract_embedding<T: Scalar, R: AsRef<[f64]>>(
    trunk: &mut Trunk<T>,
    inputs: &[R],
    depths: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let deepest = depths.iter().copied().max().ok_or_else(|| Error::InvalidParameter("no depth given".into()))?;
    let blocks = trunk.config().blocks.len();
    if let Some(&bad) = depths.iter().find(|&&d| d == 0 || d > blocks) {
        return Err(Error::InvalidParameter(format!("embedding depth {bad} outside 1..={blocks}")));
    }
    let mut rows = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(DEFAULT_BATCH) {
        let feats = trunk.block_features(&batch_tensor(chunk)?, deepest)?;
        for i in 0..chunk.len() {
            let mut row = Vec::new();
            for &d in depths {
                let f = &feats[d - 1];
                let w = f.shape()[1];
                row.extend(f.data()[i * w..(i + 1) * w].iter().map(|v| v.as_f64()));
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

/// `epoch,head,loss` rows, one per head plus a `total` row per epoch.
pub fn write_loss_csv<W: Write>(mut w: W, trace: &LossTrace) -> Result<()> {
    writeln!(w, "epoch,head,loss")?;
    for e in &trace.epochs {
        for (task, l) in trace.tasks.iter().zip(&e.per_head) {
            writeln!(w, "{},{},{}", e.epoch, task.name(), l)?;
        }
        writeln!(w, "{},total,{}", e.epoch, e.total)?;
    }
    Ok(())
}

/// `head,accuracy,f1` rows plus a `mean` row.
pub fn write_metrics_csv<W: Write>(mut w: W, metrics: &PretextMetrics) -> Result<()> {
    writeln!(w, "head,accuracy,f1")?;
    for h in &metrics.heads {
        writeln!(w, "{},{},{}", h.task.name(), h.score.accuracy, h.score.f1)?;
    }
    writeln!(w, "mean,{},{}", metrics.mean_accuracy, metrics.mean_f1)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrunkConfig {
        TrunkConfig {
            input_len: 40,
            blocks: vec![BlockSpec { kernel: 5, filters: 4 }, BlockSpec { kernel: 3, filters: 6 }],
            pool_size: 4,
            pool_stride: 2,
        }
    }

    #[test]
    fn standard_shape_trace() {
        let t = TrunkConfig::standard().shape_trace().unwrap();
        assert_eq!(t, [(2560, 1), (2560, 32), (1277, 32), (1277, 64), (635, 64), (635, 128), (1, 128)]);
    }

    #[test]
    fn alpha_defaults_sum_to_one() {
        let s: f64 = TransformId::ALL.iter().map(|&t| default_alpha(t)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_forward_shapes_match_trace() {
        let mut m = PretextModel::<f64>::new(tiny(), &TransformId::ALL, 3).unwrap();
        let x = batch_tensor::<f64, _>(&vec![vec![0.5; 40]; 3]).unwrap();
        let mut trace = Vec::new();
        let emb = m.trunk.forward_traced(&x, &mut trace).unwrap();
        assert_eq!(trace, tiny().shape_trace().unwrap());
        assert_eq!(emb.shape(), [3, 6]);
        let bad = batch_tensor::<f64, _>(&vec![vec![0.5; 39]; 1]).unwrap();
        assert!(matches!(m.trunk.forward(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let mut m = PretextModel::<f32>::new(tiny(), &[TransformId::Noise, TransformId::Negation], 9).unwrap();
        let ckpt = m.to_checkpoint();
        let mut back = PretextModel::<f32>::from_checkpoint(&ckpt, tiny()).unwrap();
        assert_eq!(back.tasks(), m.tasks());
        assert_eq!(back.to_checkpoint().to_bytes(), ckpt.to_bytes());
        let rows: Vec<Vec<f64>> = (0..3).map(|i| (0..40).map(|j| ((i * 40 + j) as f64).sin()).collect()).collect();
        assert_eq!(predict(&mut m, &rows, 2).unwrap(), predict(&mut back, &rows, 2).unwrap());
    }

    #[test]
    fn depth_features_concatenate() {
        let mut m = PretextModel::<f64>::new(tiny(), &[TransformId::Noise], 1).unwrap();
        let rows = vec![vec![1.0; 40], vec![-0.5; 40]];
        let f = extract_embedding(&mut m.trunk, &rows, &[1, 2]).unwrap();
        assert_eq!(f[0].len(), 10);
        let last = extract_embedding(&mut m.trunk, &rows, &[2]).unwrap();
        let emb = m.trunk.forward(&batch_tensor(&rows).unwrap()).unwrap();
        assert_eq!(last[1], emb.to_vec_f64()[6..]);
        assert!(extract_embedding(&mut m.trunk, &rows, &[3]).is_err());
    }

    #[test]
    fn scoring_majority_predictor() {
        let labels: Vec<TransformId> = (0..70).map(|i| TransformId::ALL[i % 7]).collect();
        let probs = vec![vec![0.5 - 1e-9; 70]; 7];
        let m = score_pretext(&TransformId::ALL, &probs, &labels).unwrap();
        for h in &m.heads {
            assert!((h.score.accuracy - 6.0 / 7.0).abs() < 1e-12);
        }
    }
}
