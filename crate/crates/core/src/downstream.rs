//! Emotion classifier on top of a transferred, frozen trunk.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::dataset::{kfold_split, EmotionDataset, Fold};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, macro_f1, mean_std, ConfusionMatrix};
use crate::nn::init::dense_params;
use crate::nn::layers::softmax_rows;
use crate::nn::{loss, Adam, AdamConfig, Checkpoint, Dense, Dropout, Mode, Relu, Scalar, Tensor};
use crate::pretext::{batch_tensor, Trunk, TrunkConfig, DEFAULT_BATCH};
use crate::rng::{self, StreamRng};

pub const HEAD_WIDTH: usize = 512;
pub const DEEP_HEAD_DROPOUT: f64 = 0.2;
pub const HEAD_L2: f64 = 1e-4;
pub const DOWNSTREAM_EPOCHS: usize = 250;

const PREFIX: &str = "classifier";

/// Shape of the classification head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeadVariant {
    /// One hidden layer.
    #[default]
    A,
    /// Two hidden layers, dropout before the output layer.
    B,
}

impl HeadVariant {
    pub fn hidden_layers(self) -> usize {
        match self {
            HeadVariant::A => 1,
            HeadVariant::B => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadVariant::A => "a",
            HeadVariant::B => "b",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "a" => Ok(HeadVariant::A),
            "b" => Ok(HeadVariant::B),
            other => Err(Error::InvalidParameter(format!("unknown head variant {other:?}"))),
        }
    }
}

fn hidden_name(i: usize) -> String {
    format!("{PREFIX}.hidden{}", i + 1)
}

/// Dense stack ending in M logits; softmax is folded into the loss.
pub struct ClassifierHead<T> {
    hidden: Vec<Dense<T>>,
    relus: Vec<Relu<T>>,
    dropout: Option<Dropout<T>>,
    out: Dense<T>,
    variant: HeadVariant,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn new(inputs: usize, classes: usize, variant: HeadVariant, rng: &mut StreamRng) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidParameter(format!("{classes} classes; need at least 2")));
        }
        let mut hidden = Vec::new();
        let mut width = inputs;
        for _ in 0..variant.hidden_layers() {
            hidden.push(Dense::new(dense_params(width, HEAD_WIDTH, true, rng))?);
            width = HEAD_WIDTH;
        }
        let out = Dense::new(dense_params(width, classes, false, rng))?;
        Self::assemble(hidden, out, variant)
    }

    fn assemble(hidden: Vec<Dense<T>>, out: Dense<T>, variant: HeadVariant) -> Result<Self> {
        let dropout = match variant {
            HeadVariant::A => None,
            HeadVariant::B => Some(Dropout::new(DEEP_HEAD_DROPOUT)?),
        };
        let relus = hidden.iter().map(|_| Relu::new()).collect();
        Ok(Self { hidden, relus, dropout, out, variant })
    }

    /// Load a head; the variant follows from the stored layers.
    pub fn load(ckpt: &Checkpoint, inputs: usize) -> Result<Self> {
        let variant = if ckpt.get(&format!("{}.weight", hidden_name(1))).is_some() { HeadVariant::B } else { HeadVariant::A };
        let mut hidden = Vec::new();
        let mut width = inputs;
        for i in 0..variant.hidden_layers() {
            hidden.push(Dense::new(ckpt.layer(&hidden_name(i), &[width, HEAD_WIDTH], true)?)?);
            width = HEAD_WIDTH;
        }
        let classes = ckpt
            .get(&format!("{PREFIX}.out.weight"))
            .and_then(|e| e.shape.last().copied())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {PREFIX}.out.weight")))?;
        let out = Dense::new(ckpt.layer(&format!("{PREFIX}.out"), &[width, classes], true)?)?;
        Self::assemble(hidden, out, variant)
    }

    pub fn save_into(&self, ckpt: &mut Checkpoint) {
        for (i, d) in self.hidden.iter().enumerate() {
            ckpt.push_layer(&hidden_name(i), &d.params);
        }
        ckpt.push_layer(&format!("{PREFIX}.out"), &self.out.params);
    }

    pub fn variant(&self) -> HeadVariant {
        self.variant
    }

    pub fn classes(&self) -> usize {
        self.out.outputs()
    }

    pub fn inputs(&self) -> usize {
        self.hidden.first().unwrap_or(&self.out).inputs()
    }

    pub fn param_count(&self) -> usize {
        self.hidden.iter().map(|d| d.params.param_count()).sum::<usize>() + self.out.params.param_count()
    }

    /// `[batch, inputs]` → `[batch, classes]` logits.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut StreamRng) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (d, r) in self.hidden.iter_mut().zip(&mut self.relus) {
            h = r.forward(d.forward(&h)?);
        }
        if let Some(drop) = &mut self.dropout {
            h = drop.forward(h, mode, rng);
        }
        self.out.forward(&h)
    }

    /// Returns the gradient with respect to the head input.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.out.backward(grad_logits, true)?.expect("input gradient requested");
        if let Some(drop) = &mut self.dropout {
            g = drop.backward(g)?;
        }
        for (d, r) in self.hidden.iter_mut().zip(&mut self.relus).rev() {
            g = r.backward(g)?;
            g = d.backward(&g, true)?.expect("input gradient requested");
        }
        Ok(g)
    }

    fn weights(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.hidden.iter().chain(std::iter::once(&self.out)).map(|d| &d.params.weights)
    }

    /// λ·Σw² over the weight matrices (biases excluded).
    pub fn l2_penalty(&self, lambda: f64) -> f64 {
        self.weights().map(|w| loss::l2_penalty(w.data(), lambda)).sum()
    }

    fn add_l2_grad(&mut self, lambda: f64) {
        for d in self.hidden.iter_mut().chain(std::iter::once(&mut self.out)) {
            let (w, g) = d.params.weights.data_and_grad_mut();
            loss::add_l2_grad(w, lambda, g);
        }
    }

    pub fn zero_grad(&mut self) {
        self.hidden.iter_mut().for_each(|d| d.params.zero_grad());
        self.out.params.zero_grad();
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = Vec::new();
        for d in self.hidden.iter_mut().chain(std::iter::once(&mut self.out)) {
            p.push(&mut d.params.weights);
            p.push(&mut d.params.bias);
        }
        p
    }
}

/// Trunk plus classification head.
pub struct DownstreamModel<T: Scalar> {
    pub trunk: Trunk<T>,
    pub head: ClassifierHead<T>,
}

impl<T: Scalar> DownstreamModel<T> {
    /// Frozen trunk from a pretext checkpoint and a freshly seeded head.
    pub fn transfer(
        ckpt: &Checkpoint,
        config: TrunkConfig,
        classes: usize,
        variant: HeadVariant,
        seed: u64,
    ) -> Result<Self> {
        let trunk = Trunk::from_checkpoint(ckpt, config, false)?;
        let head = ClassifierHead::new(
            trunk.config().embedding_dim(),
            classes,
            variant,
            &mut rng::stream(seed, "downstream-init", &[]),
        )?;
        Ok(Self { trunk, head })
    }

    /// Randomly initialised trunk, trainable when `trainable` is set.
    pub fn from_scratch(
        config: TrunkConfig,
        classes: usize,
        variant: HeadVariant,
        trainable: bool,
        seed: u64,
    ) -> Result<Self> {
        let mut trunk = Trunk::new(config, &mut rng::stream(seed, "init", &[]))?;
        trunk.set_trainable(trainable);
        let head = ClassifierHead::new(
            trunk.config().embedding_dim(),
            classes,
            variant,
            &mut rng::stream(seed, "downstream-init", &[]),
        )?;
        Ok(Self { trunk, head })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        self.trunk.save_into(&mut c);
        self.head.save_into(&mut c);
        c
    }

    /// The trunk is frozen if its stored entries are marked frozen.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: TrunkConfig) -> Result<Self> {
        let frozen = ckpt.entries.iter().filter(|e| e.name.starts_with("trunk.")).all(|e| e.frozen);
        let trunk = Trunk::from_checkpoint(ckpt, config, !frozen)?;
        let head = ClassifierHead::load(ckpt, trunk.config().embedding_dim())?;
        Ok(Self { trunk, head })
    }

    /// Eval-mode trunk embeddings of `inputs`.
    pub fn embed<R: AsRef<[f64]>>(&mut self, inputs: &[R]) -> Result<Vec<Vec<f64>>> {
        embed_rows(&mut self.trunk, inputs)
    }

    /// Class probabilities for raw segments.
    pub fn predict_proba<R: AsRef<[f64]>>(&mut self, inputs: &[R]) -> Result<Vec<Vec<f64>>> {
        let emb = self.embed(inputs)?;
        head_proba(&mut self.head, &emb)
    }
}

fn rows_tensor<T: Scalar>(rows: &[&[f64]]) -> Result<Tensor<T>> {
    let width = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::Shape(format!("feature rows of width {} and {width}", r.len())));
        }
        data.extend(r.iter().map(|&v| T::of(v)));
    }
    Tensor::new(vec![rows.len(), width], data)
}

/// Eval-mode softmax probabilities of the head on feature rows.
pub fn head_proba<T: Scalar>(head: &mut ClassifierHead<T>, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let classes = head.classes();
    let mut rng = rng::stream(0, "unused", &[]);
    let mut out = Vec::with_capacity(features.len());
    for chunk in features.chunks(DEFAULT_BATCH) {
        let refs: Vec<&[f64]> = chunk.iter().map(Vec::as_slice).collect();
        let mut z = head.forward(&rows_tensor(&refs)?, Mode::Eval, &mut rng)?.to_vec_f64();
        softmax_rows(&mut z, classes);
        out.extend(z.chunks_exact(classes).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Index of the largest entry; the first wins ties.
pub fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownstreamConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub l2: f64,
    pub seed: u64,
}

impl DownstreamConfig {
    pub fn new(seed: u64) -> Self {
        Self { epochs: DOWNSTREAM_EPOCHS, batch_size: DEFAULT_BATCH, adam: AdamConfig::default(), l2: HEAD_L2, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate {}", self.adam.lr)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidParameter(format!("L2 coefficient {}", self.l2)));
        }
        Ok(())
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("empty emotion dataset".into()));
    }
    match labels.iter().find(|&&y| y >= classes) {
        Some(y) => Err(Error::InvalidInput(format!("label {y} outside {classes} classes"))),
        None => Ok(()),
    }
}

/// Mean training loss (cross-entropy plus L2) per epoch.
pub type DownstreamTrace = Vec<f64>;

/// Train the head alone on precomputed features. Rows are reshuffled every
/// epoch.
pub fn fit_head<T: Scalar>(
    head: &mut ClassifierHead<T>,
    features: &[Vec<f64>],
    labels: &[usize],
    config: &DownstreamConfig,
) -> Result<DownstreamTrace> {
    config.validate()?;
    check_labels(labels, head.classes())?;
    if features.len() != labels.len() {
        return Err(Error::Shape(format!("{} feature rows for {} labels", features.len(), labels.len())));
    }
    let classes = head.classes();
    let mut adam = Adam::new(config.adam);
    let mut dropout_rng = rng::stream(config.seed, "downstream-dropout", &[]);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng::stream(config.seed, "downstream-shuffle", &[epoch as u64]));
        let mut sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let rows: Vec<&[f64]> = idx.iter().map(|&i| features[i].as_slice()).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            head.zero_grad();
            let z = head.forward(&rows_tensor(&rows)?, Mode::Train, &mut dropout_rng)?;
            let (ce, g) = loss::softmax_ce(z.data(), classes, &y)?;
            let l = ce + head.l2_penalty(config.l2);
            if !l.is_finite() {
                return Err(Error::Divergence { epoch, detail: "non-finite downstream loss".into() });
            }
            sum += ce * idx.len() as f64;
            head.backward(&Tensor::new(vec![idx.len(), classes], g)?)?;
            head.add_l2_grad(config.l2);
            adam.step(&mut head.params_mut());
        }
        trace.push(sum / labels.len() as f64 + head.l2_penalty(config.l2));
    }
    Ok(trace)
}

/// Train on `data`. A frozen trunk is run once to embed every row and only
/// the head is optimised; a trainable trunk is trained end to end.
pub fn train_downstream<T: Scalar>(
    model: &mut DownstreamModel<T>,
    data: &EmotionDataset,
    config: &DownstreamConfig,
) -> Result<DownstreamTrace> {
    config.validate()?;
    if data.class_count != model.head.classes() {
        return Err(Error::Shape(format!(
            "dataset has {} classes, head has {}",
            data.class_count,
            model.head.classes()
        )));
    }
    check_labels(&data.labels, data.class_count)?;
    if !model.trunk.is_trainable() {
        let features = model.embed(&data.inputs)?;
        return fit_head(&mut model.head, &features, &data.labels, config);
    }

    let classes = model.head.classes();
    let mut adam = Adam::new(config.adam);
    let mut dropout_rng = rng::stream(config.seed, "downstream-dropout", &[]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng::stream(config.seed, "downstream-shuffle", &[epoch as u64]));
        let mut sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let rows: Vec<&[f64]> = idx.iter().map(|&i| data.inputs[i].as_slice()).collect();
            let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            model.trunk.zero_grad();
            model.head.zero_grad();
            let emb = model.trunk.forward(&batch_tensor(&rows)?)?;
            let z = model.head.forward(&emb, Mode::Train, &mut dropout_rng)?;
            let (ce, g) = loss::softmax_ce(z.data(), classes, &y)?;
            if !(ce + model.head.l2_penalty(config.l2)).is_finite() {
                return Err(Error::Divergence { epoch, detail: "non-finite downstream loss".into() });
            }
            sum += ce * idx.len() as f64;
            let d_emb = model.head.backward(&Tensor::new(vec![idx.len(), classes], g)?)?;
            model.head.add_l2_grad(config.l2);
            model.trunk.backward(&d_emb)?;
            let mut params = model.trunk.params_mut();
            params.extend(model.head.params_mut());
            adam.step(&mut params);
        }
        let l = sum / data.len() as f64 + model.head.l2_penalty(config.l2);
        log::debug!("downstream epoch {epoch}: loss {l:.5}");
        trace.push(l);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

/// Argmax decisions against `truth`.
pub fn score_predictions(classes: usize, truth: &[usize], proba: &[Vec<f64>]) -> Result<DownstreamMetrics> {
    let predicted: Vec<usize> = proba.iter().map(|p| argmax(p)).collect();
    let confusion = ConfusionMatrix::from_predictions(classes, truth, &predicted)?;
    Ok(DownstreamMetrics { accuracy: accuracy(&confusion)?, macro_f1: macro_f1(&confusion)?, confusion })
}

pub fn evaluate_downstream<T: Scalar>(model: &mut DownstreamModel<T>, data: &EmotionDataset) -> Result<DownstreamMetrics> {
    check_labels(&data.labels, data.class_count)?;
    let proba = model.predict_proba(&data.inputs)?;
    score_predictions(model.head.classes(), &data.labels, &proba)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub attribute: String,
    pub accuracy: f64,
    pub macro_f1: f64,
}

fn pick<V: Clone>(v: &[V], idx: &[usize]) -> Vec<V> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// k-fold evaluation of a fixed feature extractor: a fresh head is trained
/// per fold on `features` (one row per dataset row).
pub fn cross_validate_features(
    features: &[Vec<f64>],
    data: &EmotionDataset,
    folds: &[Fold],
    variant: HeadVariant,
    config: &DownstreamConfig,
) -> Result<Vec<FoldResult>> {
    if features.len() != data.len() {
        return Err(Error::Shape(format!("{} feature rows for {} dataset rows", features.len(), data.len())));
    }
    let dim = features.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(folds.len());
    for (f, fold) in folds.iter().enumerate() {
        let fold_config = DownstreamConfig { seed: rng::derive_seed(config.seed, "fold", &[f as u64]), ..*config };
        let mut head = ClassifierHead::<f32>::new(
            dim,
            data.class_count,
            variant,
            &mut rng::stream(fold_config.seed, "downstream-init", &[]),
        )?;
        fit_head(&mut head, &pick(features, &fold.train), &pick(&data.labels, &fold.train), &fold_config)?;
        let proba = head_proba(&mut head, &pick(features, &fold.test))?;
        let m = score_predictions(data.class_count, &pick(&data.labels, &fold.test), &proba)?;
        log::info!("fold {}: accuracy {:.4}, macro-F1 {:.4}", f + 1, m.accuracy, m.macro_f1);
        out.push(FoldResult { fold: f + 1, attribute: data.attribute_name.clone(), accuracy: m.accuracy, macro_f1: m.macro_f1 });
    }
    Ok(out)
}

/// k-fold evaluation of a frozen trunk loaded from a pretext checkpoint.
pub fn cross_validate_transfer(
    ckpt: &Checkpoint,
    config: TrunkConfig,
    data: &EmotionDataset,
    k: usize,
    variant: HeadVariant,
    train: &DownstreamConfig,
) -> Result<Vec<FoldResult>> {
    let mut trunk = Trunk::<f32>::from_checkpoint(ckpt, config, false)?;
    let features = embed_rows(&mut trunk, &data.inputs)?;
    let folds = kfold_split(data.len(), k, train.seed)?;
    cross_validate_features(&features, data, &folds, variant, train)
}

/// Eval-mode embeddings from a bare trunk.
pub fn embed_rows<T: Scalar, R: AsRef<[f64]>>(trunk: &mut Trunk<T>, inputs: &[R]) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(DEFAULT_BATCH) {
        let e = trunk.forward(&batch_tensor(chunk)?)?;
        let w = e.shape()[1];
        rows.extend(e.data().chunks_exact(w).map(|r| r.iter().map(|v| v.as_f64()).collect::<Vec<_>>()));
    }
    Ok(rows)
}

/// k-fold evaluation with a randomly initialised trunk trained end to end
/// on each training fold.
pub fn cross_validate_supervised(
    config: TrunkConfig,
    data: &EmotionDataset,
    k: usize,
    variant: HeadVariant,
    train: &DownstreamConfig,
) -> Result<Vec<FoldResult>> {
    let folds = kfold_split(data.len(), k, train.seed)?;
    let mut out = Vec::with_capacity(folds.len());
    for (f, fold) in folds.iter().enumerate() {
        let seed = rng::derive_seed(train.seed, "fold", &[f as u64]);
        let mut model = DownstreamModel::<f32>::from_scratch(config.clone(), data.class_count, variant, true, seed)?;
        train_downstream(&mut model, &data.subset(&fold.train), &DownstreamConfig { seed, ..*train })?;
        let m = evaluate_downstream(&mut model, &data.subset(&fold.test))?;
        log::info!("supervised fold {}: accuracy {:.4}, macro-F1 {:.4}", f + 1, m.accuracy, m.macro_f1);
        out.push(FoldResult { fold: f + 1, attribute: data.attribute_name.clone(), accuracy: m.accuracy, macro_f1: m.macro_f1 });
    }
    Ok(out)
}

/// Fold aggregate for one training regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub attribute: String,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
}

impl ComparisonRow {
    pub fn from_folds(method: impl Into<String>, folds: &[FoldResult]) -> Result<Self> {
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let f1: Vec<f64> = folds.iter().map(|f| f.macro_f1).collect();
        let (accuracy_mean, accuracy_std) = mean_std(&acc)?;
        let (macro_f1_mean, macro_f1_std) = mean_std(&f1)?;
        Ok(Self {
            method: method.into(),
            attribute: folds[0].attribute.clone(),
            accuracy_mean,
            accuracy_std,
            macro_f1_mean,
            macro_f1_std,
        })
    }
}

/// `fold,attribute,accuracy,macro_f1`.
pub fn write_fold_csv<W: Write>(mut w: W, folds: &[FoldResult]) -> Result<()> {
    writeln!(w, "fold,attribute,accuracy,macro_f1")?;
    for f in folds {
        writeln!(w, "{},{},{},{}", f.fold, f.attribute, f.accuracy, f.macro_f1)?;
    }
    Ok(())
}

pub fn write_comparison_csv<W: Write>(mut w: W, rows: &[ComparisonRow]) -> Result<()> {
    writeln!(w, "method,attribute,accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.method, r.attribute, r.accuracy_mean, r.accuracy_std, r.macro_f1_mean, r.macro_f1_std
        )?;
    }
    Ok(())
}
