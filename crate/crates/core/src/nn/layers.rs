//! Layers with cached forward state and hand-written backward passes.
//!
//! Sequence activations are `[batch, length, channels]`, feature
//! activations `[batch, features]`. A backward call consumes the state
//! recorded by the preceding forward call; calling it first is a state
//! error.

use rand::Rng;

use crate::error::{Error, Result};

use super::fftconv;
use super::scalar::{gemm, MatView};
use super::{Scalar, Tensor};

/// Whether stochastic layers (dropout) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Weights and bias of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zero_grad(&mut self) {
        self.weights.zero_grad();
        self.bias.zero_grad();
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

fn no_forward(layer: &str) -> Error {
    Error::State(format!("{layer}: backward called before forward"))
}

fn check_grad_shape<T: Scalar>(layer: &str, grad: &Tensor<T>, expected: &[usize]) -> Result<()> {
    if grad.shape() != expected {
        return Err(Error::Shape(format!("{layer}: gradient shape {:?}, expected {expected:?}", grad.shape())));
    }
    Ok(())
}

/// Symmetric zero padding for a stride-1 "same" convolution; even kernels
/// get the extra zero on the right.
pub fn same_padding(kernel: usize) -> (usize, usize) {
    let left = (kernel - 1) / 2;
    (left, kernel - 1 - left)
}

struct DirectCache<T> {
    padded: Vec<T>,
}

enum ConvCache<T: Scalar> {
    Direct(DirectCache<T>),
    Spectral(fftconv::SpectralCache<T>),
}

/// How [`Conv1d`] evaluates the convolution. Both give the same result up
/// to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvAlgorithm {
    /// Pick by estimated cost for the input length.
    Auto,
    /// im2col as one strided GEMM.
    Direct,
    /// Real FFT and per-bin channel mixing.
    Spectral,
}

/// Stride-1 1D cross-correlation with same padding.
///
/// Weights are `[kernel, in_channels, out_channels]`.
///
/// Direct path: each sample is zero-padded and the batch is stacked into one
/// buffer, so row `i` of the im2col matrix is the contiguous run
/// `padded[i·C_in .. (i+K)·C_in]` and the whole batch reduces to a single
/// strided GEMM. The K−1 rows straddling two samples are computed and
/// discarded. The spectral path is described in [`fftconv`].
pub struct Conv1d<T: Scalar> {
    pub params: LayerParams<T>,
    kernel: usize,
    in_channels: usize,
    out_channels: usize,
    algorithm: ConvAlgorithm,
    plan: Option<fftconv::Plan<T>>,
    cache: Option<(ConvCache<T>, usize, usize)>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(params: LayerParams<T>) -> Result<Self> {
        let (kernel, in_channels, out_channels) = params.weights.dims3()?;
        if params.bias.shape() != [out_channels] {
            return Err(Error::Shape(format!("conv bias {:?} for {out_channels} filters", params.bias.shape())));
        }
        if kernel == 0 {
            return Err(Error::Shape("conv kernel of size 0".into()));
        }
        Ok(Self {
            params,
            kernel,
            in_channels,
            out_channels,
            algorithm: ConvAlgorithm::Auto,
            plan: None,
            cache: None,
        })
    }

    pub fn with_algorithm(mut self, algorithm: ConvAlgorithm) -> Self {
        self.algorithm = algorithm;
        self
    }

    pub fn set_algorithm(&mut self, algorithm: ConvAlgorithm) {
        self.algorithm = algorithm;
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn spectral(&self, len: usize) -> bool {
        match self.algorithm {
            ConvAlgorithm::Direct => false,
            ConvAlgorithm::Spectral => true,
            ConvAlgorithm::Auto => fftconv::prefers_fft(len, self.kernel, self.in_channels, self.out_channels),
        }
    }

    fn geometry(&self, batch: usize, len: usize) -> fftconv::Geometry {
        fftconv::Geometry {
            batch,
            len,
            kernel: self.kernel,
            cin: self.in_channels,
            cout: self.out_channels,
            pad_left: same_padding(self.kernel).0,
        }
    }

    fn plan_for(&mut self, len: usize) -> &fftconv::Plan<T> {
        let n = fftconv::transform_len(len + self.kernel - 1);
        if self.plan.as_ref().is_none_or(|p| p.n != n) {
            self.plan = Some(fftconv::Plan::new(n));
        }
        self.plan.as_ref().expect("plan just created")
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, len, cin) = x.dims3()?;
        if cin != self.in_channels {
            return Err(Error::Shape(format!("conv expects {} input channels, got {cin}", self.in_channels)));
        }
        let (mut out, cache) = if self.spectral(len) {
            let g = self.geometry(batch, len);
            let w = self.params.weights.data().to_vec();
            let (y, c) = fftconv::forward(self.plan_for(len), &g, x.data(), &w);
            (y, ConvCache::Spectral(c))
        } else {
            let (y, c) = self.forward_direct(x.data(), batch, len);
            (y, ConvCache::Direct(c))
        };
        let bias = self.params.bias.data();
        for row in out.chunks_exact_mut(self.out_channels) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        self.cache = Some((cache, batch, len));
        Tensor::new(vec![batch, len, self.out_channels], out)
    }

    fn forward_direct(&self, x: &[T], batch: usize, len: usize) -> (Vec<T>, DirectCache<T>) {
        let (k, cin, cout) = (self.kernel, self.in_channels, self.out_channels);
        let (pad_left, _) = same_padding(k);
        let lp = len + k - 1;
        let mut padded = vec![T::zero(); batch * lp * cin];
        for s in 0..batch {
            let dst = (s * lp + pad_left) * cin;
            padded[dst..dst + len * cin].copy_from_slice(&x[s * len * cin..(s + 1) * len * cin]);
        }
        let rows = batch * lp - (k - 1);
        let mut y = vec![T::zero(); rows * cout];
        gemm(
            rows,
            k * cin,
            cout,
            T::one(),
            MatView::strided(&padded, 0, cin, 1),
            MatView::row_major(self.params.weights.data(), cout),
            T::zero(),
            &mut y,
        );
        let mut out = vec![T::zero(); batch * len * cout];
        for s in 0..batch {
            let src = s * lp * cout;
            out[s * len * cout..(s + 1) * len * cout].copy_from_slice(&y[src..src + len * cout]);
        }
        (out, DirectCache { padded })
    }

    /// Accumulate parameter gradients (when trainable) and return the input
    /// gradient if requested.
    pub fn backward(&mut self, grad_out: &Tensor<T>, input_grad: bool) -> Result<Option<Tensor<T>>> {
        let (cache, batch, len) = self.cache.take().ok_or_else(|| no_forward("conv1d"))?;
        let (cin, cout) = (self.in_channels, self.out_channels);
        check_grad_shape("conv1d", grad_out, &[batch, len, cout])?;
        let g = grad_out.data();
        if self.params.trainable {
            let bgrad = self.params.bias.grad_mut();
            for row in g.chunks_exact(cout) {
                for (b, &v) in bgrad.iter_mut().zip(row) {
                    *b += v;
                }
            }
        }
        let dx = match cache {
            ConvCache::Direct(c) => self.backward_direct(&c, g, batch, len, input_grad),
            ConvCache::Spectral(c) => {
                let geo = self.geometry(batch, len);
                self.plan_for(len);
                let plan = self.plan.as_ref().expect("plan built in forward");
                let wgrad = if self.params.trainable { Some(self.params.weights.data_and_grad_mut().1) } else { None };
                fftconv::backward(plan, &geo, &c, g, wgrad, input_grad)
            }
        };
        dx.map(|d| Tensor::new(vec![batch, len, cin], d)).transpose()
    }

    fn backward_direct(&mut self, cache: &DirectCache<T>, g: &[T], batch: usize, len: usize, input_grad: bool) -> Option<Vec<T>> {
        let (k, cin, cout) = (self.kernel, self.in_channels, self.out_channels);
        let (_, pad_right) = same_padding(k);
        let lp = len + k - 1;
        let rows = batch * lp - (k - 1);

        // Output gradient laid out with `pad_right` leading zeros per sample.
        // Offset by `pad_right` rows it lines up with the forward im2col rows
        // (junk rows hit zeros); unshifted it is the padded input of the
        // transposed convolution.
        let mut q = vec![T::zero(); batch * lp * cout];
        for s in 0..batch {
            let dst = (s * lp + pad_right) * cout;
            q[dst..dst + len * cout].copy_from_slice(&g[s * len * cout..(s + 1) * len * cout]);
        }

        if self.params.trainable {
            let (_, wgrad) = self.params.weights.data_and_grad_mut();
            gemm(
                k * cin,
                rows,
                cout,
                T::one(),
                MatView::strided(&cache.padded, 0, 1, cin),
                MatView::strided(&q, pad_right * cout, cout, 1),
                T::one(),
                wgrad,
            );
        }

        if !input_grad {
            return None;
        }
        let w = self.params.weights.data();
        let mut flipped = vec![T::zero(); k * cout * cin];
        for j in 0..k {
            for co in 0..cout {
                for ci in 0..cin {
                    flipped[(j * cout + co) * cin + ci] = w[((k - 1 - j) * cin + ci) * cout + co];
                }
            }
        }
        let mut z = vec![T::zero(); rows * cin];
        gemm(
            rows,
            k * cout,
            cin,
            T::one(),
            MatView::strided(&q, 0, cout, 1),
            MatView::row_major(&flipped, cin),
            T::zero(),
            &mut z,
        );
        let mut dx = vec![T::zero(); batch * len * cin];
        for s in 0..batch {
            let src = s * lp * cin;
            dx[s * len * cin..(s + 1) * len * cin].copy_from_slice(&z[src..src + len * cin]);
        }
        Some(dx)
    }
}

/// Output length of an unpadded pooling window.
pub fn pooled_len(len: usize, size: usize, stride: usize) -> Option<usize> {
    (len >= size && stride > 0).then(|| (len - size) / stride + 1)
}

/// Max pooling over time without padding; ties resolve to the earliest index.
pub struct MaxPool1d {
    size: usize,
    stride: usize,
    cache: Option<(Vec<u32>, [usize; 3])>,
}

impl MaxPool1d {
    pub fn new(size: usize, stride: usize) -> Self {
        Self { size, stride, cache: None }
    }

    pub fn output_len(&self, len: usize) -> Option<usize> {
        pooled_len(len, self.size, self.stride)
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, len, ch) = x.dims3()?;
        let out_len = self
            .output_len(len)
            .ok_or_else(|| Error::Shape(format!("max-pool window {} longer than input {len}", self.size)))?;
        let xd = x.data();
        let mut out = vec![T::zero(); batch * out_len * ch];
        let mut arg = vec![0u32; batch * out_len * ch];
        for s in 0..batch {
            for o in 0..out_len {
                let start = o * self.stride;
                let base = (s * out_len + o) * ch;
                let first = (s * len + start) * ch;
                out[base..base + ch].copy_from_slice(&xd[first..first + ch]);
                arg[base..base + ch].iter_mut().for_each(|a| *a = start as u32);
                for j in 1..self.size {
                    let row = &xd[(s * len + start + j) * ch..(s * len + start + j + 1) * ch];
                    for c in 0..ch {
                        if row[c] > out[base + c] {
                            out[base + c] = row[c];
                            arg[base + c] = (start + j) as u32;
                        }
                    }
                }
            }
        }
        self.cache = Some((arg, [batch, len, ch]));
        Tensor::new(vec![batch, out_len, ch], out)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (arg, [batch, len, ch]) = self.cache.take().ok_or_else(|| no_forward("maxpool1d"))?;
        let out_len = arg.len() / (batch * ch).max(1);
        check_grad_shape("maxpool1d", grad_out, &[batch, out_len, ch])?;
        let mut dx = vec![T::zero(); batch * len * ch];
        let g = grad_out.data();
        for s in 0..batch {
            for o in 0..out_len {
                let base = (s * out_len + o) * ch;
                for c in 0..ch {
                    dx[(s * len + arg[base + c] as usize) * ch + c] += g[base + c];
                }
            }
        }
        Tensor::new(vec![batch, len, ch], dx)
    }
}

/// Per-channel maximum over the whole time axis.
#[derive(Default)]
pub struct GlobalMaxPool {
    cache: Option<(Vec<u32>, [usize; 3])>,
}

impl GlobalMaxPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, len, ch) = x.dims3()?;
        if len == 0 {
            return Err(Error::Shape("global max-pool over an empty sequence".into()));
        }
        let xd = x.data();
        let mut out = vec![T::zero(); batch * ch];
        let mut arg = vec![0u32; batch * ch];
        for s in 0..batch {
            let o = &mut out[s * ch..(s + 1) * ch];
            let a = &mut arg[s * ch..(s + 1) * ch];
            o.copy_from_slice(&xd[s * len * ch..(s * len + 1) * ch]);
            for t in 1..len {
                let row = &xd[(s * len + t) * ch..(s * len + t + 1) * ch];
                for c in 0..ch {
                    if row[c] > o[c] {
                        o[c] = row[c];
                        a[c] = t as u32;
                    }
                }
            }
        }
        self.cache = Some((arg, [batch, len, ch]));
        Tensor::new(vec![batch, ch], out)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (arg, [batch, len, ch]) = self.cache.take().ok_or_else(|| no_forward("global_maxpool"))?;
        check_grad_shape("global_maxpool", grad_out, &[batch, ch])?;
        let mut dx = vec![T::zero(); batch * len * ch];
        for (i, (&a, &g)) in arg.iter().zip(grad_out.data()).enumerate() {
            let (s, c) = (i / ch, i % ch);
            dx[(s * len + a as usize) * ch + c] = g;
        }
        Tensor::new(vec![batch, len, ch], dx)
    }
}

/// Fully connected layer, weights `[in, out]`.
pub struct Dense<T> {
    pub params: LayerParams<T>,
    inputs: usize,
    outputs: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(params: LayerParams<T>) -> Result<Self> {
        let (inputs, outputs) = params.weights.dims2()?;
        if params.bias.shape() != [outputs] {
            return Err(Error::Shape(format!("dense bias {:?} for {outputs} outputs", params.bias.shape())));
        }
        Ok(Self { params, inputs, outputs, cache: None })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, inputs) = x.dims2()?;
        if inputs != self.inputs {
            return Err(Error::Shape(format!("dense expects {} inputs, got {inputs}", self.inputs)));
        }
        let mut out = Vec::with_capacity(batch * self.outputs);
        for _ in 0..batch {
            out.extend_from_slice(self.params.bias.data());
        }
        gemm(
            batch,
            inputs,
            self.outputs,
            T::one(),
            MatView::row_major(x.data(), inputs),
            MatView::row_major(self.params.weights.data(), self.outputs),
            T::one(),
            &mut out,
        );
        self.cache = Some(x.clone());
        Tensor::new(vec![batch, self.outputs], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>, input_grad: bool) -> Result<Option<Tensor<T>>> {
        let x = self.cache.take().ok_or_else(|| no_forward("dense"))?;
        let batch = x.shape()[0];
        check_grad_shape("dense", grad_out, &[batch, self.outputs])?;
        let g = grad_out.data();
        if self.params.trainable {
            let (_, wgrad) = self.params.weights.data_and_grad_mut();
            gemm(
                self.inputs,
                batch,
                self.outputs,
                T::one(),
                MatView::strided(x.data(), 0, 1, self.inputs),
                MatView::row_major(g, self.outputs),
                T::one(),
                wgrad,
            );
            let bgrad = self.params.bias.grad_mut();
            for row in g.chunks_exact(self.outputs) {
                for (b, &v) in bgrad.iter_mut().zip(row) {
                    *b += v;
                }
            }
        }
        if !input_grad {
            return Ok(None);
        }
        let mut dx = vec![T::zero(); batch * self.inputs];
        gemm(
            batch,
            self.outputs,
            self.inputs,
            T::one(),
            MatView::row_major(g, self.outputs),
            MatView::strided(self.params.weights.data(), 0, 1, self.outputs),
            T::zero(),
            &mut dx,
        );
        Ok(Some(Tensor::new(vec![batch, self.inputs], dx)?))
    }
}

/// Element-wise max(x, 0).
#[derive(Default)]
pub struct Relu<T> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&mut self, mut x: Tensor<T>) -> Tensor<T> {
        x.data_mut().iter_mut().for_each(|v| {
            if !(*v > T::zero()) {
                *v = T::zero();
            }
        });
        self.cache = Some(x.clone());
        x
    }

    pub fn backward(&mut self, mut grad_out: Tensor<T>) -> Result<Tensor<T>> {
        let y = self.cache.take().ok_or_else(|| no_forward("relu"))?;
        check_grad_shape("relu", &grad_out, y.shape())?;
        for (g, &v) in grad_out.data_mut().iter_mut().zip(y.data()) {
            if !(v > T::zero()) {
                *g = T::zero();
            }
        }
        Ok(grad_out)
    }
}

#[derive(Default)]
pub struct Sigmoid<T> {
    cache: Option<Tensor<T>>,
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&mut self, mut x: Tensor<T>) -> Tensor<T> {
        x.data_mut().iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
        self.cache = Some(x.clone());
        x
    }

    pub fn backward(&mut self, mut grad_out: Tensor<T>) -> Result<Tensor<T>> {
        let y = self.cache.take().ok_or_else(|| no_forward("sigmoid"))?;
        check_grad_shape("sigmoid", &grad_out, y.shape())?;
        for (g, &v) in grad_out.data_mut().iter_mut().zip(y.data()) {
            *g *= v * (T::one() - v);
        }
        Ok(grad_out)
    }
}

/// Row-wise softmax of `[batch, classes]`.
#[derive(Default)]
pub struct Softmax<T> {
    cache: Option<Tensor<T>>,
}

pub fn softmax_rows<T: Scalar>(data: &mut [T], classes: usize) {
    for row in data.chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        row.iter_mut().for_each(|v| {
            *v = (*v - max).exp();
            sum += *v;
        });
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
}

impl<T: Scalar> Softmax<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&mut self, mut x: Tensor<T>) -> Result<Tensor<T>> {
        let (_, classes) = x.dims2()?;
        softmax_rows(x.data_mut(), classes);
        self.cache = Some(x.clone());
        Ok(x)
    }

    pub fn backward(&mut self, mut grad_out: Tensor<T>) -> Result<Tensor<T>> {
        let y = self.cache.take().ok_or_else(|| no_forward("softmax"))?;
        check_grad_shape("softmax", &grad_out, y.shape())?;
        let classes = y.shape()[1];
        for (g, p) in grad_out.data_mut().chunks_exact_mut(classes).zip(y.data().chunks_exact(classes)) {
            let dot: T = g.iter().zip(p).map(|(&a, &b)| a * b).sum();
            for (gi, &pi) in g.iter_mut().zip(p) {
                *gi = pi * (*gi - dot);
            }
        }
        Ok(grad_out)
    }
}

/// Inverted dropout: kept activations are scaled by 1/(1 − rate) during
/// training; evaluation is the identity.
pub struct Dropout<T> {
    rate: f64,
    cache: Option<Option<Vec<T>>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate, cache: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward<R: Rng>(&mut self, mut x: Tensor<T>, mode: Mode, rng: &mut R) -> Tensor<T> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.cache = Some(None);
            return x;
        }
        let keep = T::of(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.random::<f64>() < self.rate { T::zero() } else { keep })
            .collect();
        x.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
        self.cache = Some(Some(mask));
        x
    }

    pub fn backward(&mut self, mut grad_out: Tensor<T>) -> Result<Tensor<T>> {
        match self.cache.take().ok_or_else(|| no_forward("dropout"))? {
            None => Ok(grad_out),
            Some(mask) => {
                if mask.len() != grad_out.len() {
                    return Err(Error::Shape("dropout: gradient size differs from mask".into()));
                }
                grad_out.data_mut().iter_mut().zip(&mask).for_each(|(g, &m)| *g *= m);
                Ok(grad_out)
            }
        }
    }
}
