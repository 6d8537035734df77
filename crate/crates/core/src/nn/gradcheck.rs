//! Central finite-difference checks of the backward passes in f64.
//!
//! Each check draws random small instances, projects the layer output onto a
//! random vector to get a scalar loss, and compares numeric and analytic
//! gradients with ‖n − a‖ / (‖n‖ + ‖a‖). The worst error over all instances
//! and all gradient tensors is returned.

use super::init::{conv_params, dense_params};
use super::loss::{add_l2_grad, bce_loss, bce_loss_grad, bce_with_logits, ce_loss, ce_loss_grad, l2_penalty, softmax_ce};
use super::{Conv1d, ConvAlgorithm, Dense, Dropout, GlobalMaxPool, MaxPool1d, Mode, Relu, Sigmoid, Softmax, Tensor};
use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};
use rand::seq::SliceRandom;
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn relative_error(numeric: &[f64], analytic: &[f64]) -> f64 {
    let diff = numeric.iter().zip(analytic).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = norm(numeric) + norm(analytic);
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + STEP;
            let up = f(&p);
            p[i] = x[i] - STEP;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// One checked item and its worst relative error.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub item: &'static str,
    pub instances: u64,
    pub worst: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.worst <= TOLERANCE
    }
}

/// Run every layer and loss check on `instances` random instances each.
pub fn check_all(instances: u64) -> Result<Vec<GradCheck>> {
    type Check = fn(u64) -> Result<f64>;
    let items: [(&'static str, Check); 13] = [
        ("conv1d_same (direct)", |c| conv(ConvAlgorithm::Direct, c)),
        ("conv1d_same (spectral)", |c| conv(ConvAlgorithm::Spectral, c)),
        ("maxpool", maxpool),
        ("global maxpool", global_maxpool),
        ("dense", dense),
        ("relu", relu),
        ("sigmoid", sigmoid),
        ("softmax", softmax),
        ("dropout", dropout),
        ("bce", bce),
        ("bce on logits", bce_logits),
        ("cross-entropy", cross_entropy),
        ("l2", l2),
    ];
    items
        .into_iter()
        .map(|(item, f)| {
            let worst = (0..instances).map(f).try_fold(0.0f64, |w, e| e.map(|e| w.max(e)))?;
            Ok(GradCheck { item, instances, worst })
        })
        .collect()
}

fn uniform(r: &mut StreamRng, n: usize, amplitude: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-amplitude..amplitude)).collect()
}

/// Distinct values on a 0.01 grid that never hits zero, so max and ReLU
/// switch nowhere within ±h.
fn distinct(r: &mut StreamRng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.25) * 0.01).collect();
    v.shuffle(r);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn tensor(shape: &[usize], data: &[f64]) -> Result<Tensor<f64>> {
    Tensor::from_f64(shape.to_vec(), data)
}

fn grad_of(t: &Tensor<f64>) -> Result<Vec<f64>> {
    t.grad().map(<[f64]>::to_vec).ok_or_else(|| Error::Shape("parameter has no gradient buffer".into()))
}

fn input_grad(g: Option<Tensor<f64>>) -> Result<Tensor<f64>> {
    g.ok_or_else(|| Error::Shape("input gradient was not returned".into()))
}

fn conv(algorithm: ConvAlgorithm, case: u64) -> Result<f64> {
    let mut r = stream(case, "gradcheck-conv", &[algorithm as u64]);
    let batch = r.random_range(1..=3);
    let len = r.random_range(4..=24);
    let k = r.random_range(1..=7usize).min(len);
    let (cin, cout) = (r.random_range(1..=3), r.random_range(1..=4));
    let mut params = conv_params::<f64, _>(k, cin, cout, &mut r);
    params.bias = tensor(&[cout], &uniform(&mut r, cout, 1.0))?;
    let x = uniform(&mut r, batch * len * cin, 1.0);
    let proj = uniform(&mut r, batch * len * cout, 1.0);
    let x_shape = [batch, len, cin];
    let w_shape = params.weights.shape().to_vec();

    let mut layer = Conv1d::new(params.clone())?.with_algorithm(algorithm);
    layer.params.zero_grad();
    layer.forward(&tensor(&x_shape, &x)?)?;
    let dx = input_grad(layer.backward(&tensor(&[batch, len, cout], &proj)?, true)?)?;
    let (dw, db) = (grad_of(&layer.params.weights)?, grad_of(&layer.params.bias)?);

    let eval = |x: &[f64], w: &[f64], b: &[f64]| -> Result<f64> {
        let mut p = params.clone();
        p.weights = tensor(&w_shape, w)?;
        p.bias = tensor(&[cout], b)?;
        let mut c = Conv1d::new(p)?.with_algorithm(algorithm);
        Ok(dot(c.forward(&tensor(&x_shape, x)?)?.data(), &proj))
    };
    let (w, b) = (params.weights.to_vec_f64(), params.bias.to_vec_f64());
    let nx = numeric_gradient(&x, |x| eval(x, &w, &b).unwrap_or(f64::NAN));
    let nw = numeric_gradient(&w, |w| eval(&x, w, &b).unwrap_or(f64::NAN));
    let nb = numeric_gradient(&b, |b| eval(&x, &w, b).unwrap_or(f64::NAN));
    Ok(worst(&[(&nx, dx.data()), (&nw, &dw), (&nb, &db)]))
}

fn dense(case: u64) -> Result<f64> {
    let mut r = stream(case, "gradcheck-dense", &[]);
    let (batch, n_in, n_out) = (r.random_range(1..=4), r.random_range(1..=6), r.random_range(1..=5));
    let mut params = dense_params::<f64, _>(n_in, n_out, case % 2 == 0, &mut r);
    params.bias = tensor(&[n_out], &uniform(&mut r, n_out, 1.0))?;
    let x = uniform(&mut r, batch * n_in, 1.0);
    let proj = uniform(&mut r, batch * n_out, 1.0);

    let mut layer = Dense::new(params.clone())?;
    layer.params.zero_grad();
    layer.forward(&tensor(&[batch, n_in], &x)?)?;
    let dx = input_grad(layer.backward(&tensor(&[batch, n_out], &proj)?, true)?)?;
    let (dw, db) = (grad_of(&layer.params.weights)?, grad_of(&layer.params.bias)?);

    let eval = |x: &[f64], w: &[f64], b: &[f64]| -> Result<f64> {
        let mut p = params.clone();
        p.weights = tensor(&[n_in, n_out], w)?;
        p.bias = tensor(&[n_out], b)?;
        Ok(dot(Dense::new(p)?.forward(&tensor(&[batch, n_in], x)?)?.data(), &proj))
    };
    let (w, b) = (params.weights.to_vec_f64(), params.bias.to_vec_f64());
    let nx = numeric_gradient(&x, |x| eval(x, &w, &b).unwrap_or(f64::NAN));
    let nw = numeric_gradient(&w, |w| eval(&x, w, &b).unwrap_or(f64::NAN));
    let nb = numeric_gradient(&b, |b| eval(&x, &w, b).unwrap_or(f64::NAN));
    Ok(worst(&[(&nx, dx.data()), (&nw, &dw), (&nb, &db)]))
}

fn worst(pairs: &[(&[f64], &[f64])]) -> f64 {
    pairs.iter().map(|(n, a)| relative_error(n, a)).fold(0.0, f64::max)
}

/// Check a parameter-free layer given its forward pass and a
/// forward-then-backward pass.
fn stateless(
    x: &[f64],
    shape: &[usize],
    proj: &[f64],
    forward: impl Fn(Tensor<f64>) -> Result<Tensor<f64>>,
    backward: impl FnOnce(Tensor<f64>, Tensor<f64>) -> Result<Tensor<f64>>,
) -> Result<f64> {
    let out_shape = forward(tensor(shape, x)?)?.shape().to_vec();
    let dx = backward(tensor(shape, x)?, tensor(&out_shape, proj)?)?;
    let num = numeric_gradient(x, |x| {
        tensor(shape, x).and_then(&forward).map_or(f64::NAN, |y| dot(y.data(), proj))
    });
    Ok(relative_error(&num, dx.data()))
}

fn maxpool(case: u64) -> Result<f64> {
    let mut r = stream(case, "gradcheck-pool", &[]);
    let (batch, ch) = (r.random_range(1..=3), r.random_range(1..=4));
    let (size, stride) = (r.random_range(1..=8), r.random_range(1..=3));
    let len = size + r.random_range(0..=20);
    let shape = [batch, len, ch];
    let x = distinct(&mut r, batch * len * ch);
    let out_len = (len - size) / stride + 1;
    let proj = uniform(&mut r, batch * out_len * ch, 1.0);
    stateless(
        &x,
        &shape,
        &proj,
        |t| MaxPool1d::new(size, stride).forward(&t),
        |t, g| {
            let mut pool = MaxPool1d::new(size, stride);
            pool.forward(&t)?;
            pool.backward(&g)
        },
    )
}

fn global_maxpool(case: u64) -> Result<f64> {
    let mut r = stream(case, "gradcheck-global-pool", &[]);
    let shape = [r.random_range(1..=3), r.random_range(1..=30), r.random_range(1..=5)];
    let x = distinct(&mut r, shape.iter().product());
    let proj = uniform(&mut r, shape[0] * shape[2], 1.0);
    stateless(
        &x,
        &shape,
        &proj,
        |t| GlobalMaxPool::new().forward(&t),
        |t, g| {
            let mut pool = GlobalMaxPool::new();
            pool.forward(&t)?;
            pool.backward(&g)
        },
    )
}

fn matrix_shape(r: &mut StreamRng, min_cols: usize) -> [usize; 2] {
    [r.random_range(1..=4), r.random_range(min_cols..=9)]
}

fn relu(case: u64) -> Result<f64> {
    let mut r = stream(case, "gradcheck-relu", &[]);
    let shape = matrix_shape(&mut r, 1);
    let x = distinct(&mut r, shape[0] * shape[1]);
    let proj = uniform(&mut r, x.len(), 1.0);
    stateless(&x, &shape, &proj, |t| Ok(Relu::new().forward(t)), |t, g| {
        let mut l = Relu::new();
        l.forward(t);
        l.backward(g)
    })
}

fn sigmoid(case: u64) -> Result<f64> {
    let mut r = stream(case, "gradcheck-sigmoid", &[]);
    let shape = matrix_shape(&mut r, 1);
    let x = uniform(&mut r, shape[0] * shape[1], 4.0);
    let proj = uniform(&mut r, x.len(), 1.0);
    stateless(&x, &shape, &proj, |t| Ok(Sigmoid::new().forward(t)), |t, g| {
        let mut l = Sigmoid::new();
        l.forward(t);
        l.backward(g)
    })
}

fn softmax(case: u64) -> Result<f64> {
    let mut r = stream(case, "gradcheck-softmax", &[]);
    let shape = matrix_shape(&mut r, 2);
    let x = uniform(&mut r, shape[0] * shape[1], 3.0);
    let proj = uniform(&mut r, x.len(), 1.0);
    stateless(&x, &shape, &proj, |t| Softmax::new().forward(t), |t, g| {
        let mut l = Softmax::new();
        l.forward(t)?;
        l.backward(g)
    })
}

/// Dropout switched off, and switched on with the mask held fixed by
/// reseeding; both are linear maps.
fn dropout(case: u64) -> Result<f64> {
    let mut r = stream(case, "gradcheck-dropout", &[]);
    let shape = matrix_shape(&mut r, 1);
    let x = uniform(&mut r, shape[0] * shape[1], 1.0);
    let proj = uniform(&mut r, x.len(), 1.0);
    let rate = r.random_range(0.0..0.9);
    let mut errors = Vec::new();
    for mode in [Mode::Eval, Mode::Train] {
        let mask = || stream(case, "gradcheck-mask", &[]);
        errors.push(stateless(&x, &shape, &proj, |t| Ok(Dropout::new(rate)?.forward(t, mode, &mut mask())), |t, g| {
            let mut l = Dropout::new(rate)?;
            l.forward(t, mode, &mut mask());
            l.backward(g)
        })?);
    }
    Ok(errors.into_iter().fold(0.0, f64::max))
}

fn binary_targets(r: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| f64::from(r.random_range(0..2u8))).collect()
}

fn bce(case: u64) -> Result<f64> {
    let mut r = stream(case, "gradcheck-bce", &[]);
    let n = r.random_range(1..=10);
    let psi: Vec<f64> = (0..n).map(|_| r.random_range(0.05..0.95)).collect();
    let target = binary_targets(&mut r, n);
    let num = numeric_gradient(&psi, |p| bce_loss(p, &target).unwrap_or(f64::NAN));
    Ok(relative_error(&num, &bce_loss_grad(&psi, &target)?))
}

/// The returned loss is unweighted; the gradient carries the weight.
fn bce_logits(case: u64) -> Result<f64> {
    let mut r = stream(case, "gradcheck-bce-logits", &[]);
    let n = r.random_range(1..=10);
    let logits = uniform(&mut r, n, 5.0);
    let target = binary_targets(&mut r, n);
    let alpha = r.random_range(0.01..1.0);
    let (_, g) = bce_with_logits(&logits, &target, alpha)?;
    let num = numeric_gradient(&logits, |z| bce_with_logits(z, &target, alpha).map_or(f64::NAN, |(l, _)| alpha * l));
    Ok(relative_error(&num, &g))
}

fn cross_entropy(case: u64) -> Result<f64> {
    let mut r = stream(case, "gradcheck-ce", &[]);
    let (n, classes) = (r.random_range(1..=6), r.random_range(2..=5));
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    let mut rho = Vec::with_capacity(n * classes);
    for _ in 0..n {
        let raw: Vec<f64> = (0..classes).map(|_| r.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        rho.extend(raw.iter().map(|v| v / s));
    }
    let num = numeric_gradient(&rho, |p| ce_loss(p, classes, &labels).unwrap_or(f64::NAN));
    let on_probs = relative_error(&num, &ce_loss_grad(&rho, classes, &labels)?);

    let logits = uniform(&mut r, n * classes, 4.0);
    let (_, g) = softmax_ce(&logits, classes, &labels)?;
    let num = numeric_gradient(&logits, |z| softmax_ce(z, classes, &labels).map_or(f64::NAN, |(l, _)| l));
    Ok(on_probs.max(relative_error(&num, &g)))
}

fn l2(case: u64) -> Result<f64> {
    let mut r = stream(case, "gradcheck-l2", &[]);
    let n = r.random_range(1..=30);
    let w = uniform(&mut r, n, 1.0);
    let lambda = r.random_range(1e-5..1e-1);
    let mut g = vec![0.0; n];
    add_l2_grad(&w, lambda, &mut g);
    Ok(relative_error(&numeric_gradient(&w, |w| l2_penalty(w, lambda)), &g))
}
