//! Loss functions. Values are accumulated in f64 regardless of the tensor
//! element type; gradients are returned in the element type.

use crate::error::{Error, Result};

use super::layers::sigmoid_scalar;
use super::Scalar;

/// Probabilities are clamped into `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-12;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} predictions vs {b} targets")));
    }
    if a == 0 {
        return Err(Error::InvalidInput(format!("{what}: empty batch")));
    }
    Ok(())
}

/// Mean binary cross-entropy −[p·ln ψ + (1−p)·ln(1−ψ)].
pub fn bce_loss(psi: &[f64], target: &[f64]) -> Result<f64> {
    check_len("bce", psi.len(), target.len())?;
    let sum: f64 = psi
        .iter()
        .zip(target)
        .map(|(&q, &p)| {
            let q = clamp_prob(q);
            -(p * q.ln() + (1.0 - p) * (1.0 - q).ln())
        })
        .sum();
    Ok(sum / psi.len() as f64)
}

/// Gradient of [`bce_loss`] with respect to ψ. Zero where clamping is active.
pub fn bce_loss_grad(psi: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_len("bce", psi.len(), target.len())?;
    let n = psi.len() as f64;
    Ok(psi
        .iter()
        .zip(target)
        .map(|(&q, &p)| {
            if q < EPS || q > 1.0 - EPS {
                0.0
            } else {
                (-p / q + (1.0 - p) / (1.0 - q)) / n
            }
        })
        .collect())
}

/// BCE evaluated on logits z with ψ = σ(z), without forming ψ.
/// Returns the mean loss and dL/dz scaled by `weight`.
pub fn bce_with_logits<T: Scalar>(logits: &[T], target: &[f64], weight: f64) -> Result<(f64, Vec<T>)> {
    check_len("bce", logits.len(), target.len())?;
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(target)
        .map(|(&z, &p)| {
            let z = z.as_f64();
            loss += z.max(0.0) - z * p + (-z.abs()).exp().ln_1p();
            T::of(weight * (sigmoid_scalar(z) - p) / n)
        })
        .collect();
    Ok((loss / n, grad))
}

/// Mean categorical cross-entropy −ln ρ_y over rows of `classes` probabilities.
pub fn ce_loss(rho: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    check_len("cross-entropy", rho.len(), labels.len() * classes)?;
    let mut sum = 0.0;
    for (row, &y) in rho.chunks_exact(classes).zip(labels) {
        let p = row
            .get(y)
            .ok_or_else(|| Error::InvalidInput(format!("label {y} outside {classes} classes")))?;
        sum -= clamp_prob(*p).ln();
    }
    Ok(sum / labels.len() as f64)
}

/// Gradient of [`ce_loss`] with respect to ρ.
pub fn ce_loss_grad(rho: &[f64], classes: usize, labels: &[usize]) -> Result<Vec<f64>> {
    check_len("cross-entropy", rho.len(), labels.len() * classes)?;
    let n = labels.len() as f64;
    let mut grad = vec![0.0; rho.len()];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::InvalidInput(format!("label {y} outside {classes} classes")));
        }
        let p = rho[i * classes + y];
        if (EPS..=1.0 - EPS).contains(&p) {
            grad[i * classes + y] = -1.0 / (p * n);
        }
    }
    Ok(grad)
}

/// Softmax followed by cross-entropy, evaluated on logits.
/// Returns the mean loss and dL/dz = (softmax(z) − onehot(y)) / n.
pub fn softmax_ce<T: Scalar>(logits: &[T], classes: usize, labels: &[usize]) -> Result<(f64, Vec<T>)> {
    check_len("cross-entropy", logits.len(), labels.len() * classes)?;
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks_exact(classes).zip(labels) {
        if y >= classes {
            return Err(Error::InvalidInput(format!("label {y} outside {classes} classes")));
        }
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += sum.ln() - (row[y].as_f64() - max);
        for (c, e) in exps.iter().enumerate() {
            let onehot = if c == y { 1.0 } else { 0.0 };
            grad.push(T::of((e / sum - onehot) / n));
        }
    }
    Ok((loss / n, grad))
}

/// Σ α_j · L_j.
pub fn weighted_total_loss(per_task: &[f64], alpha: &[f64]) -> Result<f64> {
    if per_task.len() != alpha.len() {
        return Err(Error::Shape(format!("{} task losses vs {} coefficients", per_task.len(), alpha.len())));
    }
    Ok(per_task.iter().zip(alpha).map(|(l, a)| l * a).sum())
}

/// λ·Σw².
pub fn l2_penalty<T: Scalar>(weights: &[T], lambda: f64) -> f64 {
    lambda * weights.iter().map(|w| w.as_f64() * w.as_f64()).sum::<f64>()
}

/// Add the gradient 2λw of [`l2_penalty`] into `grad`.
pub fn add_l2_grad<T: Scalar>(weights: &[T], lambda: f64, grad: &mut [T]) {
    let two_lambda = T::of(2.0 * lambda);
    for (g, &w) in grad.iter_mut().zip(weights) {
        *g += two_lambda * w;
    }
}
