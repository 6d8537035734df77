//! The six pretext transformations.
//!
//! Every function takes a window of samples and returns a new window of the
//! same length. Randomised transforms are fully determined by their seed.

use std::fmt;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Label of a pretext sample: the original or one of six transformations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum TransformId {
    Original = 0,
    Noise = 1,
    Scale = 2,
    Negation = 3,
    TemporalInversion = 4,
    Permutation = 5,
    TimeWarp = 6,
}

impl TransformId {
    pub const ALL: [TransformId; 7] = [
        TransformId::Original,
        TransformId::Noise,
        TransformId::Scale,
        TransformId::Negation,
        TransformId::TemporalInversion,
        TransformId::Permutation,
        TransformId::TimeWarp,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(usize::from(code))
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("transform code {code} outside [0, 6]")))
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformId::Original => "original",
            TransformId::Noise => "noise",
            TransformId::Scale => "scale",
            TransformId::Negation => "negation",
            TransformId::TemporalInversion => "temporal_inversion",
            TransformId::Permutation => "permutation",
            TransformId::TimeWarp => "time_warp",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == name || t.code().to_string() == name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown transform {name:?}")))
    }

    /// Negation and temporal inversion have no tunable parameter.
    pub fn is_parameterless(self) -> bool {
        matches!(self, TransformId::Negation | TransformId::TemporalInversion)
    }
}

impl fmt::Display for TransformId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters for the six transformations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformSpec {
    /// Target signal-to-noise ratio of the noise transform, dB.
    pub snr_db: f64,
    pub scale_factor: f64,
    pub permutation_segments: usize,
    pub timewarp_segments: usize,
    pub stretch_factor: f64,
    pub rng_seed: u64,
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self {
            snr_db: 15.0,
            scale_factor: 0.9,
            permutation_segments: 20,
            timewarp_segments: 9,
            stretch_factor: 1.05,
            rng_seed: 0,
        }
    }
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidParameter("snr_db must be finite".into()));
        }
        if !(self.scale_factor > 0.0) || !self.scale_factor.is_finite() {
            return Err(Error::InvalidParameter(format!("scale factor {} must be > 0", self.scale_factor)));
        }
        if self.permutation_segments < 1 || self.timewarp_segments < 1 {
            return Err(Error::InvalidParameter("segment counts must be >= 1".into()));
        }
        if !(self.stretch_factor >= 1.0) || !self.stretch_factor.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "stretch factor {} must be >= 1",
                self.stretch_factor
            )));
        }
        Ok(())
    }

    /// Copy of `self` whose seed is the derived stream for one
    /// (segment, transform) pair.
    pub fn for_stream(&self, master_seed: u64, segment_index: u64, id: TransformId) -> Self {
        Self {
            rng_seed: rng::derive_seed(master_seed, "transform", &[segment_index, u64::from(id.code())]),
            ..*self
        }
    }
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Add white Gaussian noise at `snr_db` relative to the window's mean power.
///
/// Noise variance is `10^((P_dB − snr_db)/10)` with `P_dB = 10·log10(mean(x²))`.
pub fn add_noise(x: &[f64], snr_db: f64, seed: u64) -> Result<Vec<f64>> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidParameter("snr_db must be finite".into()));
    }
    let power = mean_power(x);
    if !(power > 0.0) {
        return Err(Error::Degenerate("noise addition on an all-zero window".into()));
    }
    let signal_db = 10.0 * power.log10();
    let noise_power = 10f64.powf((signal_db - snr_db) / 10.0);
    let normal = Normal::new(0.0, noise_power.sqrt())
        .map_err(|e| Error::InvalidParameter(format!("noise distribution: {e}")))?;
    let mut r = rng::stream(seed, "noise", &[]);
    Ok(x.iter().map(|v| v + normal.sample(&mut r)).collect())
}

pub fn scale(x: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("scale factor {beta} must be > 0")));
    }
    Ok(x.iter().map(|v| beta * v).collect())
}

pub fn negate(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| -v).collect()
}

pub fn invert_time(x: &[f64]) -> Vec<f64> {
    x.iter().rev().copied().collect()
}

/// Split `len` samples into `m` contiguous pieces; the first `len % m`
/// pieces take one extra sample.
pub fn split_pieces(len: usize, m: usize) -> Result<Vec<Range<usize>>> {
    if m == 0 || m > len {
        return Err(Error::InvalidParameter(format!("cannot split {len} samples into {m} pieces")));
    }
    let base = len / m;
    let extra = len % m;
    let mut start = 0;
    Ok((0..m)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect())
}

/// Reassemble the pieces of `x` in the given order (a permutation of `0..m`).
pub fn permute_with_order(x: &[f64], m: usize, order: &[usize]) -> Result<Vec<f64>> {
    let pieces = split_pieces(x.len(), m)?;
    let mut seen = vec![false; m];
    if order.len() != m || order.iter().any(|&i| i >= m || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::InvalidParameter(format!("{order:?} is not a permutation of 0..{m}")));
    }
    Ok(order.iter().flat_map(|&i| x[pieces[i].clone()].iter().copied()).collect())
}

/// Split into `m` pieces and shuffle them with a seeded uniform permutation.
pub fn permute(x: &[f64], m: usize, seed: u64) -> Result<Vec<f64>> {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng::stream(seed, "permutation", &[]));
    permute_with_order(x, m, &order)
}

/// Linear-interpolation resampling of one piece to `round(len · factor)`
/// samples. First and last samples map onto the piece end points, so a
/// factor of 1 reproduces the piece exactly.
pub fn interpolate(piece: &[f64], factor: f64) -> Vec<f64> {
    let n = piece.len();
    let n_out = ((n as f64 * factor).round() as usize).max(1);
    if n == 1 || n_out == 1 {
        return vec![piece[0]; n_out];
    }
    let step = (n - 1) as f64 / (n_out - 1) as f64;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * step;
            let i0 = (pos.floor() as usize).min(n - 2);
            let frac = pos - i0 as f64;
            piece[i0] + (piece[i0 + 1] - piece[i0]) * frac
        })
        .collect()
}

/// Time-warp with an explicit choice of which pieces are stretched by `k`;
/// the others are squeezed by `1/k`. The result is clipped or zero-padded
/// at the end to the input length.
pub fn time_warp_with_selection(x: &[f64], m: usize, k: f64, stretched: &[bool]) -> Result<Vec<f64>> {
    if !(k >= 1.0) || !k.is_finite() {
        return Err(Error::InvalidParameter(format!("stretch factor {k} must be >= 1")));
    }
    let pieces = split_pieces(x.len(), m)?;
    if stretched.len() != m {
        return Err(Error::InvalidParameter("selection length differs from piece count".into()));
    }
    let mut out = Vec::with_capacity(x.len() + x.len() / 4);
    for (range, &s) in pieces.into_iter().zip(stretched) {
        out.extend(interpolate(&x[range], if s { k } else { 1.0 / k }));
    }
    out.resize(x.len(), 0.0);
    Ok(out)
}

/// Split into `m` pieces, stretch a seeded random `floor(m/2)` of them by `k`
/// and squeeze the rest by `1/k`.
pub fn time_warp(x: &[f64], m: usize, k: f64, seed: u64) -> Result<Vec<f64>> {
    if m == 0 || m > x.len() {
        return Err(Error::InvalidParameter(format!("cannot split {} samples into {m} pieces", x.len())));
    }
    let mut stretched = vec![false; m];
    stretched[..m / 2].iter_mut().for_each(|s| *s = true);
    stretched.shuffle(&mut rng::stream(seed, "time-warp", &[]));
    time_warp_with_selection(x, m, k, &stretched)
}

/// Apply transformation `id` using the parameters and seed in `spec`.
pub fn apply(x: &[f64], id: TransformId, spec: &TransformSpec) -> Result<Vec<f64>> {
    match id {
        TransformId::Original => Ok(x.to_vec()),
        TransformId::Noise => add_noise(x, spec.snr_db, spec.rng_seed),
        TransformId::Scale => scale(x, spec.scale_factor),
        TransformId::Negation => Ok(negate(x)),
        TransformId::TemporalInversion => Ok(invert_time(x)),
        TransformId::Permutation => permute(x, spec.permutation_segments, spec.rng_seed),
        TransformId::TimeWarp => time_warp(x, spec.timewarp_segments, spec.stretch_factor, spec.rng_seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_sine(n: usize) -> Vec<f64> {
        // Mean power exactly 1 over whole periods.
        (0..n).map(|i| std::f64::consts::SQRT_2 * (std::f64::consts::TAU * 8.0 * i as f64 / n as f64).sin()).collect()
    }

    #[test]
    fn transform_codes_round_trip() {
        for id in TransformId::ALL {
            assert_eq!(TransformId::from_code(id.code()).unwrap(), id);
            assert_eq!(TransformId::from_name(id.name()).unwrap(), id);
        }
        assert!(TransformId::from_code(7).is_err());
    }

    #[test]
    fn noise_variance_formula() {
        // Mean power 1 (0 dB) at 10 dB SNR gives noise variance 0.1.
        let x = vec![1.0; 20_000];
        let y = add_noise(&x, 10.0, 1).unwrap();
        let var = y.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() / y.len() as f64;
        assert!((var - 0.1).abs() < 0.005, "variance {var}");
    }

    #[test]
    fn noise_snr_fidelity() {
        let x = unit_sine(2560);
        let p_signal = mean_power(&x);
        for alpha in [2.0, 15.0, 45.0] {
            let mean_snr = (0..100)
                .map(|seed| {
                    let y = add_noise(&x, alpha, seed).unwrap();
                    let p_noise = y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
                    10.0 * (p_signal / p_noise).log10()
                })
                .sum::<f64>()
                / 100.0;
            assert!((mean_snr - alpha).abs() <= 0.5, "alpha {alpha}: {mean_snr}");
        }
    }

    #[test]
    fn noise_vanishes_at_high_snr_and_rejects_zero() {
        let x = unit_sine(256);
        let y = add_noise(&x, 300.0, 9).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(matches!(add_noise(&[0.0; 16], 15.0, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn scale_cases() {
        assert_eq!(scale(&[1.0, -2.0], 0.9).unwrap(), vec![0.9, -1.8]);
        let x = unit_sine(64);
        assert_eq!(scale(&x, 1.0).unwrap(), x);
        let back = scale(&scale(&x, 2.0).unwrap(), 0.5).unwrap();
        assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(scale(&x, 0.0).is_err());
        assert!(scale(&x, -1.0).is_err());
    }

    #[test]
    fn negate_and_invert_cases() {
        assert_eq!(negate(&[1.0, -2.0, 3.0]), vec![-1.0, 2.0, -3.0]);
        assert_eq!(negate(&[0.0; 3]).iter().filter(|v| **v == 0.0).count(), 3);
        assert_eq!(invert_time(&[1.0, 2.0, 3.0]), vec![3.0, 2.0, 1.0]);
        let pal = [1.0, 4.0, 2.0, 4.0, 1.0];
        assert_eq!(invert_time(&pal), pal.to_vec());
    }

    #[test]
    fn piece_split_distributes_remainder_first() {
        let p = split_pieces(10, 3).unwrap();
        assert_eq!(p, vec![0..4, 4..7, 7..10]);
        assert!(split_pieces(3, 4).is_err());
        assert!(split_pieces(3, 0).is_err());
    }

    #[test]
    fn permute_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(permute_with_order(&x, 2, &[1, 0]).unwrap(), vec![3.0, 4.0, 1.0, 2.0]);
        assert_eq!(permute(&x, 1, 3).unwrap(), x.to_vec());
        assert!(permute(&x, 5, 0).is_err());
        assert!(permute_with_order(&x, 2, &[0, 0]).is_err());
    }

    #[test]
    fn time_warp_identity_and_length() {
        let x = unit_sine(2560);
        let y = time_warp(&x, 9, 1.0, 4).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-12));
        for m in [2, 3, 9, 20, 40] {
            for k in [1.05, 1.35, 2.0, 4.0] {
                assert_eq!(time_warp(&x, m, k, 11).unwrap().len(), 2560);
            }
        }
        assert!(time_warp(&x, 9, 0.9, 0).is_err());
        assert!(time_warp(&x[..4], 5, 1.1, 0).is_err());
    }

    #[test]
    fn stretched_ramp_stays_on_line() {
        let ramp: Vec<f64> = (0..50).map(|i| 0.5 + 0.25 * i as f64).collect();
        let out = interpolate(&ramp, 2.0);
        assert_eq!(out.len(), 100);
        let slope = 0.25 * 49.0 / 99.0;
        for (i, v) in out.iter().enumerate() {
            assert!((v - (0.5 + slope * i as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn time_warp_pads_with_trailing_zeros() {
        // Squeezing everything shortens the concatenation; the tail is zero.
        let x: Vec<f64> = (0..100).map(|i| 1.0 + i as f64).collect();
        let y = time_warp_with_selection(&x, 2, 2.0, &[false, false]).unwrap();
        assert_eq!(y.len(), 100);
        assert!(y[50..].iter().all(|&v| v == 0.0));
        // Stretching everything clips.
        let z = time_warp_with_selection(&x, 2, 2.0, &[true, true]).unwrap();
        assert_eq!(z.len(), 100);
        assert_eq!(z[0], 1.0);
        assert!(z.iter().all(|&v| v > 0.0 && v <= 50.0));
    }

    #[test]
    fn apply_dispatch() {
        let x = unit_sine(300);
        let spec = TransformSpec { rng_seed: 17, ..Default::default() };
        assert_eq!(apply(&x, TransformId::Original, &spec).unwrap(), x);
        assert_eq!(apply(&x, TransformId::Negation, &spec).unwrap(), negate(&x));
        let one = TransformSpec { permutation_segments: 1, ..spec };
        assert_eq!(apply(&x, TransformId::Permutation, &one).unwrap(), x);
        for id in TransformId::ALL.into_iter().skip(1) {
            let y = apply(&x, id, &spec).unwrap();
            assert_eq!(y.len(), x.len());
            assert_ne!(y, x, "{id} left the window unchanged");
            assert_eq!(y, apply(&x, id, &spec).unwrap());
        }
    }

    #[test]
    fn spec_validation() {
        assert!(TransformSpec::default().validate().is_ok());
        assert!(TransformSpec { scale_factor: 0.0, ..Default::default() }.validate().is_err());
        assert!(TransformSpec { stretch_factor: 0.5, ..Default::default() }.validate().is_err());
        assert!(TransformSpec { permutation_segments: 0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn permute_preserves_multiset(x in prop::collection::vec(-10.0f64..10.0, 40..300), m in 2usize..40, seed: u64) {
            let y = permute(&x, m, seed).unwrap();
            let mut a = x.clone();
            let mut b = y;
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn involutions(x in prop::collection::vec(-10.0f64..10.0, 1..200)) {
            prop_assert_eq!(negate(&negate(&x)), x.clone());
            prop_assert_eq!(invert_time(&invert_time(&x)), x);
        }
    }
}
