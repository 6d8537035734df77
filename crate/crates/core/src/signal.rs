//! Signal representation and the pre-processing chain: resampling,
//! baseline-wander removal, per-subject z-scoring and fixed-window
//! segmentation.
//!
//! All arithmetic is `f64`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Sample rate the network expects.
pub const TARGET_RATE: u32 = 256;
/// Window length in seconds.
pub const WINDOW_SECONDS: f64 = 10.0;
/// Samples per network input window at [`TARGET_RATE`].
pub const SEGMENT_LEN: usize = 2560;

/// A uniformly sampled single-lead ECG record.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: u32,
    subject_id: String,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32, subject_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("signal has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate, subject_id: subject_id.into() })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    fn with_samples(&self, samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate, subject_id: self.subject_id.clone() }
    }
}

/// A fixed-length network input window cut from a [`Signal`].
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f64>,
    pub subject_id: String,
    pub start: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Blackman-windowed sinc low-pass kernel, unit DC gain.
/// `cutoff` is in cycles per sample (0, 0.5).
fn lowpass_kernel(cutoff: f64, transition: f64) -> Vec<f64> {
    let taps = ((5.5 / transition).ceil() as usize) | 1;
    let half = (taps / 2) as isize;
    let mut h: Vec<f64> = (-half..=half)
        .map(|n| {
            let n_f = n as f64;
            let sinc = if n == 0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * n_f).sin() / (PI * n_f)
            };
            let phase = 2.0 * PI * (n_f + half as f64) / (taps - 1) as f64;
            let window = 0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos();
            sinc * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Zero-phase FIR filtering. Near the edges the kernel is truncated and
/// renormalised by the weight that remains inside the signal, which keeps
/// the operation linear and preserves DC up to the boundary.
fn filter_centered(x: &[f64], h: &[f64]) -> Vec<f64> {
    let half = (h.len() / 2) as isize;
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            let lo = (i - half).max(0);
            let hi = (i + half).min(n - 1);
            let mut acc = 0.0;
            let mut weight = 0.0;
            for j in lo..=hi {
                let tap = h[(j - i + half) as usize];
                acc += tap * x[j as usize];
                weight += tap;
            }
            acc / weight
        })
        .collect()
}

/// Convert `signal` to `target_rate`.
///
/// Downsampling first applies a windowed-sinc anti-alias low-pass with its
/// cutoff at 0.45 × `target_rate`, then linearly interpolates at the target
/// sample instants. Equal rates return the samples unchanged.
pub fn resample(signal: &Signal, target_rate: u32) -> Result<Signal> {
    if target_rate == 0 {
        return Err(Error::InvalidParameter("target rate must be positive".into()));
    }
    if signal.is_empty() {
        return Err(Error::InvalidInput("cannot resample an empty signal".into()));
    }
    let source_rate = signal.sample_rate();
    if source_rate == target_rate {
        return Ok(signal.clone());
    }
    let ratio = f64::from(target_rate) / f64::from(source_rate);
    let filtered;
    let source = if target_rate < source_rate {
        let cutoff = 0.45 * ratio;
        let transition = 0.05 * ratio;
        filtered = filter_centered(signal.samples(), &lowpass_kernel(cutoff, transition));
        &filtered[..]
    } else {
        signal.samples()
    };

    let n_in = source.len();
    let n_out = ((n_in as f64 * ratio).round() as usize).max(1);
    let step = f64::from(source_rate) / f64::from(target_rate);
    let last = (n_in - 1) as f64;
    let out = (0..n_out)
        .map(|j| {
            let pos = (j as f64 * step).min(last);
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            if i0 + 1 < n_in {
                source[i0] * (1.0 - frac) + source[i0 + 1] * frac
            } else {
                source[i0]
            }
        })
        .collect();
    Ok(signal.with_samples(out, target_rate))
}

/// Second-order IIR section, normalised so that a0 = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Butterworth (Q = 1/√2) high-pass via the bilinear transform with
    /// pre-warping.
    pub fn butterworth_highpass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let (sin_w, cos_w) = w0.sin_cos();
        let alpha = sin_w / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 + cos_w) / 2.0 / a0,
            b1: -(1.0 + cos_w) / a0,
            b2: (1.0 + cos_w) / 2.0 / a0,
            a1: -2.0 * cos_w / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    /// Single forward pass from a zero state (direct form I).
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b0 * x0 + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

/// High-pass cutoff used for baseline-wander removal.
pub const BASELINE_CUTOFF_HZ: f64 = 0.8;

/// Remove baseline wander with a 2nd-order Butterworth high-pass at 0.8 Hz.
///
/// The filter runs causally in one pass, so it introduces the usual IIR
/// phase distortion near the cutoff; QRS energy sits well above it.
pub fn remove_baseline_wander(signal: &Signal) -> Result<Signal> {
    if signal.sample_rate() < 2 {
        return Err(Error::InvalidInput(format!(
            "sample rate {} Hz is too low for a {BASELINE_CUTOFF_HZ} Hz high-pass",
            signal.sample_rate()
        )));
    }
    let biquad = Biquad::butterworth_highpass(BASELINE_CUTOFF_HZ, f64::from(signal.sample_rate()));
    Ok(signal.with_samples(biquad.filter(signal.samples()), signal.sample_rate()))
}

/// Population mean and standard deviation.
pub fn mean_and_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Person-specific z-score: statistics are pooled over every signal that
/// shares a subject id. Output order matches input order.
pub fn zscore_per_subject(signals: &[Signal]) -> Result<Vec<Signal>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in signals.iter().enumerate() {
        groups.entry(s.subject_id()).or_default().push(i);
    }
    let mut stats = BTreeMap::new();
    for (subject, idx) in &groups {
        let pooled = idx.iter().flat_map(|&i| signals[i].samples().iter().copied());
        let (mean, std) = mean_and_std(pooled);
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::Degenerate(format!("subject {subject:?} has zero variance")));
        }
        stats.insert(*subject, (mean, std));
    }
    Ok(signals
        .iter()
        .map(|s| {
            let (mean, std) = stats[s.subject_id()];
            let z = s.samples().iter().map(|v| (v - mean) / std).collect();
            s.with_samples(z, s.sample_rate())
        })
        .collect())
}

/// Cut `signal` into contiguous, non-overlapping windows. A trailing
/// remainder shorter than one window is dropped.
pub fn segment(signal: &Signal, window_seconds: f64) -> Result<Vec<Segment>> {
    if !(window_seconds > 0.0) || !window_seconds.is_finite() {
        return Err(Error::InvalidParameter(format!("window of {window_seconds} s")));
    }
    let window = (f64::from(signal.sample_rate()) * window_seconds).round() as usize;
    if window == 0 {
        return Err(Error::InvalidParameter("window shorter than one sample".into()));
    }
    Ok(signal
        .samples()
        .chunks_exact(window)
        .enumerate()
        .map(|(i, chunk)| Segment {
            samples: chunk.to_vec(),
            subject_id: signal.subject_id().to_owned(),
            start: i * window,
        })
        .collect())
}

/// The full chain applied to a set of raw recordings: resample to
/// [`TARGET_RATE`], remove baseline wander, z-score per subject, then cut
/// windows. Segments come out grouped by input signal, in input order.
pub fn preprocess(signals: &[Signal], window_seconds: f64) -> Result<Vec<Vec<Segment>>> {
    let filtered = signals
        .iter()
        .map(|s| resample(s, TARGET_RATE).and_then(|r| remove_baseline_wander(&r)))
        .collect::<Result<Vec<_>>>()?;
    zscore_per_subject(&filtered)?
        .iter()
        .map(|s| segment(s, window_seconds))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(samples: Vec<f64>, rate: u32) -> Signal {
        Signal::new(samples, rate, "s").unwrap()
    }

    /// Amplitude of the DFT component at `freq` (direct correlation).
    fn tone_amplitude(x: &[f64], rate: f64, freq: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * freq * i as f64 / rate;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        2.0 * (re * re + im * im).sqrt() / x.len() as f64
    }

    #[test]
    fn signal_rejects_bad_input() {
        assert!(Signal::new(vec![], 256, "a").is_err());
        assert!(Signal::new(vec![1.0], 0, "a").is_err());
        assert!(Signal::new(vec![f64::NAN], 256, "a").is_err());
    }

    #[test]
    fn resample_factor_eight_length() {
        let s = sig((0..20480).map(|i| (i as f64 * 0.01).sin()).collect(), 2048);
        let r = resample(&s, 256).unwrap();
        assert_eq!(r.len(), 2560);
        assert_eq!(r.sample_rate(), 256);
    }

    #[test]
    fn resample_identity_is_bit_exact() {
        let s = sig(vec![0.1, -3.7, 2.25, 1e-300], 700);
        let r = resample(&s, 700).unwrap();
        assert_eq!(r.samples(), s.samples());
    }

    #[test]
    fn resample_sine_700_to_256() {
        let x: Vec<f64> = (0..7000).map(|i| (2.0 * PI * 5.0 * i as f64 / 700.0).sin()).collect();
        let r = resample(&sig(x, 700), 256).unwrap();
        assert_eq!(r.len(), 2560);
        // Reference: the analytic sine sampled directly at 256 Hz.
        let reference: Vec<f64> = (0..2560).map(|i| (2.0 * PI * 5.0 * i as f64 / 256.0).sin()).collect();
        let amp = tone_amplitude(r.samples(), 256.0, 5.0);
        let ref_amp = tone_amplitude(&reference, 256.0, 5.0);
        assert!((amp / ref_amp - 1.0).abs() < 0.02, "amp {amp} vs {ref_amp}");
        // Dominant bin is 5 Hz (bins are 0.1 Hz apart for 10 s).
        let dominant = (1..1280)
            .map(|b| (b, tone_amplitude(r.samples(), 256.0, b as f64 * 0.1)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert_eq!(dominant, 50);
    }

    #[test]
    fn resample_removes_aliasing_tone() {
        // 200 Hz is above the 128 Hz Nyquist of the target; it must not fold to 56 Hz.
        let x: Vec<f64> = (0..7000).map(|i| (2.0 * PI * 200.0 * i as f64 / 700.0).sin()).collect();
        let r = resample(&sig(x, 700), 256).unwrap();
        let folded = tone_amplitude(&r.samples()[200..2360], 256.0, 56.0);
        assert!(folded < 0.01, "alias amplitude {folded}");
    }

    #[test]
    fn resample_errors() {
        assert!(resample(&sig(vec![1.0], 256), 0).is_err());
    }

    #[test]
    fn highpass_removes_dc() {
        let s = sig(vec![5.0; 2560], 256);
        let y = remove_baseline_wander(&s).unwrap();
        let mean = y.samples().iter().sum::<f64>() / y.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert_eq!(y.len(), 2560);
    }

    #[test]
    fn highpass_zero_is_zero() {
        let y = remove_baseline_wander(&sig(vec![0.0; 1000], 256)).unwrap();
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn highpass_attenuates_wander() {
        // 60 s so that 0.1 Hz falls exactly on a DFT bin; skip the first 10 s of transient.
        let rate = 256.0;
        let x: Vec<f64> = (0..256 * 60)
            .map(|i| {
                let t = i as f64 / rate;
                (2.0 * PI * 0.1 * t).sin() + (2.0 * PI * 10.0 * t).sin()
            })
            .collect();
        let y = remove_baseline_wander(&sig(x.clone(), 256)).unwrap();
        let tail = &y.samples()[256 * 10..];
        let in_tail = &x[256 * 10..];
        let ratio_in = tone_amplitude(in_tail, rate, 0.1) / tone_amplitude(in_tail, rate, 10.0);
        let ratio_out = tone_amplitude(tail, rate, 0.1) / tone_amplitude(tail, rate, 10.0);
        let attenuation_db = 20.0 * (ratio_in / ratio_out).log10();
        assert!(attenuation_db >= 20.0, "attenuation {attenuation_db} dB");
    }

    #[test]
    fn highpass_is_linear() {
        let a: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
        let b: Vec<f64> = (0..500).map(|i| ((i * 53) % 97) as f64 / 40.0).collect();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.5 * x - 0.75 * y).collect();
        let fa = remove_baseline_wander(&sig(a, 256)).unwrap();
        let fb = remove_baseline_wander(&sig(b, 256)).unwrap();
        let fm = remove_baseline_wander(&sig(mix, 256)).unwrap();
        for i in 0..500 {
            let expect = 2.5 * fa.samples()[i] - 0.75 * fb.samples()[i];
            assert!((fm.samples()[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn zscore_closed_form() {
        let out = zscore_per_subject(&[sig(vec![1.0, 2.0, 3.0], 256)]).unwrap();
        let expect = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (o, e) in out[0].samples().iter().zip(expect) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_pools_per_subject() {
        let signals = vec![
            Signal::new(vec![10.0, 12.0, 14.0], 256, "a").unwrap(),
            Signal::new(vec![-3.0, 0.5], 256, "b").unwrap(),
            Signal::new(vec![11.0, 20.0], 256, "a").unwrap(),
            Signal::new(vec![4.0, 1.0, 0.0], 256, "b").unwrap(),
        ];
        let out = zscore_per_subject(&signals).unwrap();
        for subject in ["a", "b"] {
            let pooled: Vec<f64> = out
                .iter()
                .filter(|s| s.subject_id() == subject)
                .flat_map(|s| s.samples().to_vec())
                .collect();
            let (m, s) = mean_and_std(pooled.iter().copied());
            assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9, "{subject}: {m} {s}");
        }
        // Idempotent.
        let again = zscore_per_subject(&out).unwrap();
        for (x, y) in out.iter().zip(&again) {
            for (u, v) in x.samples().iter().zip(y.samples()) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zscore_zero_variance_names_subject() {
        let err = zscore_per_subject(&[Signal::new(vec![2.0; 4], 256, "flat-07").unwrap()]).unwrap_err();
        assert!(matches!(err, Error::Degenerate(ref m) if m.contains("flat-07")));
    }

    #[test]
    fn segmentation_counts() {
        let count = |seconds: usize| segment(&sig(vec![0.5; 256 * seconds], 256), 10.0).unwrap();
        let segs = count(30);
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.len() == 2560));
        assert_eq!(count(25).len(), 2);
        assert!(count(9).is_empty());
    }

    #[test]
    fn segments_cover_prefix_in_order() {
        let x: Vec<f64> = (0..256 * 25).map(|i| i as f64).collect();
        let segs = segment(&sig(x.clone(), 256), 10.0).unwrap();
        let joined: Vec<f64> = segs.iter().flat_map(|s| s.samples.clone()).collect();
        assert_eq!(&joined[..], &x[..joined.len()]);
        assert_eq!(segs[1].start, 2560);
    }
}
