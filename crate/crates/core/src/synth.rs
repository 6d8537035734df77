//! Deterministic synthetic ECG.
//!
//! Each beat is a sum of five Gaussian bumps (P, Q, R, S, T). P and T
//! offsets and widths scale with √RR so that faster rhythms also shorten
//! the QT interval, as in real recordings.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::Signal;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Wave {
    /// Centre relative to the R peak, seconds at RR = 1 s.
    offset: f64,
    amplitude: f64,
    /// Gaussian standard deviation, seconds at RR = 1 s.
    width: f64,
    /// Whether offset and width stretch with √RR.
    rate_dependent: bool,
}

/// Per-subject beat template.
#[derive(Debug, Clone, PartialEq)]
pub struct Morphology {
    waves: [Wave; 5],
}

impl Morphology {
    pub fn standard() -> Self {
        let w = |offset, amplitude, width, rate_dependent| Wave { offset, amplitude, width, rate_dependent };
        Self {
            waves: [
                w(-0.20, 0.15, 0.025, true),
                w(-0.035, -0.12, 0.010, false),
                w(0.0, 1.0, 0.012, false),
                w(0.035, -0.22, 0.011, false),
                w(0.30, 0.30, 0.055, true),
            ],
        }
    }

    /// Standard template with seeded amplitude, width and timing jitter.
    pub fn from_seed(seed: u64) -> Self {
        let mut r = rng::stream(seed, "morphology", &[]);
        let mut m = Self::standard();
        for wave in &mut m.waves {
            wave.amplitude *= r.random_range(0.85..1.15);
            wave.width *= r.random_range(0.9..1.1);
            if wave.rate_dependent {
                wave.offset *= r.random_range(0.95..1.05);
            }
        }
        m
    }

    fn beat_value(&self, dt: f64, rr_scale: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| {
                let (off, width) = if w.rate_dependent {
                    (w.offset * rr_scale, w.width * rr_scale)
                } else {
                    (w.offset, w.width)
                };
                let z = (dt - off) / width;
                if z.abs() > 6.0 { 0.0 } else { w.amplitude * (-0.5 * z * z).exp() }
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub heart_rate_bpm: f64,
    pub duration_s: f64,
    pub sample_rate: u32,
    /// Gaussian floor noise power relative to the clean signal power;
    /// `None` disables noise.
    pub noise_floor_db: Option<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { heart_rate_bpm: 60.0, duration_s: 10.0, sample_rate: 256, noise_floor_db: None, seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(30.0..=220.0).contains(&self.heart_rate_bpm) {
            return Err(Error::InvalidParameter(format!(
                "heart rate {} bpm outside [30, 220]",
                self.heart_rate_bpm
            )));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::InvalidParameter(format!("duration {} s", self.duration_s)));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        if matches!(self.noise_floor_db, Some(db) if !db.is_finite()) {
            return Err(Error::InvalidParameter("noise floor must be finite or disabled".into()));
        }
        Ok(())
    }
}

fn render(config: &SynthConfig, morphology: &Morphology) -> Vec<f64> {
    let rate = f64::from(config.sample_rate);
    let n = (config.duration_s * rate).round() as usize;
    let rr = 60.0 / config.heart_rate_bpm;
    let rr_scale = rr.sqrt();
    let mut r = rng::stream(config.seed, "beat-phase", &[]);
    let phase = r.random_range(0.25..0.75) * rr;

    let mut x = vec![0.0; n];
    // One beat either side of the record so P and T tails enter smoothly.
    let first = -1i64;
    let last = (config.duration_s / rr).ceil() as i64 + 1;
    let reach = 0.8 * rr_scale.max(1.0);
    for beat in first..=last {
        let t_r = phase + beat as f64 * rr;
        let lo = (((t_r - reach) * rate).floor().max(0.0)) as usize;
        let hi = (((t_r + reach) * rate).ceil().max(0.0) as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
            *v += morphology.beat_value(i as f64 / rate - t_r, rr_scale);
        }
    }
    x
}

fn add_floor_noise(x: &mut [f64], noise_floor_db: f64, seed: u64) {
    let power = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let sd = (power * 10f64.powf(noise_floor_db / 10.0)).sqrt();
    if let Ok(normal) = Normal::new(0.0, sd) {
        let mut r = rng::stream(seed, "floor-noise", &[]);
        x.iter_mut().for_each(|v| *v += normal.sample(&mut r));
    }
}

/// Generate one record with the standard beat template varied by
/// `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<Signal> {
    config.validate()?;
    generate_with(config, &Morphology::from_seed(config.seed), "synthetic")
}

fn generate_with(config: &SynthConfig, morphology: &Morphology, subject: &str) -> Result<Signal> {
    let mut x = render(config, morphology);
    if x.is_empty() {
        return Err(Error::InvalidParameter("duration shorter than one sample".into()));
    }
    if let Some(db) = config.noise_floor_db {
        add_floor_noise(&mut x, db, config.seed);
    }
    Signal::new(x, config.sample_rate, subject)
}

/// Unlabelled recordings, one per subject, each with its own morphology and
/// a steady heart rate drawn from `rate_range`.
pub fn recording_corpus(
    n_recordings: usize,
    duration_s: f64,
    rate_range: (f64, f64),
    seed: u64,
) -> Result<Vec<Signal>> {
    if !(rate_range.0 <= rate_range.1) {
        return Err(Error::InvalidParameter(format!("empty heart-rate range {rate_range:?}")));
    }
    (0..n_recordings)
        .map(|i| {
            let rec_seed = rng::derive_seed(seed, "recording", &[i as u64]);
            let heart_rate_bpm = if rate_range.0 == rate_range.1 {
                rate_range.0
            } else {
                rng::stream(rec_seed, "rate", &[]).random_range(rate_range.0..rate_range.1)
            };
            let config = SynthConfig {
                heart_rate_bpm,
                duration_s,
                noise_floor_db: Some(-30.0),
                seed: rec_seed,
                ..SynthConfig::default()
            };
            config.validate()?;
            generate_with(&config, &Morphology::from_seed(rec_seed), &format!("recording-{i:03}"))
        })
        .collect()
}

/// Heart-rate band (bpm) for each proxy class.
pub const PROXY_RATE_BANDS: [(f64, f64); 2] = [(55.0, 70.0), (95.0, 115.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyConfig {
    pub n_subjects: usize,
    pub classes: usize,
    /// Recordings per subject; classes alternate so that each subject
    /// contributes equally to both.
    pub trials_per_subject: usize,
    pub trial_seconds: f64,
    pub sample_rate: u32,
    pub noise_floor_db: Option<f64>,
    /// Peak amplitude of a slow respiratory baseline drift.
    pub wander_amplitude: f64,
    pub seed: u64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            n_subjects: 8,
            classes: 2,
            trials_per_subject: 10,
            trial_seconds: 60.0,
            sample_rate: 256,
            noise_floor_db: Some(-30.0),
            wander_amplitude: 0.3,
            seed: 0,
        }
    }
}

/// One labelled recording of the emotion proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyRecord {
    pub signal: Signal,
    pub label: usize,
    pub heart_rate_bpm: f64,
}

/// Two-class arousal stand-in: class 0 is a resting rhythm (55–70 bpm),
/// class 1 an aroused one (95–115 bpm). Morphology varies per subject.
pub fn generate_emotion_proxy(config: &ProxyConfig) -> Result<Vec<ProxyRecord>> {
    if config.n_subjects < 2 {
        return Err(Error::InvalidParameter("need at least two subjects".into()));
    }
    if config.classes != PROXY_RATE_BANDS.len() {
        return Err(Error::InvalidParameter(format!(
            "proxy supports {} classes, got {}",
            PROXY_RATE_BANDS.len(),
            config.classes
        )));
    }
    if config.trials_per_subject == 0 || config.trials_per_subject % config.classes != 0 {
        return Err(Error::InvalidParameter(format!(
            "trials per subject ({}) must be a positive multiple of the class count",
            config.trials_per_subject
        )));
    }
    let mut records = Vec::with_capacity(config.n_subjects * config.trials_per_subject);
    for subject in 0..config.n_subjects {
        let subject_id = format!("subject-{subject:02}");
        let morphology = Morphology::from_seed(rng::derive_seed(config.seed, "subject", &[subject as u64]));
        let gain = rng::stream(config.seed, "gain", &[subject as u64]).random_range(0.8..1.2);
        for trial in 0..config.trials_per_subject {
            let label = trial % config.classes;
            let trial_seed = rng::derive_seed(config.seed, "trial", &[subject as u64, trial as u64]);
            let mut r = rng::stream(trial_seed, "rate", &[]);
            let (lo, hi) = PROXY_RATE_BANDS[label];
            let heart_rate_bpm = r.random_range(lo..hi);
            let synth = SynthConfig {
                heart_rate_bpm,
                duration_s: config.trial_seconds,
                sample_rate: config.sample_rate,
                noise_floor_db: config.noise_floor_db,
                seed: trial_seed,
            };
            synth.validate()?;
            let mut signal = generate_with(&synth, &morphology, &subject_id)?.into_samples();
            let breath_hz = r.random_range(0.15..0.3);
            let breath_phase = r.random_range(0.0..std::f64::consts::TAU);
            let rate = f64::from(config.sample_rate);
            for (i, v) in signal.iter_mut().enumerate() {
                let t = i as f64 / rate;
                *v = gain * *v
                    + config.wander_amplitude * (std::f64::consts::TAU * breath_hz * t + breath_phase).sin();
            }
            records.push(ProxyRecord {
                signal: Signal::new(signal, config.sample_rate, subject_id.clone())?,
                label,
                heart_rate_bpm,
            });
        }
    }
    Ok(records)
}
