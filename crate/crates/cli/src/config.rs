//! Run configuration: defaults, TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use ecg_ssl::downstream::{HeadVariant, DOWNSTREAM_EPOCHS, HEAD_L2};
use ecg_ssl::nn::AdamConfig;
use ecg_ssl::pretext::{TrainConfig, DEFAULT_BATCH, FAST_HEAD_ALPHA, HEAD_ALPHA};
use ecg_ssl::sweep::{MultiTaskGrid, MULTI_TASK_CAP};
use ecg_ssl::transforms::TransformSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "ECG_SSL_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub paths: Paths,
    pub transforms: TransformSpec,
    pub pretext: PretextSection,
    pub downstream: DownstreamSection,
    pub synth: SynthSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            paths: Paths::default(),
            transforms: TransformSpec::default(),
            pretext: PretextSection::default(),
            downstream: DownstreamSection::default(),
            synth: SynthSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self { input: None, output: PathBuf::from("."), checkpoint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretextSection {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Coefficient of the negation and temporal-inversion heads.
    pub alpha_fast: f64,
    /// Coefficient of the other heads.
    pub alpha: f64,
}

impl Default for PretextSection {
    fn default() -> Self {
        Self { lr: 1e-3, batch: DEFAULT_BATCH, epochs: 100, alpha_fast: FAST_HEAD_ALPHA, alpha: HEAD_ALPHA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamSection {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub l2: f64,
    /// `a` (one hidden layer) or `b` (two hidden layers with dropout).
    pub variant: String,
    pub folds: usize,
    pub attribute: String,
    /// Epochs of end-to-end training for the fully-supervised baseline.
    pub supervised_epochs: usize,
}

impl Default for DownstreamSection {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: DEFAULT_BATCH,
            epochs: DOWNSTREAM_EPOCHS,
            l2: HEAD_L2,
            variant: "a".into(),
            folds: 10,
            attribute: "arousal".into(),
            supervised_epochs: DOWNSTREAM_EPOCHS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub subjects: usize,
    pub trials_per_subject: usize,
    pub trial_seconds: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { subjects: 8, trials_per_subject: 10, trial_seconds: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// `single` or `multi`.
    pub mode: String,
    pub transform: String,
    pub param: String,
    pub values: Vec<f64>,
    pub cap: usize,
    pub multi: MultiGridSection,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            mode: "single".into(),
            transform: "noise".into(),
            param: "snr_db".into(),
            values: vec![2.0, 15.0, 45.0],
            cap: MULTI_TASK_CAP,
            multi: MultiGridSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiGridSection {
    pub snr_db: Vec<f64>,
    pub scale: Vec<f64>,
    pub perm_m: Vec<usize>,
    pub warp_m: Vec<usize>,
    pub warp_k: Vec<f64>,
}

impl Default for MultiGridSection {
    fn default() -> Self {
        let g = MultiTaskGrid::single(&TransformSpec::default());
        Self { snr_db: g.snr_db, scale: g.scale, perm_m: g.perm_m, warp_m: g.warp_m, warp_k: g.warp_k }
    }
}

impl MultiGridSection {
    pub fn grid(&self) -> MultiTaskGrid {
        MultiTaskGrid {
            snr_db: self.snr_db.clone(),
            scale: self.scale.clone(),
            perm_m: self.perm_m.clone(),
            warp_m: self.warp_m.clone(),
            warp_k: self.warp_k.clone(),
        }
    }
}

impl RunConfig {
    /// Parse a TOML document; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let c: Self = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Load `explicit`, else the file named by [`CONFIG_ENV`], else defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
        };
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
                Self::from_toml(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.transforms.validate().map_err(|e| CliError::Config(e.to_string()))?;
        for (name, lr) in [("pretext.lr", self.pretext.lr), ("downstream.lr", self.downstream.lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.pretext.batch == 0 || self.downstream.batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.downstream.folds < 2 {
            return bad(format!("downstream.folds must be at least 2, got {}", self.downstream.folds));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if !(self.downstream.l2 >= 0.0) {
            return bad(format!("downstream.l2 must be non-negative, got {}", self.downstream.l2));
        }
        if !(self.pretext.alpha >= 0.0 && self.pretext.alpha_fast >= 0.0) {
            return bad("loss coefficients must be non-negative".into());
        }
        HeadVariant::from_name(&self.downstream.variant).map_err(|e| CliError::Config(e.to_string()))?;
        if !matches!(self.sweep.mode.as_str(), "single" | "multi") {
            return bad(format!("sweep.mode must be single or multi, got {:?}", self.sweep.mode));
        }
        Ok(())
    }

    pub fn variant(&self) -> HeadVariant {
        HeadVariant::from_name(&self.downstream.variant).unwrap_or_default()
    }

    pub fn pretext_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.pretext.epochs,
            batch_size: self.pretext.batch,
            adam: AdamConfig { lr: self.pretext.lr, ..AdamConfig::default() },
            seed: self.seed,
        }
    }

    pub fn downstream_train(&self) -> ecg_ssl::downstream::DownstreamConfig {
        ecg_ssl::downstream::DownstreamConfig {
            epochs: self.downstream.epochs,
            batch_size: self.downstream.batch,
            adam: AdamConfig { lr: self.downstream.lr, ..AdamConfig::default() },
            l2: self.downstream.l2,
            seed: self.seed,
        }
    }

    /// Per-head loss coefficients in transformation order.
    pub fn alpha(&self, tasks: &[ecg_ssl::transforms::TransformId]) -> Vec<f64> {
        use ecg_ssl::transforms::TransformId;
        if tasks.len() == 1 {
            return vec![1.0];
        }
        tasks
            .iter()
            .map(|t| match t {
                TransformId::Negation | TransformId::TemporalInversion => self.pretext.alpha_fast,
                _ => self.pretext.alpha,
            })
            .collect()
    }
}
