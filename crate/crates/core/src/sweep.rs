//! Transformation-parameter sweeps: single-task and multi-task pretext
//! training followed by a downstream hold-out evaluation per grid point.

use std::fmt;
use std::io::Write;

use crate::dataset::{build_pretext, build_single_task, holdout_split, EmotionDataset, PretextDataset};
use crate::downstream::{cross_validate_features, embed_rows, DownstreamConfig, HeadVariant};
use crate::error::{Error, Result};
use crate::pretext::{evaluate_pretext, train_pretext, PretextModel, TrainConfig, TrunkConfig};
use crate::transforms::{TransformId, TransformSpec};

/// Default cap on the number of multi-task grid points.
pub const MULTI_TASK_CAP: usize = 32;
/// Fraction of rows held out for testing, both for pretext and downstream.
pub const HOLDOUT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Snr,
    Scale,
    PermutationSegments,
    WarpSegments,
    WarpStretch,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Snr => "snr_db",
            SweepParam::Scale => "scale",
            SweepParam::PermutationSegments => "perm_m",
            SweepParam::WarpSegments => "warp_m",
            SweepParam::WarpStretch => "warp_k",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        [Self::Snr, Self::Scale, Self::PermutationSegments, Self::WarpSegments, Self::WarpStretch]
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown sweep parameter {name:?}")))
    }

    /// Allowed value range.
    pub fn range(self) -> (f64, f64) {
        match self {
            SweepParam::Snr => (2.0, 45.0),
            SweepParam::Scale => (0.1, 10.0),
            SweepParam::PermutationSegments | SweepParam::WarpSegments => (2.0, 40.0),
            SweepParam::WarpStretch => (1.05, 4.0),
        }
    }

    /// The transformation this parameter controls.
    pub fn transform(self) -> TransformId {
        match self {
            SweepParam::Snr => TransformId::Noise,
            SweepParam::Scale => TransformId::Scale,
            SweepParam::PermutationSegments => TransformId::Permutation,
            SweepParam::WarpSegments | SweepParam::WarpStretch => TransformId::TimeWarp,
        }
    }

    fn is_count(self) -> bool {
        matches!(self, SweepParam::PermutationSegments | SweepParam::WarpSegments)
    }

    fn apply(self, spec: &mut TransformSpec, v: f64) {
        match self {
            SweepParam::Snr => spec.snr_db = v,
            SweepParam::Scale => spec.scale_factor = v,
            SweepParam::PermutationSegments => spec.permutation_segments = v as usize,
            SweepParam::WarpSegments => spec.timewarp_segments = v as usize,
            SweepParam::WarpStretch => spec.stretch_factor = v,
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Values of one transformation parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl SweepGrid {
    pub fn new(param: SweepParam, values: Vec<f64>) -> Result<Self> {
        let g = Self { param, values };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidParameter(format!("empty {} grid", self.param)));
        }
        let (lo, hi) = self.param.range();
        for &v in &self.values {
            if !(lo..=hi).contains(&v) {
                return Err(Error::InvalidParameter(format!("{} = {v} outside [{lo}, {hi}]", self.param)));
            }
            if self.param.is_count() && v.fract() != 0.0 {
                return Err(Error::InvalidParameter(format!("{} = {v} is not a whole number", self.param)));
            }
        }
        Ok(())
    }
}

/// Data shared by every grid point.
#[derive(Debug, Clone)]
pub struct SweepData {
    /// Unlabelled segments for the pretext stage.
    pub pretext_segments: Vec<Vec<f64>>,
    pub emotion: EmotionDataset,
}

/// Training settings shared by every grid point.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub trunk: TrunkConfig,
    pub base_spec: TransformSpec,
    pub pretext: TrainConfig,
    pub downstream: DownstreamConfig,
    pub variant: HeadVariant,
}

impl SweepSettings {
    pub fn new(seed: u64) -> Self {
        Self {
            trunk: TrunkConfig::standard(),
            base_spec: TransformSpec::default(),
            pretext: TrainConfig::pretext(seed),
            downstream: DownstreamConfig::new(seed),
            variant: HeadVariant::A,
        }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Transformation name, or `multi` for the seven-head model.
    pub transform: String,
    pub spec: TransformSpec,
    pub pretext_acc: f64,
    pub downstream_acc: f64,
    pub seed: u64,
}

/// Segment-level hold-out: rows derived from one segment stay together.
fn pretext_split(
    data: &SweepData,
    build: impl Fn(&[Vec<f64>]) -> Result<PretextDataset>,
    seed: u64,
) -> Result<(PretextDataset, PretextDataset)> {
    let split = holdout_split(data.pretext_segments.len(), HOLDOUT_FRACTION, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| data.pretext_segments[i].clone()).collect::<Vec<_>>();
    Ok((build(&pick(&split.train))?, build(&pick(&split.test))?))
}

/// Train a pretext model, report its held-out mean head accuracy, then the
/// hold-out accuracy of a head trained on its frozen trunk.
fn evaluate_point(
    data: &SweepData,
    settings: &SweepSettings,
    tasks: &[TransformId],
    build: impl Fn(&[Vec<f64>]) -> Result<PretextDataset>,
) -> Result<(f64, f64)> {
    let seed = settings.pretext.seed;
    let (train, test) = pretext_split(data, build, seed)?;
    let mut model = PretextModel::<f32>::new(settings.trunk.clone(), tasks, seed)?;
    train_pretext(&mut model, &train, settings.pretext)?;
    let pretext_acc = evaluate_pretext(&mut model, &test)?.mean_accuracy;

    let features = embed_rows(&mut model.trunk, &data.emotion.inputs)?;
    let fold = holdout_split(data.emotion.len(), HOLDOUT_FRACTION, settings.downstream.seed)?;
    let result = cross_validate_features(&features, &data.emotion, &[fold], settings.variant, &settings.downstream)?;
    Ok((pretext_acc, result[0].accuracy))
}

/// Single-task sweep of one transformation. Negation and temporal inversion
/// have no parameter and yield one row; `grid` is then ignored.
pub fn run_single_task(
    id: TransformId,
    grid: Option<&SweepGrid>,
    data: &SweepData,
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    if id == TransformId::Original {
        return Err(Error::InvalidParameter("the original signal is not a transformation".into()));
    }
    let specs = if id.is_parameterless() {
        vec![settings.base_spec]
    } else {
        let grid = grid.ok_or_else(|| Error::InvalidParameter(format!("{id} sweep needs a grid")))?;
        grid.validate()?;
        if grid.param.transform() != id {
            return Err(Error::InvalidParameter(format!("{} does not control {id}", grid.param)));
        }
        grid.values
            .iter()
            .map(|&v| {
                let mut s = settings.base_spec;
                grid.param.apply(&mut s, v);
                s
            })
            .collect()
    };
    let seed = settings.pretext.seed;
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate()?;
        let (pretext_acc, downstream_acc) =
            evaluate_point(data, settings, &[id], |segs| build_single_task(segs, id, &spec, seed))?;
        log::info!("{id} {spec:?}: pretext {pretext_acc:.4}, downstream {downstream_acc:.4}");
        rows.push(SweepRow { transform: id.name().to_string(), spec, pretext_acc, downstream_acc, seed });
    }
    Ok(rows)
}

/// `(parameter value, pretext accuracy, downstream accuracy)` per grid
/// point; one row with a NaN value for parameterless transformations.
pub fn pretext_vs_downstream_curve(
    id: TransformId,
    grid: Option<&SweepGrid>,
    data: &SweepData,
    settings: &SweepSettings,
) -> Result<Vec<(f64, f64, f64)>> {
    let rows = run_single_task(id, grid, data, settings)?;
    Ok(rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let v = match grid {
                Some(g) if !id.is_parameterless() => g.values[i],
                _ => f64::NAN,
            };
            (v, r.pretext_acc, r.downstream_acc)
        })
        .collect())
}

/// Grids for the five parameters of the multi-task model.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskGrid {
    pub snr_db: Vec<f64>,
    pub scale: Vec<f64>,
    pub perm_m: Vec<usize>,
    pub warp_m: Vec<usize>,
    pub warp_k: Vec<f64>,
}

impl MultiTaskGrid {
    /// The single default point.
    pub fn single(spec: &TransformSpec) -> Self {
        Self {
            snr_db: vec![spec.snr_db],
            scale: vec![spec.scale_factor],
            perm_m: vec![spec.permutation_segments],
            warp_m: vec![spec.timewarp_segments],
            warp_k: vec![spec.stretch_factor],
        }
    }

    pub fn size(&self) -> usize {
        self.snr_db.len() * self.scale.len() * self.perm_m.len() * self.warp_m.len() * self.warp_k.len()
    }

    /// Cartesian product in row-major order (the last parameter varies
    /// fastest), truncated to `cap` points.
    pub fn points(&self, base: &TransformSpec, cap: usize) -> Result<Vec<TransformSpec>> {
        if self.size() == 0 {
            return Err(Error::InvalidParameter("every multi-task grid axis needs a value".into()));
        }
        let as_f64 = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        SweepGrid::new(SweepParam::Snr, self.snr_db.clone())?;
        SweepGrid::new(SweepParam::Scale, self.scale.clone())?;
        SweepGrid::new(SweepParam::WarpStretch, self.warp_k.clone())?;
        // Counts of 1 are identity settings; allow them here so the default
        // vector stays expressible.
        for (name, v) in [("perm_m", as_f64(&self.perm_m)), ("warp_m", as_f64(&self.warp_m))] {
            if v.iter().any(|&m| !(1.0..=40.0).contains(&m)) {
                return Err(Error::InvalidParameter(format!("{name} values must lie in [1, 40]")));
            }
        }
        if self.size() > cap {
            log::warn!("multi-task grid has {} points; keeping the first {cap}", self.size());
        }
        let mut out = Vec::new();
        'outer: for &snr in &self.snr_db {
            for &scale in &self.scale {
                for &pm in &self.perm_m {
                    for &wm in &self.warp_m {
                        for &wk in &self.warp_k {
                            if out.len() == cap {
                                break 'outer;
                            }
                            out.push(TransformSpec {
                                snr_db: snr,
                                scale_factor: scale,
                                permutation_segments: pm,
                                timewarp_segments: wm,
                                stretch_factor: wk,
                                ..*base
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Full seven-head training per grid point.
pub fn run_multi_task(
    grid: &MultiTaskGrid,
    cap: usize,
    data: &SweepData,
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    let seed = settings.pretext.seed;
    let mut rows = Vec::new();
    for spec in grid.points(&settings.base_spec, cap)? {
        let (pretext_acc, downstream_acc) =
            evaluate_point(data, settings, &TransformId::ALL, |segs| build_pretext(segs, &spec, seed))?;
        log::info!("multi {spec:?}: pretext {pretext_acc:.4}, downstream {downstream_acc:.4}");
        rows.push(SweepRow { transform: "multi".into(), spec, pretext_acc, downstream_acc, seed });
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "transform,snr_db,scale,perm_m,warp_m,warp_k,pretext_acc,downstream_acc,seed";

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        let s = &r.spec;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.transform,
            s.snr_db,
            s.scale_factor,
            s.permutation_segments,
            s.timewarp_segments,
            s.stretch_factor,
            r.pretext_acc,
            r.downstream_acc,
            r.seed
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pretext::BlockSpec;

    fn settings() -> SweepSettings {
        let mut s = SweepSettings::new(7);
        s.trunk = TrunkConfig {
            input_len: 64,
            blocks: vec![BlockSpec { kernel: 5, filters: 3 }, BlockSpec { kernel: 3, filters: 4 }],
            pool_size: 4,
            pool_stride: 2,
        };
        s.base_spec.permutation_segments = 4;
        s.base_spec.timewarp_segments = 3;
        s.pretext.epochs = 2;
        s.pretext.batch_size = 16;
        s.downstream.epochs = 3;
        s.downstream.batch_size = 16;
        s
    }

    fn data() -> SweepData {
        let seg = |i: usize| (0..64).map(|t| ((t + i) as f64 * 0.37).sin() + 0.1 * i as f64).collect::<Vec<f64>>();
        let inputs: Vec<Vec<f64>> = (0..20).map(seg).collect();
        let labels = (0..20).map(|i| i % 2).collect();
        SweepData {
            pretext_segments: (20..40).map(seg).collect(),
            emotion: EmotionDataset::new(inputs, labels, 2, "arousal").unwrap(),
        }
    }

    #[test]
    fn grid_ranges() {
        assert!(SweepGrid::new(SweepParam::Snr, vec![1.0]).is_err());
        assert!(SweepGrid::new(SweepParam::PermutationSegments, vec![2.5]).is_err());
        assert!(SweepGrid::new(SweepParam::Scale, vec![]).is_err());
        assert!(SweepGrid::new(SweepParam::WarpStretch, vec![1.05, 4.0]).is_ok());
        assert_eq!(SweepParam::from_name("warp_m").unwrap(), SweepParam::WarpSegments);
    }

    #[test]
    fn parameterless_sweep_has_one_row() {
        let rows = run_single_task(TransformId::Negation, None, &data(), &settings()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].transform, "negation");
    }

    #[test]
    fn grid_cardinality_and_mismatch() {
        let g = SweepGrid::new(SweepParam::Scale, vec![0.5, 1.0]).unwrap();
        let rows = run_single_task(TransformId::Scale, Some(&g), &data(), &settings()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].spec.scale_factor, 1.0);
        assert!(run_single_task(TransformId::Noise, Some(&g), &data(), &settings()).is_err());
    }

    #[test]
    fn multi_task_product_and_cap() {
        let g = MultiTaskGrid { snr_db: vec![10.0, 20.0], scale: vec![0.9], perm_m: vec![4], warp_m: vec![2, 3], warp_k: vec![1.05] };
        let base = settings().base_spec;
        assert_eq!(g.points(&base, 32).unwrap().len(), 4);
        assert_eq!(g.points(&base, 3).unwrap().len(), 3);
        let a = run_multi_task(&g, 2, &data(), &settings()).unwrap();
        let b = run_multi_task(&g, 2, &data(), &settings()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn csv_header_and_row() {
        let row = SweepRow {
            transform: "noise".into(),
            spec: TransformSpec::default(),
            pretext_acc: 0.5,
            downstream_acc: 0.75,
            seed: 3,
        };
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[row]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{SWEEP_HEADER}\nnoise,15,0.9,20,9,1.05,0.5,0.75,3\n"));
    }
}
