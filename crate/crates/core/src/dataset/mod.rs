//! Pretext and emotion datasets, cross-validation splits and persistence.

pub(crate) mod format;
mod raw;

pub use format::{
    decode_segments, encode_segments, read_segments, write_segments, SegmentFile, SEGMENT_MAGIC, SEGMENT_VERSION,
};
pub use raw::{
    format_raw_signal, parse_raw_signal, read_raw_signal, read_subject_manifest, write_label_manifest,
    write_raw_signal, write_subject_manifest, RawRecord, RAW_HEADER,
};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::Segment;
use crate::transforms::{self, TransformId, TransformSpec};

impl AsRef<[f64]> for Segment {
    fn as_ref(&self) -> &[f64] {
        &self.samples
    }
}

/// Balanced transformation-recognition dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<TransformId>,
    pub spec: TransformSpec,
}

impl PretextDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn histogram(&self) -> [usize; 7] {
        let mut h = [0; 7];
        self.labels.iter().for_each(|l| h[usize::from(l.code())] += 1);
        h
    }

    pub fn to_segment_file(&self, sample_rate: u32) -> Result<SegmentFile> {
        let segment_len = self.inputs.first().map_or(0, Vec::len);
        let mut f = SegmentFile::new(sample_rate, segment_len);
        for (row, label) in self.inputs.iter().zip(&self.labels) {
            f.push(row.clone(), label.code())?;
        }
        Ok(f)
    }

    /// Rebuild from a file. The transform parameters are not stored in the
    /// file, so the caller supplies them.
    pub fn from_segment_file(file: SegmentFile, spec: TransformSpec) -> Result<Self> {
        let labels = file.labels.iter().map(|&c| TransformId::from_code(c)).collect::<Result<Vec<_>>>()?;
        Ok(Self { inputs: file.inputs, labels, spec })
    }
}

fn check_uniform<S: AsRef<[f64]>>(segments: &[S]) -> Result<usize> {
    let first = segments.first().ok_or_else(|| Error::InvalidInput("no segments".into()))?;
    let len = first.as_ref().len();
    if len == 0 || segments.iter().any(|s| s.as_ref().len() != len) {
        return Err(Error::InvalidInput("segments must be non-empty and of equal length".into()));
    }
    Ok(len)
}

/// Expand every segment into the original plus the given transforms, then
/// shuffle rows with a seeded permutation.
fn build_with<S: AsRef<[f64]>>(
    segments: &[S],
    ids: &[TransformId],
    spec: &TransformSpec,
    seed: u64,
) -> Result<PretextDataset> {
    spec.validate()?;
    check_uniform(segments)?;
    let mut rows = Vec::with_capacity(segments.len() * ids.len());
    for (i, seg) in segments.iter().enumerate() {
        for &id in ids {
            let stream_spec = spec.for_stream(seed, i as u64, id);
            let out = transforms::apply(seg.as_ref(), id, &stream_spec)
                .map_err(|e| match e {
                    Error::Degenerate(m) => Error::Degenerate(format!("segment {i}: {m}")),
                    other => other,
                })?;
            rows.push((out, id));
        }
    }
    rows.shuffle(&mut rng::stream(seed, "pretext-shuffle", &[]));
    let (inputs, labels) = rows.into_iter().unzip();
    Ok(PretextDataset { inputs, labels, spec: *spec })
}

/// Seven-class pretext set: each segment and its six transformations.
pub fn build_pretext<S: AsRef<[f64]>>(segments: &[S], spec: &TransformSpec, seed: u64) -> Result<PretextDataset> {
    build_with(segments, &TransformId::ALL, spec, seed)
}

/// Two-class pretext set: each segment and one transformation of it.
pub fn build_single_task<S: AsRef<[f64]>>(
    segments: &[S],
    id: TransformId,
    spec: &TransformSpec,
    seed: u64,
) -> Result<PretextDataset> {
    if id == TransformId::Original {
        return Err(Error::InvalidParameter("single-task set needs a transformation other than the original".into()));
    }
    build_with(segments, &[TransformId::Original, id], spec, seed)
}

/// Labelled windows for the supervised emotion task.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub attribute_name: String,
    /// Subject of each row; empty when unknown.
    pub subjects: Vec<String>,
}

impl EmotionDataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, class_count: usize, attribute_name: impl Into<String>) -> Result<Self> {
        let ds = Self { inputs, labels, class_count, attribute_name: attribute_name.into(), subjects: Vec::new() };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_subjects(mut self, subjects: Vec<String>) -> Result<Self> {
        if subjects.len() != self.inputs.len() {
            return Err(Error::Shape(format!("{} subjects for {} rows", subjects.len(), self.inputs.len())));
        }
        self.subjects = subjects;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 classes, got {}", self.class_count)));
        }
        if self.inputs.len() != self.labels.len() {
            return Err(Error::Shape(format!("{} rows but {} labels", self.inputs.len(), self.labels.len())));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::InvalidInput(format!("label {bad} outside {} classes", self.class_count)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            attribute_name: self.attribute_name.clone(),
            subjects: if self.subjects.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.subjects[i].clone()).collect()
            },
        }
    }

    /// `class_count` of `None` infers max label + 1 (at least 2).
    pub fn from_segment_file(file: SegmentFile, class_count: Option<usize>, attribute: &str) -> Result<Self> {
        let labels: Vec<usize> = file.labels.iter().map(|&l| usize::from(l)).collect();
        let classes = class_count.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
        Self::new(file.inputs, labels, classes, attribute)
    }

    pub fn to_segment_file(&self, sample_rate: u32) -> Result<SegmentFile> {
        let segment_len = self.inputs.first().map_or(0, Vec::len);
        let mut f = SegmentFile::new(sample_rate, segment_len);
        for (row, &label) in self.inputs.iter().zip(&self.labels) {
            let byte = u8::try_from(label).map_err(|_| Error::InvalidInput(format!("label {label} exceeds u8")))?;
            f.push(row.clone(), byte)?;
        }
        Ok(f)
    }
}

/// High/low collapse of an ordinal rating at the mean of the rating scale.
/// Ratings strictly above the threshold become class 1.
pub fn binarize_at_mean(ratings: &[f64], scale_min: f64, scale_max: f64) -> Vec<usize> {
    let threshold = 0.5 * (scale_min + scale_max);
    ratings.iter().map(|&r| usize::from(r > threshold)).collect()
}

/// Remove every row of class `dropped` and renumber the classes above it.
pub fn drop_class(dataset: &EmotionDataset, dropped: usize) -> Result<EmotionDataset> {
    if dropped >= dataset.class_count || dataset.class_count < 3 {
        return Err(Error::InvalidParameter(format!(
            "cannot drop class {dropped} of {}",
            dataset.class_count
        )));
    }
    let keep: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] != dropped).collect();
    let mut out = dataset.subset(&keep);
    out.labels.iter_mut().for_each(|l| {
        if *l > dropped {
            *l -= 1;
        }
    });
    out.class_count -= 1;
    Ok(out)
}

/// One cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn folds_from_groups(n: usize, groups_in_fold: Vec<Vec<usize>>) -> Vec<Fold> {
    groups_in_fold
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut in_test = vec![false; n];
            test.iter().for_each(|&i| in_test[i] = true);
            let train = (0..n).filter(|&i| !in_test[i]).collect();
            Fold { train, test }
        })
        .collect()
}

fn partition_sizes(n: usize, k: usize) -> impl Iterator<Item = usize> {
    (0..k).map(move |f| n / k + usize::from(f < n % k))
}

/// Segment-level k-fold split of `0..n`. Indices are shuffled with `seed`,
/// then dealt into `k` contiguous folds whose sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k = {k}; need at least 2 folds")));
    }
    if n < k {
        return Err(Error::InvalidParameter(format!("{n} samples cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "kfold", &[]));
    let mut start = 0;
    let tests = partition_sizes(n, k)
        .map(|size| {
            let t = order[start..start + size].to_vec();
            start += size;
            t
        })
        .collect();
    Ok(folds_from_groups(n, tests))
}

/// Subject-level k-fold split: all rows of one subject land in the same
/// test fold.
pub fn kfold_by_group(groups: &[String], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.as_str()).or_default().push(i);
    }
    let names: Vec<&str> = members.keys().copied().collect();
    let group_folds = kfold_split(names.len(), k, seed)?;
    let tests = group_folds
        .into_iter()
        .map(|f| f.test.iter().flat_map(|&g| members[names[g]].iter().copied()).collect())
        .collect();
    Ok(folds_from_groups(groups.len(), tests))
}

/// Seeded train/test split with `test_fraction` of the rows held out.
pub fn holdout_split(n: usize, test_fraction: f64, seed: u64) -> Result<Fold> {
    if !(0.0..1.0).contains(&test_fraction) || n < 2 {
        return Err(Error::InvalidParameter(format!("cannot hold out {test_fraction} of {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "holdout", &[]));
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Fold { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segments(n: usize, len: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|s| (0..len).map(|i| ((i * 7 + s * 13) % 23) as f64 / 11.0 - 1.0).collect())
            .collect()
    }

    #[test]
    fn pretext_is_balanced_and_reproducible() {
        let segs = segments(3, 200);
        let ds = build_pretext(&segs, &TransformSpec::default(), 5).unwrap();
        assert_eq!(ds.len(), 21);
        assert_eq!(ds.histogram(), [3; 7]);
        assert_eq!(ds, build_pretext(&segs, &TransformSpec::default(), 5).unwrap());
        let other = build_pretext(&segs, &TransformSpec::default(), 6).unwrap();
        assert_ne!(ds.labels, other.labels);
    }

    #[test]
    fn pretext_originals_are_untouched() {
        let segs = segments(4, 100);
        let ds = build_pretext(&segs, &TransformSpec::default(), 1).unwrap();
        let originals: Vec<&Vec<f64>> =
            ds.inputs.iter().zip(&ds.labels).filter(|(_, l)| **l == TransformId::Original).map(|(x, _)| x).collect();
        assert_eq!(originals.len(), 4);
        for o in originals {
            assert!(segs.contains(o));
        }
    }

    #[test]
    fn pretext_rejects_bad_input() {
        assert!(build_pretext::<Vec<f64>>(&[], &TransformSpec::default(), 0).is_err());
        assert!(build_pretext(&[vec![0.0; 50], vec![1.0; 40]], &TransformSpec::default(), 0).is_err());
        let err = build_pretext(&[vec![1.0; 50], vec![0.0; 50]], &TransformSpec::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Degenerate(ref m) if m.contains("segment 1")));
    }

    #[test]
    fn single_task_pairs() {
        let ds = build_single_task(&segments(5, 80), TransformId::Noise, &TransformSpec::default(), 2).unwrap();
        assert_eq!(ds.len(), 10);
        let h = ds.histogram();
        assert_eq!((h[0], h[1]), (5, 5));
        assert!(build_single_task(&segments(2, 80), TransformId::Original, &TransformSpec::default(), 2).is_err());
    }

    #[test]
    fn pretext_file_round_trip() {
        let ds = build_pretext(&segments(2, 64), &TransformSpec::default(), 3).unwrap();
        let file = ds.to_segment_file(256).unwrap();
        let mut bytes = Vec::new();
        encode_segments(&mut bytes, &file).unwrap();
        let back = PretextDataset::from_segment_file(decode_segments(&bytes[..]).unwrap(), ds.spec).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.inputs, file.quantized().inputs);
    }

    #[test]
    fn kfold_singletons() {
        let folds = kfold_split(10, 10, 0).unwrap();
        assert_eq!(folds.len(), 10);
        assert!(folds.iter().all(|f| f.test.len() == 1 && f.train.len() == 9));
    }

    #[test]
    fn kfold_partition_and_balance() {
        let folds = kfold_split(25, 10, 4).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [2, 2, 2, 2, 2, 3, 3, 3, 3, 3]);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..25).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.train.len() + f.test.len(), 25);
            assert!(f.train.iter().all(|i| !f.test.contains(i)));
        }
    }

    #[test]
    fn kfold_seed_behaviour() {
        assert_eq!(kfold_split(30, 10, 9).unwrap(), kfold_split(30, 10, 9).unwrap());
        for s in 0..10 {
            assert_ne!(kfold_split(20, 10, s).unwrap(), kfold_split(20, 10, s + 100).unwrap());
        }
        assert!(kfold_split(5, 10, 0).is_err());
        assert!(kfold_split(5, 1, 0).is_err());
    }

    #[test]
    fn group_folds_keep_subjects_together() {
        let groups: Vec<String> = (0..40).map(|i| format!("s{}", i % 8)).collect();
        let folds = kfold_by_group(&groups, 4, 1).unwrap();
        for f in &folds {
            for &i in &f.test {
                assert!(f.train.iter().all(|&j| groups[j] != groups[i]));
            }
        }
        assert_eq!(folds.iter().map(|f| f.test.len()).sum::<usize>(), 40);
    }

    #[test]
    fn holdout_ninety_ten() {
        let f = holdout_split(50, 0.1, 3).unwrap();
        assert_eq!(f.test.len(), 5);
        assert_eq!(f.train.len(), 45);
    }

    #[test]
    fn emotion_dataset_validation_and_collapse() {
        assert!(EmotionDataset::new(vec![vec![0.0]; 2], vec![0, 2], 2, "arousal").is_err());
        assert!(EmotionDataset::new(vec![vec![0.0]; 2], vec![0, 1], 1, "arousal").is_err());
        let ds = EmotionDataset::new(vec![vec![0.0]; 4], vec![0, 1, 2, 1], 3, "affect").unwrap();
        let two = drop_class(&ds, 1).unwrap();
        assert_eq!(two.labels, vec![0, 1]);
        assert_eq!(two.class_count, 2);
        assert_eq!(binarize_at_mean(&[1.0, 5.0, 5.5, 9.0], 1.0, 9.0), vec![0, 0, 1, 1]);
    }
}
