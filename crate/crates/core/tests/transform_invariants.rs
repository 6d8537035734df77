//! Transformation invariants over 1000 preprocessed synthetic ECG windows.

use ecg_ssl::signal::{preprocess, Segment, SEGMENT_LEN, WINDOW_SECONDS};
use ecg_ssl::synth::{recording_corpus, SynthConfig, generate};
use ecg_ssl::transforms::{apply, permute, scale, time_warp, TransformId, TransformSpec};
use std::sync::OnceLock;

const WINDOWS: usize = 1000;

fn windows() -> &'static [Segment] {
    static CELL: OnceLock<Vec<Segment>> = OnceLock::new();
    CELL.get_or_init(|| {
        let signals = recording_corpus(10, 1000.0, (50.0, 120.0), 4).unwrap();
        let segs: Vec<Segment> = preprocess(&signals, WINDOW_SECONDS).unwrap().into_iter().flatten().take(WINDOWS).collect();
        assert_eq!(segs.len(), WINDOWS);
        segs
    })
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn every_transform_keeps_length_and_is_finite() {
    let spec = TransformSpec::default();
    for (i, w) in windows().iter().enumerate() {
        assert_eq!(w.len(), SEGMENT_LEN);
        for id in TransformId::ALL {
            let y = apply(&w.samples, id, &spec.for_stream(9, i as u64, id)).unwrap();
            assert_eq!(y.len(), SEGMENT_LEN, "{id} on window {i}");
            assert!(y.iter().all(|v| v.is_finite()), "{id} on window {i}");
        }
    }
}

#[test]
fn parameterless_transforms_are_involutions() {
    let spec = TransformSpec::default();
    for w in windows() {
        let x = &w.samples;
        assert_eq!(&apply(x, TransformId::Original, &spec).unwrap(), x);
        for id in [TransformId::Negation, TransformId::TemporalInversion] {
            let once = apply(x, id, &spec).unwrap();
            assert_ne!(&once, x);
            assert_eq!(&apply(&once, id, &spec).unwrap(), x);
        }
    }
}

#[test]
fn permutation_rearranges_samples_only() {
    let spec = TransformSpec::default();
    for (i, w) in windows().iter().enumerate() {
        let s = spec.for_stream(9, i as u64, TransformId::Permutation);
        let y = apply(&w.samples, TransformId::Permutation, &s).unwrap();
        assert_eq!(sorted(&y), sorted(&w.samples));
        assert_eq!(permute(&w.samples, 1, s.rng_seed).unwrap(), w.samples);
    }
}

#[test]
fn identity_parameters() {
    for (i, w) in windows().iter().enumerate().step_by(10) {
        let x = &w.samples;
        assert_eq!(&scale(x, 1.0).unwrap(), x);
        let warped = time_warp(x, 9, 1.0, i as u64).unwrap();
        assert!(warped.iter().zip(x).all(|(a, b)| (a - b).abs() < 1e-12));
        let back = scale(&scale(x, 0.9).unwrap(), 1.0 / 0.9).unwrap();
        assert!(back.iter().zip(x).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn noise_meets_requested_snr_on_average() {
    for snr in [2.0, 15.0, 45.0] {
        let spec = TransformSpec { snr_db: snr, ..Default::default() };
        let measured: Vec<f64> = windows()
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let y = apply(&w.samples, TransformId::Noise, &spec.for_stream(3, i as u64, TransformId::Noise)).unwrap();
                let p_signal: f64 = w.samples.iter().map(|v| v * v).sum();
                let p_noise: f64 = y.iter().zip(&w.samples).map(|(a, b)| (a - b).powi(2)).sum();
                10.0 * (p_signal / p_noise).log10()
            })
            .collect();
        let mean = measured.iter().sum::<f64>() / measured.len() as f64;
        assert!((mean - snr).abs() < 0.05, "SNR {snr}: measured mean {mean}");
    }
}

#[test]
fn seeded_transforms_are_reproducible_and_stream_specific() {
    let spec = TransformSpec::default();
    let x = &windows()[0].samples;
    for id in [TransformId::Noise, TransformId::Permutation, TransformId::TimeWarp] {
        let a = apply(x, id, &spec.for_stream(1, 0, id)).unwrap();
        assert_eq!(a, apply(x, id, &spec.for_stream(1, 0, id)).unwrap(), "{id}");
        assert_ne!(a, apply(x, id, &spec.for_stream(1, 1, id)).unwrap(), "{id}");
        assert_ne!(a, apply(x, id, &spec.for_stream(2, 0, id)).unwrap(), "{id}");
    }
}

#[test]
fn transforms_reject_flat_or_short_windows() {
    let spec = TransformSpec::default();
    let flat = vec![0.0; SEGMENT_LEN];
    assert!(apply(&flat, TransformId::Noise, &spec).is_err());
    let short = generate(&SynthConfig { duration_s: 0.05, ..SynthConfig::default() }).unwrap().into_samples();
    assert!(short.len() < spec.permutation_segments);
    assert!(apply(&short, TransformId::Permutation, &spec).is_err());
}
