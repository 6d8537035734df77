//! Browser bindings: synthesize an ECG, apply one pretext transformation,
//! remove baseline wander. Plain functions are exported for native use; the
//! `#[wasm_bindgen]` wrappers convert errors to JS exceptions.

use ecg_ssl::signal::{remove_baseline_wander, Signal};
use ecg_ssl::synth::{generate, SynthConfig};
use ecg_ssl::transforms::{apply, TransformId, TransformSpec};
use wasm_bindgen::prelude::*;

pub const DEMO_RATE: u32 = 256;

/// Synthetic ECG plus an optional sinusoidal baseline drift.
pub fn synth(heart_rate_bpm: f64, seconds: f64, wander: f64, seed: u64) -> ecg_ssl::Result<Vec<f64>> {
    let config = SynthConfig {
        heart_rate_bpm,
        duration_s: seconds,
        sample_rate: DEMO_RATE,
        noise_floor_db: Some(-30.0),
        seed,
    };
    let mut x = generate(&config)?.into_samples();
    let rate = f64::from(DEMO_RATE);
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / rate;
        *v += wander * (std::f64::consts::TAU * 0.25 * t).sin() + 0.5 * wander * (std::f64::consts::TAU * 0.07 * t).sin();
    }
    Ok(x)
}

/// Apply the transformation named `name` (`noise`, `scale`, `negation`,
/// `temporal_inversion`, `permutation`, `time_warp`, `original`).
pub fn transform(x: &[f64], name: &str, spec: TransformSpec) -> ecg_ssl::Result<Vec<f64>> {
    spec.validate()?;
    apply(x, TransformId::from_name(name)?, &spec)
}

pub fn baseline(x: &[f64], sample_rate: u32) -> ecg_ssl::Result<Vec<f64>> {
    let s = Signal::new(x.to_vec(), sample_rate, "demo")?;
    Ok(remove_baseline_wander(&s)?.into_samples())
}

fn js(e: ecg_ssl::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn synth_ecg(heart_rate_bpm: f64, seconds: f64, wander: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    synth(heart_rate_bpm, seconds, wander, u64::from(seed)).map_err(js)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn apply_transform(
    signal: &[f64],
    name: &str,
    snr_db: f64,
    scale_factor: f64,
    permutation_segments: usize,
    timewarp_segments: usize,
    stretch_factor: f64,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    let spec = TransformSpec {
        snr_db,
        scale_factor,
        permutation_segments,
        timewarp_segments,
        stretch_factor,
        rng_seed: u64::from(seed),
    };
    transform(signal, name, spec).map_err(js)
}

#[wasm_bindgen]
pub fn baseline_filter(signal: &[f64], sample_rate: u32) -> Result<Vec<f64>, JsError> {
    baseline(signal, sample_rate).map_err(js)
}

#[wasm_bindgen]
pub fn sample_rate() -> u32 {
    DEMO_RATE
}
