//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria. The
//! process fails when a criterion fails that is not in `KNOWN_FAILURES`;
//! known failures are still reported as FAIL.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ecg_ssl::dataset::{build_pretext, EmotionDataset};
use ecg_ssl::downstream::{train_downstream, DownstreamConfig, DownstreamModel, HeadVariant};
use ecg_ssl::metrics::{accuracy, binary_score, macro_f1, ConfusionMatrix};
use ecg_ssl::nn::gradcheck::check_all;
use ecg_ssl::nn::loss::{bce_loss, weighted_total_loss};
use ecg_ssl::nn::Checkpoint;
use ecg_ssl::pretext::{batch_tensor, evaluate_pretext, PretextModel, PretextTrainer, TrainConfig, TrunkConfig};
use ecg_ssl::rng::stream;
use ecg_ssl::signal::{preprocess, Segment, SEGMENT_LEN, WINDOW_SECONDS};
use ecg_ssl::sweep::SWEEP_HEADER;
use ecg_ssl::synth::{generate, recording_corpus, SynthConfig};
use ecg_ssl::transforms::{add_noise, apply, permute, scale, time_warp, TransformId, TransformSpec};
use rand::Rng;

/// Criteria measured to fail at the specified settings.
const KNOWN_FAILURES: &[u8] = &[6];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Criterion = fn() -> Outcome;

fn main() {
    let criteria: [(u8, &str, Criterion); 11] = [
        (1, "architecture conformance", architecture),
        (2, "transformation invariants", transform_invariants),
        (3, "SNR fidelity", snr_fidelity),
        (4, "gradient correctness", gradients),
        (5, "loss oracle", loss_oracle),
        (6, "overfit sanity (pretext)", overfit),
        (7, "freeze contract", freeze_contract),
        (8, "end-to-end proxy task", proxy_task),
        (9, "determinism", determinism),
        (10, "sweep harness", sweep_harness),
        (11, "metric oracle", metric_oracle),
    ];
    let only: Option<Vec<u8>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());

    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        let known = if !result.pass && KNOWN_FAILURES.contains(&id) { " [known]" } else { "" };
        println!(
            "criterion {id:>2} {verdict}{known} {name} ({:.1} s): {}",
            start.elapsed().as_secs_f64(),
            result.detail
        );
        if !result.pass && !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t <= limit, format!("{:.1} s of {} s allowed", t.as_secs_f64(), limit.as_secs()))
}

fn architecture() -> Outcome {
    let start = Instant::now();
    let expected = vec![(2560, 1), (2560, 32), (1277, 32), (1277, 64), (635, 64), (635, 128), (1, 128)];
    let mut model = PretextModel::<f32>::multi_task(0).unwrap();
    let x = batch_tensor::<f32, _>(&[vec![0.5; SEGMENT_LEN]]).unwrap();
    let mut trace = Vec::new();
    let emb = model.trunk.forward_traced(&x, &mut trace).unwrap();
    let declared = model.trunk.config().shape_trace().unwrap();
    let (fast, time) = within(start, Duration::from_secs(1));
    let shown: Vec<String> = trace.iter().map(|(l, c)| if *l == 1 { c.to_string() } else { format!("{l}x{c}") }).collect();
    outcome(
        trace == expected && declared == expected && emb.shape() == [1, 128] && fast,
        format!("{}; {time}", shown.join(" -> ")),
    )
}

fn transform_invariants() -> Outcome {
    let start = Instant::now();
    let signals = recording_corpus(10, 1000.0, (45.0, 150.0), 17).unwrap();
    let windows: Vec<Segment> = preprocess(&signals, WINDOW_SECONDS).unwrap().into_iter().flatten().take(1000).collect();
    let mut r = stream(2, "acceptance-transforms", &[]);
    let mut failures = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        let x = &w.samples;
        let spec = TransformSpec {
            snr_db: r.random_range(2.0..45.0),
            scale_factor: r.random_range(0.1..10.0),
            permutation_segments: r.random_range(2..=40),
            timewarp_segments: r.random_range(2..=40),
            stretch_factor: r.random_range(1.05..4.0),
            rng_seed: r.random(),
        };
        let mut check = |ok: bool, what: &str| {
            if !ok {
                failures.push(format!("{what} on segment {i}"));
            }
        };
        check(apply(&apply(x, TransformId::Negation, &spec).unwrap(), TransformId::Negation, &spec).unwrap() == *x, "negate twice");
        check(
            apply(&apply(x, TransformId::TemporalInversion, &spec).unwrap(), TransformId::TemporalInversion, &spec).unwrap() == *x,
            "invert twice",
        );
        check(scale(x, 1.0).unwrap() == *x, "beta = 1");
        check(permute(x, 1, spec.rng_seed).unwrap() == *x, "m = 1");
        check(time_warp(x, spec.timewarp_segments, 1.0, spec.rng_seed).unwrap().iter().zip(x).all(|(a, b)| (a - b).abs() < 1e-12), "k = 1");
        let mut a = apply(x, TransformId::Permutation, &spec).unwrap();
        let mut b = x.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        check(a == b, "permutation multiset");
        for id in TransformId::ALL.into_iter().skip(1) {
            let y = apply(x, id, &spec).unwrap();
            check(y.len() == x.len(), &format!("{id} length"));
            check(y == apply(x, id, &spec).unwrap(), &format!("{id} determinism"));
        }
    }
    let (fast, time) = within(start, Duration::from_secs(10));
    let n = windows.len();
    match failures.first() {
        None => outcome(n == 1000 && fast, format!("{n} segments, all checks hold; {time}")),
        Some(f) => outcome(false, format!("{} violations, first: {f}", failures.len())),
    }
}

fn snr_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut report = Vec::new();
    for alpha in [2.0, 10.0, 15.0, 25.0, 45.0] {
        let mut total = 0.0;
        for trial in 0..100u64 {
            let mut r = stream(trial, "acceptance-snr", &[]);
            let raw: Vec<f64> = (0..SEGMENT_LEN).map(|_| r.random_range(-1.0..1.0)).collect();
            let power = raw.iter().map(|v| v * v).sum::<f64>() / SEGMENT_LEN as f64;
            let x: Vec<f64> = raw.iter().map(|v| v / power.sqrt()).collect();
            let y = add_noise(&x, alpha, trial).unwrap();
            let noise = y.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / SEGMENT_LEN as f64;
            total += -10.0 * noise.log10();
        }
        let mean = total / 100.0;
        worst = worst.max((mean - alpha).abs());
        report.push(format!("{alpha} dB -> {mean:.3}"));
    }
    outcome(worst <= 0.5, format!("{}; worst deviation {worst:.3} dB", report.join(", ")))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let checks = check_all(20).unwrap();
    let (fast, time) = within(start, Duration::from_secs(60));
    let worst = checks.iter().map(|c| c.worst).fold(0.0, f64::max);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.item).collect();
    outcome(
        failed.is_empty() && fast,
        format!("{} items x 20 instances, worst relative error {worst:.2e}, failing {failed:?}; {time}", checks.len()),
    )
}

fn loss_oracle() -> Outcome {
    let alpha = [0.195, 0.195, 0.195, 0.0125, 0.0125, 0.195, 0.195];
    let unit = weighted_total_loss(&[1.0; 7], &alpha).unwrap();
    let mut r = stream(5, "acceptance-loss", &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut per_task = Vec::new();
        let mut independent = 0.0;
        for a in alpha {
            let psi: Vec<f64> = (0..32).map(|_| r.random_range(0.01..0.99)).collect();
            let p: Vec<f64> = (0..32).map(|_| f64::from(r.random_range(0..2u8))).collect();
            let mut sum = 0.0;
            for (q, t) in psi.iter().zip(&p) {
                sum -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
            }
            independent += a * sum / 32.0;
            per_task.push(bce_loss(&psi, &p).unwrap());
        }
        worst = worst.max((weighted_total_loss(&per_task, &alpha).unwrap() - independent).abs());
    }
    outcome(
        worst <= 1e-10 && (unit - 1.0).abs() <= 1e-12,
        format!("max |difference| {worst:.1e} over 100 draws; all-ones total {unit}"),
    )
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let signal = generate(&SynthConfig {
        heart_rate_bpm: 72.0,
        duration_s: 300.0,
        noise_floor_db: Some(-30.0),
        seed: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    let windows: Vec<Vec<f64>> =
        preprocess(&[signal], WINDOW_SECONDS).unwrap().into_iter().flatten().take(29).map(|s| s.samples).collect();
    let data = build_pretext(&windows, &TransformSpec::default(), 1).unwrap();
    let mut model = PretextModel::<f32>::multi_task(1).unwrap();
    let config = TrainConfig::pretext(1);
    let mut trainer = PretextTrainer::new(config).unwrap();
    let fast_heads = [3, 4];
    let mut fast_by_10 = [f64::INFINITY; 2];
    let mut best_acc = [0.0f64; 7];
    for epoch in 1..=config.epochs {
        let e = trainer.run_epoch(&mut model, &data).unwrap();
        if epoch <= 10 {
            for (k, &h) in fast_heads.iter().enumerate() {
                fast_by_10[k] = fast_by_10[k].min(e.per_head[h]);
            }
        }
        if epoch % 5 == 0 {
            let m = evaluate_pretext(&mut model, &data).unwrap();
            for (b, h) in best_acc.iter_mut().zip(&m.heads) {
                *b = b.max(h.score.accuracy);
            }
            if epoch >= 10 && best_acc.iter().all(|&a| a >= 0.99) {
                break;
            }
        }
    }
    let (fast, time) = within(start, Duration::from_secs(600));
    let acc: Vec<String> = TransformId::ALL.iter().zip(&best_acc).map(|(t, a)| format!("{t} {a:.3}")).collect();
    outcome(
        best_acc.iter().all(|&a| a >= 0.99) && fast_by_10.iter().all(|&l| l <= 0.05) && fast,
        format!(
            "{} rows; best training accuracy [{}]; lowest loss by epoch 10: negation {:.3}, temporal_inversion {:.3}; {time}",
            data.len(),
            acc.join(", "),
            fast_by_10[0],
            fast_by_10[1]
        ),
    )
}

fn freeze_contract() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let pretext = PretextModel::<f32>::multi_task(3).unwrap();
    let path = dir.path().join("pretext.ecgw");
    pretext.to_checkpoint().write(&path).unwrap();
    let bytes = fs::read(&path).unwrap();
    let ckpt = Checkpoint::read(&path).unwrap();
    let pretext_exact = ckpt.to_bytes() == bytes && bytes == pretext.to_checkpoint().to_bytes();
    let before = ckpt.digest("trunk.");

    let mut r = stream(7, "acceptance-freeze", &[]);
    let inputs: Vec<Vec<f64>> = (0..32).map(|_| (0..SEGMENT_LEN).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let labels: Vec<usize> = (0..32).map(|i| i % 2).collect();
    let data = EmotionDataset::new(inputs, labels, 2, "arousal").unwrap();
    let mut model = DownstreamModel::<f32>::transfer(&ckpt, TrunkConfig::standard(), 2, HeadVariant::A, 3).unwrap();
    let config = DownstreamConfig { epochs: 5, ..DownstreamConfig::new(3) };
    train_downstream(&mut model, &data, &config).unwrap();
    let saved = model.to_checkpoint();
    let after = saved.digest("trunk.");

    let path = dir.path().join("downstream.ecgw");
    saved.write(&path).unwrap();
    let downstream_exact = Checkpoint::read(&path).unwrap().to_bytes() == fs::read(&path).unwrap();
    outcome(
        before == after && pretext_exact && downstream_exact,
        format!(
            "trunk sha256 {}.. before and {}.. after training; round trips bit-exact: pretext {pretext_exact}, downstream {downstream_exact}",
            &before[..12],
            &after[..12]
        ),
    )
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ecg-ssl"))
        .args(args)
        .current_dir(dir)
        .env_remove("ECG_SSL_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// Proxy of 8 subjects x 10 one-minute trials (480 windows). Pretext and
/// end-to-end baseline epochs are reduced to fit the time budget.
fn proxy_task() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = || -> Result<(), String> {
        cli(d, &["synth", "--subjects", "8", "--trials", "10", "--seconds", "60"])?;
        cli(d, &["compare", "--folds", "10", "--pretext-epochs", "3", "--supervised-epochs", "3"])
    };
    if let Err(e) = run() {
        return outcome(false, e);
    }
    let rows = csv_rows(&d.join("comparison.csv"));
    let find = |m: &str| rows.iter().find(|r| r[0] == m).map(|r| r[2].parse::<f64>().unwrap());
    let (fast, time) = within(start, Duration::from_secs(1200));
    match (find("self-supervised"), find("fully-supervised")) {
        (Some(ssl), Some(sup)) => outcome(
            ssl >= 0.9 && fast,
            format!(
                "10-fold mean accuracy self-supervised {ssl:.4}, fully-supervised {sup:.4} (self-supervised {} baseline); {time}",
                if ssl >= sup { ">=" } else { "<" }
            ),
        ),
        _ => outcome(false, "comparison.csv lacks a method row"),
    }
}

/// Every checkpoint, segment file and CSV under `dir`, relative to it.
fn artifacts(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "ecgw" | "ecgs")) {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn identical_trees(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (artifacts(a), artifacts(b));
    if fa != fb {
        return Err(format!("file sets differ: {fa:?} vs {fb:?}"));
    }
    for f in &fa {
        if fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap() {
            return Err(format!("{} differs", f.display()));
        }
    }
    Ok(fa.len())
}

fn determinism() -> Outcome {
    let steps: [&[&str]; 11] = [
        &["synth", "--subjects", "4", "--trials", "2", "--seconds", "20", "--raw-dir", "raw"],
        &["preprocess", "--in", "raw", "--out", "reprocessed.ecgs"],
        &["make-pretext"],
        &["train-pretext", "--epochs", "1", "--batch", "32"],
        &["train-downstream", "--checkpoint", "pretext.ecgw", "--epochs", "5"],
        &["eval", "--checkpoint", "pretext.ecgw", "--in", "pretext.ecgs"],
        &["eval", "--checkpoint", "downstream.ecgw"],
        &["eval", "--checkpoint", "pretext.ecgw", "--folds", "2", "--epochs", "5"],
        &["train-downstream", "--from-scratch", "--epochs", "1", "--out", "scratch.ecgw"],
        &["sweep", "--transform", "noise", "--values", "15", "--epochs", "1", "--downstream-epochs", "5"],
        &["compare", "--folds", "2", "--pretext-epochs", "1", "--epochs", "5", "--supervised-epochs", "1", "--out", "cmp.csv"],
    ];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        for s in steps {
            if let Err(e) = cli(dir, s) {
                return outcome(false, e);
            }
        }
    }
    match identical_trees(a.path(), b.path()) {
        Ok(n) => outcome(true, format!("{} subcommand runs repeated; {n} checkpoints, segment files and CSVs byte-identical", steps.len())),
        Err(e) => outcome(false, e),
    }
}

/// Three-point SNR single-task sweep and a 2x2 multi-task grid on a small
/// proxy, each run twice with the same seed.
fn sweep_harness() -> Outcome {
    let start = Instant::now();
    let multi = "[sweep.multi]\nsnr_db = [15.0, 25.0]\nwarp_k = [1.05, 1.35]\n";
    let run = |dir: &Path| -> Result<(), String> {
        fs::write(dir.join("multi.toml"), multi).map_err(|e| e.to_string())?;
        cli(dir, &["synth", "--subjects", "4", "--trials", "4", "--seconds", "30"])?;
        cli(dir, &["sweep", "--mode", "single", "--transform", "noise", "--param", "snr_db", "--values", "2,15,45", "--epochs", "5", "--out", "single.csv"])?;
        cli(dir, &["--config", "multi.toml", "sweep", "--mode", "multi", "--epochs", "5", "--out", "multi.csv"])
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        if let Err(e) = run(d) {
            return outcome(false, e);
        }
    }
    let mut notes = Vec::new();
    let mut well_formed = true;
    for (file, rows) in [("single.csv", 3), ("multi.csv", 4)] {
        let text = fs::read_to_string(a.path().join(file)).unwrap();
        let mut lines = text.lines();
        well_formed &= lines.next() == Some(SWEEP_HEADER);
        let body: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        well_formed &= body.len() == rows;
        for r in &body {
            let acc = |i: usize| r.get(i).and_then(|v| v.parse::<f64>().ok()).filter(|v| (0.0..=1.0).contains(v));
            well_formed &= r.len() == 9 && acc(6).is_some() && acc(7).is_some();
        }
        let points: Vec<String> = body.iter().map(|r| format!("pretext {} downstream {}", short(r[6]), short(r[7]))).collect();
        notes.push(format!("{file}: {}", points.join("; ")));
    }
    let same = identical_trees(a.path(), b.path());
    let (fast, time) = within(start, Duration::from_secs(1800));
    outcome(
        well_formed && same.is_ok() && fast,
        format!("{}; reproducible {}; {time}", notes.join(" | "), same.is_ok()),
    )
}

fn short(v: &str) -> String {
    v.parse::<f64>().map_or_else(|_| v.to_string(), |x| format!("{x:.3}"))
}

fn metric_oracle() -> Outcome {
    let mut r = stream(11, "acceptance-metrics", &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let classes = r.random_range(2..=6);
        let n = r.random_range(1..=300);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
        let pred: Vec<usize> = truth.iter().map(|&t| if r.random_bool(0.5) { t } else { r.random_range(0..classes) }).collect();
        let cm = ConfusionMatrix::from_predictions(classes, &truth, &pred).unwrap();

        let mut counts = vec![vec![0u64; classes]; classes];
        for (&t, &p) in truth.iter().zip(&pred) {
            counts[t][p] += 1;
        }
        let diag: u64 = (0..classes).map(|c| counts[c][c]).sum();
        worst = worst.max((accuracy(&cm).unwrap() - diag as f64 / n as f64).abs());
        let f1 = |c: usize| {
            let tp = counts[c][c] as f64;
            let fp = (0..classes).filter(|&t| t != c).map(|t| counts[t][c]).sum::<u64>() as f64;
            let fn_ = (0..classes).filter(|&p| p != c).map(|p| counts[c][p]).sum::<u64>() as f64;
            if 2.0 * tp + fp + fn_ == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) }
        };
        let expected_macro = (0..classes).map(f1).sum::<f64>() / classes as f64;
        worst = worst.max((macro_f1(&cm).unwrap() - expected_macro).abs());

        let t: Vec<bool> = truth.iter().map(|&c| c == 1).collect();
        let p: Vec<bool> = pred.iter().map(|&c| c == 1).collect();
        let mut binary = [[0u64; 2]; 2];
        for (&a, &b) in t.iter().zip(&p) {
            binary[usize::from(a)][usize::from(b)] += 1;
        }
        let (tp, fp, fn_) = (binary[1][1] as f64, binary[0][1] as f64, binary[1][0] as f64);
        let expected_f1 = if tp + fp + fn_ == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        let score = binary_score(&t, &p).unwrap();
        worst = worst.max((score.f1 - expected_f1).abs());
        worst = worst.max((score.accuracy - (binary[0][0] + binary[1][1]) as f64 / n as f64).abs());
    }
    outcome(worst <= 1e-12, format!("100 prediction sets, max |difference| {worst:.1e}"))
}
