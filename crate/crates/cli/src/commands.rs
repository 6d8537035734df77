use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ecg_ssl::dataset::{
    build_pretext, read_raw_signal, read_segments, read_subject_manifest, write_label_manifest, write_raw_signal,
    write_segments, write_subject_manifest, EmotionDataset, PretextDataset, RawRecord, SegmentFile,
};
use ecg_ssl::downstream::{
    cross_validate_supervised, cross_validate_transfer, evaluate_downstream, train_downstream as fit_downstream,
    write_comparison_csv, write_fold_csv, ComparisonRow, DownstreamModel,
};
use ecg_ssl::nn::Checkpoint;
use ecg_ssl::pretext::{
    evaluate_pretext, train_pretext as fit_pretext, write_loss_csv, write_metrics_csv, PretextModel, TrunkConfig,
};
use ecg_ssl::signal::{preprocess as preprocess_signals, Signal, SEGMENT_LEN, TARGET_RATE, WINDOW_SECONDS};
use ecg_ssl::sweep::{run_multi_task, run_single_task, write_sweep_csv, SweepData, SweepGrid, SweepParam, SweepSettings};
use ecg_ssl::synth::{generate_emotion_proxy, ProxyConfig};
use ecg_ssl::transforms::TransformId;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{
    CompareArgs, EvalArgs, MakePretextArgs, PreprocessArgs, SweepArgs, SynthArgs, TrainDownstreamArgs,
    TrainPretextArgs,
};

/// Files read and written by one subcommand, for the manifest.
#[derive(Debug, Default)]
pub struct RunFiles {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

type Result<T> = std::result::Result<T, CliError>;

fn out_path(config: &RunConfig, p: &Path) -> PathBuf {
    let dir = &config.paths.output;
    if p.is_absolute() || dir.as_os_str().is_empty() || dir == Path::new(".") {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

/// An input path as given, else relative to the output directory.
fn in_path(config: &RunConfig, p: &Path) -> Result<PathBuf> {
    if p.exists() {
        return Ok(p.to_path_buf());
    }
    let alt = config.paths.output.join(p);
    if !p.is_absolute() && alt.exists() {
        return Ok(alt);
    }
    Err(CliError::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
}

/// Flag, then `paths.input` from the config, then `fallback`.
fn input_or(config: &mut RunConfig, flag: &Option<PathBuf>, fallback: Option<&str>) -> Result<PathBuf> {
    let chosen = flag
        .clone()
        .or_else(|| config.paths.input.clone())
        .or_else(|| fallback.map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("missing --in".into()))?;
    config.paths.input = Some(chosen.clone());
    in_path(config, &chosen)
}

fn checkpoint_or(config: &mut RunConfig, flag: &Option<PathBuf>) -> Result<Option<PathBuf>> {
    let chosen = flag.clone().or_else(|| config.paths.checkpoint.clone());
    config.paths.checkpoint = chosen.clone();
    chosen.map(|c| in_path(config, &c)).transpose()
}

/// `data.ecgs` gives `data.<kind>.csv`.
fn sidecar(path: &Path, kind: &str) -> PathBuf {
    path.with_extension(format!("{kind}.csv"))
}

fn write_csv(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> ecg_ssl::Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?);
    body(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_emotion(config: &RunConfig, path: &Path) -> Result<(EmotionDataset, Vec<PathBuf>)> {
    let file = read_segments(path)?;
    let mut data = EmotionDataset::from_segment_file(file, None, &config.downstream.attribute)?;
    let subjects = sidecar(path, "subjects");
    let mut used = vec![path.to_path_buf()];
    if subjects.exists() {
        data = data.with_subjects(read_subject_manifest(&subjects)?)?;
        used.push(subjects);
    }
    Ok((data, used))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::read(path)?)
}

fn is_pretext_checkpoint(ckpt: &Checkpoint) -> bool {
    ckpt.entries.iter().any(|e| e.name.starts_with("head."))
}

/// Write windows, labels and subjects; returns the three paths.
fn write_windows(path: &Path, rows: Vec<(Vec<f64>, u8, String)>) -> Result<Vec<PathBuf>> {
    let mut file = SegmentFile::new(TARGET_RATE, SEGMENT_LEN);
    let mut subjects = Vec::with_capacity(rows.len());
    for (row, label, subject) in rows {
        file.push(row, label)?;
        subjects.push(subject);
    }
    if file.is_empty() {
        return Err(CliError::Core(ecg_ssl::Error::InvalidInput("recordings yield no complete windows".into())));
    }
    let labels = sidecar(path, "labels");
    let subject_path = sidecar(path, "subjects");
    write_segments(path, &file)?;
    write_label_manifest(&labels, &file.labels)?;
    write_subject_manifest(&subject_path, &subjects)?;
    Ok(vec![path.to_path_buf(), labels, subject_path])
}

fn windows_of(signals: &[Signal], labels: &[u8]) -> Result<Vec<(Vec<f64>, u8, String)>> {
    let segments = preprocess_signals(signals, WINDOW_SECONDS)?;
    Ok(segments
        .into_iter()
        .zip(labels)
        .flat_map(|(segs, &label)| segs.into_iter().map(move |s| (s.samples, label, s.subject_id)))
        .collect())
}

pub fn synth(args: &SynthArgs, config: &mut RunConfig) -> Result<RunFiles> {
    if let Some(n) = args.subjects {
        config.synth.subjects = n;
    }
    if let Some(n) = args.trials {
        config.synth.trials_per_subject = n;
    }
    if let Some(s) = args.seconds {
        config.synth.trial_seconds = s;
    }
    let proxy = ProxyConfig {
        n_subjects: config.synth.subjects,
        trials_per_subject: config.synth.trials_per_subject,
        trial_seconds: config.synth.trial_seconds,
        seed: config.seed,
        ..ProxyConfig::default()
    };
    let records = generate_emotion_proxy(&proxy)?;
    let mut run = RunFiles::default();
    if let Some(dir) = &args.raw_dir {
        let dir = out_path(config, dir);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        for (i, r) in records.iter().enumerate() {
            let path = dir.join(format!("recording-{i:04}.csv"));
            let label = u8::try_from(r.label).expect("proxy labels are 0 or 1");
            write_raw_signal(&path, &RawRecord { signal: r.signal.clone(), label: Some(label) })?;
            run.outputs.push(path);
        }
    }
    let labels: Vec<u8> = records.iter().map(|r| r.label as u8).collect();
    let signals: Vec<Signal> = records.into_iter().map(|r| r.signal).collect();
    let rows = windows_of(&signals, &labels)?;
    log::info!("{} recordings, {} windows", signals.len(), rows.len());
    run.outputs.extend(write_windows(&out_path(config, &args.out), rows)?);
    Ok(run)
}

pub fn preprocess(args: &PreprocessArgs, config: &mut RunConfig) -> Result<RunFiles> {
    let dir = input_or(config, &args.input, None)?;
    let entries = std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("{}: no .csv recordings", dir.display())));
    }
    let mut signals = Vec::with_capacity(files.len());
    let mut labels = Vec::with_capacity(files.len());
    for f in &files {
        let rec = read_raw_signal(f).map_err(|e| match e {
            ecg_ssl::Error::InvalidInput(m) => ecg_ssl::Error::InvalidInput(format!("{}: {m}", f.display())),
            other => other,
        })?;
        labels.push(rec.label.unwrap_or(0));
        signals.push(rec.signal);
    }
    let rows = windows_of(&signals, &labels)?;
    log::info!("{} recordings, {} windows", signals.len(), rows.len());
    Ok(RunFiles { inputs: files, outputs: write_windows(&out_path(config, &args.out), rows)? })
}

pub fn make_pretext(args: &MakePretextArgs, config: &mut RunConfig) -> Result<RunFiles> {
    let input = input_or(config, &args.input, Some("data.ecgs"))?;
    let file = read_segments(&input)?;
    let data = build_pretext(&file.inputs, &config.transforms, config.seed)?;
    let out = out_path(config, &args.out);
    let seg = data.to_segment_file(file.sample_rate)?;
    write_segments(&out, &seg)?;
    let labels = sidecar(&out, "labels");
    write_label_manifest(&labels, &seg.labels)?;
    log::info!("{} pretext rows, class counts {:?}", data.len(), data.histogram());
    Ok(RunFiles { inputs: vec![input], outputs: vec![out, labels] })
}

/// One head per transformation present; a file holding the original and a
/// single transformation trains that transformation alone.
fn tasks_for(data: &PretextDataset) -> Vec<TransformId> {
    let present: BTreeSet<u8> = data.labels.iter().map(|l| l.code()).collect();
    let others: Vec<TransformId> = TransformId::ALL
        .into_iter()
        .filter(|t| *t != TransformId::Original && present.contains(&t.code()))
        .collect();
    if others.len() == 1 {
        others
    } else {
        TransformId::ALL.to_vec()
    }
}

pub fn train_pretext(args: &TrainPretextArgs, config: &mut RunConfig) -> Result<RunFiles> {
    if let Some(e) = args.epochs {
        config.pretext.epochs = e;
    }
    if let Some(b) = args.batch {
        config.pretext.batch = b;
    }
    if let Some(lr) = args.lr {
        config.pretext.lr = lr;
    }
    config.validate()?;
    let input = input_or(config, &args.input, Some("pretext.ecgs"))?;
    let data = PretextDataset::from_segment_file(read_segments(&input)?, config.transforms)?;
    let tasks = tasks_for(&data);
    let mut model =
        PretextModel::<f32>::with_alpha(TrunkConfig::standard(), &tasks, config.alpha(&tasks), config.seed)?;
    let trace = fit_pretext(&mut model, &data, config.pretext_train())?;
    let metrics = evaluate_pretext(&mut model, &data)?;

    let ckpt = out_path(config, &args.out);
    model.to_checkpoint().write(&ckpt)?;
    let loss = out_path(config, Path::new("pretext_loss.csv"));
    write_csv(&loss, |w| write_loss_csv(w, &trace))?;
    let scores = out_path(config, Path::new("pretext_metrics.csv"));
    write_csv(&scores, |w| write_metrics_csv(w, &metrics))?;
    log::info!("training-set mean head accuracy {:.4}", metrics.mean_accuracy);
    Ok(RunFiles { inputs: vec![input], outputs: vec![ckpt, loss, scores] })
}

fn apply_downstream_flags(config: &mut RunConfig, variant: &Option<String>, epochs: Option<usize>) -> Result<()> {
    if let Some(v) = variant {
        config.downstream.variant = v.clone();
    }
    if let Some(e) = epochs {
        config.downstream.epochs = e;
    }
    config.validate()
}

pub fn train_downstream(args: &TrainDownstreamArgs, config: &mut RunConfig) -> Result<RunFiles> {
    apply_downstream_flags(config, &args.variant, args.epochs)?;
    if let Some(b) = args.batch {
        config.downstream.batch = b;
    }
    if let Some(lr) = args.lr {
        config.downstream.lr = lr;
    }
    config.validate()?;
    let input = input_or(config, &args.input, Some("data.ecgs"))?;
    let (data, mut inputs) = read_emotion(config, &input)?;
    let mut model = match checkpoint_or(config, &args.checkpoint)? {
        Some(path) if !args.from_scratch => {
            let ckpt = load_checkpoint(&path)?;
            inputs.push(path);
            DownstreamModel::<f32>::transfer(
                &ckpt,
                TrunkConfig::standard(),
                data.class_count,
                config.variant(),
                config.seed,
            )?
        }
        None if !args.from_scratch => {
            return Err(CliError::Usage("train-downstream needs --checkpoint or --from-scratch".into()))
        }
        _ => DownstreamModel::<f32>::from_scratch(
            TrunkConfig::standard(),
            data.class_count,
            config.variant(),
            true,
            config.seed,
        )?,
    };
    let trace = fit_downstream(&mut model, &data, &config.downstream_train())?;

    let ckpt = out_path(config, &args.out);
    model.to_checkpoint().write(&ckpt)?;
    let loss = out_path(config, Path::new("downstream_loss.csv"));
    write_csv(&loss, |w| {
        writeln!(w, "epoch,loss")?;
        for (i, l) in trace.iter().enumerate() {
            writeln!(w, "{},{l}", i + 1)?;
        }
        Ok(())
    })?;
    Ok(RunFiles { inputs, outputs: vec![ckpt, loss] })
}

pub fn eval(args: &EvalArgs, config: &mut RunConfig) -> Result<RunFiles> {
    apply_downstream_flags(config, &args.variant, args.epochs)?;
    if let Some(k) = args.folds {
        config.downstream.folds = k;
    }
    config.validate()?;
    let path = checkpoint_or(config, &args.checkpoint)?.ok_or_else(|| CliError::Usage("missing --checkpoint".into()))?;
    let ckpt = load_checkpoint(&path)?;
    let pretext = is_pretext_checkpoint(&ckpt);
    let input = input_or(config, &args.input, Some(if pretext && args.folds.is_none() { "pretext.ecgs" } else { "data.ecgs" }))?;
    let mut inputs = vec![path];

    if args.folds.is_some() {
        let (data, used) = read_emotion(config, &input)?;
        inputs.extend(used);
        let folds = cross_validate_transfer(
            &ckpt,
            TrunkConfig::standard(),
            &data,
            config.downstream.folds,
            config.variant(),
            &config.downstream_train(),
        )?;
        let out = out_path(config, Path::new("downstream_metrics.csv"));
        write_csv(&out, |w| write_fold_csv(w, &folds))?;
        return Ok(RunFiles { inputs, outputs: vec![out] });
    }

    if pretext {
        inputs.push(input.clone());
        let mut model = PretextModel::<f32>::from_checkpoint(&ckpt, TrunkConfig::standard())?;
        let data = PretextDataset::from_segment_file(read_segments(&input)?, config.transforms)?;
        let metrics = evaluate_pretext(&mut model, &data)?;
        let out = out_path(config, Path::new("pretext_metrics.csv"));
        write_csv(&out, |w| write_metrics_csv(w, &metrics))?;
        return Ok(RunFiles { inputs, outputs: vec![out] });
    }

    let (data, used) = read_emotion(config, &input)?;
    inputs.extend(used);
    let mut model = DownstreamModel::<f32>::from_checkpoint(&ckpt, TrunkConfig::standard())?;
    let m = evaluate_downstream(&mut model, &data)?;
    let out = out_path(config, Path::new("downstream_metrics.csv"));
    write_csv(&out, |w| {
        writeln!(w, "attribute,accuracy,macro_f1")?;
        writeln!(w, "{},{},{}", data.attribute_name, m.accuracy, m.macro_f1)?;
        Ok(())
    })?;
    let confusion = out_path(config, Path::new("confusion.csv"));
    write_csv(&confusion, |w| {
        writeln!(w, "truth,predicted,count")?;
        for (t, row) in m.confusion.rows().iter().enumerate() {
            for (p, c) in row.iter().enumerate() {
                writeln!(w, "{t},{p},{c}")?;
            }
        }
        Ok(())
    })?;
    Ok(RunFiles { inputs, outputs: vec![out, confusion] })
}

pub fn sweep(args: &SweepArgs, config: &mut RunConfig) -> Result<RunFiles> {
    let s = &mut config.sweep;
    if let Some(m) = &args.mode {
        s.mode = m.clone();
    }
    if let Some(t) = &args.transform {
        s.transform = t.clone();
    }
    if let Some(p) = &args.param {
        s.param = p.clone();
    }
    if let Some(v) = &args.values {
        s.values = v.clone();
    }
    if let Some(c) = args.cap {
        s.cap = c;
    }
    if let Some(e) = args.epochs {
        config.pretext.epochs = e;
    }
    if let Some(e) = args.downstream_epochs {
        config.downstream.epochs = e;
    }
    config.validate()?;
    let input = input_or(config, &args.input, Some("data.ecgs"))?;
    let (emotion, inputs) = read_emotion(config, &input)?;
    let data = SweepData { pretext_segments: emotion.inputs.clone(), emotion };
    let settings = SweepSettings {
        trunk: TrunkConfig::standard(),
        base_spec: config.transforms,
        pretext: config.pretext_train(),
        downstream: config.downstream_train(),
        variant: config.variant(),
    };
    let rows = if config.sweep.mode == "multi" {
        run_multi_task(&config.sweep.multi.grid(), config.sweep.cap, &data, &settings)?
    } else {
        let id = TransformId::from_name(&config.sweep.transform)?;
        let grid = if id.is_parameterless() {
            None
        } else {
            Some(SweepGrid::new(SweepParam::from_name(&config.sweep.param)?, config.sweep.values.clone())?)
        };
        run_single_task(id, grid.as_ref(), &data, &settings)?
    };
    let out = out_path(config, &args.out);
    write_csv(&out, |w| write_sweep_csv(w, &rows))?;
    Ok(RunFiles { inputs, outputs: vec![out] })
}

pub fn compare(args: &CompareArgs, config: &mut RunConfig) -> Result<RunFiles> {
    apply_downstream_flags(config, &args.variant, args.epochs)?;
    if let Some(k) = args.folds {
        config.downstream.folds = k;
    }
    if let Some(e) = args.pretext_epochs {
        config.pretext.epochs = e;
    }
    if let Some(e) = args.supervised_epochs {
        config.downstream.supervised_epochs = e;
    }
    config.validate()?;
    let input = input_or(config, &args.input, Some("data.ecgs"))?;
    let (data, mut inputs) = read_emotion(config, &input)?;
    let mut outputs = Vec::new();

    let ckpt = match checkpoint_or(config, &args.checkpoint)? {
        Some(path) => {
            let c = load_checkpoint(&path)?;
            inputs.push(path);
            c
        }
        None => {
            let pretext = build_pretext(&data.inputs, &config.transforms, config.seed)?;
            let tasks = TransformId::ALL;
            let mut model =
                PretextModel::<f32>::with_alpha(TrunkConfig::standard(), &tasks, config.alpha(&tasks), config.seed)?;
            fit_pretext(&mut model, &pretext, config.pretext_train())?;
            let c = model.to_checkpoint();
            let path = out_path(config, Path::new("pretext.ecgw"));
            c.write(&path)?;
            outputs.push(path);
            c
        }
    };

    let train = config.downstream_train();
    let k = config.downstream.folds;
    let ssl = cross_validate_transfer(&ckpt, TrunkConfig::standard(), &data, k, config.variant(), &train)?;
    let supervised_train = ecg_ssl::downstream::DownstreamConfig { epochs: config.downstream.supervised_epochs, ..train };
    let supervised = cross_validate_supervised(TrunkConfig::standard(), &data, k, config.variant(), &supervised_train)?;
    let rows = [ComparisonRow::from_folds("self-supervised", &ssl)?, ComparisonRow::from_folds("fully-supervised", &supervised)?];
    log::info!(
        "self-supervised {:.4} vs fully-supervised {:.4} mean accuracy",
        rows[0].accuracy_mean,
        rows[1].accuracy_mean
    );

    let out = out_path(config, &args.out);
    write_csv(&out, |w| write_comparison_csv(w, &rows))?;
    let ssl_folds = out_path(config, Path::new("downstream_metrics.csv"));
    write_csv(&ssl_folds, |w| write_fold_csv(w, &ssl))?;
    let sup_folds = out_path(config, Path::new("supervised_metrics.csv"));
    write_csv(&sup_folds, |w| write_fold_csv(w, &supervised))?;
    outputs.extend([out, ssl_folds, sup_folds]);
    Ok(RunFiles { inputs, outputs })
}
