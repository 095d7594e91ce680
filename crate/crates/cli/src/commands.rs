use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, ErrorKind};
use std::path::{Path, PathBuf};

use modnet_core::introspect::{export_views, ExportOptions, IntrospectError};
use modnet_core::nn::{load_checkpoint, save_checkpoint, CheckpointError, ModelSpec, ModelState};
use modnet_core::synth::{read_dataset, synth_dataset, write_dataset, DatasetBundle, SynthError};
use modnet_core::train::report::{read_sweep, write_acc_columns, write_acc_vs_snr, write_confusion, write_history, write_sweep};
use modnet_core::train::{evaluate, run_sweep, split_dataset, train as fit, SweepKind, SweepOptions, SweepRow, TrainError};

use crate::config::RunConfig;
use crate::CliError;

pub const LOCK_NAME: &str = ".modnet.lock";

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn from_train(e: TrainError) -> CliError {
    match e {
        TrainError::Config(m) => CliError::Config(m),
        TrainError::Arch(a) => CliError::Config(a.to_string()),
        other => runtime(other),
    }
}

fn from_checkpoint(path: &Path, e: CheckpointError) -> CliError {
    match e {
        CheckpointError::Io(io) => runtime(format!("{}: {io}", path.display())),
        other => CliError::Config(format!("{}: {other}", path.display())),
    }
}

/// Exclusive claim on an output directory, released on drop.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock(path)),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(runtime(format!(
                "{} exists; another run is using this directory (delete it if that run is gone)",
                path.display()
            ))),
            Err(e) => Err(runtime(format!("cannot create {}: {e}", path.display()))),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

/// Writes through a temporary file so readers never see a partial table.
fn replace_with(path: &Path, f: impl FnOnce(BufWriter<File>) -> Result<(), TrainError>) -> Result<(), CliError> {
    let tmp = path.with_extension("csv.tmp");
    f(create(&tmp)?).map_err(runtime)?;
    fs::rename(&tmp, path).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn load_dataset(cfg: &RunConfig) -> Result<DatasetBundle, CliError> {
    let path = cfg
        .dataset_path()
        .ok_or_else(|| CliError::Config("no dataset path; set [dataset] path or pass --dataset".into()))?;
    if !path.is_file() {
        return Err(CliError::Config(format!("dataset {} does not exist", path.display())));
    }
    read_dataset(&path).map_err(|e| match e {
        SynthError::Io(io) => runtime(format!("{}: {io}", path.display())),
        other => CliError::Config(format!("{}: {other}", path.display())),
    })
}

fn build_spec(cfg: &RunConfig, classes: usize) -> Result<ModelSpec, CliError> {
    cfg.architecture()
        .build(&cfg.arch_options(classes))
        .map_err(|e| CliError::Config(e.to_string()))
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let dc = cfg.dataset_config()?;
    let path = cfg.dataset_path().unwrap_or_else(|| cfg.out_dir().join("dataset.iqds"));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let _lock = RunLock::acquire(&dir)?;
    let bundle = synth_dataset(&dc).map_err(|e| match e {
        SynthError::Config(m) => CliError::Config(m),
        other => runtime(other),
    })?;
    write_dataset(&path, &bundle).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    println!(
        "wrote {} frames ({} classes x {} SNRs x {}) to {}",
        bundle.len(),
        dc.classes.len(),
        dc.snr_grid.len(),
        dc.frames_per_cell,
        path.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let bundle = load_dataset(cfg)?;
    let tc = cfg.train_config()?;
    let spec = build_spec(cfg, bundle.n_classes())?;
    let out = cfg.out_dir();
    let name = cfg.model_name();
    let _lock = RunLock::acquire(&out)?;
    let (state, history) = fit(&spec, &bundle, &tc).map_err(from_train)?;
    let ckpt = out.join(format!("{name}.mdnt"));
    save_checkpoint(&ckpt, &spec, &state).map_err(|e| from_checkpoint(&ckpt, e))?;
    let hist = out.join(format!("history_{name}.csv"));
    replace_with(&hist, |w| write_history(w, &history))?;
    let b = history.best_epoch;
    println!(
        "{name}: {} epochs, best epoch {} (val loss {:.4}, val acc {:.4}); wrote {}",
        history.epochs(),
        b + 1,
        history.val_loss[b],
        history.val_acc[b],
        ckpt.display()
    );
    Ok(())
}

fn load_model(cfg: &RunConfig, explicit: Option<&PathBuf>) -> Result<(PathBuf, ModelSpec, ModelState<f32>), CliError> {
    let path = cfg.checkpoint_path(explicit);
    if !path.is_file() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let (spec, state) = load_checkpoint(&path).map_err(|e| from_checkpoint(&path, e))?;
    Ok((path, spec, state))
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let bundle = load_dataset(cfg)?;
    let tc = cfg.train_config()?;
    let (path, spec, state) = load_model(cfg, cfg.eval.checkpoint.as_ref())?;
    if spec.classes() != bundle.n_classes() {
        return Err(CliError::Config(format!(
            "{} predicts {} classes but the dataset has {}",
            path.display(),
            spec.classes(),
            bundle.n_classes()
        )));
    }
    if cfg.arch.is_some() && build_spec(cfg, bundle.n_classes())? != spec {
        return Err(CliError::Config(format!(
            "{} holds a different model than the configured architecture",
            path.display()
        )));
    }
    let test = split_dataset(&bundle, tc.splits, tc.seed).map_err(from_train)?.test;
    if test.is_empty() {
        return Err(CliError::Config("test split is empty".into()));
    }
    let report = evaluate(&state, &spec, &test).map_err(from_train)?;
    let out = cfg.out_dir();
    let name = cfg.model_name();
    let _lock = RunLock::acquire(&out)?;
    replace_with(&out.join("acc_vs_snr.csv"), |w| write_acc_vs_snr(w, &[(&name, &report)]))?;
    replace_with(&out.join(format!("confusion_{name}.csv")), |w| write_confusion(w, &report))?;
    println!(
        "all-SNR accuracy: {:.4} ± {:.4} ({} test frames)",
        report.accuracy,
        report.ci95(),
        report.total
    );
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let kind = cfg
        .sweep
        .kind
        .ok_or_else(|| CliError::Config("no sweep kind; set [sweep] kind or pass --sweep".into()))?;
    let bundle = load_dataset(cfg)?;
    let tc = cfg.train_config()?;
    let opts = SweepOptions {
        kind,
        domain: cfg.sweep.domain.clone(),
        arch: cfg.arch_options(bundle.n_classes()),
    };
    let order: Vec<String> = opts.jobs().map_err(from_train)?.into_iter().map(|j| j.0).collect();
    let out = cfg.out_dir();
    let _lock = RunLock::acquire(&out)?;
    let table = out.join(kind.csv_name());
    let mut rows: Vec<SweepRow> = if table.is_file() {
        let f = File::open(&table).map_err(runtime)?;
        read_sweep(f).map_err(|e| CliError::Config(format!("{}: {e}", table.display())))?
    } else {
        Vec::new()
    };
    rows.retain(|r| order.contains(&r.label));
    let done: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
    if !done.is_empty() {
        println!("resuming {}: {} of {} rows already done", table.display(), done.len(), order.len());
    }
    let rank = |label: &str| order.iter().position(|l| l == label).unwrap_or(usize::MAX);
    let mut sink_err: Option<CliError> = None;
    run_sweep(&bundle, &tc, &opts, &done, |o| {
        println!(
            "{} {}: accuracy {:.4} ± {:.4}, {} epochs",
            kind.name(),
            o.row.label,
            o.row.accuracy,
            o.row.ci95,
            o.row.epochs
        );
        rows.push(o.row.clone());
        rows.sort_by_key(|r| rank(&r.label));
        let stem = if kind == SweepKind::Compare {
            o.row.label.clone()
        } else {
            format!("{}_{}", kind.name(), o.row.label)
        };
        let write = || -> Result<(), CliError> {
            replace_with(&table, |w| write_sweep(w, &rows))?;
            replace_with(&out.join(format!("history_{stem}.csv")), |w| write_history(w, &o.history))?;
            replace_with(&out.join(format!("confusion_{stem}.csv")), |w| write_confusion(w, &o.report))
        };
        write().map_err(|e| {
            let msg = e.to_string();
            sink_err = Some(e);
            TrainError::Csv(msg)
        })
    })
    .map_err(|e| sink_err.take().unwrap_or_else(|| from_train(e)))?;
    let columns: Vec<(&str, Vec<(i32, f64)>)> = rows.iter().map(|r| (r.label.as_str(), r.per_snr.clone())).collect();
    let acc_name = if kind == SweepKind::Compare {
        "acc_vs_snr.csv".to_string()
    } else {
        format!("acc_vs_snr_{}.csv", kind.name())
    };
    replace_with(&out.join(acc_name), |w| write_acc_columns(w, &columns))?;
    println!("wrote {} ({} rows)", table.display(), rows.len());
    Ok(())
}

pub fn visualize(cfg: &RunConfig) -> Result<(), CliError> {
    let (_, spec, state) = load_model(cfg, cfg.visualize.checkpoint.as_ref())?;
    let opts = ExportOptions {
        layer: cfg.visualize.layer.unwrap_or(0),
        filters: cfg.visualize.filters.clone(),
        dream: cfg.dream_options()?,
    };
    let out = cfg.out_dir();
    let _lock = RunLock::acquire(&out)?;
    let dir = out.join("views");
    let index = export_views(&spec, &state, &dir, &opts).map_err(|e| match e {
        IntrospectError::Target { .. } => CliError::Config(e.to_string()),
        other => runtime(other),
    })?;
    let dead: Vec<usize> = index
        .entries
        .iter()
        .filter(|e| e.degenerate == Some(true))
        .map(|e| e.filter)
        .collect();
    println!(
        "wrote {} filter views to {}{}",
        index.entries.len(),
        dir.display(),
        if dead.is_empty() {
            String::new()
        } else {
            format!("; dead filters: {dead:?}")
        }
    );
    Ok(())
}
