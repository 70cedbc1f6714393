use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use xlm_core::harness::{
    generate_synthetic_dataset, grad_cam, run_gradcheck, split_dataset, sweep, DatasetManifest, KvMap, Split,
    SweepAxis, SweepData, TileFile, MANIFEST_NAME,
};
use xlm_core::model::{count_parameters, load_checkpoint, save_checkpoint, Model, PARAM_BAND, PARAM_TARGET};
use xlm_core::train::{evaluate, penultimate_nc, train, Dataset};
use xlm_core::{CoreError, Result};
use xlm_tensor::{Float, RngStream};

use crate::settings::{Precision, Settings};
use crate::CliError;

pub const CHECKPOINT_NAME: &str = "model.xlmc";
pub const EPOCH_LOG_NAME: &str = "epochs.log";
pub const METRICS_NAME: &str = "metrics.txt";
pub const NC_NAME: &str = "nc.txt";
pub const SWEEP_NAME: &str = "sweep.tsv";

type CliResult = std::result::Result<(), CliError>;

macro_rules! by_precision {
    ($s:expr, $f:ident ( $($arg:expr),* )) => {
        match $s.precision {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn io_err(path: &Path, e: std::io::Error) -> CoreError {
    CoreError::Io { path: path.display().to_string(), source: e }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse().map_err(|_| CoreError::Config(format!("split must be train, val or test, got {s:?}")))
}

fn load_split<T: Float>(s: &Settings, data: &Path, split: Split) -> Result<Dataset<T>> {
    let manifest = DatasetManifest::load(&data.join(MANIFEST_NAME))?;
    let ds = manifest.load_split::<T>(data, split)?;
    let want = [s.model.in_channels, s.model.input_size, s.model.input_size];
    if ds.chw() != want {
        return Err(CoreError::Config(format!(
            "{split} tiles are {:?} but the model expects {want:?}; set input_size to match",
            ds.chw()
        )));
    }
    Ok(ds)
}

fn with_prefix(prefix: &str, kv_text: &str) -> String {
    kv_text.lines().map(|l| format!("{prefix}{l}\n")).collect()
}

pub fn gen_data(s: &Settings, out: Option<PathBuf>) -> CliResult {
    let dir = out.unwrap_or_else(|| PathBuf::from("data"));
    let m = generate_synthetic_dataset(&s.synth, &dir)?;
    s.save_into(&dir)?;
    let [tr, va, te] = m.counts();
    println!("tiles={} dir={}", m.entries.len(), dir.display());
    println!("train={tr} val={va} test={te}");
    Ok(())
}

pub fn split(s: &Settings, data: &Path, out: Option<PathBuf>) -> CliResult {
    let m = DatasetManifest::load(&data.join(MANIFEST_NAME))?;
    let fresh = split_dataset(&m.entries, s.seed)?;
    let dir = out.unwrap_or_else(|| data.to_path_buf());
    make_dir(&dir)?;
    fresh.save(&dir.join(MANIFEST_NAME))?;
    let [tr, va, te] = fresh.counts();
    println!("train={tr} val={va} test={te} seed={}", s.seed);
    Ok(())
}

pub fn dispatch_train(s: &Settings, data: &Path, out: Option<PathBuf>) -> CliResult {
    by_precision!(s, train_cmd(s, data, out))
}

fn train_cmd<T: Float>(s: &Settings, data: &Path, out: Option<PathBuf>) -> CliResult {
    let tr = load_split::<T>(s, data, Split::Train)?;
    let va = load_split::<T>(s, data, Split::Val)?;
    let te = load_split::<T>(s, data, Split::Test)?;
    let dir = out.unwrap_or_else(|| PathBuf::from("runs/train"));
    s.save_into(&dir)?;
    let mut model = Model::<T>::build(&s.model, &mut RngStream::new(s.seed))?;
    let log_path = dir.join(EPOCH_LOG_NAME);
    let mut log = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log_err = None;
    let start = Instant::now();
    let outcome = train(&mut model, &tr, Some(&va), &s.train, |l| {
        let line = l.to_line();
        println!("{line}");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
        eprintln!("  [{:.1}s elapsed]", start.elapsed().as_secs_f64());
    })?;
    if let Some(e) = log_err {
        return Err(io_err(&log_path, e).into());
    }
    let report = evaluate(&model, &te, s.train.eval_batch)?;
    let mut kv = report.to_kv();
    kv.set("split", "test");
    kv.set("swa_snapshots", outcome.swa_snapshots);
    write(&dir.join(METRICS_NAME), &kv.to_text())?;
    let nc = with_prefix("epoch1.", &outcome.nc_first.to_kv()) + &with_prefix("final.", &outcome.nc_last.to_kv());
    write(&dir.join(NC_NAME), &nc)?;
    save_checkpoint(&model, &dir.join(CHECKPOINT_NAME))?;
    print!("{}", kv.to_text());
    Ok(())
}

pub fn dispatch_eval(s: &Settings, data: &Path, ckpt: &Path, split: &str, out: Option<PathBuf>) -> CliResult {
    by_precision!(s, eval_cmd(s, data, ckpt, split, out))
}

fn eval_cmd<T: Float>(s: &Settings, data: &Path, ckpt: &Path, split: &str, out: Option<PathBuf>) -> CliResult {
    let split = parse_split(split)?;
    let model = load_checkpoint::<T>(ckpt, &s.model)?;
    let ds = load_split::<T>(s, data, split)?;
    let mut kv = evaluate(&model, &ds, s.train.eval_batch)?.to_kv();
    kv.set("split", split);
    print!("{}", kv.to_text());
    if let Some(dir) = out {
        s.save_into(&dir)?;
        write(&dir.join(METRICS_NAME), &kv.to_text())?;
    }
    Ok(())
}

pub fn audit_params(s: &Settings) -> CliResult {
    let m = Model::<f32>::build(&s.model, &mut RngStream::new(s.seed))?;
    let audit = count_parameters(&m);
    print!("{}", audit.table());
    println!(
        "trainable={} fixed={} target={PARAM_TARGET} band={}..{}",
        audit.trainable, audit.fixed, PARAM_BAND.0, PARAM_BAND.1
    );
    if !audit.within_band() {
        return Err(CliError::Acceptance(format!(
            "{} trainable parameters outside [{}, {}]",
            audit.trainable, PARAM_BAND.0, PARAM_BAND.1
        )));
    }
    Ok(())
}

pub fn gradcheck(seeds: usize) -> CliResult {
    if seeds == 0 {
        return Err(CoreError::Config("--seeds must be at least 1".into()).into());
    }
    println!("check\tseeds\tmax_rel_error\tstatus");
    let report = run_gradcheck(seeds, |r| {
        let status = if r.max_rel <= xlm_core::harness::GRADCHECK_TOLERANCE { "ok" } else { "FAIL" };
        println!("{}\t{}\t{:.3e}\t{status}", r.name, r.seeds, r.max_rel);
    })?;
    println!("worst={:.3e} tolerance={:e}", report.worst(), report.tolerance);
    if !report.passed() {
        let failed: Vec<&str> =
            report.rows.iter().filter(|r| r.max_rel > report.tolerance).map(|r| r.name.as_str()).collect();
        return Err(CliError::Acceptance(format!("gradient mismatch in {}", failed.join(", "))));
    }
    Ok(())
}

pub fn dispatch_nc(
    s: &Settings,
    data: &Path,
    ckpt: &Path,
    split: &str,
    samples: Option<usize>,
    out: Option<PathBuf>,
) -> CliResult {
    by_precision!(s, nc_cmd(s, data, ckpt, split, samples, out))
}

fn nc_cmd<T: Float>(
    s: &Settings,
    data: &Path,
    ckpt: &Path,
    split: &str,
    samples: Option<usize>,
    out: Option<PathBuf>,
) -> CliResult {
    let split = parse_split(split)?;
    let model = load_checkpoint::<T>(ckpt, &s.model)?;
    let ds = load_split::<T>(s, data, split)?;
    let report = penultimate_nc(&model, &ds, samples.unwrap_or(s.train.nc_samples), s.train.eval_batch)?;
    print!("{}", report.to_kv());
    if let Some(dir) = out {
        s.save_into(&dir)?;
        write(&dir.join(NC_NAME), &report.to_kv())?;
    }
    Ok(())
}

pub fn dispatch_gradcam(
    s: &Settings,
    tile: &Path,
    ckpt: &Path,
    layer: &str,
    target: Option<usize>,
    out: Option<PathBuf>,
) -> CliResult {
    by_precision!(s, gradcam_cmd(s, tile, ckpt, layer, target, out))
}

fn gradcam_cmd<T: Float>(
    s: &Settings,
    tile: &Path,
    ckpt: &Path,
    layer: &str,
    target: Option<usize>,
    out: Option<PathBuf>,
) -> CliResult {
    let model = load_checkpoint::<T>(ckpt, &s.model)?;
    let t = TileFile::load(tile)?;
    let x = t.data.to_typed::<T>();
    let dims = x.shape().to_vec();
    let batch = x.reshape(&[1, dims[0], dims[1], dims[2]]).map_err(CoreError::from)?;
    let logits = model.predict(&batch, &mut RngStream::new(0))?;
    let predicted = if logits.data()[1] > logits.data()[0] { 1 } else { 0 };
    let target = target.unwrap_or(predicted);
    let map = grad_cam(&model, &x, target, layer)?;
    let dir = out.unwrap_or_else(|| PathBuf::from("runs/gradcam"));
    s.save_into(&dir)?;
    let stem = format!("{}-cam-{layer}-c{target}", tile.file_stem().and_then(|s| s.to_str()).unwrap_or("tile"));
    map.save(&dir, &stem)?;
    println!("label={} predicted={predicted} target={target} layer={layer}", t.label);
    println!("heatmap={}", dir.join(format!("{stem}.xlmt")).display());
    println!("preview={}", dir.join(format!("{stem}.pgm")).display());
    Ok(())
}

pub fn dispatch_sweep(s: &Settings, data: &Path, axis: &str, values: Option<&str>, out: Option<PathBuf>) -> CliResult {
    by_precision!(s, sweep_cmd(s, data, axis, values, out))
}

fn sweep_cmd<T: Float>(s: &Settings, data: &Path, axis: &str, values: Option<&str>, out: Option<PathBuf>) -> CliResult {
    let axis: SweepAxis = axis.parse()?;
    let values: Vec<String> = match values {
        Some(v) => v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect(),
        None => axis.default_values(),
    };
    let tr = load_split::<T>(s, data, Split::Train)?;
    let va = load_split::<T>(s, data, Split::Val)?;
    let te = load_split::<T>(s, data, Split::Test)?;
    let dir = out.unwrap_or_else(|| PathBuf::from(format!("runs/sweep-{}", axis.name())));
    s.save_into(&dir)?;
    let start = Instant::now();
    let result =
        sweep(axis, &values, &s.model, &s.train, &SweepData { train: &tr, val: Some(&va), test: &te }, |row| {
            eprintln!(
                "  {}={} accuracy={} [{:.1}s elapsed]",
                axis.name(),
                row.value,
                row.report.accuracy,
                start.elapsed().as_secs_f64()
            );
        });
    write(&dir.join(SWEEP_NAME), &result.table())?;
    print!("{}", result.table());
    if result.failures.is_empty() {
        return Ok(());
    }
    let mut skipped = KvMap::new();
    for (value, reason) in &result.failures {
        eprintln!("skipped {}={value}: {reason}", axis.name());
        skipped.set(value, reason);
    }
    write(&dir.join("skipped.txt"), &skipped.to_text())?;
    Err(CliError::Partial(format!("{} of {} sweep values failed", result.failures.len(), values.len())))
}
