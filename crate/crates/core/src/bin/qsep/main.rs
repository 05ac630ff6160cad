use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use qsep::evaluation::{
    class_mean_losses, confusion_at, sweep, write_class_means_csv, Confusion, EvalConfig, LabelMode, MapGrid,
    MIN_GRID_N,
};
use qsep::io::write_atomic;
use qsep::separator::checkpoint::{file_hash, kernel_identity_deviation, write_kernels_csv, Checkpoint};
use qsep::separator::{Activation, Baseline, LossModel, SeparatorConfig};
use qsep::training::format::{self, verify_labels};
use qsep::training::{generate, train, Dataset, GenKind, Optimizer, TrainConfig};
use qsep::{Error, Result};

#[derive(Parser)]
#[command(name = "qsep", version, about = "Train and evaluate the separator autoencoder on three-qubit states")]
struct Cli {
    /// Worker threads. Defaults to the available parallelism.
    #[arg(long, global = true, env = "QSEP_THREADS")]
    threads: Option<usize>,

    /// JSON config file. Command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled dataset.
    Gen(GenArgs),
    /// Train a separator on a dataset.
    Train(TrainArgs),
    /// Threshold sweep and confusion counts for a model on a dataset.
    Eval(EvalArgs),
    /// Render the 2D state map for a model and for the baseline.
    Map(MapArgs),
    /// Export the kernels of a checkpoint as CSV.
    Kernels(KernelsArgs),
    /// Re-check the stored labels of a dataset against the oracles.
    Verify(VerifyArgs),
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct GenArgs {
    /// pure-sep, pure-ent, mixed-sep, mixed-ent, zd, product, s-pure, s-mixed, train or val.
    kind: Option<String>,
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the records as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TrainArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    /// Checkpoint path. The per-epoch losses go next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    nk: Option<usize>,
    #[arg(long)]
    fc_depth: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Pure, Prod, ZD, Sep or NPS.
    #[arg(long)]
    subset: Option<String>,
    /// adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    /// relu or tanh.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "no-fc", action = ArgAction::SetTrue)]
    #[serde(skip)]
    no_fc: bool,
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip)]
    untie: bool,
    #[arg(skip)]
    use_fc: Option<bool>,
    #[arg(skip)]
    tie_weights: Option<bool>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `baseline` evaluates the partial-trace model instead of a checkpoint.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// entanglement or discord.
    #[arg(long)]
    label: Option<String>,
    /// Also report the confusion matrix at this threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Output prefix.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct MapArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    grid: Option<usize>,
    /// Threshold for the overlap score against the oracle map.
    #[arg(long)]
    tau: Option<f64>,
    /// Output prefix.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct KernelsArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct VerifyArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fraction of records to re-check.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    threads: Option<usize>,
    seed: Option<u64>,
    gen: GenArgs,
    train: TrainArgs,
    eval: EvalArgs,
    map: MapArgs,
    kernels: KernelsArgs,
    verify: VerifyArgs,
}

const DEFAULT_GRID: usize = 101;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qsep: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::Format { .. } | Error::Io(_) | Error::Json(_) => 3,
        Error::Divergence(_) => 4,
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => {
            let text = at_path(path, std::fs::read_to_string(path).map_err(Error::from))?;
            serde_json::from_str::<ConfigFile>(&text)
                .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(a, file.gen, file.seed),
        Command::Train(a) => cmd_train(a, file.train, file.seed),
        Command::Eval(a) => cmd_eval(a, file.eval),
        Command::Map(a) => cmd_map(a, file.map),
        Command::Kernels(a) => cmd_kernels(a, file.kernels),
        Command::Verify(a) => cmd_verify(a, file.verify, file.seed),
    }
}

/// Adds the path to I/O errors, which otherwise do not say which file failed.
fn at_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    at_path(path, format::load(path))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    at_path(path, Checkpoint::load(path))
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| usage(format!("missing required argument --{name}")))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn manifest_path(out: &Path) -> PathBuf {
    with_suffix(&out.with_extension(""), ".manifest.json")
}

fn write_manifest(path: &Path, command: &str, config: &impl Serialize, outputs: &[&Path], summary: Value) -> Result<()> {
    let mut hashes = serde_json::Map::new();
    for p in outputs {
        hashes.insert(p.display().to_string(), Value::String(file_hash(p)?));
    }
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "outputs": hashes,
        "summary": summary,
    });
    write_atomic(path, serde_json::to_string_pretty(&manifest)?.as_bytes())
}

/// Renders into memory, then writes atomically.
fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf)
}

#[derive(Serialize)]
struct GenRun {
    kind: GenKind,
    count: usize,
    seed: u64,
    out: PathBuf,
    csv: Option<PathBuf>,
}

fn cmd_gen(a: GenArgs, f: GenArgs, global_seed: Option<u64>) -> Result<()> {
    let run = GenRun {
        kind: required(a.kind.or(f.kind), "kind")?.parse()?,
        count: required(a.count.or(f.count), "count")?,
        seed: a.seed.or(f.seed).or(global_seed).unwrap_or(0),
        out: required(a.out.or(f.out), "out")?,
        csv: a.csv.or(f.csv),
    };
    let ds = generate(run.kind, run.count, run.seed)?;
    format::save(&ds, &run.out)?;
    let mut outputs = vec![run.out.as_path()];
    if let Some(csv) = &run.csv {
        let comment = format!("qsep gen {} count={} seed={}", run.kind.name(), run.count, run.seed);
        write_with(csv, |buf| format::write_csv(&ds, &comment, buf))?;
        outputs.push(csv);
    }
    let counts = ds.class_counts();
    write_manifest(
        &manifest_path(&run.out),
        "gen",
        &run,
        &outputs,
        json!({ "records": ds.len(), "classes": counts, "generators": ds.meta.generators }),
    )?;
    println!("wrote {} records to {}", ds.len(), run.out.display());
    for (k, n) in counts {
        println!("  {k}: {n}");
    }
    Ok(())
}

fn parse_optimizer(s: &str) -> Result<Optimizer> {
    match s.to_ascii_lowercase().as_str() {
        "adam" => Ok(Optimizer::Adam),
        "sgd" => Ok(Optimizer::Sgd),
        _ => Err(usage(format!("unknown optimizer {s:?} (expected adam or sgd)"))),
    }
}

fn parse_activation(s: &str) -> Result<Activation> {
    match s.to_ascii_lowercase().as_str() {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        _ => Err(usage(format!("unknown activation {s:?} (expected relu or tanh)"))),
    }
}

#[derive(Serialize)]
struct TrainRun {
    train: PathBuf,
    val: PathBuf,
    out: PathBuf,
    losses: PathBuf,
    config: TrainConfig,
}

fn cmd_train(a: TrainArgs, f: TrainArgs, global_seed: Option<u64>) -> Result<()> {
    let d = TrainConfig::default();
    let ds = SeparatorConfig::default();
    let subset = match a.subset.or(f.subset) {
        Some(s) => s.parse()?,
        None => d.subset,
    };
    let optimizer = match a.optimizer.or(f.optimizer) {
        Some(s) => parse_optimizer(&s)?,
        None => d.optimizer,
    };
    let activation = match a.activation.or(f.activation) {
        Some(s) => parse_activation(&s)?,
        None => ds.activation,
    };
    let use_fc = if a.no_fc { false } else { f.use_fc.unwrap_or(ds.use_fc) };
    let tie_weights = if a.untie { false } else { f.tie_weights.unwrap_or(ds.tie_weights) };
    let config = TrainConfig {
        epochs: a.epochs.or(f.epochs).unwrap_or(d.epochs),
        learning_rate: a.lr.or(f.lr).unwrap_or(d.learning_rate),
        batch_size: a.batch.or(f.batch).unwrap_or(d.batch_size),
        optimizer,
        subset,
        seed: a.seed.or(f.seed).or(global_seed).unwrap_or(d.seed),
        separator: SeparatorConfig {
            n_k: a.nk.or(f.nk).unwrap_or(ds.n_k),
            use_fc,
            fc_depth: a.fc_depth.or(f.fc_depth).unwrap_or(ds.fc_depth),
            tie_weights,
            activation,
        },
    };
    config.validate()?;
    let out = required(a.out.or(f.out), "out")?;
    let run = TrainRun {
        train: required(a.train.or(f.train), "train")?,
        val: required(a.val.or(f.val), "val")?,
        losses: with_suffix(&out.with_extension(""), ".losses.csv"),
        out,
        config,
    };

    let train_set = load_dataset(&run.train)?;
    let val_set = load_dataset(&run.val)?;
    let outcome = train(&run.config, &train_set, &val_set, Some(&run.out), |e| {
        eprintln!(
            "epoch {:>3}  train {:.4e}  val {:.4e}  |K-I| {:.4}",
            e.epoch, e.train_loss, e.val_loss, e.kernel_deviation
        );
    })?;
    let report = &outcome.report;
    let hash = file_hash(&run.out)?;
    write_with(&run.losses, |buf| {
        use std::io::Write;
        writeln!(buf, "# qsep train seed={} checkpoint_sha256={hash}", run.config.seed)?;
        writeln!(buf, "epoch,train_loss,val_loss,kernel_deviation")?;
        writeln!(buf, "0,,{:e},{}", report.initial_val_loss, report.initial_kernel_deviation)?;
        for e in &report.epochs {
            writeln!(buf, "{},{:e},{:e},{}", e.epoch, e.train_loss, e.val_loss, e.kernel_deviation)?;
        }
        Ok(())
    })?;
    let best = report.best();
    write_manifest(
        &manifest_path(&run.out),
        "train",
        &run,
        &[&run.out, &run.losses],
        json!({
            "best_epoch": report.best_epoch,
            "best_val_loss": best.val_loss,
            "initial_val_loss": report.initial_val_loss,
            "initial_kernel_deviation": report.initial_kernel_deviation,
            "kernel_identity_deviation": kernel_identity_deviation(&outcome.checkpoint.params),
        }),
    )?;
    println!(
        "best epoch {} with validation loss {:.4e}; checkpoint {}",
        report.best_epoch,
        best.val_loss,
        run.out.display()
    );
    Ok(())
}

/// A model named on the command line plus what identifies it in outputs.
struct LoadedModel {
    model: Box<dyn LossModel>,
    name: String,
    hash: String,
    seed: Option<u64>,
}

fn load_model(checkpoint: Option<PathBuf>, model: Option<String>) -> Result<LoadedModel> {
    match (checkpoint, model.as_deref()) {
        (None, Some("baseline")) => Ok(LoadedModel {
            model: Box::new(Baseline),
            name: "baseline".into(),
            hash: "none".into(),
            seed: None,
        }),
        (Some(path), None) => {
            let ck = load_checkpoint(&path)?;
            Ok(LoadedModel {
                name: path.display().to_string(),
                hash: file_hash(&path)?,
                seed: Some(ck.meta.seed),
                model: Box::new(ck.params),
            })
        }
        (None, Some(other)) => Err(usage(format!("unknown model {other:?}; use --checkpoint FILE or --model baseline"))),
        (None, None) => Err(usage("need --checkpoint FILE or --model baseline")),
        (Some(_), Some(_)) => Err(usage("--checkpoint and --model are mutually exclusive")),
    }
}

impl LoadedModel {
    fn comment(&self, command: &str) -> String {
        let seed = self.seed.map_or("none".to_string(), |s| s.to_string());
        format!("qsep {command} model={} seed={seed} checkpoint_sha256={}", self.name, self.hash)
    }
}

#[derive(Serialize)]
struct EvalRun {
    model: String,
    checkpoint_sha256: String,
    data: PathBuf,
    label: LabelMode,
    tau: Option<f64>,
    out: PathBuf,
}

fn write_confusion(buf: &mut Vec<u8>, comment: &str, mode: LabelMode, c: &Confusion) -> Result<()> {
    use std::io::Write;
    let (neg, pos) = match mode {
        LabelMode::Discord => ("non-discordant", "discordant"),
        LabelMode::Entanglement => ("separable", "entangled"),
    };
    writeln!(buf, "# {comment}")?;
    writeln!(buf, "actual,{neg},{pos}")?;
    writeln!(buf, "{neg},{},{}", c.tn, c.fp)?;
    writeln!(buf, "{pos},{},{}", c.fn_, c.tp)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs, f: EvalArgs) -> Result<()> {
    let loaded = load_model(a.checkpoint.or(f.checkpoint), a.model.or(f.model))?;
    let run = EvalRun {
        model: loaded.name.clone(),
        checkpoint_sha256: loaded.hash.clone(),
        data: required(a.data.or(f.data), "data")?,
        label: required(a.label.or(f.label), "label")?.parse()?,
        tau: a.tau.or(f.tau),
        out: required(a.out.or(f.out), "out")?,
    };
    let ds = load_dataset(&run.data)?;
    let config = EvalConfig::new(run.label);
    let curve = sweep(loaded.model.as_ref(), &ds, &config)?;
    let comment = format!("{} data={} label={}", loaded.comment("eval"), run.data.display(), run.label.name());

    let sweep_path = with_suffix(&run.out, ".sweep.csv");
    let means_path = with_suffix(&run.out, ".means.csv");
    write_with(&sweep_path, |buf| curve.write_csv(&comment, buf))?;
    let means = class_mean_losses(loaded.model.as_ref(), &ds);
    write_with(&means_path, |buf| write_class_means_csv(&means, &comment, buf))?;
    let mut outputs = vec![sweep_path.clone(), means_path.clone()];

    let best = curve.best();
    let mut summary = json!({
        "best_tau": best.tau,
        "best_balanced_accuracy": best.balanced_accuracy,
        "best_accuracy": curve.best_accuracy(),
    });
    println!(
        "{}: best balanced accuracy {:.4} at tau {:.4e}",
        run.label.name(),
        best.balanced_accuracy,
        best.tau
    );
    if let Some(tau) = run.tau {
        let c = confusion_at(loaded.model.as_ref(), &ds, tau, run.label)?;
        let path = with_suffix(&run.out, ".confusion.csv");
        let comment = format!("{comment} tau={tau}");
        write_with(&path, |buf| write_confusion(buf, &comment, run.label, &c))?;
        outputs.push(path);
        println!(
            "at tau {tau:e}: TN {} FP {} FN {} TP {} (balanced accuracy {:.4})",
            c.tn,
            c.fp,
            c.fn_,
            c.tp,
            c.balanced_accuracy()
        );
        summary["confusion"] = json!({ "tau": tau, "tn": c.tn, "fp": c.fp, "fn": c.fn_, "tp": c.tp });
    }
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&with_suffix(&run.out, ".manifest.json"), "eval", &run, &refs, summary)
}

#[derive(Serialize)]
struct MapRun {
    model: String,
    checkpoint_sha256: String,
    grid: usize,
    tau: Option<f64>,
    out: PathBuf,
}

fn cmd_map(a: MapArgs, f: MapArgs) -> Result<()> {
    let loaded = load_model(a.checkpoint.or(f.checkpoint), a.model.or(f.model))?;
    let run = MapRun {
        model: loaded.name.clone(),
        checkpoint_sha256: loaded.hash.clone(),
        grid: a.grid.or(f.grid).unwrap_or(DEFAULT_GRID),
        tau: a.tau.or(f.tau),
        out: required(a.out.or(f.out), "out")?,
    };
    if run.grid < MIN_GRID_N {
        return Err(usage(format!("--grid must be at least {MIN_GRID_N}")));
    }
    let grid = MapGrid::new(run.grid)?;
    let ours = grid.render(loaded.model.as_ref());
    let base = grid.render(&Baseline);
    let comment = format!("{} grid={}", loaded.comment("map"), run.grid);
    let base_comment = format!("qsep map model=baseline grid={}", run.grid);

    let paths = [
        with_suffix(&run.out, ".csv"),
        with_suffix(&run.out, ".pgm"),
        with_suffix(&run.out, ".baseline.csv"),
        with_suffix(&run.out, ".baseline.pgm"),
    ];
    write_with(&paths[0], |buf| ours.write_csv(&comment, buf))?;
    write_with(&paths[1], |buf| ours.write_pgm(&comment, buf))?;
    write_with(&paths[2], |buf| base.write_csv(&base_comment, buf))?;
    write_with(&paths[3], |buf| base.write_pgm(&base_comment, buf))?;

    let mut counts = std::collections::BTreeMap::new();
    for k in &grid.klass {
        *counts.entry(k.name()).or_insert(0usize) += 1;
    }
    let mut summary = json!({ "cells": grid.klass.len(), "classes": counts });
    if let Some(tau) = run.tau {
        let (iou, base_iou) = (ours.iou(tau), base.iou(tau));
        println!("overlap with the non-discordant region at tau {tau:e}: model {iou:.3}, baseline {base_iou:.3}");
        summary["iou"] = json!({ "tau": tau, "model": iou, "baseline": base_iou });
    }
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    write_manifest(&with_suffix(&run.out, ".manifest.json"), "map", &run, &refs, summary)?;
    println!("wrote {}x{} maps with prefix {}", run.grid, run.grid, run.out.display());
    Ok(())
}

fn cmd_kernels(a: KernelsArgs, f: KernelsArgs) -> Result<()> {
    let path = required(a.checkpoint.or(f.checkpoint), "checkpoint")?;
    let out = required(a.out.or(f.out), "out")?;
    let ck = load_checkpoint(&path)?;
    let comment = format!(
        "qsep kernels model={} seed={} checkpoint_sha256={}",
        path.display(),
        ck.meta.seed,
        file_hash(&path)?
    );
    write_with(&out, |buf| {
        use std::io::Write;
        writeln!(buf, "# {comment}")?;
        write_kernels_csv(&ck.params, buf)
    })?;
    let dev = kernel_identity_deviation(&ck.params);
    write_manifest(
        &manifest_path(&out),
        "kernels",
        &json!({ "checkpoint": path, "out": out }),
        &[&out],
        json!({ "kernel_identity_deviation": dev }),
    )?;
    println!("mean |K - cI| = {dev:.4}");
    Ok(())
}

fn cmd_verify(a: VerifyArgs, f: VerifyArgs, global_seed: Option<u64>) -> Result<()> {
    let path = required(a.data.or(f.data), "data")?;
    let fraction = a.fraction.or(f.fraction).unwrap_or(1.0);
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(usage(format!("--fraction must be in (0, 1], got {fraction}")));
    }
    let seed = a.seed.or(f.seed).or(global_seed).unwrap_or(0);
    let bytes = at_path(&path, std::fs::read(&path).map_err(Error::from))?;
    let ds = format::decode(&bytes)?;
    let checked = verify_labels(&ds, fraction, seed)?;
    println!("{}: {checked} of {} labels agree with the oracles", path.display(), ds.len());
    Ok(())
}
