//! The `ntf` command line.
//!
//! Every [`RunConfig`](crate::config::RunConfig) key is also a global
//! `--<key> <value>` flag; `--config <file>` loads a `key = value` file first.
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, KEYS};
use crate::error::{NtfError, Result};
use crate::metrics::{evaluate, MetricsReport, Task};
use crate::model::{read_checkpoint, write_checkpoint, Checkpoint, NtfModel, Variant};
use crate::nn::{grad_check, GradCheckOptions, GradCheckReport};
use crate::rng;
use crate::synth::{self, oracle_error, PlantedFactors};
use crate::tensor::{ingest_csv, read_tensor, write_tensor, Entry, ObservedTensor};
use crate::train::{TrainHistory, Trainer};

fn command() -> Command {
    let path = |name: &'static str, help: &'static str| {
        Arg::new(name)
            .long(name)
            .value_name("PATH")
            .help(help)
            .value_parser(clap::value_parser!(PathBuf))
    };
    let mut cmd = Command::new("ntf")
        .about("Neural tensor factorization for time-aware recommendation")
        .subcommand_required(true)
        .args_override_self(true)
        .arg_required_else_help(true)
        .arg(
            path(
                "config",
                "key = value file applied before command-line flags",
            )
            .global(true),
        );
    for (key, help) in KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .help(*help)
                .allow_negative_numbers(true)
                .global(true),
        );
    }
    cmd.subcommand(
        Command::new("ingest")
            .about("Convert user,item,time,value CSV to a tensor file")
            .arg(path("input", "CSV file").required(true))
            .arg(path("out", "output tensor (.ntfx)").required(true)),
    )
    .subcommand(
        Command::new("split")
            .about("Split a tensor into train/validation/test files")
            .arg(path("data", "input tensor").required(true))
            .arg(path("out-dir", "output directory").required(true)),
    )
    .subcommand(
        Command::new("synth")
            .about("Generate a synthetic tensor with planted factors")
            .arg(path("out", "output tensor (.ntfx)").required(true)),
    )
    .subcommand(
        Command::new("train")
            .about("Train a model and evaluate it on the test split")
            .arg(path("data", "input tensor").required(true))
            .arg(path("out-dir", "run directory").required(true))
            .arg(path("resume", "checkpoint to continue from"))
            .arg(path("factors", "planted factors for the oracle error")),
    )
    .subcommand(
        Command::new("eval")
            .about("Evaluate a model on the test split of a tensor")
            .arg(path("model", "checkpoint").required(true))
            .arg(path("data", "input tensor").required(true))
            .arg(path("out", "write metrics JSON here instead of stdout")),
    )
    .subcommand(
        Command::new("predict")
            .about("Score i,j,k triples from a CSV file")
            .arg(path("model", "checkpoint").required(true))
            .arg(path("input", "CSV with header i,j,k").required(true))
            .arg(path(
                "out",
                "write i,j,k,prediction CSV here instead of stdout",
            )),
    )
    .subcommand(
        Command::new("config").about("Print the effective configuration as key = value lines"),
    )
    .subcommand(
        Command::new("gradcheck")
            .about("Compare analytic and finite-difference gradients on a small random model"),
    )
    .subcommand(
        Command::new("report")
            .about("Merge run directories into plot-ready CSV tables")
            .arg(
                path("inputs", "run directories")
                    .required(true)
                    .num_args(1..)
                    .action(ArgAction::Append),
            )
            .arg(path("out-dir", "output directory").required(true)),
    )
    .subcommand(
        Command::new("sweep")
            .about("Train once per value of one key, all other keys fixed")
            .arg(
                Arg::new("param")
                    .long("param")
                    .required(true)
                    .help("key to vary"),
            )
            .arg(
                Arg::new("values")
                    .long("values")
                    .required(true)
                    .value_delimiter(',')
                    .num_args(1..)
                    .help("comma-separated values"),
            )
            .arg(path("data", "input tensor").required(true))
            .arg(path("out-dir", "output directory").required(true))
            .arg(path("factors", "planted factors for the oracle error")),
    )
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&matches) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage_error() {
                2
            } else {
                1
            }
        }
    }
}

/// `config` (the defaults), then `--config`, then flags.
fn resolve_config(mut config: RunConfig, m: &ArgMatches) -> Result<RunConfig> {
    if let Some(path) = m.get_one::<PathBuf>("config") {
        config.apply_file(path)?;
    }
    for (key, _) in KEYS {
        if let Some(value) = m.get_one::<String>(key) {
            config.set(key, value)?;
        }
    }
    Ok(config)
}

fn dispatch(matches: &ArgMatches) -> Result<i32> {
    let (name, m) = matches.subcommand().expect("subcommand required");
    let base = if name == "gradcheck" {
        RunConfig::gradcheck_default()
    } else {
        RunConfig::default()
    };
    let config = resolve_config(base, m)?;
    let p = |key: &str| m.get_one::<PathBuf>(key).cloned();
    let required = |key: &str| p(key).expect("required by clap");
    let outcome = match name {
        "ingest" => cmd_ingest(&config, &required("input"), &required("out")),
        "split" => cmd_split(&config, &required("data"), &required("out-dir")),
        "synth" => cmd_synth(&config, &required("out")),
        "train" => {
            let tensor = read_tensor(required("data"))?;
            let factors = p("factors")
                .map(|f| read_json::<PlantedFactors>(&f))
                .transpose()?;
            let run = RunSpec {
                config: &config,
                tensor: &tensor,
                factors: factors.as_ref(),
                resume: p("resume"),
                sweep: None,
            };
            train_run(&run, &required("out-dir")).map(|_| ())
        }
        "eval" => cmd_eval(&config, &required("model"), &required("data"), p("out")),
        "predict" => cmd_predict(&required("model"), &required("input"), p("out")),
        "config" => {
            print!("{}", config.to_text());
            Ok(())
        }
        "gradcheck" => {
            let report = gradcheck(&config)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.passed {
                eprintln!(
                    "error: max relative error {:e} exceeds {:e}",
                    report.max_rel_error, report.tolerance
                );
                return Ok(1);
            }
            Ok(())
        }
        "report" => {
            let inputs: Vec<PathBuf> = m
                .get_many::<PathBuf>("inputs")
                .expect("required by clap")
                .cloned()
                .collect();
            report(&inputs, &required("out-dir"))
        }
        "sweep" => {
            let param = m.get_one::<String>("param").expect("required by clap");
            let values: Vec<String> = m
                .get_many::<String>("values")
                .expect("required by clap")
                .cloned()
                .collect();
            let tensor = read_tensor(required("data"))?;
            let factors = p("factors")
                .map(|f| read_json::<PlantedFactors>(&f))
                .transpose()?;
            sweep(
                &config,
                &tensor,
                factors.as_ref(),
                param,
                &values,
                &required("out-dir"),
            )
            .map(|_| ())
        }
        _ => unreachable!("clap rejects unknown subcommands"),
    };
    outcome.map(|()| 0)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_csv_file(path: &Path, write: impl FnOnce(BufWriter<File>) -> Result<()>) -> Result<()> {
    write(BufWriter::new(File::create(path)?))
}

/// `t.ntfx` → `t.<suffix>`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn cmd_ingest(config: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let (tensor, mut vocab, bucketing) =
        ingest_csv(BufReader::new(File::open(input)?), config.granularity)?;
    vocab.reindex();
    write_tensor(&tensor, out)?;
    write_json(
        &sidecar(out, "vocab.json"),
        &serde_json::json!({ "vocab": vocab, "bucketing": bucketing }),
    )?;
    log::info!("ingested {} entries, dims {}", tensor.len(), tensor.dims());
    Ok(())
}

fn cmd_split(config: &RunConfig, data: &Path, out_dir: &Path) -> Result<()> {
    let split = config.split(&read_tensor(data)?)?;
    fs::create_dir_all(out_dir)?;
    write_tensor(&split.train, out_dir.join("train.ntfx"))?;
    write_tensor(&split.validation, out_dir.join("validation.ntfx"))?;
    write_tensor(&split.test, out_dir.join("test.ntfx"))?;
    write_json(
        &out_dir.join("split.json"),
        &serde_json::json!({
            "train": split.train.len(),
            "validation": split.validation.len(),
            "test": split.test.len(),
            "filtered_validation": split.filtered_validation,
            "filtered_test": split.filtered_test,
        }),
    )
}

fn cmd_synth(config: &RunConfig, out: &Path) -> Result<()> {
    let synth_config = config.synth_config();
    let data = synth::generate(&synth_config)?;
    write_tensor(&data.tensor, out)?;
    write_json(&sidecar(out, "synth.json"), &synth_config)?;
    write_json(&sidecar(out, "factors.json"), &data.factors)?;
    Ok(())
}

fn cmd_eval(config: &RunConfig, model: &Path, data: &Path, out: Option<PathBuf>) -> Result<()> {
    let model = read_checkpoint(model)?.model;
    let split = config.split(&read_tensor(data)?)?;
    let report = evaluate(
        &model,
        &split,
        config.task,
        config.test_negative_ratio,
        config.threshold,
        config.seed,
    )?;
    match out {
        Some(path) => write_json(&path, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn cmd_predict(model: &Path, input: &Path, out: Option<PathBuf>) -> Result<()> {
    let model = read_checkpoint(model)?.model;
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(input)?));
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != ["i", "j", "k"] {
        return Err(NtfError::SchemaMismatch(format!(
            "prediction input columns {header:?}, expected [\"i\", \"j\", \"k\"]"
        )));
    }
    let triples = reader
        .deserialize()
        .collect::<std::result::Result<Vec<(usize, usize, usize)>, _>>()?;
    let scores = model.predict_batch(&triples)?;
    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["i", "j", "k", "prediction"])?;
    for ((i, j, k), s) in triples.iter().zip(scores) {
        w.serialize((i, j, k, s))?;
    }
    w.flush()?;
    Ok(())
}

/// Draws closer than this to a ReLU kink are redrawn by [`gradcheck`].
const KINK_MARGIN: f64 = 1e-3;

/// Gradient check of a randomly perturbed model on eight random cells.
///
/// Initialization leaves biases and batch-norm shifts at zero, so every
/// parameter is jittered first. Points whose hidden pre-activations sit
/// within [`KINK_MARGIN`] of zero are redrawn, since a central difference
/// across a ReLU kink measures the kink rather than the gradient.
pub fn gradcheck(config: &RunConfig) -> Result<GradCheckReport> {
    let dims = config.dims;
    let base = NtfModel::init(
        config.train_config(dims).model,
        &mut rng::stream(config.seed, rng::INIT),
        None,
    )?;
    let mut draws = rng::stream(config.seed, rng::SYNTH);
    let n = 8.min(dims.cells() as usize);
    let (ij, jk) = (dims.items * dims.slots, dims.slots);
    let (model, entries) = loop {
        let mut model = base.clone();
        for t in model.params.tensors_mut() {
            for x in t.iter_mut() {
                *x += draws.random_range(-0.5..0.5);
            }
        }
        let entries: Vec<Entry> = index::sample(&mut draws, dims.cells() as usize, n)
            .iter()
            .map(|c| Entry::new(c / ij, (c % ij) / jk, c % jk, 0.0))
            .map(|e| Entry {
                value: draws.random_range(-1.0..1.0),
                ..e
            })
            .collect();
        if model.hidden_margin(&entries)? >= KINK_MARGIN {
            break (model, entries);
        }
        log::debug!("gradcheck point within {KINK_MARGIN} of a kink, redrawing");
    };

    let analytic = model.loss_and_grad(&entries)?;
    let grads: Vec<Vec<f64>> = analytic
        .grads
        .tensors()
        .iter()
        .map(|t| t.to_vec())
        .collect();
    let mut probe = model.clone();
    grad_check(
        |blocks| {
            probe.params.load_blocks(blocks);
            probe.batch_loss(&entries)
        },
        &model.params.blocks(),
        &grads,
        GradCheckOptions::default(),
    )
}

/// Identification of one training run, stored as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub variant: Variant,
    pub seed: u64,
    pub task: Task,
    pub sweep_param: Option<String>,
    pub sweep_value: Option<String>,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub oracle_error: Option<f64>,
}

/// Inputs of one `train` invocation.
pub struct RunSpec<'a> {
    pub config: &'a RunConfig,
    pub tensor: &'a ObservedTensor,
    pub factors: Option<&'a PlantedFactors>,
    pub resume: Option<PathBuf>,
    pub sweep: Option<(String, String)>,
}

/// Trains, evaluates and writes a run directory:
/// `model.ntfm` (best validation epoch), `last.ntfm` (final state, resumable),
/// `history.csv`, `timing.csv`, `metrics.json`, `run.json`, `config.txt`.
pub fn train_run(spec: &RunSpec<'_>, out_dir: &Path) -> Result<(MetricsReport, RunInfo)> {
    let config = spec.config;
    let split = config.split(spec.tensor)?;
    let train_config = config.train_config(split.dims());
    let (trainer, mut history) = match &spec.resume {
        None => (Trainer::new(&split, train_config)?, TrainHistory::default()),
        Some(path) => {
            let ckpt = read_checkpoint(path)?;
            let done = ckpt.epochs_done;
            let mut earlier = match path
                .parent()
                .map(|d| d.join("history.csv"))
                .filter(|h| h.exists())
            {
                Some(h) => TrainHistory::read_csv(BufReader::new(File::open(h)?))?,
                None => TrainHistory::default(),
            };
            earlier.epochs.retain(|e| e.epoch < done);
            (Trainer::resume(&split, train_config, ckpt)?, earlier)
        }
    };
    let outcome = trainer.run()?;
    history
        .epochs
        .extend(outcome.history.epochs.iter().copied());
    history.best_epoch = outcome.history.best_epoch;

    let report = evaluate(
        &outcome.model,
        &split,
        config.task,
        config.test_negative_ratio,
        config.threshold,
        config.seed,
    )?;
    let oracle = match spec.factors {
        Some(f) => {
            let exclude: HashSet<_> = split.train.entries().iter().map(Entry::key).collect();
            Some(oracle_error(
                &outcome.model,
                f,
                config.probes,
                config.seed,
                &exclude,
            )?)
        }
        None => None,
    };
    let info = RunInfo {
        variant: config.variant,
        seed: config.seed,
        task: config.task,
        sweep_param: spec.sweep.as_ref().map(|s| s.0.clone()),
        sweep_value: spec.sweep.as_ref().map(|s| s.1.clone()),
        epochs: history.epochs.len(),
        best_epoch: history.best_epoch,
        oracle_error: oracle,
    };

    fs::create_dir_all(out_dir)?;
    let best = Checkpoint {
        model: outcome.model,
        optimizer: None,
        epochs_done: outcome.last.epochs_done,
    };
    write_checkpoint(&best, out_dir.join("model.ntfm"))?;
    write_checkpoint(&outcome.last, out_dir.join("last.ntfm"))?;
    write_csv_file(&out_dir.join("history.csv"), |w| history.write_csv(w))?;
    write_csv_file(&out_dir.join("timing.csv"), |w| history.write_timing_csv(w))?;
    write_json(&out_dir.join("metrics.json"), &report)?;
    write_json(&out_dir.join("run.json"), &info)?;
    fs::write(out_dir.join("config.txt"), config.to_text())?;
    Ok((report, info))
}

/// One `train` run per value of `param`, in `out_dir/<param>=<value>/`,
/// summarized in `out_dir/sweep.csv`.
pub fn sweep(
    config: &RunConfig,
    tensor: &ObservedTensor,
    factors: Option<&PlantedFactors>,
    param: &str,
    values: &[String],
    out_dir: &Path,
) -> Result<Vec<MetricsReport>> {
    if !RunConfig::is_key(param) {
        return Err(NtfError::UnknownParameter(param.to_owned()));
    }
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut c = config.clone();
        c.set(param, v)?;
        configs.push(c);
    }
    let mut reports = Vec::with_capacity(values.len());
    let mut dirs = Vec::with_capacity(values.len());
    for (c, v) in configs.iter().zip(values) {
        let dir = out_dir.join(format!("{param}={v}"));
        let spec = RunSpec {
            config: c,
            tensor,
            factors,
            resume: None,
            sweep: Some((param.to_owned(), v.clone())),
        };
        reports.push(train_run(&spec, &dir)?.0);
        dirs.push(dir);
    }
    let runs = load_runs(&dirs)?;
    write_csv_file(&out_dir.join("sweep.csv"), |w| write_runs(&runs, w))?;
    Ok(reports)
}

/// (variant, sweep key, sweep value)
type GroupKey = (String, String, String);

struct LoadedRun {
    name: String,
    info: RunInfo,
    metrics: MetricsReport,
    history: TrainHistory,
}

fn load_runs(dirs: &[PathBuf]) -> Result<Vec<LoadedRun>> {
    let mut runs: Vec<LoadedRun> = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let run = LoadedRun {
            name: dir.file_name().map_or_else(
                || dir.display().to_string(),
                |n| n.to_string_lossy().into_owned(),
            ),
            info: read_json(&dir.join("run.json"))?,
            metrics: read_json(&dir.join("metrics.json"))?,
            history: TrainHistory::read_csv(BufReader::new(File::open(dir.join("history.csv"))?))?,
        };
        if let Some(first) = runs.first() {
            if first.metrics.task() != run.metrics.task() {
                return Err(NtfError::SchemaMismatch(format!(
                    "{} has {} metrics but {} has {} metrics",
                    run.name,
                    run.metrics.task(),
                    first.name,
                    first.metrics.task()
                )));
            }
        }
        runs.push(run);
    }
    Ok(runs)
}

fn opt_str(s: &Option<String>) -> String {
    s.clone().unwrap_or_default()
}

fn opt_num<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

const RUN_KEY: [&str; 5] = ["run", "variant", "seed", "sweep_param", "sweep_value"];

fn run_key(r: &LoadedRun) -> Vec<String> {
    vec![
        r.name.clone(),
        r.info.variant.to_string(),
        r.info.seed.to_string(),
        opt_str(&r.info.sweep_param),
        opt_str(&r.info.sweep_value),
    ]
}

/// One row per run: key columns, metric fields, epochs, best epoch, oracle error.
fn write_runs<W: Write>(runs: &[LoadedRun], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let Some(first) = runs.first() else {
        return Ok(());
    };
    let mut header: Vec<String> = RUN_KEY.iter().map(|s| s.to_string()).collect();
    header.extend(
        first
            .metrics
            .fields()
            .into_iter()
            .map(|(k, _)| k.to_owned()),
    );
    header.extend(["epochs", "best_epoch", "oracle_error"].map(String::from));
    out.write_record(&header)?;
    for r in runs {
        let mut row = run_key(r);
        row.extend(r.metrics.fields().into_iter().map(|(_, v)| v.to_string()));
        row.extend([
            r.info.epochs.to_string(),
            opt_num(r.info.best_epoch),
            opt_num(r.info.oracle_error),
        ]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Merges run directories into `histories.csv` (one row per run and epoch),
/// `runs.csv` (one row per run) and `summary.csv` (mean and standard
/// deviation of each metric per variant and sweep value).
pub fn report(inputs: &[PathBuf], out_dir: &Path) -> Result<()> {
    let runs = load_runs(inputs)?;
    fs::create_dir_all(out_dir)?;

    write_csv_file(&out_dir.join("histories.csv"), |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = RUN_KEY.to_vec();
        header.extend(crate::train::HISTORY_HEADER);
        out.write_record(&header)?;
        for r in &runs {
            for e in &r.history.epochs {
                let mut row = run_key(r);
                row.extend([
                    e.epoch.to_string(),
                    e.loss.to_string(),
                    e.val_metric.to_string(),
                ]);
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    })?;

    write_csv_file(&out_dir.join("runs.csv"), |w| write_runs(&runs, w))?;

    write_csv_file(&out_dir.join("summary.csv"), |w| {
        let mut out = csv::Writer::from_writer(w);
        let Some(first) = runs.first() else {
            return Ok(());
        };
        // groups in order of first appearance
        let mut groups: Vec<(GroupKey, Vec<&LoadedRun>)> = Vec::new();
        for r in &runs {
            let key = (
                r.info.variant.to_string(),
                opt_str(&r.info.sweep_param),
                opt_str(&r.info.sweep_value),
            );
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, members)) => members.push(r),
                None => groups.push((key, vec![r])),
            }
        }
        let names: Vec<&str> = first.metrics.fields().into_iter().map(|(k, _)| k).collect();
        let mut header: Vec<String> = ["variant", "sweep_param", "sweep_value", "runs"]
            .map(String::from)
            .to_vec();
        for n in &names {
            header.push(format!("{n}_mean"));
            header.push(format!("{n}_std"));
        }
        out.write_record(&header)?;
        for ((variant, param, value), members) in groups {
            let mut row = vec![variant, param, value, members.len().to_string()];
            for idx in 0..names.len() {
                let xs: Vec<f64> = members.iter().map(|r| r.metrics.fields()[idx].1).collect();
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
                row.push(mean.to_string());
                row.push(var.sqrt().to_string());
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    })
}
