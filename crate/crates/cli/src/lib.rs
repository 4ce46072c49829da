//! Command-line driver: synthetic data, training, evaluation, ablations.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use shipnet_core::harness::{
    self, ablation_suite, evaluate, format_percent, rows_to_csv, train, AblationAxis, AblationRun,
    Dataset, EvalReport,
};
use shipnet_core::model::Network;
use shipnet_core::sardata::manifest::{encode_class_table, encode_manifest, CLASS_TABLE};
use shipnet_core::sardata::{encode_chip, DatasetManifest, ManifestRecord, Split, SynthConfig};
use shipnet_core::{par, seed, weights, ParamStore, Real};

pub use config::RunConfig;

pub const WEIGHTS_FILE: &str = "weights.dpgw";
pub const LOSS_LOG: &str = "loss.jsonl";
pub const EPOCH_LOG: &str = "epochs.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const TRAIN_MANIFEST: &str = "train.jsonl";
pub const TEST_MANIFEST: &str = "test.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Parser)]
#[command(name = "shipnet", version, about = "Dual-polarization SAR ship classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Flat JSON config overriding the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,

    /// Print the resolved config as JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic chips and train/test manifests.
    Synth {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 4)]
        per_class: usize,
        /// Chip side in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train from a manifest; writes weights, loss log and resolved config.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Start from these weights instead of a fresh initialization.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Evaluate; writes a confusion CSV and prints accuracy in percent.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Score stored `{"label", "predicted"}` lines instead of running
        /// the model. Class names come from the class table beside the file.
        #[arg(long, conflicts_with_all = ["weights", "stub_labels"])]
        predictions: Option<PathBuf>,
        /// Predict each sample's own label (pipeline check).
        #[arg(long, conflicts_with = "weights")]
        stub_labels: bool,
    },
    /// Run one ablation axis; trains per row when manifests are given.
    Ablate {
        #[arg(long)]
        axis: String,
        #[arg(long, requires = "test_manifest")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        test_manifest: Option<PathBuf>,
    },
    /// Print the trainable parameter count.
    Params {
        /// One `name,count` line per parameter tensor before the total.
        #[arg(long)]
        breakdown: bool,
    },
}

/// A stored prediction for `eval --predictions`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub label: usize,
    pub predicted: usize,
}

impl Cli {
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                RunConfig::from_json(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

/// Runs a parsed command, writing user-facing output to `stdout`.
pub fn run(cli: &Cli, stdout: &mut (dyn Write + Send)) -> Result<()> {
    let cfg = cli.resolve_config()?;
    if cli.print_config {
        writeln!(stdout, "{}", serde_json::to_string_pretty(&cfg)?)?;
        return Ok(());
    }
    let mut body = move || match cli.precision {
        Precision::F32 => dispatch::<f32>(cli, &cfg, stdout),
        Precision::F64 => dispatch::<f64>(cli, &cfg, stdout),
    };
    match cli.workers {
        Some(0) => bail!("--workers must be at least 1"),
        Some(n) => par::with_workers(n, body),
        None => body(),
    }
}

fn dispatch<T: Real>(cli: &Cli, cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Synth {
            classes,
            per_class,
            size,
        } => cmd_synth(*classes, *per_class, *size, cfg.seed, out),
        Command::Train { manifest, weights } => {
            cmd_train::<T>(manifest, weights.as_deref(), cfg, out, stdout)
        }
        Command::Eval {
            manifest,
            weights,
            predictions,
            stub_labels,
        } => {
            let report = if let Some(p) = predictions {
                eval_predictions(p)?
            } else {
                let manifest = manifest
                    .as_deref()
                    .context("eval needs --manifest unless --predictions is given")?;
                if *stub_labels {
                    eval_stub(manifest)?
                } else {
                    let w = weights
                        .as_deref()
                        .context("eval needs --weights, --stub-labels or --predictions")?;
                    eval_model::<T>(manifest, w, cfg)?
                }
            };
            write_atomic(&out.join(CONFUSION_FILE), &report.matrix.to_csv()?)?;
            writeln!(stdout, "{}", format_percent(report.accuracy))?;
            Ok(())
        }
        Command::Ablate {
            axis,
            manifest,
            test_manifest,
        } => cmd_ablate::<T>(axis, manifest.as_deref(), test_manifest.as_deref(), cfg, out, stdout),
        Command::Params { breakdown } => {
            let net = Network::new(cfg.model())?;
            if *breakdown {
                for p in net.param_specs() {
                    writeln!(stdout, "{},{}", p.name, p.numel())?;
                }
            }
            writeln!(stdout, "{}", net.count_params())?;
            Ok(())
        }
    }
}

/// Writes `bytes` to a temp file in the destination directory and renames
/// it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Class names used by `synth`.
pub fn synth_class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|k| format!("class{k}")).collect()
}

/// Writes `classes * per_class` chips under `out/chips` with train and test
/// manifests. Each class contributes its first `ceil(per_class / 2)` chips
/// to the train split.
pub fn cmd_synth(classes: usize, per_class: usize, size: usize, root: u64, out: &Path) -> Result<()> {
    if per_class == 0 {
        bail!("per_class must be at least 1");
    }
    let synth = SynthConfig::new(classes, size);
    let chips_dir = out.join("chips");
    fs::create_dir_all(&chips_dir).with_context(|| format!("creating {}", chips_dir.display()))?;
    let n_train = per_class.div_ceil(2);
    let jobs: Vec<(usize, usize)> = (0..classes)
        .flat_map(|k| (0..per_class).map(move |i| (k, i)))
        .collect();
    let written = par::map_range(jobs.len(), |j| -> Result<ManifestRecord> {
        let (k, i) = jobs[j];
        let chip = synth.chip(k, seed::derive(root, &format!("synth/class{k}/chip{i}")))?;
        let rel = format!("chips/c{k}_{i:05}.sarc");
        write_atomic(&out.join(&rel), &encode_chip(&chip)?)?;
        Ok(ManifestRecord { path: rel, label: k })
    });
    let (mut train_recs, mut test_recs) = (Vec::new(), Vec::new());
    for (rec, (_, i)) in written.into_iter().zip(&jobs) {
        if *i < n_train {
            train_recs.push(rec?);
        } else {
            test_recs.push(rec?);
        }
    }
    write_atomic(&out.join(TRAIN_MANIFEST), &encode_manifest(&train_recs)?)?;
    write_atomic(&out.join(TEST_MANIFEST), &encode_manifest(&test_recs)?)?;
    write_atomic(
        &out.join(CLASS_TABLE),
        &encode_class_table(&synth_class_names(classes))?,
    )?;
    Ok(())
}

fn load_dataset(manifest: &Path, split: Split, cfg: &RunConfig) -> Result<Dataset> {
    let m = DatasetManifest::load(manifest, split)
        .with_context(|| format!("loading manifest {}", manifest.display()))?;
    Ok(Dataset::from_manifest(&m, &cfg.model())?)
}

fn load_weights<T: Real>(net: &Network, path: &Path) -> Result<ParamStore<T>> {
    let mut store = net.init_params::<T>(0)?;
    let entries = weights::read(path)?;
    weights::load_into(&mut store, &entries)
        .with_context(|| format!("weights {} do not fit the configured model", path.display()))?;
    Ok(store)
}

pub fn cmd_train<T: Real>(
    manifest: &Path,
    init: Option<&Path>,
    cfg: &RunConfig,
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<()> {
    let net = Network::new(cfg.model())?;
    let data = load_dataset(manifest, Split::Train, cfg)?;
    let mut store = match init {
        Some(p) => load_weights::<T>(&net, p)?,
        None => net.init_params::<T>(cfg.seed)?,
    };
    let outcome = train(&net, &mut store, &data, &cfg.train())?;
    let mut epochs = Vec::new();
    for e in &outcome.epochs {
        serde_json::to_writer(&mut epochs, e)?;
        epochs.push(b'\n');
    }
    write_atomic(&out.join(WEIGHTS_FILE), &weights::encode(&store)?)?;
    write_atomic(&out.join(LOSS_LOG), &outcome.log_jsonl()?)?;
    write_atomic(&out.join(EPOCH_LOG), &epochs)?;
    write_atomic(&out.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)?.as_bytes())?;
    if let Some(last) = outcome.epochs.last() {
        writeln!(
            stdout,
            "epoch {} loss {:.4} train {}",
            last.epoch,
            last.mean_loss,
            format_percent(last.train_accuracy)
        )?;
    }
    Ok(())
}

fn eval_model<T: Real>(manifest: &Path, weights: &Path, cfg: &RunConfig) -> Result<EvalReport> {
    let net = Network::new(cfg.model())?;
    let store = load_weights::<T>(&net, weights)?;
    let data = load_dataset(manifest, Split::Test, cfg)?;
    Ok(evaluate(&net, &store, &data, cfg.eval_batch_size)?)
}

fn eval_stub(manifest: &Path) -> Result<EvalReport> {
    let m = DatasetManifest::load(manifest, Split::Test)?;
    let labels: Vec<usize> = m.entries.iter().map(|e| e.label).collect();
    Ok(harness::score(
        m.class_names,
        labels.into_iter().map(|l| (l, l)),
    )?)
}

fn eval_predictions(path: &Path) -> Result<EvalReport> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let table: shipnet_core::sardata::manifest::ClassTable =
        serde_json::from_slice(&fs::read(dir.join(CLASS_TABLE)).with_context(|| {
            format!("reading class table beside {}", path.display())
        })?)?;
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        pairs.push((r.label, r.predicted));
    }
    Ok(harness::score(table.classes, pairs)?)
}

pub fn cmd_ablate<T: Real>(
    axis: &str,
    manifest: Option<&Path>,
    test_manifest: Option<&Path>,
    cfg: &RunConfig,
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<()> {
    let axis: AblationAxis = axis.parse()?;
    let base = cfg.model();
    // Every row of the inputs axis needs its own channels, so load all three.
    let full = RunConfig {
        enable_i1: true,
        enable_i2: true,
        enable_i3: true,
        ..cfg.clone()
    };
    let rows = match (manifest, test_manifest) {
        (Some(tr), Some(te)) => {
            let train_data = load_dataset(tr, Split::Train, &full)?;
            let test_data = load_dataset(te, Split::Test, &full)?;
            let tcfg = cfg.train();
            let run = AblationRun {
                train: &train_data,
                test: &test_data,
                tcfg: &tcfg,
                eval_batch: cfg.eval_batch_size,
            };
            ablation_suite::<T>(&base, axis, Some(&run))?
        }
        _ => ablation_suite::<T>(&base, axis, None)?,
    };
    let csv = rows_to_csv(axis, &rows)?;
    write_atomic(&out.join(format!("ablation_{axis}.csv")), &csv)?;
    stdout.write_all(&csv)?;
    Ok(())
}
