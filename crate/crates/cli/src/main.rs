//! `fcdd` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fcdd::data::{scan, synth, DatasetManifest, SyntheticSpec};
use fcdd::pipeline::{
    ablate, ensure_split, evaluate, heatmaps, parse_grid, score, train, write_scores_csv, HeatmapOptions, RunConfig,
    BEST_CHECKPOINT, CHECKPOINT_DIR,
};
use fcdd::{Error, Split};

#[derive(Parser)]
#[command(
    name = "fcdd",
    version,
    about = "Fully convolutional data description for image anomaly detection"
)]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus with ground-truth masks.
    Synth(SynthArgs),
    /// Build a manifest from root/<class>/{normal,anomalous}/ images.
    Scan(ScanArgs),
    /// Train a backbone; writes checkpoints, history and the split manifest.
    Train(TrainArgs),
    /// Per-image scores as CSV.
    Score(ScoreArgs),
    /// Heatmaps, overlays, raw PFMs and the score histogram.
    Heatmap(HeatmapArgs),
    /// Calibrate on the cal split, report metrics on the test split.
    Evaluate(EvaluateArgs),
    /// Train and evaluate one model per (normal, anomalous) pool size.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
    Desk,
}

/// Configuration shared by the model commands. Precedence: preset or run
/// directory, then `--config`, then `--set`, then the dedicated flags.
#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration used when no file is given.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Override any config field: `--set epochs=5 --set paths.output_dir=out`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Output directory (paths.output_dir).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Hazard weight sidecar CSV (image_id,weight).
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Single-threaded reference execution.
    #[arg(long)]
    deterministic: bool,
}

impl ConfigArgs {
    fn resolve(&self, run_dir: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match (&self.config, run_dir, self.preset) {
            (Some(p), _, _) => RunConfig::load(p)?,
            (None, Some(run), _) => RunConfig::load(&run.join("config.resolved.json"))?,
            (None, None, Some(Preset::Desk)) => RunConfig::desk(),
            (None, None, _) => RunConfig::paper(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = &self.out {
            cfg.paths.output_dir = v.clone();
        }
        if let Some(v) = &self.sidecar {
            cfg.paths.hazard_sidecar = Some(v.clone());
        }
        cfg.deterministic |= self.deterministic;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Where a model command finds its checkpoint and manifest. `--run` points at
/// a training output directory and supplies defaults for both, and for the
/// config.
#[derive(Args)]
struct ModelArgs {
    /// Training output directory (config.resolved.json, manifest.csv,
    /// checkpoints/best.ckpt).
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl ModelArgs {
    fn checkpoint(&self) -> Result<PathBuf> {
        self.checkpoint
            .clone()
            .or_else(|| self.run.as_ref().map(|r| r.join(CHECKPOINT_DIR).join(BEST_CHECKPOINT)))
            .ok_or_else(|| Error::Config("need --checkpoint or --run".into()).into())
    }

    fn manifest(&self) -> Result<DatasetManifest> {
        let path = self
            .manifest
            .clone()
            .or_else(|| self.run.as_ref().map(|r| r.join("manifest.csv")))
            .ok_or_else(|| Error::Config("need --manifest or --run".into()))?;
        Ok(DatasetManifest::load(&path)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Cal,
    Test,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::All => None,
            SplitArg::Train => Some(Split::Train),
            SplitArg::Cal => Some(Split::Cal),
            SplitArg::Test => Some(Split::Test),
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (data/, masks/, manifest.csv).
    #[arg(short, long)]
    out: PathBuf,
    /// JSON SyntheticSpec; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Comma-separated class names.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    /// Normal images per class.
    #[arg(long)]
    n_normal: Option<usize>,
    /// Anomalous images per class.
    #[arg(long)]
    n_anomalous: Option<usize>,
    /// Square image side in pixels.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ScanArgs {
    /// Dataset root.
    #[arg(long)]
    root: PathBuf,
    /// Manifest to write.
    #[arg(short, long)]
    out: PathBuf,
    /// Also assign splits with this seed and the default ratio.
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Manifest to train on; split with the config's ratio and seed if unsplit.
    /// Without it, `paths.data_root` is scanned.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    /// CSV to write; defaults to <output_dir>/scores.csv.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Ground-truth mask root (defaults to the corpus root for synthetic data).
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Decision threshold for the locality table.
    #[arg(long, conflicts_with = "report")]
    threshold: Option<f64>,
    /// Take the threshold from an evaluate report.json.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Source pool manifest (unsplit).
    #[arg(long)]
    pool: PathBuf,
    /// Grid such as `1K:1K,2K:1K,4K:2K`; `@seed` pins a cell's seed.
    #[arg(long, default_value = "1K:1K,2K:1K,3K:1K,4K:1K,2K:2K,3K:2K,4K:2K")]
    grid: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain joined with `: `, skipping causes already spelled out by
/// the message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !out.contains(&c) {
            out = format!("{out}: {c}");
        }
    }
    out
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Config(_) | Error::Spec { .. }) => 2,
        Some(Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_) | Error::UndefinedMetric(_)) => 3,
        Some(Error::Numeric(_)) => 4,
        _ => 1,
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => {
            let mut spec = match &a.spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(v) = a.classes {
                spec.classes = v;
            }
            if let Some(v) = a.n_normal {
                spec.n_normal = v;
            }
            if let Some(v) = a.n_anomalous {
                spec.n_anomalous = v;
            }
            if let Some(v) = a.size {
                spec.image_size = [v, v];
            }
            if let Some(v) = a.noise {
                spec.noise_level = v;
            }
            if let Some(v) = a.seed {
                spec.seed = v;
            }
            let m = synth(&spec, &a.out)?;
            println!(
                "{} images ({} anomalous) in {}",
                m.records.len(),
                m.count(1),
                a.out.display()
            );
        }
        Command::Scan(a) => {
            let mut m = scan(&a.root)?;
            if let Some(seed) = a.split_seed {
                m = fcdd::data::split(&m, fcdd::data::DEFAULT_RATIO, seed)?;
            }
            m.save(&a.out)?;
            println!(
                "{} images ({} anomalous) -> {}",
                m.records.len(),
                m.count(1),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let cfg = a.config.resolve(None)?;
            let out = cfg.paths.output_dir.clone();
            let source = match (&a.manifest, &cfg.paths.data_root) {
                (Some(p), _) => DatasetManifest::load(p)?,
                (None, Some(root)) => scan(root)?,
                (None, None) => return Err(Error::Config("need --manifest or paths.data_root".into()).into()),
            };
            let manifest = ensure_split(&source, &cfg)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            manifest.save(&out.join("manifest.csv"))?;
            let outcome = train(&cfg, &manifest, &out, a.resume.as_deref())?;
            let auc = outcome
                .best_cal_auc
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "n/a".into());
            println!(
                "best epoch {} (cal AUC {auc}) -> {}",
                outcome.best_epoch,
                outcome.best_checkpoint().display()
            );
        }
        Command::Score(a) => {
            let cfg = a.config.resolve(a.model.run.as_deref())?;
            let rows = score(&cfg, &a.model.checkpoint()?, &a.model.manifest()?, a.split.split())?;
            let path = a.csv.unwrap_or_else(|| cfg.paths.output_dir.join("scores.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.to_path_buf(),
                    source: e,
                })?;
            }
            write_scores_csv(&rows, &path)?;
            println!("{} scores -> {}", rows.len(), path.display());
        }
        Command::Heatmap(a) => {
            let cfg = a.config.resolve(a.model.run.as_deref())?;
            let threshold = match (&a.report, a.threshold) {
                (Some(p), _) => Some(report_threshold(p)?),
                (None, t) => t,
            };
            let opts = HeatmapOptions {
                split: a.split.split(),
                masks_root: a.masks,
                threshold,
            };
            let out = cfg.paths.output_dir.join("heatmaps");
            let s = heatmaps(&cfg, &a.model.checkpoint()?, &a.model.manifest()?, &out, &opts)?;
            println!("{} heatmaps -> {}", s.images, out.display());
            if let Some(r) = s.range {
                println!("display range [{}, {}]", r.lo, r.hi);
            }
        }
        Command::Evaluate(a) => {
            let cfg = a.config.resolve(a.model.run.as_deref())?;
            let out = cfg.paths.output_dir.clone();
            let rep = evaluate(&cfg, &a.model.checkpoint()?, &a.model.manifest()?, Some(&out))?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Command::Ablate(a) => {
            let cfg = a.config.resolve(None)?;
            let grid = parse_grid(&a.grid)?;
            let pool = DatasetManifest::load(&a.pool)?;
            let rows = ablate(&cfg, &pool, &grid, &cfg.paths.output_dir)?;
            for r in &rows {
                let auc = r.auc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                println!("{:>8} {:<7} auc {auc} {}", r.label, r.status, r.reason);
            }
        }
    }
    Ok(())
}

fn report_threshold(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rep: fcdd::pipeline::EvalReport =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(rep.metrics.threshold)
}
