use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::info;

use volscan::cvae::ModelCheckpoint;
use volscan::harness::{
    ablate_features, ablate_slices, detect_stage, ensure_dataset, ensure_registered, eval_stage, fit_stage,
    run_experiment, sweep_beta, write_csv, CsvRow, Detections, ExperimentConfig, RunOptions, DEFAULT_BETAS,
};

/// Conditional β-VAE anomaly detection on synthetic whole-body phantoms.
#[derive(Debug, Parser)]
#[command(name = "volscan", version, about)]
struct Cli {
    /// Experiment configuration (TOML). Defaults to the desk-scale settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output root holding datasets, registered ROIs and run directories.
    #[arg(long, global = true, default_value = "volscan-out")]
    out: PathBuf,

    /// Run only this seed instead of the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Recompute runs even if a finished report exists.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate (or reuse) the phantom dataset.
    GenData,
    /// Register every dataset volume and write the ROIs.
    Register,
    /// Train a model for one seed.
    Fit,
    /// Produce anomaly masks for the test volumes with a trained model.
    Detect {
        /// Checkpoint to use instead of the run directory's `model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate saved masks against the ground truth.
    Eval,
    /// Run the full pipeline for every seed.
    Run,
    /// Slice-count and coordinate ablation.
    AblateSlices,
    /// Patient-feature ablation.
    AblateFeatures,
    /// Sweep the KL weight β.
    SweepBeta {
        /// Comma-separated β values.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BETAS.to_vec())]
        betas: Vec<f64>,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Register => "register",
            Command::Fit => "fit",
            Command::Detect { .. } => "detect",
            Command::Eval => "eval",
            Command::Run => "run",
            Command::AblateSlices => "ablate-slices",
            Command::AblateFeatures => "ablate-features",
            Command::SweepBeta { .. } => "sweep-beta",
            Command::PrintConfig => "print-config",
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn seed_dir(cfg: &ExperimentConfig, out: &Path, seed: u64) -> PathBuf {
    out.join("runs").join(cfg.config_hash()).join(format!("seed-{seed}"))
}

fn print_rows(rows: &[CsvRow]) {
    println!("{}", CsvRow::HEADER);
    for r in rows {
        println!("{}", r.to_line());
    }
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    let opts = RunOptions { reuse_completed: !cli.force };
    let seed = cfg.seeds[0];
    match &cli.command {
        Command::PrintConfig => print!("{}", cfg.to_toml()?),
        Command::GenData => {
            let (dir, manifest) = ensure_dataset(&cfg, out)?;
            info!("{} volumes", manifest.entries.len());
            println!("{}", dir.display());
        }
        Command::Register => {
            let set = ensure_registered(&cfg, out)?;
            println!("{}", set.dir.display());
        }
        Command::Fit => {
            let set = ensure_registered(&cfg, out)?;
            let path = seed_dir(&cfg, out, seed).join("model.ckpt");
            let ckpt = fit_stage(&cfg, &set, seed, &path)?;
            if let Some(last) = ckpt.history.last() {
                info!("final epoch loss {:.4}", last.loss);
            }
            println!("{}", path.display());
        }
        Command::Detect { checkpoint } => {
            let set = ensure_registered(&cfg, out)?;
            let dir = seed_dir(&cfg, out, seed);
            let path = checkpoint.clone().unwrap_or_else(|| dir.join("model.ckpt"));
            let mut ckpt = ModelCheckpoint::load(&path)?;
            if ckpt.config().channels != cfg.model.channels || ckpt.flags != cfg.conditioning {
                bail!("checkpoint {} was trained with a different slice count or conditioning", path.display());
            }
            let det = detect_stage(&cfg, &mut ckpt, &set)?;
            det.save(&dir.join("masks"))?;
            println!("{}", dir.join("masks").display());
        }
        Command::Eval => {
            let set = ensure_registered(&cfg, out)?;
            let dir = seed_dir(&cfg, out, seed);
            let det = Detections::load(&dir.join("masks"))?;
            let report = eval_stage(&set, &det)?;
            let json = serde_json::to_string_pretty(&report)?;
            std::fs::write(dir.join("eval.json"), &json).with_context(|| format!("writing {}", dir.display()))?;
            println!("auprc {} auroc {} dice {}", report.auprc, report.auroc, report.dice);
        }
        Command::Run => {
            let rows = run_experiment(&cfg, out, &opts)?;
            write_csv(&out.join(format!("run-{}.csv", cfg.config_hash())), &rows)?;
            print_rows(&rows);
        }
        Command::AblateSlices => print_rows(&ablate_slices(&cfg, out, &opts)?),
        Command::AblateFeatures => print_rows(&ablate_features(&cfg, out, &opts)?),
        Command::SweepBeta { betas } => print_rows(&sweep_beta(&cfg, betas, out, &opts)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("volscan {}: {e}", cli.command.stage());
            ExitCode::FAILURE
        }
    }
}
