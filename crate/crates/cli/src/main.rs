use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kwbeam_core::config::PipelineConfig;
use kwbeam_core::pipeline::{
    cmd_enhance, cmd_evaluate, cmd_simulate, cmd_simulate_corpus, cmd_train, EnhanceRequest, MaskSource,
};
use kwbeam_core::{Error, Result};

/// Keyword-cued target speaker enhancement with a mask-based MVDR beamformer.
#[derive(Parser, Debug)]
#[command(name = "kwbeam", version)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Files processed in parallel.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render evaluation scenes, or a synthetic training corpus.
    Simulate(SimulateArgs),
    /// Train the mask estimator on keyword/background pairs.
    Train(TrainArgs),
    /// Enhance the speech following the keyword in a multichannel recording.
    Enhance(EnhanceArgs),
    /// Score masks and beamformers on rendered scenes.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON scene specs (one object or an array); without it a batch is generated.
    #[arg(long, conflicts_with = "corpus")]
    scenes: Option<PathBuf>,
    /// Write keyword/background WAVs and manifest.jsonl instead of scenes.
    #[arg(long)]
    corpus: bool,
    #[arg(long)]
    targets: Option<usize>,
    #[arg(long)]
    interferers: Option<usize>,
    #[arg(long)]
    patterns: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the model path with a `.loss.csv` suffix.
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Number of training mixtures to draw.
    #[arg(long)]
    count: Option<usize>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct EnhanceArgs {
    #[arg(long)]
    mixture: PathBuf,
    #[arg(long)]
    regions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    model: Option<PathBuf>,
    /// Use ideal masks from clean references instead of the model.
    #[arg(long, requires_all = ["target", "interference"], conflicts_with = "model")]
    oracle: bool,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    interference: Option<PathBuf>,
    /// Defaults to the output path with a `.json` extension.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Also write the beamformer weights.
    #[arg(long)]
    filter_dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
    /// JSON report; a CSV with the same stem is written next to it.
    #[arg(long)]
    out: PathBuf,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Simulate(a) => {
            if let Some(v) = a.targets {
                cfg.simulate.targets = v;
            }
            if let Some(v) = a.interferers {
                cfg.simulate.interferers = v;
            }
            if let Some(v) = a.patterns {
                cfg.simulate.patterns = v;
            }
            if let Some(v) = a.snr {
                cfg.simulate.snr_db = v;
            }
            if a.corpus {
                let manifest = cmd_simulate_corpus(&cfg, &a.out)?;
                println!("corpus manifest: {}", manifest.display());
            } else {
                let scenes = cmd_simulate(&cfg, a.scenes.as_deref(), &a.out)?;
                println!("rendered {} scenes into {}", scenes.len(), a.out.display());
            }
        }
        Command::Train(a) => {
            if let Some(v) = a.epochs {
                cfg.train.epochs = v;
            }
            if let Some(v) = a.lr {
                cfg.train.lr = v;
            }
            if let Some(v) = a.batch {
                cfg.train.batch_size = v;
            }
            if let Some(v) = a.count {
                cfg.mixing.count = v;
            }
            if let Some(v) = a.hidden {
                cfg.hidden = v;
            }
            let log = a.loss_log.unwrap_or_else(|| {
                let mut p = a.out.clone().into_os_string();
                p.push(".loss.csv");
                PathBuf::from(p)
            });
            let outcome = cmd_train(&cfg, &a.manifest, &a.out, &log)?;
            let last = outcome.report.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained on {} mixtures ({} frames); final loss {last:.4}; model {}",
                outcome.mixtures,
                outcome.frames,
                a.out.display()
            );
        }
        Command::Enhance(a) => {
            let masks = if a.oracle {
                let missing = || Error::Invalid("--oracle needs --target and --interference".into());
                MaskSource::Oracle {
                    target: a.target.ok_or_else(missing)?,
                    interference: a.interference.ok_or_else(missing)?,
                }
            } else {
                MaskSource::Model(a.model.ok_or_else(|| Error::Invalid("--model is required".into()))?)
            };
            let req = EnhanceRequest {
                mixture: a.mixture,
                regions: a.regions,
                out: a.out,
                masks,
                diagnostics: a.diagnostics,
                filter_dump: a.filter_dump,
            };
            let e = cmd_enhance(&cfg, &req)?;
            println!(
                "enhanced {} from frame {}; {} fallback bins; diagnostics {}",
                req.out.display(),
                e.region_frames.start,
                e.filter.fallback_bins.len(),
                req.diagnostics_path().display()
            );
        }
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&cfg, &a.model, &a.scenes, &a.out)?;
            println!("{:<8} {:>6} {:>16} {:>16}", "mask", "scenes", "SDRi dB", "SIR gain dB");
            for s in &report.summary {
                println!(
                    "{:<8} {:>6} {:>8.2} ± {:<5.2} {:>8.2} ± {:<5.2}",
                    s.mask_type, s.scenes, s.sdri_mean_db, s.sdri_std_db, s.sir_improvement_mean_db, s.sir_improvement_std_db
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
