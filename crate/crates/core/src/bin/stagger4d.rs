use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stagger4d::experiment::{
    cmd_ablate, cmd_evaluate, cmd_make_pairs, cmd_reconstruct, cmd_synthesize, ExperimentConfig, ExperimentError,
    RefinerName, Run,
};

/// Exit status when `ablate --check` finds the async margin below threshold.
const EXIT_THRESHOLD: u8 = 4;

#[derive(Parser)]
#[command(version, about = "4D Gaussian splatting under staggered multi-camera capture")]
struct Cli {
    /// TOML experiment config; defaults are used for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Parent directory of the run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// identity, temporal_median, temporal_gaussian, oracle or external.
    #[arg(long, global = true)]
    refiner: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic capture to a dataset directory.
    Synthesize,
    /// Fit a dataset (stage 1, then stage 2 with the refiner).
    Reconstruct {
        /// Dataset directory; synthesized from the config when absent.
        dataset: Option<PathBuf>,
    },
    /// Sync/async × fix/no-fix comparison.
    Ablate {
        /// Exit with status 4 when the async margin misses the threshold.
        #[arg(long)]
        check: bool,
    },
    /// Build noisy/clean refiner training pairs.
    MakePairs {
        /// subsample or leave-one-out.
        #[arg(long)]
        method: Option<String>,
    },
    /// Score a checkpoint on the held-out views.
    Evaluate {
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

fn config(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(r) = &cli.refiner {
        cfg.refiner.name = r.parse::<RefinerName>()?;
    }
    match &cli.command {
        Command::Reconstruct { dataset: Some(d) } => cfg.dataset = Some(d.clone()),
        Command::MakePairs { method: Some(m) } => {
            cfg.pairs.method = serde_json::from_value(serde_json::Value::String(m.clone()))
                .map_err(|_| ExperimentError::Config(format!("unknown pair method {m:?}")))?;
        }
        Command::Evaluate { checkpoint, dataset } => {
            if let Some(c) = checkpoint {
                cfg.checkpoint = Some(c.clone());
            }
            if let Some(d) = dataset {
                cfg.dataset = Some(d.clone());
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<ExitCode, ExperimentError> {
    let cfg = config(cli)?;
    let name = match cli.command {
        Command::Synthesize => "synthesize",
        Command::Reconstruct { .. } => "reconstruct",
        Command::Ablate { .. } => "ablate",
        Command::MakePairs { .. } => "make-pairs",
        Command::Evaluate { .. } => "evaluate",
    };
    let mut run = Run::create(&cfg, name)?;
    match cli.command {
        Command::Synthesize => {
            let s = cmd_synthesize(&cfg, &mut run)?;
            println!("effective FPS: {:.3}", s.effective_fps);
            println!("views per instant: {:.3}", s.views_per_instant);
            println!("dataset: {}", s.dataset_dir.display());
        }
        Command::Reconstruct { .. } => {
            let o = cmd_reconstruct(&cfg, &mut run)?;
            println!("{}", o.final_report().summary());
            println!("checkpoint: {}", o.checkpoint.display());
        }
        Command::Ablate { check } => {
            let t = cmd_ablate(&cfg, &mut run)?;
            println!("{}", t.to_markdown());
            if check && !t.meets_threshold() {
                eprintln!(
                    "async margin {:.3} dB below threshold {:.3} dB",
                    t.async_margin_db(),
                    t.threshold_db
                );
                return Ok(ExitCode::from(EXIT_THRESHOLD));
            }
        }
        Command::MakePairs { .. } => {
            let pairs = cmd_make_pairs(&cfg, &mut run)?;
            println!("{} pairs in {}", pairs.len(), run.path("pairs").display());
        }
        Command::Evaluate { .. } => {
            let r = cmd_evaluate(&cfg, &mut run)?;
            println!("{}", r.summary());
        }
    }
    println!("run directory: {}", run.dir.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if cli.deterministic {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            eprintln!("error: cannot configure single-threaded mode: {e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
