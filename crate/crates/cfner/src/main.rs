//! Thin command-line front end; all behavior lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cfner::cli::{
    apply_overrides, cmd_gradcheck, cmd_partition, cmd_report, cmd_run, cmd_synth, load_config,
    print_gradcheck, Overrides,
};

#[derive(Parser)]
#[command(name = "cfner", about = "Continual-learning NER experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Default)]
struct OverrideFlags {
    /// Seed (repeatable), replacing the config's seed list
    #[arg(long = "seed")]
    seed: Vec<u64>,
    /// Training method: finetune | st | extendner | cfner | st_cf
    #[arg(long)]
    baseline: Option<String>,
    /// Entity types in the first training stage
    #[arg(long)]
    fg: Option<usize>,
    /// Entity types per later CL step
    #[arg(long)]
    pg: Option<usize>,
    /// Matched tokens per anchor
    #[arg(long)]
    k: Option<usize>,
    /// Initial balancing weight
    #[arg(long = "lambda-base")]
    lambda_base: Option<f64>,
    /// Initial confidence threshold
    #[arg(long = "delta1")]
    delta1: Option<f64>,
    /// Final confidence threshold
    #[arg(long = "deltam")]
    delta_m: Option<f64>,
    /// Epochs over which the threshold anneals
    #[arg(long)]
    m: Option<usize>,
}

impl OverrideFlags {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            seeds: self.seed.clone(),
            baseline: self.baseline.clone(),
            fg: self.fg,
            pg: self.pg,
            k: self.k,
            lambda_base: self.lambda_base,
            delta1: self.delta1,
            delta_m: self.delta_m,
            m: self.m,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/dev/test corpus
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "1")]
        seed: u64,
        #[arg(long, default_value = "synth_data")]
        out: PathBuf,
    },
    /// Partition the training set into per-step CoNLL slices
    Partition {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "partitions")]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideFlags,
    },
    /// Run the continual-learning experiment and write reports
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideFlags,
    },
    /// Audit analytic gradients against finite differences
    Gradcheck {
        #[arg(long, default_value = "20")]
        trials: usize,
        /// Test hook: corrupt the gradients to prove the detector fires
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Render a summary table (and merged CSV) from report files
    Report {
        /// report.jsonl paths
        paths: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { config, seed, out } => {
            let cfg = load_config(config.as_deref())?;
            cmd_synth(&cfg.synth.to_spec(), seed, &out)?;
            println!("wrote train/dev/test CoNLL files and manifest to {}", out.display());
            Ok(true)
        }
        Command::Partition {
            config,
            out,
            overrides,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            apply_overrides(&mut cfg, &overrides.to_overrides())?;
            cmd_partition(&cfg, &out)?;
            println!("wrote slices and manifest to {}", out.display());
            Ok(true)
        }
        Command::Run {
            config,
            out,
            overrides,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            apply_overrides(&mut cfg, &overrides.to_overrides())?;
            cmd_run(&cfg, &out)?;
            Ok(true)
        }
        Command::Gradcheck { trials, corrupt } => {
            let summary = cmd_gradcheck(trials, corrupt)?;
            print_gradcheck(&summary, std::io::stdout())?;
            Ok(summary.pass)
        }
        Command::Report { paths, out } => {
            cmd_report(&paths, out.as_deref())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
