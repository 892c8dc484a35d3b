use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bimodal_boost::harness::{run_compare, run_eval, run_gen_data, run_train};

#[derive(Parser)]
#[command(name = "bimodal-boost", version, about = "Bimodal multiclass boosting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train.txt, valid.txt) from a spec file.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write its artifact directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on a dataset file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the configured roster and print the comparison table.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        repeats: Option<usize>,
        /// Also write plot.svg (needs --out).
        #[arg(long)]
        plot: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> bimodal_boost::Result<()> {
    match cli.command {
        Command::GenData { spec, out } => run_gen_data(&spec, &out),
        Command::Train { config, out } => {
            let art = run_train(&config, &out)?;
            println!("trained {} -> {}", art.kind, out.display());
            Ok(())
        }
        Command::Eval { model, data } => {
            let (metric, value) = run_eval(&model, &data)?;
            println!("metric={} value={value}", metric.name());
            Ok(())
        }
        Command::Compare { config, repeats, plot, out } => {
            if plot && out.is_none() {
                return Err(bimodal_boost::Error::Config("--plot needs --out".into()));
            }
            let table = run_compare(&config, repeats, out.as_deref(), plot)?;
            print!("{}", table.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
