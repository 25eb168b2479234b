use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sqbc::experiments::{parse_list, run_experiment, write_output, ExperimentConfig, EXPERIMENTS};
use sqbc::{service, verify};

#[derive(Parser)]
#[command(name = "sqbc", version, about = "Structural query-by-committee experiments and session server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write results.csv, metadata.json and traces.
    Run {
        /// Experiment id (see `sqbc list`).
        experiment: String,
        /// Flat `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated seeds; overrides `seeds` in the config.
        #[arg(long)]
        seeds: Option<String>,
        /// Also write one SVG chart per metric.
        #[arg(long)]
        plots: bool,
    },
    /// Run the acceptance checks and print one line per criterion.
    Verify {
        /// Comma-separated criterion ids; all when omitted.
        #[arg(long)]
        only: Option<String>,
    },
    /// Serve interactive clustering sessions over HTTP.
    Serve {
        /// Listen address; falls back to SQBC_ADDR, then 127.0.0.1:8080.
        #[arg(long)]
        addr: Option<String>,
    },
    /// List experiment and criterion ids.
    List,
}

fn run() -> sqbc::Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { experiment, config, out, seeds, plots } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::new(),
            };
            let seeds: Vec<u64> = match seeds {
                Some(s) => parse_list(&s).map_err(|_| sqbc::Error::Config(format!("bad seed list {s:?}")))?,
                None => cfg.seeds()?,
            };
            let output = run_experiment(&experiment, &cfg, &seeds)?;
            for p in write_output(&output, &out, plots)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Verify { only } => {
            let ids: Vec<String> = match only {
                Some(s) => s.split(',').map(|x| x.trim().to_string()).collect(),
                None => verify::criteria().iter().map(|c| c.0.to_string()).collect(),
            };
            let mut all = true;
            for id in ids {
                let r = verify::run_criterion(&id)?;
                println!("{}", r.line());
                all &= r.passed;
            }
            Ok(all)
        }
        Command::Serve { addr } => {
            let addr = addr
                .or_else(|| std::env::var("SQBC_ADDR").ok())
                .unwrap_or_else(|| "127.0.0.1:8080".to_string());
            service::serve(&addr)?;
            Ok(true)
        }
        Command::List => {
            println!("experiments: {}", EXPERIMENTS.join(", "));
            let ids: Vec<&str> = verify::criteria().iter().map(|c| c.0).collect();
            println!("criteria: {}", ids.join(", "));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
