use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nfrlab::runner::{run, threads_from_env, RunConfig, Subcommand};

#[derive(Parser)]
#[command(name = "nfrlab", version, about = "Attribution alignment experiments on bias-free ReLU networks")]
struct Cli {
    /// attribute | cascade | theorem1 | theorem2 | sanity | split | geometry | kis | nfr-check
    subcommand: String,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        let sub = Subcommand::parse(&cli.subcommand)?;
        let cfg = RunConfig::load(&cli.config)?;
        let out = cli.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("nfrlab-out"));
        let seed = cli.seed.or(cfg.seed).unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads_from_env())
            .build_global()
            .map_err(|e| nfrlab::NfrError::config("NFRLAB_THREADS", e.to_string()))?;
        run(sub, &cfg, &out, seed)
    })();
    match result {
        Ok(outcome) if outcome.sample_errors > 0 => {
            eprintln!("nfrlab: {} sample(s) failed; see the CSV error columns", outcome.sample_errors);
            ExitCode::from(2)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nfrlab: error: {e}");
            ExitCode::FAILURE
        }
    }
}
