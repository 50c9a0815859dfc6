use std::path::PathBuf;
use std::process::ExitCode;

use bbe_cli::{parse_config, run, CliError, Command, Flags};
use clap::Parser;

/// Collisional Bloch-Boltzmann kernels, generators and evolution.
#[derive(Parser)]
#[command(name = "bbe", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Neither read nor write the kernel cache.
    #[arg(long)]
    no_cache: bool,
    /// Seed for the verification suite and random initial states.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if let Some(n) = args.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool is configured once");
    }
    let result = parse_config(&args.config).map_err(CliError::from).and_then(|mut spec| {
        if let Some(dir) = &args.out {
            spec.output.cache_dir = if spec.output.cache_dir == spec.output.dir.join("cache") {
                dir.join("cache")
            } else {
                spec.output.cache_dir
            };
            spec.output.dir = dir.clone();
        }
        if let Some(seed) = args.seed {
            spec.override_seed(seed);
        }
        run(args.command, &spec, &Flags { no_cache: args.no_cache })
    });
    match result {
        Ok(outcome) => ExitCode::from(outcome.exit_code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
