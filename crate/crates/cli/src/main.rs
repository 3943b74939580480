use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qttbs::bench::{self, Overrides};
use qttbs::config::RunConfig;
use qttbs::run;
use qttbs::CliError;

#[derive(Parser)]
#[command(name = "qttbs", version, about = "Multi-asset Black-Scholes pricing on quantized tensor trains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the sampled parts of the cross approximation.
    #[arg(long)]
    seed: Option<u64>,
    /// Bench rows run concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Build the price surface, report prices at the configured spots.
    Price(Common),
    /// Delta and Gamma from the cached (or freshly built) surface.
    Greeks(Common),
    /// Run a benchmark suite.
    Bench(Common),
    /// Interpolate prices at `query.spots` from the cached surface.
    Query(Common),
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Price(c) | Command::Greeks(c) | Command::Query(c) if c.parallel == 0 => {
            Err(CliError::Validation("--parallel must be >= 1".into()))
        }
        Command::Price(c) => {
            let job = run::resolve(&RunConfig::from_path(&c.config)?, c.out.as_deref(), c.seed, false)?;
            run::price(&job).map(|_| ())
        }
        Command::Greeks(c) => {
            let job = run::resolve(&RunConfig::from_path(&c.config)?, c.out.as_deref(), c.seed, true)?;
            run::greeks_cmd(&job).map(|_| ())
        }
        Command::Query(c) => {
            let job = run::resolve(&RunConfig::from_path(&c.config)?, c.out.as_deref(), c.seed, true)?;
            run::query(&job).map(|_| ())
        }
        Command::Bench(c) => {
            if c.parallel == 0 {
                return Err(CliError::Validation("--parallel must be >= 1".into()));
            }
            let cfg = RunConfig::from_path(&c.config)?;
            let b = cfg.bench.clone().ok_or_else(|| CliError::Validation("bench: missing".into()))?;
            let o = Overrides {
                pricing: cfg.pricing,
                cross: cfg.cross,
                seed: c.seed.or(cfg.seed),
            };
            let recs = bench::run_suite(&b.suite, b.rows.as_deref(), b.smoke, c.parallel, &o)?;
            let text = bench::write_csv(&cfg.out_dir(c.out.as_deref()), &b.suite, &recs)?;
            print!("{}", text);
            let failed = recs.iter().filter(|r| !r.passed()).count();
            if failed > 0 {
                eprintln!("{} of {} bench values outside their bounds", failed, recs.len());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
