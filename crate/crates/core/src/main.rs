use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use ioc_eiv::bench::{run_bench, run_method, BenchConfig, Method};
use ioc_eiv::demos::DemoSet;
use ioc_eiv::model::kkt_residual;
use ioc_eiv::{forward, io, Result};

#[derive(Parser)]
#[command(name = "ioc-eiv", version, about = "Inverse optimal control from noisy demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward problem at theta_true.
    Forward {
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Generate D noisy demonstrations.
    Demos {
        config: PathBuf,
        /// Noise level in percent of the mean optimal input.
        #[arg(long)]
        level: f64,
        #[arg(long)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run one estimator on a demonstration file.
    Estimate {
        config: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        demos: PathBuf,
        /// Seed for the MAP's Gibbs chain; defaults to the master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Every method at every level and repetition.
    Bench {
        config: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => io::write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Forward { config, out } => {
            let cfg = BenchConfig::load(&config)?;
            let fp = &cfg.problem;
            let theta = fp
                .theta_true
                .clone()
                .ok_or_else(|| ioc_eiv::Error::Invalid("the problem has no theta_true".into()))?;
            let sol = forward::solve(fp, &theta)?;
            let [st, co, pr, du] = kkt_residual(fp, &theta, &sol.lambda, &sol.u)?.block_norms();
            eprintln!("stationarity {st:.3e}\ncomplementarity {co:.3e}\nprimal {pr:.3e}\ndual {du:.3e}");
            emit(
                &serde_json::json!({
                    "u": sol.u.as_slice(),
                    "lambda": sol.lambda.as_slice(),
                    "active_set": sol.active_set,
                    "objective": sol.objective,
                    "kkt_residual": [st, co, pr, du],
                }),
                out.as_deref(),
            )?;
        }
        Command::Demos {
            config,
            level,
            seed,
            out,
        } => {
            let cfg = BenchConfig::load(&config)?;
            let ds = cfg.demos_at(&cfg.u_star()?, level, seed)?;
            emit(&ds, out.as_deref())?;
        }
        Command::Estimate {
            config,
            method,
            demos,
            seed,
            out,
        } => {
            let cfg = BenchConfig::load(&config)?;
            let ds: DemoSet = io::read_json(&demos)?;
            ds.validate_for(&cfg.problem)?;
            let seed = match seed {
                Some(s) => s,
                None => cfg.master_seed()?,
            };
            emit(&run_method(&cfg, method, &ds, seed)?, out.as_deref())?;
        }
        Command::Bench { config, jobs, output } => {
            let cfg = BenchConfig::load(&config)?;
            let report = run_bench(&cfg, cfg.master_seed()?, jobs)?;
            let dir = output.unwrap_or_else(|| cfg.output.clone());
            report.write(&dir)?;
            println!(
                "{:<6} {:>6} {:>10} {:>10} {:>10} {:>10} {:>4}",
                "method", "level", "theta", "theta_sd", "U", "U_sd", "ok"
            );
            for s in &report.summary {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                println!(
                    "{:<6} {:>5}% {:>10} {:>10} {:>10} {:>10} {:>4}",
                    s.method.name(),
                    s.level,
                    f(s.rmse_theta_mean),
                    f(s.rmse_theta_std),
                    f(s.rmse_u_mean),
                    f(s.rmse_u_std),
                    s.n_ok
                );
            }
            if !report.all_cells_ok() {
                eprintln!("error: some method/level cells have no successful repetition");
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
