use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmbqc::run::{classify_report, parse_target, run_scenario, verify_report, RunReport};
use dmbqc::scenario::{builtin, resolve_scenario, BUILTIN_NAMES};
use dmbqc::symplectic::DEFAULT_TRIVIAL_TOL;
use dmbqc::{Error, Result};

/// Synthesis of Gaussian operations by direct measurement-based computation.
#[derive(Parser)]
#[command(name = "dmbqc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize LO phases and post-processing for a scenario.
    Synth {
        /// Built-in scenario name or path to a scenario file.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        generations: Option<usize>,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        /// Weight of the excess noise added to f1.
        #[arg(long)]
        noise_weight: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decide whether a target needs squeezed ancillas.
    Classify {
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TRIVIAL_TOL)]
        tol: f64,
    },
    /// Recompute a report's claims and cross-check them by sampling.
    Verify {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the built-in scenario names.
    ListBuiltins,
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("DMBQC_THREADS") {
        let threads: usize = value
            .parse()
            .map_err(|_| Error::Validation(format!("DMBQC_THREADS must be an integer, got {value:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Validation(e.to_string()))?;
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn run(cli: Cli) -> Result<ExitCode> {
    configure_threads()?;
    match cli.command {
        Command::Synth {
            scenario,
            seed,
            generations,
            population,
            restarts,
            noise_weight,
            out,
        } => {
            let mut problem = resolve_scenario(&scenario)?;
            let mut config = problem.optimizer.clone();
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(g) = generations {
                config.generations = g;
            }
            if let Some(p) = population {
                config.population = p;
            }
            if let Some(w) = noise_weight {
                config.noise_weight = w;
            }
            let restarts = restarts.unwrap_or(problem.restarts);
            config.validate().map_err(|e| Error::Validation(e.to_string()))?;
            problem = problem.with_optimizer(config, restarts)?;
            let report = run_scenario(&problem)?;
            std::fs::write(&out, to_json(&report) + "\n")?;
            println!("scenario  {}", problem.name);
            println!("digest    {}", report.problem_digest);
            println!("seed      {}", report.seed);
            for (label, value) in [("f1", report.f1), ("f2", report.f2), ("f3", report.f3)] {
                if let Some(v) = value {
                    println!("{label:<9} {v:.6e}");
                }
            }
            if let Some(rows) = &report.nullifiers {
                for r in rows {
                    println!(
                        "node {}    {:.4} (SN {}) relative {:.4}",
                        r.node, r.absolute, r.shot_noise, r.relative
                    );
                }
            }
            println!("report    {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Classify { target, tol } => {
            let text = std::fs::read_to_string(&target)?;
            let s = parse_target(&text)?;
            println!("{}", to_json(&classify_report(&s, tol)?));
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            report,
            samples,
            seed,
        } => {
            let text = std::fs::read_to_string(&report)?;
            let mut de = serde_json::Deserializer::from_str(&text);
            let parsed: RunReport = serde_path_to_error::deserialize(&mut de).map_err(|e| {
                let path = e.path().to_string();
                let inner = e.into_inner();
                Error::Parse {
                    location: format!(
                        "line {} column {} (field `{path}`)",
                        inner.line(),
                        inner.column()
                    ),
                    message: inner.to_string(),
                }
            })?;
            let v = verify_report(&parsed, samples, seed)?;
            println!("{}", to_json(&v));
            if !(v.digest_matches && v.fitness_reproduced) {
                return Ok(ExitCode::from(2));
            }
            if !v.passed() {
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ListBuiltins => {
            for name in BUILTIN_NAMES {
                let file = builtin(name).expect("listed builtin exists");
                println!("{name:<16} {}", file.description.unwrap_or_default());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
