use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use signed_particles::engine::EpochReport;
use signed_particles::experiment::{self, Experiment, PRESETS};
use signed_particles::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "sigwig", version, about = "Signed-particle Wigner Monte Carlo experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run presets or configuration files; each writes into OUT/<name>/.
    Run {
        /// Preset names or TOML configuration paths.
        #[arg(required = true)]
        targets: Vec<String>,
        #[arg(long, env = "SIGWIG_OUT", default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; all available cores by default.
        #[arg(long)]
        threads: Option<usize>,
        /// Target ensemble size at seeding.
        #[arg(long)]
        particles: Option<usize>,
        /// Run all targets at the same time instead of one after another.
        #[arg(long)]
        concurrent: bool,
        /// Suppress the per-epoch progress lines.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Check a configuration file and list every violated constraint.
    Validate { config: PathBuf },
    /// Print the built-in presets.
    ListPresets,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { targets, out, seed, threads, particles, concurrent, quiet } => {
            let mut experiments = Vec::new();
            for t in &targets {
                match experiment::load(t) {
                    Ok(mut exp) => {
                        if let Some(s) = seed {
                            exp.sim.seed = s;
                        }
                        if let Some(n) = particles {
                            exp.particles = n;
                        }
                        experiments.push(exp);
                    }
                    Err(e) => return fail(&e),
                }
            }
            let mut names: Vec<&str> = experiments.iter().map(|e| e.name.as_str()).collect();
            names.sort_unstable();
            if names.windows(2).any(|w| w[0] == w[1]) {
                eprintln!("error: experiment names in one batch must be unique");
                return ExitCode::from(EXIT_CONFIG);
            }
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: cannot start worker pool: {e}");
                    return ExitCode::from(EXIT_RUNTIME);
                }
            };
            let results: Vec<Result<(), Error>> = pool.install(|| {
                if concurrent {
                    std::thread::scope(|s| {
                        let handles: Vec<_> = experiments
                            .iter()
                            .map(|exp| s.spawn(|| pool.install(|| run_one(exp, &out, quiet))))
                            .collect();
                        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
                    })
                } else {
                    experiments.iter().map(|exp| run_one(exp, &out, quiet)).collect()
                }
            });
            let mut code = ExitCode::SUCCESS;
            for r in results {
                if let Err(e) = r {
                    code = fail(&e);
                }
            }
            code
        }
        Command::Validate { config } => match experiment::validate_config(&config) {
            Ok(problems) if problems.is_empty() => {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            }
            Ok(problems) => {
                for p in &problems {
                    println!("{}: {p}", config.display());
                }
                ExitCode::from(EXIT_CONFIG)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::ListPresets => {
            for name in PRESETS {
                let exp = Experiment::preset(name).expect("listed preset exists");
                let d = exp.sim.dissipation;
                let noise = if d.is_identity() {
                    "none".to_string()
                } else {
                    format!("r_prob={} r_pct={}", d.r_prob, d.r_pct)
                };
                let sigmas = match exp.initial {
                    experiment::InitialSpec::Entangled { params, sigma_ent_p_steps, .. } => {
                        format!("sigma_ent_x={} sigma_ent_p={}dp", params.sigma_ent_x, sigma_ent_p_steps)
                    }
                    experiment::InitialSpec::TwoPacket(_) => "two_packet".into(),
                };
                let times: Vec<String> = exp.snapshot_times.iter().map(f64::to_string).collect();
                println!("{name:<16} {noise:<24} {sigmas:<32} snapshots={}", times.join(","));
            }
            ExitCode::SUCCESS
        }
    }
}

fn run_one(exp: &Experiment, out: &Path, quiet: bool) -> Result<(), Error> {
    let dir = out.join(&exp.name);
    let mut progress = |r: &EpochReport| {
        if !quiet {
            eprintln!(
                "[{}] t={:.3} particles={} created={} annihilated={} removed={} hits={} wall={:.0}ms",
                exp.name,
                r.t,
                r.particles_after,
                r.created_pairs,
                r.annihilated_pairs,
                r.removed,
                r.dissipation_hits,
                r.wall_time_ms
            );
        }
    };
    let summary = experiment::run_experiment(exp, &dir, &mut progress)?;
    println!(
        "{}: nu0={:.4} nu_final={:.4} snapshots={} -> {}",
        exp.name,
        summary.report.nu0,
        summary.metrics.last().map_or(f64::NAN, |m| m.nu),
        summary.snapshots.len(),
        dir.display()
    );
    Ok(())
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) | Error::Format { what: "configuration", .. } => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::from(EXIT_RUNTIME),
    }
}
