mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use opinion_urn::experiment::{
    run_equilibria, run_estimate, run_ode, run_oracle, run_simulate, write_json, EstimateSpec, OdeSpec,
    SimulateSpec,
};
use opinion_urn::{Error, Result};

use config::{Params, Resolved};

/// Declared-opinion dynamics: simulation, estimation and mean-field tools.
///
/// Flags override values from `--config`, which override built-in defaults.
/// Set RUST_LOG (e.g. `RUST_LOG=debug`) for progress output on stderr.
#[derive(Parser, Debug)]
#[command(name = "opinion-urn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    params: Params,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run replicas, writing one trajectory CSV each plus summary.json.
    Simulate {
        /// Track every agent and write per-agent time-averages.
        #[arg(long)]
        per_agent: bool,
    },
    /// Estimator report (JSON) for trajectory files.
    Estimate {
        #[arg(required = true)]
        trajectories: Vec<PathBuf>,
        /// Per-agent means; defaults to the sibling `<name>_agents.csv`.
        #[arg(long)]
        agents: Option<PathBuf>,
        /// Fail unless individual opinions can be decoded.
        #[arg(long)]
        decode: bool,
    },
    /// Integrate the mean-field ODE; CSV with columns t,x,y,z.
    Ode {
        /// Initial point `x,y,z`; defaults to the quarters point.
        #[arg(long, value_delimiter = ',', num_args = 1)]
        start: Option<Vec<f64>>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Equilibria, residuals and predicted limits (JSON).
    Equilibria,
    /// Exact law of a tiny complete-graph instance (JSON).
    Oracle,
}

/// Writes to stdout; a closed pipe (e.g. `| head`) ends output quietly.
fn print(text: &str) -> Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    print(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn emit<T: Serialize>(value: &T, out_dir: Option<&Path>, name: &str) -> Result<()> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        write_json(&dir.join(name), value)?;
    }
    print_json(value)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = Resolved::load(cli.params)?;
    let out_dir = cfg.out_dir();
    match cli.command {
        Command::Simulate { per_agent } => {
            let spec = SimulateSpec {
                model: cfg.model()?,
                record_every: cfg.record_every(),
                out_dir: out_dir.unwrap_or_else(|| PathBuf::from("out")),
                per_agent: per_agent || cfg.file.per_agent.unwrap_or(false),
                epsilon: cfg.epsilon(),
                delta: cfg.delta(),
            };
            log::info!(
                "simulating {} replica(s) into {}",
                spec.model.replicas,
                spec.out_dir.display()
            );
            let summary = run_simulate(&spec)?;
            print_json(&summary.pooled)
        }
        Command::Estimate {
            trajectories,
            agents,
            decode,
        } => {
            if agents.is_some() && trajectories.len() > 1 {
                return Err(Error::InvalidConfig("--agents needs a single trajectory".into()));
            }
            let reports = trajectories
                .into_iter()
                .map(|trajectory| {
                    run_estimate(&EstimateSpec {
                        trajectory,
                        gamma: cfg.gamma(),
                        agents: agents.clone(),
                        decode,
                        epsilon: cfg.epsilon(),
                        delta: cfg.delta(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if let [report] = reports.as_slice() {
                emit(report, out_dir.as_deref(), "estimate.json")
            } else {
                emit(&reports, out_dir.as_deref(), "estimate.json")
            }
        }
        Command::Ode { start, t_end, h } => {
            let start = start.or_else(|| cfg.file.start.map(Vec::from)).unwrap_or(vec![0.25; 3]);
            if start.len() != 3 {
                return Err(Error::InvalidConfig(format!("--start needs x,y,z, got {start:?}")));
            }
            let spec = OdeSpec {
                gamma: cfg.require_gamma()?,
                phi: cfg.require_phi()?,
                start: [start[0], start[1], start[2]],
                t_end: t_end.or(cfg.file.t_end).unwrap_or(50.0),
                h: h.or(cfg.file.h).unwrap_or(0.01),
            };
            match out_dir {
                Some(dir) => {
                    fs::create_dir_all(&dir).map_err(|e| Error::Io {
                        path: dir.clone(),
                        source: e,
                    })?;
                    let path = dir.join("ode.csv");
                    let states = run_ode(&spec, Some(&path))?;
                    log::info!("{} points written to {}", states.len(), path.display());
                }
                None => {
                    let states = run_ode(&spec, None)?;
                    let mut text = String::from("t,x,y,z\n");
                    for s in states {
                        text.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e}\n", s.t, s.x, s.y, s.z));
                    }
                    print(&text)?;
                }
            }
            Ok(())
        }
        Command::Equilibria => {
            let report = run_equilibria(cfg.require_gamma()?, cfg.require_phi()?)?;
            emit(&report, out_dir.as_deref(), "equilibria.json")
        }
        Command::Oracle => {
            let n = cfg
                .n_agents()
                .ok_or_else(|| Error::InvalidConfig("--n-agents is required".into()))?;
            let steps = cfg
                .steps()
                .ok_or_else(|| Error::InvalidConfig("--steps is required".into()))?;
            let report = run_oracle(n as u64, cfg.require_gamma()?, cfg.require_phi()?, steps as usize)?;
            emit(&report, out_dir.as_deref(), "oracle.json")
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
