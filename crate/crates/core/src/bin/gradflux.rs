use std::env;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use gradflux_core::flux::{split_flux_pair_spec, FluxPair};
use gradflux_core::riemann::{solve_riemann, solve_riemann_on_grid, WaveFan, WaveKind};
use gradflux_core::runner::{check_run_dir, parse_config, run_scenario};

#[derive(Parser)]
#[command(name = "gradflux", version, about = "Conservation laws with a flux switched by the sign of u_x")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run {
        config: PathBuf,
        /// Worker threads for independent solver runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output root; the run goes into <root>/<scenario>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a single Riemann problem and print its wave fan.
    Riemann {
        #[arg(long, allow_hyphen_values = true)]
        ul: f64,
        #[arg(long, allow_hyphen_values = true)]
        ur: f64,
        /// Flux pair `f,g`, e.g. `burgers,burgers_plus_1`.
        #[arg(long, default_value = "burgers,burgers_plus_1")]
        flux: String,
        /// Height of the steps a rarefaction is cut into.
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        /// Solve against the piecewise-linear interpolant on the value grid k*h.
        #[arg(long)]
        h: Option<f64>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Re-run the diagnostics on the artifacts of a finished run.
    Check { run_dir: PathBuf },
}

fn output_root(cli_out: Option<PathBuf>, cfg_out: Option<PathBuf>) -> PathBuf {
    cli_out
        .or(cfg_out)
        .or_else(|| env::var_os("GRADFLUX_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn kind_name(k: WaveKind) -> &'static str {
    match k {
        WaveKind::Shock => "shock",
        WaveKind::RarefactionStep => "rarefaction",
    }
}

fn fan_table(fan: &WaveFan) -> String {
    let mut out = format!("flux used: {}\n{:>16} {:>16} {:>16}  kind\n", fan.flux_used, "speed", "u_before", "u_after");
    for w in &fan.waves {
        out.push_str(&format!("{:>16.10} {:>16.10} {:>16.10}  {}\n", w.speed + 0.0, w.u_before, w.u_after, kind_name(w.kind)));
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, jobs, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = parse_config(&text).with_context(|| format!("in {}", config.display()))?;
            let dir = output_root(out, cfg.out.clone()).join(&cfg.scenario);
            let summary = run_scenario(&cfg, &dir, jobs)?;
            print!("{}", summary.text());
            println!("artifacts written to {}", dir.display());
        }
        Command::Riemann { ul, ur, flux, step, h, json } => {
            let (f, g) = split_flux_pair_spec(&flux)?;
            let (lo, hi) = (ul.min(ur), ul.max(ur));
            let fp = FluxPair::from_specs(&f, &g, lo - 1.0, hi + 1.0, 2000)?;
            let fan = match h {
                Some(h) => solve_riemann_on_grid(ul, ur, &fp, h)?,
                None => solve_riemann(ul, ur, &fp, step)?,
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&fan)?);
            } else {
                print!("{}", fan_table(&fan));
            }
        }
        Command::Check { run_dir } => {
            let summary = check_run_dir(&run_dir)?;
            print!("{}", summary.text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
