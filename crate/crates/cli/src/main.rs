//! Command-line front end: run a configured scenario, compare the map-only
//! estimator against the filter, or dump traced paths for a single
//! transmitter/receiver pair.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mapat::geom::Point2;
use mapat::map::MapModel;
use mapat::raytrace::{trace_paths, TraceConfig};
use mapat::runner::{baseline_from_outcome, emit_outputs, run_scenario};
use mapat::scenario::ScenarioConfig;

#[derive(Parser)]
#[command(
    name = "mapat",
    about = "Map-assisted positioning and tracking simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte-Carlo scenario and write trajectory/summary/CDF files.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory for trajectory.csv, summary.json, cdf.csv.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare map-only and filtered accuracy on steps with a map fix.
    Baseline {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Trace propagation paths between one transmitter and one receiver.
    Trace {
        /// Map file (JSON).
        #[arg(long)]
        map: PathBuf,
        /// Base station position as "x,y" in meters.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        bs: Point2,
        /// User position as "x,y" in meters.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        ue: Point2,
        /// Maximum reflections per path.
        #[arg(long, default_value_t = 2)]
        max_reflections: usize,
        /// Maximum wall penetrations per path.
        #[arg(long, default_value_t = 1)]
        max_transmissions: usize,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Override the number of Monte-Carlo runs.
    #[arg(long)]
    seeds: Option<usize>,
    /// Override the time-of-flight noise, in nanoseconds.
    #[arg(long)]
    sigma_tof_ns: Option<f64>,
    /// Override the angle-of-arrival noise, in degrees.
    #[arg(long)]
    sigma_aoa_deg: Option<f64>,
    /// Override the candidate clustering radius, in meters.
    #[arg(long)]
    cluster_radius_m: Option<f64>,
}

impl ScenarioArgs {
    fn load(&self) -> mapat::Result<ScenarioConfig> {
        let mut config = ScenarioConfig::load_json(&self.scenario)?;
        if let Some(n) = self.seeds {
            config.monte_carlo_runs = n;
        }
        if let Some(ns) = self.sigma_tof_ns {
            config.noise.sigma_tof = ns * 1e-9;
        }
        if let Some(deg) = self.sigma_aoa_deg {
            config.noise.sigma_aoa = deg.to_radians();
        }
        if let Some(m) = self.cluster_radius_m {
            config.cluster_radius = m;
        }
        config.validate()?;
        Ok(config)
    }
}

/// Prints to stdout, treating a closed pipe (e.g. `mapat trace | head`) as
/// a request to stop rather than an error.
fn emit(text: &str) -> mapat::Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        other => Ok(other?),
    }
}

fn parse_point(s: &str) -> Result<Point2, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected \"x,y\", got {s:?}"));
    }
    let x: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|e| format!("bad x coordinate: {e}"))?;
    let y: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|e| format!("bad y coordinate: {e}"))?;
    Ok(Point2::new(x, y))
}

fn run(cli: Cli) -> mapat::Result<()> {
    match cli.command {
        Command::Run { scenario, out } => {
            let config = scenario.load()?;
            let outcome = run_scenario(&config)?;
            emit_outputs(&outcome, &out)?;
            emit(&serde_json::to_string_pretty(&outcome.summary)?)?;
        }
        Command::Baseline { scenario } => {
            let config = scenario.load()?;
            let outcome = run_scenario(&config)?;
            let comparison = baseline_from_outcome(&outcome)?;
            emit(&serde_json::to_string_pretty(&comparison)?)?;
        }
        Command::Trace {
            map,
            bs,
            ue,
            max_reflections,
            max_transmissions,
        } => {
            let map = MapModel::load_json(&map)?;
            let config = TraceConfig {
                max_reflections,
                max_transmissions,
                ..TraceConfig::default()
            };
            let paths = trace_paths(&map, bs, ue, &config)?;
            let dump: Vec<_> = paths
                .iter()
                .map(|p| {
                    json!({
                        "length_m": p.length,
                        "tof_s": p.tof,
                        "aoa_rad": p.aoa_at_bs,
                        "path_gain_db": p.path_gain_db,
                        "reflections": p.num_reflections(),
                        "transmissions": p.num_transmissions(),
                        "vertices": p.vertices().iter()
                            .map(|v| [v.x, v.y])
                            .collect::<Vec<_>>(),
                    })
                })
                .collect();
            emit(&serde_json::to_string_pretty(&dump)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
