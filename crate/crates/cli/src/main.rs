use anyhow::{bail, Context, Result};
use nalgebra::Vector3;
use clap::{Parser, Subcommand};
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use delta_core::allocation::{build_allocation, FrameTag};
use delta_core::config::Config;
use delta_core::design::{facets_csv, feasible_torque_hull, optimize_tilt, torque_generators, vertices_csv};
use delta_core::math::rot_x;
use delta_core::model::{contact_point, forward_kinematics_at_cog, JointState};
use delta_core::sim::log::{gnuplot_script, read_csv, write_csv};
use delta_core::sim::{compute_metrics, run_scenario, MetricsWindow, Scenario};

#[derive(Parser)]
#[command(name = "delta", version, about = "Design, control and simulation workbench for a three-link thrust-vectoring multirotor")]
struct Cli {
    /// TOML configuration; defaults to the built-in prototype.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimise the fixed rotor tilts and export the feasible torque hull.
    Design {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "design-out")]
        out: PathBuf,
    },
    /// Run a built-in or TOML scenario in closed loop.
    Simulate {
        /// Built-in name (hover-transform, standup, disturbance, roll) or a TOML file.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "sim-out")]
        out: PathBuf,
    },
    /// Recompute metrics from a log.csv over a time window.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        start: f64,
        #[arg(long)]
        end: f64,
    },
    /// Dump the allocation matrix for a joint configuration as CSV.
    Allocation {
        #[arg(long, default_value_t = 2.0 * std::f64::consts::PI / 3.0)]
        q1: f64,
        #[arg(long, default_value_t = 2.0 * std::f64::consts::PI / 3.0)]
        q2: f64,
        /// Moments about the ground contact point instead of the CoG.
        #[arg(long)]
        contact: bool,
    },
    /// Model utilities.
    Model {
        #[command(subcommand)]
        action: ModelAction,
    },
    /// Print a built-in scenario as TOML, as a starting point for custom ones.
    Scenario { name: String },
}

#[derive(Subcommand)]
enum ModelAction {
    /// Write the default configuration.
    Init {
        #[arg(long, default_value = "delta.toml")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    let model = config.robot()?;
    match cli.command {
        Command::Design { seed, out } => {
            let mut settings = config.design;
            if let Some(s) = seed {
                settings.optimizer.seed = s;
            }
            let result = optimize_tilt(&model, &settings)?;
            fs::create_dir_all(&out)?;
            let tilted = model.clone().with_tilts(result.theta);
            let hull = feasible_torque_hull(&torque_generators(&tilted)?, model.thrust_max)?;
            write(&out.join("design.json"), &serde_json::to_string_pretty(&result)?)?;
            write(&out.join("facets.csv"), &facets_csv(&hull))?;
            write(&out.join("vertices.csv"), &vertices_csv(&hull))?;
            println!(
                "theta = [{:.4}, {:.4}, {:.4}] rad, tau_min = {:.4} N m (untilted {:.4}), {} evaluations",
                result.theta[0], result.theta[1], result.theta[2], result.tau_min, result.tau_min_untilted, result.evaluations
            );
        }
        Command::Simulate { scenario, seed, out } => {
            let mut sc = if Path::new(&scenario).is_file() {
                Scenario::from_toml(&fs::read_to_string(&scenario)?)?
            } else {
                Scenario::builtin(&scenario)?
            };
            if let Some(s) = seed {
                sc.seed = s;
            }
            let run = run_scenario(&sc, &model, &config.control, &config.sim)?;
            fs::create_dir_all(&out)?;
            write(&out.join("log.csv"), &write_csv(&run.log))?;
            write(&out.join("plot.gp"), &gnuplot_script("log.csv", "plot.png"))?;
            if let Some(m) = &run.metrics {
                write(&out.join("metrics.json"), &serde_json::to_string_pretty(m)?)?;
                println!(
                    "{}: position RMS [{:.4}, {:.4}, {:.4}] m, orientation RMS [{:.4}, {:.4}, {:.4}] rad, speed {:.3} m/s",
                    sc.name,
                    m.position_rms[0],
                    m.position_rms[1],
                    m.position_rms[2],
                    m.orientation_rms[0],
                    m.orientation_rms[1],
                    m.orientation_rms[2],
                    m.mean_speed
                );
            }
            if let Some(e) = run.abort {
                bail!("run aborted after {} log rows: {e}", run.log.len());
            }
        }
        Command::Metrics { log, start, end } => {
            let rows = read_csv(&fs::read_to_string(&log)?)?;
            let m = compute_metrics(&rows, &MetricsWindow { start, end })?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Allocation { q1, q2, contact } => {
            // contact-point moments are taken in the vertical stance
            let attitude = if contact { rot_x(FRAC_PI_2) } else { rot_x(0.0) };
            let mut fs_ = forward_kinematics_at_cog(&model, &JointState::new(q1, q2), &attitude, &Vector3::zeros())?;
            let tag = if contact {
                fs_ = contact_point(&model, &fs_)?;
                FrameTag::ContactPoint
            } else {
                FrameTag::Cog
            };
            print!("{}", build_allocation(&fs_, &model, tag)?.to_csv());
        }
        Command::Model { action: ModelAction::Init { out, force } } => {
            if out.exists() && !force {
                bail!("{} exists; pass --force to overwrite", out.display());
            }
            write(&out, &Config::default().to_toml()?)?;
            println!("wrote {}", out.display());
        }
        Command::Scenario { name } => print!("{}", Scenario::builtin(&name)?.to_toml()?),
    }
    Ok(())
}
