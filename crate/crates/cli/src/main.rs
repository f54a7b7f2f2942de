use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "dynba", version, about = "Quadrotor trajectory reconstruction from multi-camera detections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PriorArg {
    None,
    Gs,
    Ss,
    Kf,
    Dm,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PlotKind {
    /// Mean RMSE per method over sweep cells, or a heatmap with `--method`.
    Sweep,
    /// Estimated against true throttle.
    Controls,
    /// Cumulative error curves from metrics documents.
    Curve,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene, detections and ground truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Triangulate an initial trajectory and assignment from detections.
    Triangulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = dynba::association::DEFAULT_RANSAC_ITERATIONS)]
        ransac_iterations: usize,
    },
    /// Bundle adjustment with a motion prior.
    Optimize {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long, value_enum, default_value_t = PriorArg::Dm)]
        prior: PriorArg,
        /// Keep only the detection chosen for each frame and camera.
        #[arg(long)]
        single_detection: bool,
        /// Assignment used by `--single-detection`; defaults to the closest
        /// candidates to the initial trajectory.
        #[arg(long)]
        assignment: Option<PathBuf>,
        /// Solver settings (TOML); flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an estimate with ground truth.
    Evaluate {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Estimated latent sequence; with `--gt-latent` and `--scene` adds
        /// control metrics.
        #[arg(long, requires_all = ["gt_latent", "scene"])]
        latent: Option<PathBuf>,
        #[arg(long)]
        gt_latent: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a method, noise or sensitivity sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sequential: bool,
    },
    /// Render results as SVG.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Inputs: a sweep results table, an estimated latent file or
        /// metrics documents depending on `--kind`.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// True latent file for `--kind controls`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Method shown as a heatmap for `--kind sweep`.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DYNBA_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out, seed } => commands::simulate(config.as_deref(), &out, seed),
        Command::Triangulate { scene, detections, out, seed, ransac_iterations } => {
            commands::triangulate(&scene, &detections, &out, seed, ransac_iterations)
        }
        Command::Optimize { scene, detections, init, prior, single_detection, assignment, config, lambda, iterations, sequential, out } => {
            commands::optimize(commands::OptimizeArgs {
                scene: &scene,
                detections: &detections,
                init: &init,
                prior,
                single_detection,
                assignment: assignment.as_deref(),
                config: config.as_deref(),
                lambda,
                iterations,
                sequential,
                out: &out,
            })
        }
        Command::Evaluate { estimate, ground_truth, latent, gt_latent, scene, out } => {
            commands::evaluate(&estimate, &ground_truth, latent.as_deref().zip(gt_latent.as_deref()).zip(scene.as_deref()), &out)
        }
        Command::Sweep { config, out, sequential } => commands::sweep(&config, &out, sequential),
        Command::Plot { kind, input, truth, method, out } => commands::plot(kind, &input, truth.as_deref(), method.as_deref(), &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
