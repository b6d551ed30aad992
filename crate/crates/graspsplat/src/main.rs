use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use graspsplat::commands::{self, FitPoseArgs, GraspArgs, TrainHandArgs, TrainObjectArgs};
use graspsplat::Error;
use graspsplat_core::synthetic::SceneKind;

#[derive(Parser)]
#[command(name = "graspsplat", version, about = "Articulated Gaussian hands, objects and contact maps")]
struct Cli {
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, env = "GRASPSPLAT_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a canonical hand cloud to posed multi-view images.
    TrainHand {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        skeleton: PathBuf,
        /// Skinning grid file; built from the skeleton when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a static object cloud to masked multi-view images.
    TrainObject {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Triangulate keypoints, fit poses and smooth them.
    FitPose {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        skeleton: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compose hand and object over a pose sequence and track contact.
    Grasp {
        #[arg(long)]
        hand: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        skeleton: PathBuf,
        #[arg(long)]
        object: PathBuf,
        /// Pose sequence file.
        #[arg(long)]
        poses: PathBuf,
        /// Contact threshold in meters [default: config, else 0.004].
        #[arg(long)]
        tau: Option<f64>,
        /// Camera to render; repeatable.
        #[arg(long = "camera")]
        cameras: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted contact masks against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic fixture: two-bone-finger, textured-sphere or grasp-toy.
    MakeScene {
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Failed(format!("thread pool: {e}")))?;
    match cli.command {
        Command::TrainHand { manifest, skeleton, grid, config, out, seed } => commands::train_hand(&TrainHandArgs {
            manifest: &manifest,
            skeleton: &skeleton,
            grid: grid.as_deref(),
            config: config.as_deref(),
            out: &out,
            seed,
        }),
        Command::TrainObject { manifest, config, out, seed } => {
            commands::train_object(&TrainObjectArgs { manifest: &manifest, config: config.as_deref(), out: &out, seed })
        }
        Command::FitPose { manifest, skeleton, config, out } => commands::fit_pose(&FitPoseArgs {
            manifest: &manifest,
            skeleton: &skeleton,
            config: config.as_deref(),
            out: &out,
        }),
        Command::Grasp { hand, grid, skeleton, object, poses, tau, cameras, config, out } => {
            commands::grasp(&GraspArgs {
                hand: &hand,
                grid: &grid,
                skeleton: &skeleton,
                object: &object,
                poses: &poses,
                tau,
                cameras: &cameras,
                config: config.as_deref(),
                out: &out,
            })
        }
        Command::Evaluate { pred, truth, out } => commands::evaluate(&pred, &truth, &out),
        Command::MakeScene { kind, views, resolution, seed, out } => {
            commands::make_scene(SceneKind::parse(&kind)?, views, resolution, seed, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                log::debug!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
