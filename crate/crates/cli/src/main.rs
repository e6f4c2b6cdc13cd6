//! Command-line pipeline driver.
//!
//! Every subcommand writes its outputs into a run directory together with
//! the fully resolved configuration (`config.txt`), so any run can be
//! replayed exactly. No subcommand mutates a previous stage's artifacts.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "pushplan",
    about = "Novelty-guarded model-predictive planning on 2D pusher scenes",
    version
)]
pub struct Cli {
    /// Config file with key=value lines; CLI flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Extra config overrides, e.g. --set plan.w=0.5 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Worker threads for planning/evaluation (0 = one per CPU).
    /// Changes wall-clock only, never results.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Run directory (default: runs/<command>-<timestamp>-s<seed>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Generate a random-policy dataset.
    GenData {
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// uniform | gapped
        #[arg(long)]
        policy: Option<String>,
    },
    /// Train the frozen observation encoder/decoder on a dataset.
    TrainEncoder {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the latent transition model.
    TrainDynamics {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        world: PathBuf,
    },
    /// Train the VAE novelty detector on training latents.
    TrainVae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        world: PathBuf,
    },
    /// Plan one trajectory for a seeded scene and dump diagnostics.
    Plan {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        dynamics: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        scene_seed: u64,
    },
    /// Run the MPC evaluation over the configured weight grid and scenes.
    Eval {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        dynamics: PathBuf,
        #[arg(long)]
        vae: PathBuf,
    },
    /// Weight sweep: eval with an explicit weight grid.
    Sweep {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        dynamics: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        /// Comma-separated novelty weights, e.g. 0,0.125,0.25,0.375,0.5
        #[arg(long)]
        weights: String,
    },
    /// Score held-out vs gap-region latents and report the separation.
    OodReport {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        vae: PathBuf,
    },
    /// Render an actual-vs-predicted rollout strip for one episode.
    Strip {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        dynamics: PathBuf,
        #[arg(long)]
        episode: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
