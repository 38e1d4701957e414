//! Command-line surface of the fruit-counting pipeline:
//! simulate -> degrade -> track -> eval / report, plus the yield regressor.
//!
//! Exit codes: 0 success, 2 on input or usage errors, 1 on internal errors.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Internal(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(msg) => write!(f, "input error: {msg}"),
            CliError::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl From<orchard_core::io::IoFormatError> for CliError {
    fn from(e: orchard_core::io::IoFormatError) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "orchard", version, about = "Fruit counting by tracking in calibrated image sequences")]
struct Cli {
    /// Seed for all randomness. Falls back to ORCHARD_TRACK_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory (gt.txt, cameras.txt, images.txt, scene.json).
    Simulate {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Full scene config as JSON; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        spheres: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Randomly drop rows of a MOT16 file, emulating a detector with the
    /// given detection rate. Surviving rows are byte-identical to the input.
    Degrade {
        #[arg(long)]
        gt: PathBuf,
        /// Detection rate in [0, 1]; 1 copies the input.
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track detections against COLMAP camera poses; writes MOT16 rows of the
    /// counted tracks plus a JSON count summary.
    Track {
        /// MOT16 detection rows (ids ignored).
        #[arg(long)]
        dets: PathBuf,
        /// COLMAP cameras.txt.
        #[arg(long)]
        cameras: PathBuf,
        /// COLMAP images.txt.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Disable sphere-reprojection relocalization (ablation).
        #[arg(long)]
        no_relocalization: bool,
        /// Ray correction constant c.
        #[arg(long, default_value_t = 0.9)]
        ray_correction: f64,
        #[arg(long, default_value_t = 8.0)]
        max_geom_error: f64,
        #[arg(long, default_value_t = 0.5)]
        inliers_ratio: f64,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long, default_value_t = 5)]
        min_track_len: usize,
        /// Minimum IoU for a relocalization match.
        #[arg(long, default_value_t = 0.0)]
        reloc_min_iou: f64,
        /// Regex capturing the frame index in image-name stems.
        #[arg(long)]
        frame_pattern: Option<String>,
        /// Keep every n-th frame (re-indexed) before tracking.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Score predictions against ground truth: HOTA family, MOTA, counting.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out_json: Option<PathBuf>,
        #[arg(long)]
        out_csv: Option<PathBuf>,
        /// Ground-truth rows at or below this visibility are excluded.
        #[arg(long, default_value_t = 0.5)]
        min_visibility: f64,
    },
    /// Batch evaluation over several sequences; one CSV row per sequence
    /// plus an "All" aggregate computed over the pooled boxes.
    Report {
        /// Repeatable sequence spec NAME=PRED_PATH,GT_PATH.
        #[arg(long = "seq", value_name = "NAME=PRED,GT")]
        seqs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        min_visibility: f64,
    },
    /// Train and evaluate the yield regressor on a tree-record CSV.
    Regress {
        #[arg(long)]
        records: PathBuf,
        /// Minimum (CbyT-A + CbyT-B) / (F1 + F2 + F3) for a record to enter.
        #[arg(long, default_value_t = 0.0)]
        ratio_threshold: f64,
        /// Hidden layer widths, comma separated; empty string for linear.
        #[arg(long, default_value = "16,16")]
        hidden: String,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        /// Held-out fraction for the train/test split.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        /// Also cross-validate the architectures in this semicolon-separated
        /// grid (e.g. "16,16;8;24") with paired t-tests.
        #[arg(long)]
        cv_grid: Option<String>,
        #[arg(long)]
        out_metrics: Option<PathBuf>,
        #[arg(long)]
        out_predictions: Option<PathBuf>,
    },
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| std::env::var("ORCHARD_TRACK_SEED").ok().and_then(|s| s.parse().ok()))
        .unwrap_or(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = resolve_seed(cli.seed);
    let result = match cli.command {
        Command::Simulate { out, config, spheres, frames } => {
            commands::simulate(&out, config.as_deref(), spheres, frames, cli.seed, seed)
        }
        Command::Degrade { gt, rate, out } => commands::degrade(&gt, rate, &out, seed),
        Command::Track {
            dets,
            cameras,
            images,
            out,
            summary,
            no_relocalization,
            ray_correction,
            max_geom_error,
            inliers_ratio,
            max_iters,
            min_track_len,
            reloc_min_iou,
            frame_pattern,
            stride,
        } => commands::track(commands::TrackArgs {
            dets,
            cameras,
            images,
            out,
            summary,
            relocalization: !no_relocalization,
            ray_correction,
            max_geom_error,
            inliers_ratio,
            max_iters,
            min_track_len,
            reloc_min_iou,
            frame_pattern,
            stride,
        }),
        Command::Eval { pred, gt, out_json, out_csv, min_visibility } => {
            commands::eval(&pred, &gt, out_json.as_deref(), out_csv.as_deref(), min_visibility)
        }
        Command::Report { seqs, out, min_visibility } => commands::report(&seqs, &out, min_visibility),
        Command::Regress {
            records,
            ratio_threshold,
            hidden,
            epochs,
            lr,
            momentum,
            batch,
            test_fraction,
            cv_grid,
            out_metrics,
            out_predictions,
        } => commands::regress(commands::RegressArgs {
            records,
            ratio_threshold,
            hidden,
            epochs,
            lr,
            momentum,
            batch,
            test_fraction,
            cv_grid,
            out_metrics,
            out_predictions,
            seed,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Input(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Internal(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
