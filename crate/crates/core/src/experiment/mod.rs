//! Configuration-driven experiments: phantoms, Monte Carlo runs, metrics and
//! image/table output.

pub mod config;
pub mod image_io;
pub mod metrics;
pub mod phantom;
pub mod runner;

pub use config::{parse_tau_list, ExperimentConfig, Illumination, ObjectSource, PhantomSpec, SingleArm};
pub use image_io::{load_image, read_readouts_csv, save_image, write_arm_csv, write_readouts_csv};
pub use metrics::{metrics, mse, snr_db, ssim, Metrics};
pub use phantom::{builtin_phantom, phantom_by_name, PhantomKind};
pub use runner::{
    arm_snrs, best_single_arm, run_and_write, run_experiment, ExperimentReport, Pipeline, SeedRow, Setup,
    SummaryRow,
};
