//! End-to-end stages: synthetic data, split, patch store, training,
//! evaluation, baselines, robustness and the consolidated report.

mod config;
mod manifest;
mod stages;
mod synthetic;

pub use config::{ConfigOverrides, RunConfig, DEFAULT_PATCHES_PER_IMAGE, SEED_ENV};
pub use manifest::{split_dataset, split_sizes, DatasetManifest, ManifestEntry, Split};
pub use stages::{
    load_patches, run_baselines, run_eval, run_report, run_robustness_stage, run_sample, run_train, Layout,
    SampleSummary, TrainSummary, TrainedNet, CONFIG_ECHO,
};
pub use synthetic::{make_synthetic, synthetic_image, SYNTHETIC_PER_CLASS, SYNTHETIC_SEED, SYNTHETIC_SIDE};

/// Size the global worker pool; `None` keeps one worker per logical core.
/// Only the first call in a process has an effect.
pub fn configure_workers(workers: Option<usize>) {
    if let Some(n) = workers {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("worker pool already initialised; ignoring worker count {n}");
        }
    }
}
