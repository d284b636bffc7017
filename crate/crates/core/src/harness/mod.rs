//! Datasets, reference schemes, SNR sweeps and experiment configuration.

mod baseline;
mod config;
mod data;
mod plot;
mod sweep;

pub use baseline::{
    baseline_no_precoder_fer, perfect_icsi_from, perfect_icsi_precoder, svd_spread_precoder,
    IcsiResult,
};
pub use config::{DataConfig, ExperimentConfig, LinkConfig, Scheme, SweepConfig};
pub use data::{derive_seed, gen_dataset, gen_heldout, read_pair, write_pair};
pub use plot::render_svg;
pub use sweep::{read_csv, run_sweep, write_csv, SweepRow, CSV_HEADER, MIN_ERRORS};
