//! Link-level OTFS simulation with predictive precoding.
//!
//! Modules, bottom-up:
//!
//! * [`otfs`] and [`constellation`]: grid, unitary DD/TF/time transforms, Gray QAM.
//! * [`channel`]: path-based delay-Doppler channels and their evolution.
//! * [`link`]: precoding, MMSE/ZF equalization, closed-form SINR/SER/FER and
//!   a Monte Carlo FER estimator.
//! * [`net`]: the convolutional-LSTM precoder network, its gradients and training.
//! * [`harness`]: datasets, baselines, SNR sweeps and experiment configuration.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the CLI uses.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channel;
pub mod constellation;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod link;
pub mod net;
pub mod otfs;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Real, C};

pub type Complex64 = C<f64>;
pub type CMatrix64 = linalg::CMatrix<f64>;
pub type CMatrix32 = linalg::CMatrix<f32>;
pub type DdChannel64 = channel::DdChannel<f64>;
pub type PathSet64 = channel::PathSet<f64>;
pub type Constellation64 = constellation::Constellation<f64>;
pub type NetworkParams64 = net::NetworkParams<f64>;
pub type TrainingSet64 = net::TrainingSet<f64>;
