//! Probabilistic bias correction of seasonal sea-ice-concentration
//! forecasts with a conditional variational autoencoder.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`grid`]: polar grid geometry, area weighting, and the fold/unfold
//!   reshaping applied before fields enter the network.
//! - [`data`]: forecast-aligned cubes, temporal train/val/test splitting,
//!   a synthetic hindcast generator with known injected biases, and the
//!   `icecube v1` file format.
//! - [`baseline`]: lead-dependent climatological-mean adjustment (badj).
//! - [`model`]: the cVAE network built from partial convolutions and
//!   ConvNeXt-style blocks, with a deterministic first-guess branch.
//! - [`train`]: ELBO loss with closed-form KL and the training loop.
//! - [`infer`]: prior-scaled sampling of corrected ensembles (nadj) and
//!   spread-over-error scale calibration.
//! - [`verify`]: rank-histogram CDFs, SOE, QQ, RMSE/spread, SIA/SIE/IIEE,
//!   and pattern correlation.
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `icevae` binary for the file-based pipeline.

pub mod baseline;
pub mod data;
pub mod error;
pub mod grid;
pub mod infer;
pub mod model;
pub mod train;
pub mod verify;

pub use error::{IceError, Result};
