//! Global autoregressive recurrent forecasting over panels of related time
//! series.
//!
//! The crate is `no_std` (with `alloc`). Everything that touches the file
//! system, the clock or threads lives in the `deepar` companion crate; the
//! pieces here are pure functions of their inputs and an explicit RNG.
//!
//! Layout:
//! - [`linalg`], [`special`], [`lstm`], [`adam`], [`gradcheck`]: numeric kernels.
//! - [`likelihood`]: Gaussian and negative binomial noise models.
//! - [`series`], [`covariates`], [`window`], [`stats`]: data handling.
//! - [`model`]: the shared-weight recurrent network and its training unroll.
//! - [`trainer`], [`forecast`], [`metrics`]: fitting, sampling and scoring.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod adam;
pub mod covariates;
pub mod error;
pub mod exec;
pub mod forecast;
pub mod gradcheck;
pub mod likelihood;
pub mod linalg;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod series;
pub mod special;
pub mod stats;
pub mod trainer;
pub mod window;

pub use error::{Error, Result};
pub use forecast::{ForecastSamples, QuantileForecast};
pub use likelihood::{LikelihoodKind, LikelihoodParams};
pub use model::ModelParams;
pub use series::{Granularity, Panel, TimeSeries};
pub use trainer::{TrainConfig, TrainLog};
pub use window::{TrainingWindow, WindowSpec};
