//! Interventional effects of interacting mediators on causal graphs.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line
//! and thread pools live in the companion `mediate` crate.
//!
//! Node layout used by every graph routine: confounders `0..t-1`, exposure
//! `t-1`, mediators `t..t+p`, outcome `t+p` (0-based, `t-1` confounders).

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dataset;
pub mod discovery;
pub mod effects_ols;
pub mod effects_qr;
mod error;
pub mod graph;
pub mod linmodel;
pub mod nuisance;
pub mod rng;
pub mod sim;
pub mod special;

pub use dataset::Dataset;
pub use effects_ols::{EffectEstimate, Estimand, Method};
pub use effects_qr::QrEstimate;
pub use error::{Error, Result};
pub use graph::{Cpdag, Dag};
pub use linmodel::{GaussianLaw, OlsFit};
pub use nuisance::NuisanceBundle;

