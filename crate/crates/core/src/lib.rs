//! Sequential latent-state belief model for startup outcome prediction from
//! expert-call conversations.
//!
//! The crate covers the whole pipeline: dataset records and validation
//! ([`data`]), text embedding ([`embed`]), the generative model and synthetic
//! sampler ([`genmodel`]), amortised posterior inference ([`inference`]), the
//! variational objective ([`objective`]), alternating training
//! ([`training`]), sequential prediction ([`predict`]) and the classification
//! and portfolio metrics ([`evaluation`]).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod data;
pub mod fsutil;
pub mod embed;
pub mod model;
pub mod genmodel;
pub mod inference;
pub mod objective;
pub mod evaluation;
pub mod predict;
pub mod training;
pub mod checkpoint;
