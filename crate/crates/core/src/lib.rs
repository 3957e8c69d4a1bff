//! Membership-inference auditing for black-box classifiers.
//!
//! Reference models trained on bootstrap samples of an adversary's pool give
//! an empirical null distribution of a model's loss on a record. A low
//! target-model loss relative to that distribution is evidence that the record
//! was in the target's training set.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cdf;
pub mod data;
pub mod direct;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod indirect;
pub mod model;
pub mod par;
pub mod rng;
pub mod selection;
pub mod stats;

pub use error::{Error, Result};
