//! Counterfactual explanations for ReLU binary classifiers that stay valid
//! under every bounded shift of the model parameters and lie inside the
//! convex hull of the input and its robust nearest neighbours.
//!
//! The pipeline is:
//!
//! 1. [`neighbors`] finds the `k` nearest dataset points that certify robust
//!    and builds the plausible region from them.
//! 2. [`proplace::generate`] alternates an outer MILP (closest in-region point
//!    valid for a growing set of shifted models) with an inner MILP (worst
//!    shifted model for the current candidate) until the worst case agrees.
//! 3. [`interval`] certifies the result exactly and [`eval`] scores it.
//!
//! All MILPs are solved by the built-in branch-and-bound solver in [`milp`].

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod interval;
pub mod milp;
pub mod neighbors;
pub mod nn;
pub mod proplace;

pub use data::Dataset;
pub use error::{Error, Result};
pub use interval::{certify_delta_robust, Certificate, ModelShiftSet};
pub use nn::{ReluNetwork, TrainConfig};
pub use proplace::{generate, CeResult, Explainer, ProplaceConfig};

