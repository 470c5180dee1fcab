//! Rescaled independence tests for rare-event class labels.
//!
//! When one class is rare (`n1 << n0`), classical rank and distance statistics lose
//! power because their variance is driven by the abundant class. The *rescaled*
//! statistic `T` averages a kernel over tuples with a fixed number of rows from each
//! class, and the *boosted* variant thins the abundant class before computing it.
//!
//! The engines are generic over the feature scalar ([`Scalar`], implemented for `f32`
//! and `f64`). Inference and simulation work in `f64`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bit;
pub mod data;
pub mod error;
pub mod inference;
pub mod kernels;
pub mod multiclass;
pub mod permutation;
pub mod pipeline;
pub mod projection;
pub mod rit;
pub mod scalar;
pub mod seed;
pub mod sim;

pub use bit::{compute_bit, draw_subsample, SubsamplePlan};
pub use data::{GroupedSample, LabeledSample};
pub use error::{Error, Result};
pub use inference::{InferenceMethod, TestOutcome};
pub use kernels::{KernelKind, KernelSpec, Order};
pub use multiclass::{MultiClassSpec, Regime};
pub use permutation::{pvalue_permutation, PermutationConfig};
pub use pipeline::{run_test, InferenceChoice, TestConfig};
pub use rit::{compute_classical, compute_rit, compute_rit_bruteforce, Algorithm, ClassicalKind, RitStatistic};
pub use scalar::Scalar;

pub type Sample = LabeledSample<f64>;
pub type Groups = GroupedSample<f64>;
pub type Kernel = KernelSpec<f64>;
pub type Statistic = RitStatistic<f64>;
