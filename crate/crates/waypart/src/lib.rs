//! Compiler-guided last-level-cache way partitioning.
//!
//! The crate covers the whole pipeline: static loop attributes
//! ([`loop_model`]), phase timing ([`timing`]), cache sensitivity
//! ([`sensitivity`]), the way-allocation engine ([`apportion`]), a
//! discrete-event simulator with baseline policies ([`sim`]) and evaluation
//! metrics ([`metrics`]). File schemas live in [`formats`].

// `!(x >= 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apportion;
pub mod config;
pub mod formats;
pub mod loop_model;
pub mod metrics;
pub mod sensitivity;
pub mod sim;
pub mod timing;

pub use config::SystemConfig;
