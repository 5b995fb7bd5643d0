//! Adherence prediction pipeline for a scheduled-activity health app.
//!
//! Raw acquisition and questionnaire tables are parsed and cleansed
//! ([`ingest`]), bucketed into half-week sessions and cut into labelled
//! 15-session windows ([`session`]), joined with static user features
//! ([`features`]), optionally rebalanced ([`resample`]) and fed to from-scratch
//! classifiers ([`learn`]) scored by stratified cross-validation
//! ([`evaluate`]). [`synth`] generates a seeded stand-in database and
//! [`analytics`] computes the descriptive diagnostics.

pub mod analytics;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod float_bits;
pub mod ingest;
pub mod learn;
pub mod neighbors;
pub mod resample;
pub mod seed;
pub mod session;
pub mod synth;

pub use error::{Error, Result};

/// Version stamped into manifests, reports and model files.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
