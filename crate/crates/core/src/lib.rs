//! Stratified survival analysis and clinical-trial simulation.
//!
//! The crate is organised bottom-up:
//!
//! - [`trial_model`]: strata, data-generating scenarios and trial designs
//! - [`datagen`]: simulation of a single event-driven trial
//! - [`inference`]: log-rank tests (pooled and stratified) and Cox
//!   regression (unstratified, multivariate, stratified)
//! - [`design`]: event-count and sample-size calculations
//! - [`simharness`]: replicated Monte Carlo studies and their summary metrics

pub mod datagen;
pub mod design;
mod error;
pub mod inference;
pub mod simharness;
pub mod stats;
pub mod trial_model;

pub use datagen::{Arm, RngStream, Subject, SurvivalRecord, TrialDataset};
pub use design::DesignInputs;
pub use error::{Error, Result};
pub use inference::{AnalysisSpec, CoxFit, LogRankResult, Method, TieMethod};
pub use simharness::{AggregateMetrics, ReplicateResult, SeScale, SimConfig};
pub use trial_model::{AllocationPattern, ScenarioSpec, StratumProfile, TrialDesign, NUM_STRATA};
