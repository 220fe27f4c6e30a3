//! Synthetic-data enrichment toolkit for injection-molding quality classification.
//!
//! The crate is organized along the workflow it supports:
//!
//! - [`types`]: feature schema, cycles, labels and datasets shared by everything else.
//! - [`simulator`]: a lumped, phase-based process model that emits labeled cycles.
//! - [`pipeline`]: decimation augmentation, train/validation splits and the two
//!   synthetic mixing protocols (additive and substitutive).
//! - [`storage`]: CSV cycle files plus a JSON manifest per dataset.
//! - [`lstm`]: a many-to-one stacked LSTM classifier with BPTT and Adam.
//! - [`metrics`]: accuracy, MSE, F1, AUC-ROC and run aggregation.
//! - [`experiment`]: mixing-ratio sweeps and their reports.

pub mod experiment;
pub mod lstm;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod simulator;
pub mod storage;
pub mod types;

pub use types::{
    class_balance, validate_cycle, CycleRecord, Dataset, Feature, FeatureKind, FeatureSchema,
    Label, ProcessSetpoints, QualityIndicators, Source, TypeError, Violation,
};
