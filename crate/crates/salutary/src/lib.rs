//! Influence-guided active learning with automatic salutary label assignment.
//!
//! The crate trains a convex softmax-regression model, scores every unlabeled
//! pool point under every candidate label by its estimated effect on
//! validation loss, and selects and self-annotates the most beneficial points
//! each round. Alongside the core machinery it ships the surrounding
//! experiment protocols: multi-seed active-learning runs, influence-sorted
//! bin studies, add-one-in retraining fidelity checks, and unbounded-budget
//! runs, all with deterministic seeded execution and CSV/JSON reporting.
//!
//! Module map:
//! - [`data`]: datasets, CSV ingestion, splits, standardization, fixtures
//! - [`model`]: softmax regression (loss/gradient/HVP, training, prediction)
//! - [`influence`]: inverse-Hessian solves and per-label influence scores
//! - [`strategies`]: pool query strategies, from random to salutary
//! - [`engine`]: experiment protocols and result records
//! - [`config`]: run configuration, overrides, and the run manifest
//! - [`report`]: CSV and JSON result writers

pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod influence;
pub mod label_audit;
pub mod model;
pub mod report;
pub mod rng;
pub mod strategies;

mod numerics;

pub use error::{Error, Result};
