//! COPD detection from respiratory sound recordings.
//!
//! [`dataset`] reads ICBHI-style corpora and builds splits, [`features`] turns
//! clips into 40-row feature matrices, [`segmentation`] finds breathing
//! cycles, [`nn`] holds the CNN and its trainer, and [`eval`] scores the
//! results.

pub mod dataset;
pub mod eval;
pub mod features;
pub mod nn;
pub mod segmentation;
