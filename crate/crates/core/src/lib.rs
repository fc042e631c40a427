//! Simulation and evaluation of ensemble-based black-box model extraction.
//!
//! An attacker trains a heterogeneous ensemble of thief classifiers against a
//! query-budgeted, hard-label victim oracle. Query sets are chosen by
//! ensemble disagreement, the leftover pool is exploited by confidence-filtered
//! pseudo-labeling, and the result is scored by accuracy, agreement with the
//! victim, and transferability of adversarial examples.

pub mod adversarial;
pub mod datapool;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod netvictim;
pub mod numkit;
pub mod rng;
pub mod selection;
pub mod ssl;
pub mod victim;

pub use error::{Error, Result};
