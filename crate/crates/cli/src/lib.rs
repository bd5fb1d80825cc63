//! Scenario-driven harness around `ae_core`: scenario files, the
//! simulate/reconstruct/evaluate pipeline and the desk-scale experiment suite.

pub mod cli;
pub mod pipeline;
pub mod scenario;
pub mod suite;
