//! Prompt calibration for structured screening workflows.
//!
//! The library treats prompt optimisation as instrument calibration. A task
//! is split into three layers: the scientific criteria and the
//! machine-readable interface are fixed, and only the instructional prompt
//! harness around them may be rewritten. The harness is optimised against
//! labelled examples and an executable, asymmetric metric under a bounded
//! evaluation budget, and the calibrated program is persisted together with
//! enough provenance to reload, inspect, and re-verify it.
//!
//! Module map:
//!
//! * [`contract`] — the three-layer task contract and its fingerprint.
//! * [`dataset`] — labelled records, label normalization, stratified splits.
//! * [`metric`] — asymmetric scoring, checks-trace validation, feedback.
//! * [`backend`] — chat-completion backends, message rendering, field-marker
//!   parsing, and the synchronized call log.
//! * [`optimizer`] — the budget-bounded reflective calibration loop.
//! * [`evaluation`] — confusion-matrix statistics, aggregation, paired
//!   deltas, and sensitivity tables.
//! * [`artifact`] — save/load/round-trip of compiled programs with
//!   provenance and digest-verified bundles.
//! * [`config`] / [`cli`] — the operator-facing run configuration and the
//!   command implementations behind the `promptcal` binary.

pub mod artifact;
pub mod backend;
pub mod cli;
pub mod config;
pub mod contract;
pub mod dataset;
pub mod digest;
pub mod evaluation;
pub mod metric;
pub mod optimizer;
