//! Experiment harness for `robust-crl`: configs, replica orchestration,
//! CSV/JSON/SVG output, the counterexample report and invariant checks.

pub mod config;
pub mod document;
pub mod eval;
pub mod pool;
pub mod svg;
pub mod train;
pub mod verify;
