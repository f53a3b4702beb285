//! Slice-based robust adversarial testing for statistical decision tools.
//!
//! A tool passes an audit when a confidence-aware check passes on every slice
//! of a case-anchored family drawn from a labeled data universe. The crate
//! ships the harness (`universe`, `family`, `checks`, `engine`, `adapters`),
//! a reference probabilistic-genotyping likelihood-ratio tool with a synthetic
//! mixture generator (`refpgs`), and the command-line surface (`cli`).

pub mod adapters;
pub mod checks;
pub mod cli;
pub mod digest;
pub mod engine;
pub mod family;
pub mod refpgs;
pub mod universe;

pub use adapters::{AdapterError, ToolAdapter, ToolIdentity, ToolOutput};
pub use checks::{CheckError, CheckResult, CheckSpec, MetricKind, Reason, Verdict};
pub use engine::{robust_adversarial_test, worst_case_metric, AuditReport, EngineError};
pub use family::{CaseProfile, DistributionFamily, FamilyError, SlicePredicate, ToleranceConfig};
pub use universe::{DataUniverse, Instance, Schema, UniverseError};
