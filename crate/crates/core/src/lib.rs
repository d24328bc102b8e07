//! Skill-dependent compute-optimal scaling analysis.
//!
//! The pipeline goes from training-run records to IsoFLOP groups, per-budget
//! quadratic fits in log-parameter space, compute optima and their power
//! laws, and then to second-stage analyses: capacity-/data-hunger residuals
//! against an aggregate (APE) optimum, optimum vs datamix proportion, the
//! code/knowledge crossover ratio and validation-set sensitivity.
//!
//! [`synth`] provides a parametric loss surface with a closed-form optimum so
//! every stage can be checked against ground truth.

pub mod analyze;
pub mod cli;
pub mod domain;
mod error;
pub mod fit;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use domain::{
    classify_hunger, estimate_flops, ComputeOptimum, DatamixSpec, Hunger, IsoFlopGroup, OptimumSource, Residual,
    Role, RunRecord, Skill, SkillSpec, Split, Validity,
};
pub use error::{Error, Result};
