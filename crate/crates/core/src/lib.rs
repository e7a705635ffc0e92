//! Bilevel proximal gradient for parameter-dependent linear-quadratic
//! optimal control: an inner loop running κ proximal gradient steps on the
//! control sequence, interconnected with an outer proximal gradient step
//! on the parameters, plus oracle-based input-to-state stability checks.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod error;
pub mod instances;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod prox;
pub mod sampling;
pub mod solver;
pub mod suites;
pub mod trace;

pub use certify::{
    certify, verify_iss_trace, Certificate, CertifyOptions, CheckResult, Constants, IssReport, KappaGains, SmallGain,
    TraceParams,
};
pub use error::{Error, Result};
pub use oracle::{Oracle, OracleConfig, OracleEval, OptimalSet};
pub use problem::{condense, grad_p, grad_u, CondensedQP, ModelSpec, ParametrizedModel, Weights};
pub use prox::{ProxOperator, ProxSpec};
pub use solver::{run_bilevel, run_inner, step_sizes, NoiseDistribution, NoiseSpec, SolverConfig, StepSizes};
pub use suites::SuiteResult;
pub use trace::{RowStatus, RunStatus, Trace, TraceMeta, TraceRow};
