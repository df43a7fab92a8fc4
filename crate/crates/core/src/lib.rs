//! Inexact Bregman proximal point methods for discrete optimal transport.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod generate;
pub mod kernels;
pub mod numeric;
pub mod oracle;
pub mod outer;
pub mod polytope;
pub mod problem;
pub mod sinkhorn;
pub mod ssncg;

pub use error::{OtError, Result};
pub use generate::{generate, GenConfig};
pub use kernels::{BregmanKernel, KernelKind};
pub use oracle::{lp_oracle, lp_oracle_with, LpSolution, OracleLimits};
pub use outer::{run, Method, OuterConfig, RunResult, RunStatus, ToleranceSchedule};
pub use polytope::{round_to_polytope, MarginalOperator};
pub use problem::{
    kkt_residual, marginal_residual, normalized_gap, objective, DualPair, KktResidual, OtInstance, SolveTrace,
    TraceRow, TransportPlan,
};
