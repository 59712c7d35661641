//! Numerical solver and verification harness for the discrete
//! Safronov–Dubovskiĭ coagulation equation (DSDCE).
//!
//! The infinite system is approached through its `k`-dimensional truncation.
//! Modules:
//!
//! - [`kernel`]: coagulation kernels, catalog and admissibility checks
//! - [`system`]: the truncated right-hand side and its summation identities
//! - [`integrator`]: positivity-guarded Dormand–Prince 5(4) and a fixed-step RK4 oracle
//! - [`weights`]: convex weights of class G1 / G1,∞ and the de la Vallée-Poussin constructor
//! - [`diagnostics`]: moments, tail indicators and per-trajectory bound checks
//! - [`experiments`]: verification studies that turn the analytic results into
//!   falsifiable numerical checks
//! - [`output`]: CSV, JSON and SVG emission

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod experiments;
pub mod integrator;
pub mod kernel;
pub mod output;
pub mod report;
pub mod stop;
pub mod sum;
pub mod system;
pub mod weights;

pub use diagnostics::DiagnosticsRecord;
pub use integrator::{integrate, IntegrationError, SolverConfig, StepMode, Trajectory};
pub use kernel::{CoagulationKernel, KernelError, KernelRule};
pub use report::{ExperimentReport, Status};
pub use system::{InitialRule, SizeDistribution, SystemError, TestSequence};
pub use weights::{ConvexWeight, WeightClass, WeightKind};
