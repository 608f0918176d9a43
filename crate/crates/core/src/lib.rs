//! Split a trained feed-forward CNN into sub-models, wire them together with
//! message schedules, execute them as cooperating ranks, and search the
//! mapping space for energy/memory/throughput trade-offs.
//!
//! The pipeline, front to back:
//!
//! * [`model`] loads and validates the layer graph and its weight store.
//! * [`specio`] parses the platform and mapping files.
//! * [`split`] cuts the graph into [`split::SubModel`]s joined by named buffers.
//! * [`comm`] derives the sender/receiver tables and the rankfile.
//! * [`plan`] compiles every sub-model into an [`plan::ExecutionPlan`] and
//!   writes deployment packages.
//! * [`pipeline`] chains split, comm and plan for one model and mapping.
//! * [`runtime`] executes plans over a TCP mesh with float kernels.
//! * [`cost`] scores a mapping analytically from a per-layer profile.
//! * [`dse`] runs NSGA-II over mapping chromosomes.
//!
//! Numeric code is generic over the scalar type. Kernels accept any
//! [`scalar::KernelFloat`] (`f32`, `f64`); the cost model accepts any
//! [`scalar::CostScalar`], including exact big rationals. The aliases below
//! name the concrete instantiations the toolchain uses.

pub mod comm;
pub mod cost;
pub mod dse;
pub mod model;
pub mod pipeline;
pub mod plan;
pub mod runtime;
pub mod scalar;
pub mod specio;
pub mod split;
pub mod zoo;

pub use scalar::{CostScalar, KernelFloat};

/// Tensor type exchanged between ranks and stored in weight files.
pub type Tensor32 = runtime::Tensor<f32>;
/// Double-precision tensor, used by tests and offline tooling.
pub type Tensor64 = runtime::Tensor<f64>;
/// Exact rational arithmetic for cost evaluation.
pub type ExactRational = num_rational::BigRational;
/// Objective vector in floating point, as used by the DSE.
pub type Objectives = cost::ObjectiveVector<f64>;
/// Objective vector computed with exact rational arithmetic.
pub type ExactObjectives = cost::ObjectiveVector<ExactRational>;
