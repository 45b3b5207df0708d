//! Reduced-order modelling of the viscous Burgers equation with
//! evolve-filter-relax stabilization and sparse-grid uncertainty propagation.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dense;
pub mod fom;
pub mod io;
pub mod pipeline;
pub mod pod;
pub mod rom;
pub mod uq;

pub use dense::{DenseMatrix, DenseVector, LinalgError};
pub use fom::{assemble_fom, fom_run, fom_step, FomError, FomGrid, FomMatrices, FomOptions, FomState};
pub use pod::{build_pod, build_pod_full, PodBasis, PodError, SnapshotSet};
pub use rom::{
    build_rom_operators, efr_run, evolve_step, filter_apply, relax, EfrConfig, FilterKind, FilterSpec,
    RomError, RomOperators, RomTrajectory,
};
pub use uq::{cc_rule, expectation, mc_oracle, smolyak_grid, RandomViscosityModel, SparseGrid, UqError};
pub use pipeline::{PipelineConfig, PipelineError};
