//! Numerical optimal transport: exact solvers, entropic regularization,
//! heat-kernel convolutions, dynamic formulations and semidiscrete transport.

pub mod dynamic;
pub mod error;
pub mod heat;
pub mod io;
pub mod lp;
pub mod measures;
pub mod oracle1d;
pub mod semidiscrete;
pub mod sinkhorn;

pub use dynamic::{
    beckmann_w1, project_paraboloid, solve_dynamic, DynamicOptions, DynamicSolution,
};
pub use error::{Error, Result};
pub use heat::{apply_heat, convolutional_barycenter, convolutional_sinkhorn, HeatOperator};
pub use lp::{emd, solve_lp, solve_lp_detailed, verify_optimality, Certificate};
pub use measures::{
    build_cost_matrix, grid_to_discrete, CostMatrix, DiscreteMeasure, DualPotentials, GridDensity,
    InterpolationSequence, MeshDensity, Normalize, TransportPlan,
};
pub use oracle1d::{semidiscrete_1d, w1_cdf, wp_quantile, Measure1d};
pub use semidiscrete::{
    lloyd_stipple, solve_semidiscrete, PowerDiagram, SemidiscreteOptions, SemidiscreteSolution,
    StippleOptions,
};
pub use sinkhorn::{
    entropic_barycenter, sinkhorn, sinkhorn_log_domain, SinkhornOptions, SinkhornResult,
};

/// The guide under `book/`, compiled here so its examples run as doc-tests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../README.md")]
    pub mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/measures.md")]
    pub mod measures {}
    #[doc = include_str!("../../../book/src/exact.md")]
    pub mod exact {}
    #[doc = include_str!("../../../book/src/entropic.md")]
    pub mod entropic {}
    #[doc = include_str!("../../../book/src/heat.md")]
    pub mod heat {}
    #[doc = include_str!("../../../book/src/dynamic.md")]
    pub mod dynamic {}
    #[doc = include_str!("../../../book/src/semidiscrete.md")]
    pub mod semidiscrete {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
