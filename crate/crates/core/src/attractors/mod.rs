//! Equilibria, unstable manifolds and sampled attractors of the limiting ODE
//! and of the Galerkin PDE, with Hausdorff distances between them.

pub mod cloud;
pub mod equilibria;
pub mod graph;
pub mod sampling;

pub use cloud::{
    distance_to_cloud, hausdorff_distance, manifold_deflection, sidecar_path, AttractorCloud, CloudMetadata, CloudPoints,
    HausdorffDistance, PointOrigin, Provenance,
};
pub use equilibria::{
    classify, find_equilibria_ode, find_equilibria_ode_with_tol, find_equilibria_pde, hyperbolicity_check, pde_equilibrium,
    pde_linearization, pde_residual, EquilibriumLocation, EquilibriumPoint, PdeEquilibria, PdeNewtonParams, SeedFailure,
    Stability, HYPERBOLICITY_TOL,
};
pub use graph::{graph_iteration, spectral_gap, GraphEstimate, GraphGrid, GraphParams};
pub use sampling::{
    absorbing_radius, attractor_ode, attractor_pde, invariance_probe_ode, invariance_probe_pde, long_time_sampling_ode,
    unstable_manifold_ode, unstable_manifold_pde, ArcParams, LongTimeParams, ManifoldArc, OdeAttractor, OdeAttractorParams,
    PdeAttractor, PdeAttractorParams,
};
