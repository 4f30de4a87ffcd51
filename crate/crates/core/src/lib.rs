//! Lagrangian covector flow-map fluid solver on clipped Voronoi particles.
//!
//! Fluid is carried by particles whose Voronoi cells (clipped by solid and air
//! ghost particles and by the domain box) define matrix-form divergence and
//! gradient operators. Velocity on interior particles is reconstructed each
//! substep from a long-range covector flow map (`T^T u_s`) corrected by the
//! accumulated Lagrangian-pressure path integral, while particles near the free
//! surface fall back to passive advection. A classical pressure Poisson solve
//! with zero Dirichlet on the free surface and Neumann on solids closes the step.
//!
//! Module map:
//! - [`particles`]: particle state and the flow-map anchors each particle carries
//! - [`voronoi`]: clipped Voronoi construction, Lloyd relaxation, air sampling
//! - [`operators`]: divergence / gradient / Laplacian assembly
//! - [`flow_map`]: backward Jacobian fits, mapped/advected velocities, path integrals
//! - [`poisson`]: boundary-aware Poisson system, conjugate gradient, projection
//! - [`integrator`]: the per-substep pipeline and scheme variants
//! - [`scenes`]: initial conditions for the validation scenes
//! - [`metrics`]: diagnostics and frame/metrics serialization
//! - [`config`]: run configuration parsing
//! - [`experiments`]: runs, paired benchmarks, ablations, property validation

pub mod config;
pub mod error;
pub mod experiments;
pub mod flow_map;
pub mod geom;
pub mod integrator;
pub mod metrics;
pub mod operators;
pub mod particles;
pub mod poisson;
pub mod scenes;
pub mod sparse;
pub mod voronoi;

pub use error::{Result, SimError};
pub use geom::{Aabb, Mat2, Vec2};
