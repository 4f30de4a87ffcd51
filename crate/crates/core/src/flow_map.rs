//! Long-range flow map carried on the fluid particles.
//!
//! The backward Jacobian `T = dx_s/dx_r` is refit every substep from the
//! anchor and current offsets to Voronoi neighbours. The anchor velocity is
//! pulled back with `T^T`, the accumulated Lagrangian pressure removes the
//! gradient part gathered since the anchor, and a one-step kinetic-energy
//! gradient turns the mapped velocity into the advected one.

use rayon::prelude::*;

use crate::geom::{Mat2, Vec2};
use crate::operators::{fit_linear, gradient_pointwise, OperatorSet};
use crate::particles::ParticleSet;
use crate::voronoi::{adjacency_layers, FaceKind, VoronoiDiagram};

/// Fits whose normal matrix is worse conditioned than this fall back to the
/// surface branch.
pub const MAX_FIT_COND: f64 = 1e6;
/// Minimum fluid neighbours for a Jacobian fit.
pub const MIN_FIT_NEIGHBORS: usize = 3;

#[derive(Clone, Debug)]
pub struct FlowMapState {
    /// Anchor time `s`.
    pub anchor_time: f64,
    /// Time of the previous substep `s'`.
    pub prev_time: f64,
    /// Current time `r`.
    pub time: f64,
    pub substeps_since_reinit: usize,
    pub jacobian: Vec<Mat2>,
    pub cond: Vec<f64>,
    /// Particles whose fit failed this substep.
    pub ill_conditioned: Vec<bool>,
}

impl FlowMapState {
    pub fn new(n_fluid: usize, time: f64) -> Self {
        Self {
            anchor_time: time,
            prev_time: time,
            time,
            substeps_since_reinit: 0,
            jacobian: vec![Mat2::identity(); n_fluid],
            cond: vec![1.0; n_fluid],
            ill_conditioned: vec![false; n_fluid],
        }
    }

    /// Restart the map at the current time.
    pub fn reinitialize(&mut self) {
        self.anchor_time = self.time;
        self.substeps_since_reinit = 0;
        self.jacobian.iter_mut().for_each(|t| *t = Mat2::identity());
        self.cond.iter_mut().for_each(|c| *c = 1.0);
        self.ill_conditioned.iter_mut().for_each(|b| *b = false);
    }
}

/// Per-particle Jacobian estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianFit {
    pub t: Mat2,
    pub cond: f64,
    pub ill_conditioned: bool,
}

/// Weighted least-squares fit of `T` with `x_s,j - x_s,i ~ T (x_r,j - x_r,i)`
/// over fluid Voronoi neighbours, weights `A/l`.
pub fn estimate_jacobian(particles: &ParticleSet, diagram: &VoronoiDiagram) -> Vec<JacobianFit> {
    let xr = &diagram.generators;
    let xs = &particles.x_anchor;
    diagram
        .cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| {
            let faces: Vec<_> = cell.faces.iter().filter(|f| f.kind == FaceKind::Interior).collect();
            let fallback = JacobianFit {
                t: Mat2::identity(),
                cond: f64::INFINITY,
                ill_conditioned: true,
            };
            if faces.len() < MIN_FIT_NEIGHBORS {
                return fallback;
            }
            let samples = faces.iter().map(|f| {
                let j = f.j.unwrap();
                (f.area / f.dist, xr[j] - xr[i], xs[j] - xs[i])
            });
            match fit_linear(samples) {
                Some((t, cond)) if cond <= MAX_FIT_COND && t.iter().all(|v| v.is_finite()) => JacobianFit {
                    t,
                    cond,
                    ill_conditioned: false,
                },
                _ => fallback,
            }
        })
        .collect()
}

/// `T^T u_s`.
pub fn mapped_velocity(t: &Mat2, u_anchor: &Vec2) -> Vec2 {
    t.transpose() * u_anchor
}

/// Terms that make up the interior-branch velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvectedTerms {
    pub mapped: Vec<Vec2>,
    /// `V^-1 G Phi`, `Phi` the path integral of the gravity potential.
    pub gravity: Vec<Vec2>,
    /// `V^-1 G Lambda`.
    pub grad_lambda: Vec<Vec2>,
    /// `dt V^-1 G (|u_prev|^2 / 2)`.
    pub grad_kinetic: Vec<Vec2>,
}

impl AdvectedTerms {
    pub fn sum(&self) -> Vec<Vec2> {
        (0..self.mapped.len())
            .map(|i| self.mapped[i] + self.gravity[i] - self.grad_lambda[i] + self.grad_kinetic[i])
            .collect()
    }
}

/// `u_adv = u_map + grav_acc - grad Lambda + dt grad(|u_prev|^2 / 2)`.
///
/// Gravity is conservative, so its accumulated impulse is taken as the
/// gradient of `grav_potential`, the path integral of `g . x` along each
/// particle's trajectory. Away from walls this equals `grav_acc` at the
/// current positions, and it keeps every term but the mapped velocity in
/// the range of the discrete gradient. Still water then stays still as
/// the particles drift off their initial lattice.
pub fn advected_terms(
    mapped: &[Vec2],
    lambda_acc: &[f64],
    u_prev: &[Vec2],
    grav_potential: &[f64],
    ops: &OperatorSet,
    dt: f64,
) -> AdvectedTerms {
    let kinetic: Vec<f64> = u_prev.iter().map(|u| 0.5 * u.norm_squared()).collect();
    let grad_kinetic = gradient_pointwise(ops, &kinetic).into_iter().map(|g| dt * g).collect();
    AdvectedTerms {
        mapped: mapped.to_vec(),
        gravity: gradient_pointwise(ops, grav_potential),
        grad_lambda: gradient_pointwise(ops, lambda_acc),
        grad_kinetic,
    }
}

pub fn advected_from_mapped(
    mapped: &[Vec2],
    lambda_acc: &[f64],
    u_prev: &[Vec2],
    grav_potential: &[f64],
    ops: &OperatorSet,
    dt: f64,
) -> Vec<Vec2> {
    advected_terms(mapped, lambda_acc, u_prev, grav_potential, ops, dt).sum()
}

/// `Phi += dt g . x` at the current positions.
pub fn accumulate_gravity(grav_acc: &mut [Vec2], grav_potential: &mut [f64], x: &[Vec2], g: Vec2, dt: f64) {
    for ((a, phi), x) in grav_acc.iter_mut().zip(grav_potential.iter_mut()).zip(x) {
        *a += g * dt;
        *phi += dt * g.dot(x);
    }
}

/// `Lambda += dt (p - |u|^2 / 2)`.
pub fn accumulate_lambda(lambda_acc: &mut [f64], pressure: &[f64], u: &[Vec2], dt: f64) {
    for ((l, p), u) in lambda_acc.iter_mut().zip(pressure).zip(u) {
        *l += dt * (p - 0.5 * u.norm_squared());
    }
}

/// Set the sticky surface flag on every fluid cell within `k` layers of air.
pub fn update_surface_flags(particles: &mut ParticleSet, diagram: &VoronoiDiagram, k: usize) {
    for i in adjacency_layers(diagram, k) {
        particles.surface[i] = true;
    }
}
