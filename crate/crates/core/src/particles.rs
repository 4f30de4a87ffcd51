//! Particle state.
//!
//! Generators are stored structure-of-arrays in a fixed order: fluid
//! particles first, then solid particles, then air particles. Fluid and solid
//! counts never change during a run; the air block is regenerated every
//! substep. A particle's id is its index in this ordering.

use crate::error::{Result, SimError};
use crate::geom::{Aabb, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParticleKind {
    Fluid,
    Solid,
    Air,
}

impl ParticleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParticleKind::Fluid => "fluid",
            ParticleKind::Solid => "solid",
            ParticleKind::Air => "air",
        }
    }
}

/// Prescribed motion of the solid particles.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum SolidMotion {
    /// Solids keep their own `u_b` forever (static obstacles, paddles).
    #[default]
    Constant,
    /// Rigid body oscillating horizontally while rotating about its center.
    /// Center `x(t) = center0 + (amplitude * sin(2 pi t / period), 0)`,
    /// angular velocity `omega`.
    Board {
        center0: Vec2,
        amplitude: f64,
        period: f64,
        omega: f64,
    },
    /// Moving solids (non-zero `u_b`) advance by `u_b` and wrap back into
    /// `[lo, hi)` along x, so a strip of them acts as a paddle conveyor.
    Conveyor { lo: f64, hi: f64 },
}

impl SolidMotion {
    fn center_and_velocity(&self, t: f64) -> Option<(Vec2, Vec2, f64)> {
        match *self {
            SolidMotion::Constant | SolidMotion::Conveyor { .. } => None,
            SolidMotion::Board {
                center0,
                amplitude,
                period,
                omega,
            } => {
                let k = 2.0 * std::f64::consts::PI / period;
                let c = center0 + Vec2::new(amplitude * (k * t).sin(), 0.0);
                let v = Vec2::new(amplitude * k * (k * t).cos(), 0.0);
                Some((c, v, omega))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParticleSet {
    /// Current positions `x_r` of every generator.
    pub x: Vec<Vec2>,
    /// Fluid: current velocity `u_r`. Solid: prescribed velocity `u_b`. Air: zero.
    pub u: Vec<Vec2>,
    pub kind: Vec<ParticleKind>,
    pub n_fluid: usize,
    pub n_solid: usize,
    /// Fluid only: anchor position `x_s` at the flow-map start.
    pub x_anchor: Vec<Vec2>,
    /// Fluid only: anchor velocity `u_s`.
    pub u_anchor: Vec<Vec2>,
    /// Fluid only: accumulated Lagrangian-pressure path integral.
    pub lambda_acc: Vec<f64>,
    /// Fluid only: accumulated gravity integral.
    pub grav_acc: Vec<Vec2>,
    /// Fluid only: path integral of the gravity potential `g . x`.
    pub grav_potential: Vec<f64>,
    /// Fluid only: sticky near-surface flag.
    pub surface: Vec<bool>,
    pub solid_motion: SolidMotion,
}

impl ParticleSet {
    pub fn new(fluid_x: Vec<Vec2>, fluid_u: Vec<Vec2>, solid_x: Vec<Vec2>, solid_u: Vec<Vec2>) -> Self {
        assert_eq!(fluid_x.len(), fluid_u.len());
        assert_eq!(solid_x.len(), solid_u.len());
        let n_fluid = fluid_x.len();
        let n_solid = solid_x.len();
        let mut x = fluid_x;
        x.extend(solid_x);
        let mut u = fluid_u;
        u.extend(solid_u);
        let mut kind = vec![ParticleKind::Fluid; n_fluid];
        kind.extend(std::iter::repeat(ParticleKind::Solid).take(n_solid));
        let mut set = Self {
            x,
            u,
            kind,
            n_fluid,
            n_solid,
            x_anchor: vec![],
            u_anchor: vec![],
            lambda_acc: vec![],
            grav_acc: vec![],
            grav_potential: vec![],
            surface: vec![],
            solid_motion: SolidMotion::Constant,
        };
        set.reinitialize();
        set
    }

    pub fn fluid_only(x: Vec<Vec2>, u: Vec<Vec2>) -> Self {
        Self::new(x, u, vec![], vec![])
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n_air(&self) -> usize {
        self.len() - self.n_fluid - self.n_solid
    }

    pub fn fluid_range(&self) -> std::ops::Range<usize> {
        0..self.n_fluid
    }

    pub fn solid_range(&self) -> std::ops::Range<usize> {
        self.n_fluid..self.n_fluid + self.n_solid
    }

    pub fn fluid_x(&self) -> &[Vec2] {
        &self.x[..self.n_fluid]
    }

    pub fn fluid_u(&self) -> &[Vec2] {
        &self.u[..self.n_fluid]
    }

    pub fn fluid_u_mut(&mut self) -> &mut [Vec2] {
        &mut self.u[..self.n_fluid]
    }

    /// Prescribed velocity `u_b` of a solid generator.
    pub fn boundary_velocity(&self, id: usize) -> Vec2 {
        debug_assert_eq!(self.kind[id], ParticleKind::Solid);
        self.u[id]
    }

    /// Replace the air block.
    pub fn set_air(&mut self, air: Vec<Vec2>) {
        let keep = self.n_fluid + self.n_solid;
        self.x.truncate(keep);
        self.u.truncate(keep);
        self.kind.truncate(keep);
        self.u.extend(std::iter::repeat(Vec2::zeros()).take(air.len()));
        self.kind.extend(std::iter::repeat(ParticleKind::Air).take(air.len()));
        self.x.extend(air);
    }

    /// Restart the flow map at the current state: anchors take the current
    /// positions and velocities, the path integrals and surface flags reset.
    pub fn reinitialize(&mut self) {
        let n = self.n_fluid;
        self.x_anchor = self.x[..n].to_vec();
        self.u_anchor = self.u[..n].to_vec();
        self.lambda_acc = vec![0.0; n];
        self.grav_acc = vec![Vec2::zeros(); n];
        self.grav_potential = vec![0.0; n];
        self.surface = vec![false; n];
    }

    /// Move fluid particles by their velocity and solids by `u_b`. Fluid
    /// particles are kept inside `domain` (a small margin off the walls).
    /// Air particles are left alone; they are resampled separately.
    pub fn advect(&mut self, dt: f64, domain: &Aabb, margin: f64) -> Result<()> {
        for i in 0..self.n_fluid {
            let next = self.x[i] + self.u[i] * dt;
            if !(next.x.is_finite() && next.y.is_finite()) {
                return Err(SimError::NonFinite { id: i, position: next });
            }
            let clamped = domain.clamp_inside(&next, margin);
            // Inelastic wall contact: the clamped component stops.
            if clamped.x != next.x {
                self.u[i].x = 0.0;
            }
            if clamped.y != next.y {
                self.u[i].y = 0.0;
            }
            self.x[i] = clamped;
        }
        for i in self.solid_range() {
            let next = self.x[i] + self.u[i] * dt;
            if !(next.x.is_finite() && next.y.is_finite()) {
                return Err(SimError::NonFinite { id: i, position: next });
            }
            self.x[i] = next;
        }
        if let SolidMotion::Conveyor { lo, hi } = self.solid_motion {
            let span = hi - lo;
            for i in self.solid_range() {
                if self.u[i] != Vec2::zeros() {
                    self.x[i].x = lo + (self.x[i].x - lo).rem_euclid(span);
                }
            }
        }
        Ok(())
    }

    /// Refresh `u_b` of the solids for time `t` under the prescribed motion.
    pub fn update_solid_velocity(&mut self, t: f64) {
        if let Some((c, v, omega)) = self.solid_motion.center_and_velocity(t) {
            for i in self.solid_range() {
                let r = self.x[i] - c;
                self.u[i] = v + omega * Vec2::new(-r.y, r.x);
            }
        }
    }

    /// Total fluid "mass" at unit density is the fluid count.
    pub fn fluid_mass(&self) -> usize {
        self.n_fluid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: Vec2, u: Vec2) -> ParticleSet {
        ParticleSet::fluid_only(vec![x], vec![u])
    }

    #[test]
    fn advect_moves_by_velocity() {
        let mut p = single(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0));
        let domain = Aabb::new(Vec2::new(-1.0, -1.0), Vec2::new(1.0, 1.0));
        p.advect(0.5, &domain, 0.0).unwrap();
        assert_eq!(p.x[0], Vec2::new(0.5, 0.0));
    }

    #[test]
    fn wall_contact_stops_the_normal_component() {
        let mut p = single(Vec2::new(0.9, 0.5), Vec2::new(1.0, 0.5));
        p.advect(0.5, &Aabb::unit(), 0.01).unwrap();
        assert_eq!(p.x[0], Vec2::new(0.99, 0.75));
        assert_eq!(p.u[0], Vec2::new(0.0, 0.5));
    }

    #[test]
    fn zero_velocity_keeps_positions() {
        let mut p = ParticleSet::fluid_only(
            vec![Vec2::new(0.2, 0.3), Vec2::new(0.7, 0.1)],
            vec![Vec2::zeros(); 2],
        );
        let before = p.x.clone();
        p.advect(0.25, &Aabb::unit(), 0.0).unwrap();
        assert_eq!(p.x, before);
    }

    #[test]
    fn constant_velocity_integrates_exactly() {
        let mut p = single(Vec2::new(0.1, 0.2), Vec2::new(1.0, 1.0));
        let domain = Aabb::new(Vec2::new(-5.0, -5.0), Vec2::new(5.0, 5.0));
        for _ in 0..10 {
            p.advect(0.1, &domain, 0.0).unwrap();
        }
        assert!((p.x[0] - Vec2::new(1.1, 1.2)).norm() < 1e-12);
    }

    #[test]
    fn non_finite_advection_reports_particle() {
        let mut p = ParticleSet::fluid_only(
            vec![Vec2::new(0.5, 0.5), Vec2::new(0.5, 0.5)],
            vec![Vec2::zeros(), Vec2::new(f64::NAN, 0.0)],
        );
        match p.advect(0.1, &Aabb::unit(), 0.0) {
            Err(SimError::NonFinite { id, .. }) => assert_eq!(id, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn solids_move_by_boundary_velocity_and_air_stays() {
        let mut p = ParticleSet::new(
            vec![Vec2::new(0.5, 0.5)],
            vec![Vec2::zeros()],
            vec![Vec2::new(0.1, 0.1)],
            vec![Vec2::new(1.0, 0.0)],
        );
        p.set_air(vec![Vec2::new(0.9, 0.9)]);
        p.advect(0.1, &Aabb::unit(), 0.0).unwrap();
        assert!((p.x[1] - Vec2::new(0.2, 0.1)).norm() < 1e-15);
        assert_eq!(p.x[2], Vec2::new(0.9, 0.9));
        assert_eq!(p.kind[2], ParticleKind::Air);
    }

    #[test]
    fn conveyor_solids_wrap() {
        let mut p = ParticleSet::new(
            vec![Vec2::new(0.5, 0.5)],
            vec![Vec2::zeros()],
            vec![Vec2::new(0.09, 0.1), Vec2::new(0.5, 0.1)],
            vec![Vec2::new(1.0, 0.0), Vec2::zeros()],
        );
        p.solid_motion = SolidMotion::Conveyor { lo: 0.0, hi: 0.1 };
        p.advect(0.02, &Aabb::unit(), 0.0).unwrap();
        assert!((p.x[1].x - 0.01).abs() < 1e-12);
        assert_eq!(p.x[2], Vec2::new(0.5, 0.1));
    }

    #[test]
    fn board_velocity_is_rigid() {
        let mut p = ParticleSet::new(
            vec![Vec2::new(0.5, 0.5)],
            vec![Vec2::zeros()],
            vec![Vec2::new(1.0, 0.5), Vec2::new(1.0, 0.6)],
            vec![Vec2::zeros(); 2],
        );
        p.solid_motion = SolidMotion::Board {
            center0: Vec2::new(1.0, 0.5),
            amplitude: 0.5,
            period: 4.0,
            omega: 2.0,
        };
        p.update_solid_velocity(0.0);
        let v = 0.5 * 2.0 * std::f64::consts::PI / 4.0;
        assert!((p.u[1] - Vec2::new(v, 0.0)).norm() < 1e-12);
        assert!((p.u[2] - Vec2::new(v - 0.2, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn reinitialize_resets_anchors() {
        let mut p = single(Vec2::new(0.3, 0.3), Vec2::new(0.5, -0.5));
        p.advect(0.1, &Aabb::unit(), 0.0).unwrap();
        p.u[0] = Vec2::new(2.0, 0.0);
        p.lambda_acc[0] = 3.0;
        p.grav_acc[0] = Vec2::new(0.0, -1.0);
        p.grav_potential[0] = 0.4;
        p.surface[0] = true;
        p.reinitialize();
        assert_eq!(p.x_anchor[0], p.x[0]);
        assert_eq!(p.u_anchor[0], p.u[0]);
        assert_eq!(p.lambda_acc[0], 0.0);
        assert_eq!(p.grav_acc[0], Vec2::zeros());
        assert_eq!(p.grav_potential[0], 0.0);
        assert!(!p.surface[0]);
    }

    #[test]
    fn air_block_is_replaced() {
        let mut p = single(Vec2::new(0.5, 0.5), Vec2::zeros());
        p.set_air(vec![Vec2::new(0.1, 0.1), Vec2::new(0.2, 0.2)]);
        assert_eq!(p.n_air(), 2);
        p.set_air(vec![Vec2::new(0.3, 0.3)]);
        assert_eq!(p.n_air(), 1);
        assert_eq!(p.len(), 2);
        assert_eq!(p.fluid_mass(), 1);
    }
}
