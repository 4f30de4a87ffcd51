//! Substep pipeline and the scheme variants.
//!
//! One substep: reinit check, advection, air resampling, diagram and
//! operator rebuild, surface flags, per-particle velocity branch, pressure
//! solve, projection, path-integral updates, Lloyd relaxation.

use std::fmt;
use std::str::FromStr;

use crate::config::Config;
use crate::error::{Result, SimError};
use crate::flow_map::{accumulate_gravity, advected_terms, estimate_jacobian, mapped_velocity, update_surface_flags, AdvectedTerms, FlowMapState};
use crate::geom::{Aabb, Vec2};
use crate::metrics::{kinetic_energy, vortex_peaks, vorticity, MetricsRow};
use crate::operators::{assemble, gradient_pointwise, OperatorSet};
use crate::particles::ParticleSet;
use crate::poisson::{assemble_system, boundary_operators, cg_solve, divergence_error, project, BoundaryOps, CgOptions, CgOutcome};
use crate::scenes::SceneSpec;
use crate::voronoi::{build_diagram, lloyd_relax, resample_air, FaceKind, VoronoiDiagram};

/// Fluid particles are kept this far (in units of `h`) inside the domain.
const WALL_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Scheme {
    /// Long-range mapping with classical projection.
    #[default]
    Lmcp,
    /// One-step mapping, anchor reset every substep.
    Smsp,
    /// Passive advection everywhere (power-particle style baseline).
    Ppm,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Lmcp => "lmcp",
            Scheme::Smsp => "smsp",
            Scheme::Ppm => "ppm",
        }
    }
}

impl FromStr for Scheme {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lmcp" => Ok(Scheme::Lmcp),
            "smsp" => Ok(Scheme::Smsp),
            "ppm" => Ok(Scheme::Ppm),
            _ => Err(SimError::Config(format!("unknown scheme `{s}` (expected lmcp, smsp or ppm)"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepConfig {
    pub scheme: Scheme,
    pub cfl: f64,
    pub reinit_n: usize,
    pub layers_k: usize,
    pub tol: f64,
    pub maxiter: Option<usize>,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Route surface and ill-fitted particles through passive advection.
    pub surface_branch: bool,
    pub peak_threshold: f64,
    /// Same-sign vortex peaks closer than this are one peak.
    pub peak_radius: f64,
    /// Keep the individual interior-branch terms in the report.
    pub record_terms: bool,
    /// Also solve without the Lambda subtraction and report both CG runs.
    pub probe_convergence: bool,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self::from(&Config::new(crate::scenes::SceneId::TaylorGreen))
    }
}

impl From<&Config> for StepConfig {
    fn from(c: &Config) -> Self {
        Self {
            scheme: c.scheme,
            cfl: c.cfl,
            reinit_n: c.reinit_n,
            layers_k: c.layers_k,
            tol: c.tol,
            maxiter: c.maxiter,
            dt_min: c.dt_min,
            dt_max: c.dt_max,
            surface_branch: c.surface_branch,
            peak_threshold: c.peak_threshold,
            peak_radius: c.peak_radius(),
            record_terms: false,
            probe_convergence: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimState {
    pub particles: ParticleSet,
    pub flow: FlowMapState,
    pub domain: Aabb,
    pub h: f64,
    pub gravity: Vec2,
    /// Substeps taken.
    pub step: usize,
    pub time: f64,
    /// Pressure `p` of the last solve, per fluid particle.
    pub pressure: Vec<f64>,
    /// Diagram of the last projection (positions before the Lloyd snap).
    pub diagram: Option<VoronoiDiagram>,
    /// Reinitializations so far, the initial one included.
    pub reinit_count: usize,
}

impl SimState {
    pub fn new(scene: SceneSpec) -> Self {
        let n = scene.particles.n_fluid;
        Self {
            particles: scene.particles,
            flow: FlowMapState::new(n, 0.0),
            domain: scene.domain,
            h: scene.h,
            gravity: scene.gravity,
            step: 0,
            time: 0.0,
            pressure: vec![0.0; n],
            diagram: None,
            reinit_count: 0,
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.particles.fluid_u().iter().fold(0.0f64, |m, u| m.max(u.norm()))
    }

    /// Fluid Voronoi volume of the current positions.
    pub fn total_volume(&self) -> Result<f64> {
        let mut p = self.particles.clone();
        resample_air(&mut p, &self.domain, self.h);
        Ok(build_diagram(&p, &self.domain, self.h)?.total_volume())
    }

    /// Vorticity on the last diagram; zeros before the first step.
    pub fn vorticity(&self) -> Vec<f64> {
        match &self.diagram {
            Some(d) => vorticity(&d.generators[..d.n_fluid()], self.particles.fluid_u(), d),
            None => vec![0.0; self.particles.n_fluid],
        }
    }
}

/// CG runs with and without the Lambda subtraction, stopped at the same
/// absolute residual.
#[derive(Clone, Debug)]
pub struct ConvergenceProbe {
    pub with_subtraction: CgOutcome,
    pub without_subtraction: CgOutcome,
    /// Lambda accumulated before this substep.
    pub lambda_start: Vec<f64>,
    /// The system without subtraction, started at `lambda_start` and run for
    /// exactly as many iterations as `with_subtraction`. Its solution is
    /// `lambda_start + with_subtraction.x` in exact arithmetic.
    pub warm_started: CgOutcome,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub dt: f64,
    pub cg: CgOutcome,
    pub divergence_error: f64,
    pub n_surface_branch: usize,
    pub n_ill_conditioned: usize,
    pub reinitialized: bool,
    pub terms: Option<AdvectedTerms>,
    pub probe: Option<ConvergenceProbe>,
    pub metrics: MetricsRow,
}

/// `cfl h / max |u|` over fluid and solid particles, clamped to
/// `[dt_min, dt_max]`.
pub fn compute_dt(particles: &ParticleSet, h: f64, cfl: f64, dt_min: f64, dt_max: f64) -> f64 {
    let n = particles.n_fluid + particles.n_solid;
    let max = particles.u[..n].iter().fold(0.0f64, |m, u| m.max(u.norm()));
    let dt = if max > f64::EPSILON { cfl * h / max } else { dt_max };
    dt.clamp(dt_min, dt_max)
}

fn numeric(step: usize, message: impl Into<String>) -> SimError {
    SimError::Numeric {
        step,
        message: message.into(),
    }
}

/// Rebuild air, diagram, operators and boundary operators for the current
/// positions.
pub fn rebuild(particles: &mut ParticleSet, domain: &Aabb, h: f64) -> Result<(VoronoiDiagram, OperatorSet, BoundaryOps)> {
    resample_air(particles, domain, h);
    let diagram = build_diagram(particles, domain, h)?;
    let ops = assemble(&diagram)?;
    let bops = boundary_operators(&diagram, &ops);
    Ok((diagram, ops, bops))
}

/// Advance one substep.
pub fn step(state: &mut SimState, cfg: &StepConfig) -> Result<StepReport> {
    let n = state.particles.n_fluid;
    let index = state.step + 1;
    let reinit_every = if cfg.scheme == Scheme::Smsp { 1 } else { cfg.reinit_n };
    let reinitialized = state.step == 0 || state.flow.substeps_since_reinit >= reinit_every;
    if reinitialized {
        state.particles.reinitialize();
        state.flow.time = state.time;
        state.flow.reinitialize();
        state.reinit_count += 1;
    }

    let dt = compute_dt(&state.particles, state.h, cfg.cfl, cfg.dt_min, cfg.dt_max);
    state.particles.update_solid_velocity(state.time);
    state.particles.advect(dt, &state.domain, WALL_MARGIN * state.h)?;
    state.particles.update_solid_velocity(state.time + dt);
    let u_prev: Vec<Vec2> = state.particles.fluid_u().to_vec();

    let (diagram, ops, bops) = rebuild(&mut state.particles, &state.domain, state.h)?;

    let p = &mut state.particles;
    if cfg.surface_branch && cfg.scheme == Scheme::Lmcp {
        update_surface_flags(p, &diagram, cfg.layers_k);
    }
    // Pressure is solved in the potential gauge P = p - g.x: no branch
    // carries gravity explicitly, the free surface sees it through its
    // Dirichlet values and the interior through the accumulated potential.
    let mut dirichlet: Vec<Vec2> = diagram.cells[..n]
        .iter()
        .map(|cell| {
            cell.faces
                .iter()
                .filter(|f| f.kind == FaceKind::ToAir)
                .map(|f| f.normal * (f.area * -dt * state.gravity.dot(&f.midpoint)))
                .sum()
        })
        .collect();
    let mut potential: Vec<f64> = diagram.generators[..n].iter().map(|x| dt * state.gravity.dot(x)).collect();

    let mut terms = None;
    let mut u_long = None;
    let mut n_ill = 0;
    let flagged: Vec<bool>;
    let u_star: Vec<Vec2> = match cfg.scheme {
        Scheme::Ppm => {
            flagged = vec![true; n];
            u_prev.clone()
        }
        Scheme::Smsp => {
            flagged = vec![false; n];
            let kinetic: Vec<f64> = u_prev.iter().map(|u| 0.5 * u.norm_squared()).collect();
            let grad_k = gradient_pointwise(&ops, &kinetic);
            for i in 0..n {
                dirichlet[i] -= bops.air_area_normal[i] * (kinetic[i] * dt);
                potential[i] += kinetic[i] * dt;
            }
            (0..n).map(|i| u_prev[i] - dt * grad_k[i]).collect()
        }
        Scheme::Lmcp => {
            let fits = estimate_jacobian(p, &diagram);
            let mapped: Vec<Vec2> = fits.iter().zip(&p.u_anchor).map(|(f, us)| mapped_velocity(&f.t, us)).collect();
            for (i, f) in fits.iter().enumerate() {
                state.flow.jacobian[i] = f.t;
                state.flow.cond[i] = f.cond;
                state.flow.ill_conditioned[i] = f.ill_conditioned;
            }
            n_ill = fits.iter().filter(|f| f.ill_conditioned).count();
            flagged = (0..n)
                .map(|i| cfg.surface_branch && (p.surface[i] || fits[i].ill_conditioned))
                .collect();
            let t = advected_terms(&mapped, &p.lambda_acc, &u_prev, &p.grav_potential, &ops, dt);
            let interior = t.sum();
            let u: Vec<Vec2> = (0..n).map(|i| if flagged[i] { u_prev[i] } else { interior[i] }).collect();
            if cfg.probe_convergence {
                u_long = Some(
                    (0..n)
                        .map(|i| if flagged[i] { u[i] } else { u[i] + t.grad_lambda[i] })
                        .collect::<Vec<Vec2>>(),
                );
            }
            if cfg.record_terms {
                terms = Some(t);
            }
            u
        }
    };
    let n_surface_branch = flagged.iter().filter(|&&f| f).count();
    if u_star.iter().any(|u| !(u.x.is_finite() && u.y.is_finite())) {
        return Err(numeric(index, "non-finite intermediate velocity"));
    }

    let velocities = &p.u;
    let maxiter = cfg.maxiter.unwrap_or_else(|| CgOptions::default_maxiter(n));
    let opts = CgOptions::new(cfg.tol, maxiter);
    let mut system = assemble_system(&bops, &u_star, velocities, Some(&dirichlet));
    let probe = u_long.map(|u_long| {
        let mut long = assemble_system(&bops, &u_long, velocities, Some(&dirichlet));
        let shared = CgOptions {
            tol: 0.0,
            abs_tol: cfg.tol * crate::sparse::norm(&long.b),
            maxiter,
        };
        let zero = vec![0.0; n];
        let with_subtraction = cg_solve(&mut system, &zero, &shared);
        let fixed = CgOptions {
            tol: 0.0,
            abs_tol: 0.0,
            maxiter: with_subtraction.iterations,
        };
        let warm_started = cg_solve(&mut long, &p.lambda_acc, &fixed);
        ConvergenceProbe {
            with_subtraction,
            without_subtraction: cg_solve(&mut long, &zero, &shared),
            lambda_start: p.lambda_acc.clone(),
            warm_started,
        }
    });
    let cg = cg_solve(&mut system, &vec![0.0; n], &opts);
    if !cg.converged {
        log::warn!(
            "step {index}: CG stopped after {} iterations at residual {:e}",
            cg.iterations,
            cg.residual
        );
    }
    if cg.x.iter().any(|v| !v.is_finite()) {
        return Err(numeric(index, "non-finite pressure"));
    }
    let u_r = project(&u_star, &cg.x, &bops, Some(&dirichlet));
    if let Some(i) = u_r.iter().position(|u| !(u.x.is_finite() && u.y.is_finite())) {
        return Err(numeric(index, format!("non-finite velocity at particle {i}")));
    }

    // Back to the physical gauge. The potential taken up by this substep's
    // pressure joins the accumulated one only now.
    accumulate_gravity(&mut p.grav_acc, &mut p.grav_potential, &diagram.generators[..n], state.gravity, dt);
    let p_hat: Vec<f64> = (0..n).map(|i| cg.x[i] + potential[i]).collect();
    state.pressure = p_hat.iter().map(|v| v / dt).collect();
    for i in 0..n {
        let lambda = match cfg.scheme {
            Scheme::Smsp => p_hat[i] - dt * 0.5 * u_prev[i].norm_squared(),
            _ => p_hat[i],
        };
        p.lambda_acc[i] += lambda - 0.5 * dt * u_r[i].norm_squared();
    }
    p.fluid_u_mut().copy_from_slice(&u_r);

    let flux = bops.solid_flux(&p.u);
    let div = divergence_error(&bops, &u_r, &flux);
    let volume = diagram.volumes();
    let omega = vorticity(&diagram.generators[..n], &u_r, &diagram);
    let metrics = MetricsRow {
        step: index,
        time: state.time + dt,
        dt,
        energy: kinetic_energy(&u_r, &volume),
        divergence_error: div,
        cg_iterations: cg.iterations,
        cg_residual: cg.residual,
        cg_converged: cg.converged,
        max_speed: u_r.iter().fold(0.0f64, |m, u| m.max(u.norm())),
        total_volume: volume.iter().sum(),
        n_air: p.n_air(),
        n_surface_branch,
        peaks: vortex_peaks(&omega, &diagram, cfg.peak_threshold, cfg.peak_radius),
    };

    lloyd_relax(p, &diagram);
    state.diagram = Some(diagram);
    state.time += dt;
    state.step = index;
    state.flow.prev_time = state.flow.time;
    state.flow.time = state.time;
    state.flow.substeps_since_reinit += 1;

    Ok(StepReport {
        dt,
        cg,
        divergence_error: div,
        n_surface_branch,
        n_ill_conditioned: n_ill,
        reinitialized,
        terms,
        probe,
        metrics,
    })
}
