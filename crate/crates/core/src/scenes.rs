//! Initial particle sets for the validation scenes.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};
use crate::geom::{Aabb, Vec2};
use crate::particles::{ParticleSet, SolidMotion};
use crate::voronoi::{build_diagram, lloyd_relax};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SceneId {
    TaylorPair,
    TaylorGreen,
    Leapfrog,
    DamBreak2d,
    Karman,
    MovingBoard2d,
}

impl SceneId {
    pub const ALL: [SceneId; 6] = [
        SceneId::TaylorPair,
        SceneId::TaylorGreen,
        SceneId::Leapfrog,
        SceneId::DamBreak2d,
        SceneId::Karman,
        SceneId::MovingBoard2d,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SceneId::TaylorPair => "taylor_pair",
            SceneId::TaylorGreen => "taylor_green",
            SceneId::Leapfrog => "leapfrog",
            SceneId::DamBreak2d => "dam_break_2d",
            SceneId::Karman => "karman",
            SceneId::MovingBoard2d => "moving_board_2d",
        }
    }

    /// Gravity used when the configuration does not set one.
    pub fn default_gravity(&self) -> Vec2 {
        match self {
            SceneId::DamBreak2d | SceneId::MovingBoard2d => Vec2::new(0.0, -9.8),
            _ => Vec2::zeros(),
        }
    }
}

impl fmt::Display for SceneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneId {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        SceneId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| SimError::Config(format!("unknown scene `{s}`")))
    }
}

/// Scene parameters that can be overridden from the configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    /// Taylor pair: peak speed `U`.
    pub pair_u: f64,
    /// Taylor pair: core radius `a`.
    pub pair_a: f64,
    /// Taylor pair: distance between the two centres.
    pub pair_separation: f64,
    /// Taylor pair: side of the square box.
    pub pair_box: f64,
    /// Leapfrog: circulation magnitude of each vortex.
    pub leapfrog_gamma: f64,
    /// Leapfrog: Gaussian core radius.
    pub leapfrog_sigma: f64,
    /// Dam break: column width and height as fractions of the box.
    pub dam_width: f64,
    pub dam_height: f64,
    /// Karman: paddle speed, channel length and obstacle radius.
    pub inflow_speed: f64,
    pub channel_length: f64,
    pub obstacle_radius: f64,
    /// Moving board: horizontal travel and period of the oscillation.
    pub board_amplitude: f64,
    pub board_period: f64,
    /// Uniform random displacement of the initial lattice, in units of `h`.
    pub jitter: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            pair_u: 1.0,
            pair_a: 0.3,
            pair_separation: 0.815,
            pair_box: 2.0,
            leapfrog_gamma: 0.6,
            leapfrog_sigma: 0.03,
            dam_width: 0.25,
            dam_height: 0.5,
            inflow_speed: 1.0,
            channel_length: 4.0,
            obstacle_radius: 0.1,
            board_amplitude: 1.2,
            board_period: 8.0,
            jitter: 0.0,
        }
    }
}

impl SceneParams {
    /// Default vortex-peak merge radius: about one core size.
    pub fn peak_radius(&self, scene: SceneId) -> f64 {
        match scene {
            SceneId::TaylorPair => self.pair_a,
            SceneId::Leapfrog => 2.0 * self.leapfrog_sigma,
            SceneId::Karman => self.obstacle_radius,
            SceneId::TaylorGreen => 0.25,
            SceneId::DamBreak2d | SceneId::MovingBoard2d => 0.1,
        }
    }
}

/// A ready-to-run initial state.
#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub id: SceneId,
    pub domain: Aabb,
    pub h: f64,
    pub gravity: Vec2,
    pub particles: ParticleSet,
}

pub fn build_scene(id: SceneId, h: f64, params: &SceneParams, seed: u64) -> Result<SceneSpec> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SimError::Config(format!("spacing must be positive, got {h}")));
    }
    let (domain, mut particles) = match id {
        SceneId::TaylorPair => taylor_vortex_pair(h, params),
        SceneId::TaylorGreen => taylor_green(h),
        SceneId::Leapfrog => leapfrog(h, params),
        SceneId::DamBreak2d => dam_break_2d(h, params),
        SceneId::Karman => karman_street(h, params),
        SceneId::MovingBoard2d => moving_board_2d(h, params),
    };
    if params.jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = params.jitter * h;
        for i in particles.fluid_range() {
            let d = Vec2::new(rng.gen_range(-amp..=amp), rng.gen_range(-amp..=amp));
            particles.x[i] = domain.clamp_inside(&(particles.x[i] + d), 1e-3 * h);
        }
        particles.reinitialize();
    }
    Ok(SceneSpec {
        id,
        domain,
        h,
        gravity: id.default_gravity(),
        particles,
    })
}

/// Cell-centred lattice points of spacing `h` in `domain` that satisfy `keep`.
pub fn lattice_points(domain: &Aabb, h: f64, keep: impl Fn(&Vec2) -> bool) -> Vec<Vec2> {
    let nx = (domain.width() / h).round() as usize;
    let ny = (domain.height() / h).round() as usize;
    let mut out = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let p = domain.min + Vec2::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            if keep(&p) {
                out.push(p);
            }
        }
    }
    out
}

/// `n` uniformly random points in `domain` after `iterations` Lloyd sweeps.
pub fn relaxed_points(domain: &Aabb, n: usize, seed: u64, iterations: usize) -> Vec<Vec2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec2> = (0..n)
        .map(|_| {
            Vec2::new(
                rng.gen_range(domain.min.x..domain.max.x),
                rng.gen_range(domain.min.y..domain.max.y),
            )
        })
        .collect();
    let h = (domain.area() / n as f64).sqrt();
    let mut set = ParticleSet::fluid_only(pts, vec![Vec2::zeros(); n]);
    for _ in 0..iterations {
        let d = build_diagram(&set, domain, h).expect("random points give valid cells");
        lloyd_relax(&mut set, &d);
    }
    set.x
}

fn with_velocity(points: Vec<Vec2>, f: impl Fn(&Vec2) -> Vec2) -> ParticleSet {
    let u = points.iter().map(f).collect();
    ParticleSet::fluid_only(points, u)
}

/// Tangential speed of a Taylor vortex.
pub fn taylor_speed(r: f64, u: f64, a: f64) -> f64 {
    u * (r / a) * ((1.0 - r * r / (a * a)) / 2.0).exp()
}

/// Analytic vorticity of a Taylor vortex.
pub fn taylor_vorticity(r: f64, u: f64, a: f64) -> f64 {
    let q = r * r / (a * a);
    u / a * (2.0 - q) * ((1.0 - q) / 2.0).exp()
}

pub fn taylor_pair_centers(params: &SceneParams) -> [Vec2; 2] {
    let c = 0.5 * params.pair_box;
    let s = 0.5 * params.pair_separation;
    [Vec2::new(c - s, c), Vec2::new(c + s, c)]
}

pub fn taylor_pair_velocity(p: &Vec2, params: &SceneParams) -> Vec2 {
    let (u, a) = (params.pair_u, params.pair_a);
    taylor_pair_centers(params)
        .iter()
        .map(|c| {
            let d = p - c;
            let q = d.norm_squared() / (a * a);
            // u_theta(r) e_theta with the 1/r of e_theta folded in.
            u / a * ((1.0 - q) / 2.0).exp() * Vec2::new(-d.y, d.x)
        })
        .sum()
}

pub fn taylor_vortex_pair(h: f64, params: &SceneParams) -> (Aabb, ParticleSet) {
    let domain = Aabb::from_size(params.pair_box, params.pair_box);
    let pts = lattice_points(&domain, h, |_| true);
    (domain, with_velocity(pts, |p| taylor_pair_velocity(p, params)))
}

pub fn taylor_green_velocity(p: &Vec2) -> Vec2 {
    Vec2::new(
        (PI * p.x).sin() * (PI * p.y).cos(),
        -(PI * p.x).cos() * (PI * p.y).sin(),
    )
}

pub fn taylor_green(h: f64) -> (Aabb, ParticleSet) {
    let domain = Aabb::unit();
    let pts = lattice_points(&domain, h, |_| true);
    (domain, with_velocity(pts, taylor_green_velocity))
}

/// Leapfrog vortex centres and signed circulations.
pub fn leapfrog_vortices(params: &SceneParams) -> [(Vec2, f64); 4] {
    let g = params.leapfrog_gamma;
    [
        (Vec2::new(0.25, 0.26), -g),
        (Vec2::new(0.25, 0.38), -g),
        (Vec2::new(0.25, 0.62), g),
        (Vec2::new(0.25, 0.74), g),
    ]
}

/// Velocity of a Gaussian-regularised point vortex.
pub fn point_vortex_velocity(p: &Vec2, center: &Vec2, gamma: f64, sigma: f64) -> Vec2 {
    let d = p - center;
    let r2 = d.norm_squared();
    if r2 < 1e-300 {
        return Vec2::zeros();
    }
    let s = gamma / (2.0 * PI * r2) * (1.0 - (-r2 / (sigma * sigma)).exp());
    s * Vec2::new(-d.y, d.x)
}

pub fn leapfrog_velocity(p: &Vec2, params: &SceneParams) -> Vec2 {
    leapfrog_vortices(params)
        .iter()
        .map(|(c, g)| point_vortex_velocity(p, c, *g, params.leapfrog_sigma))
        .sum()
}

pub fn leapfrog(h: f64, params: &SceneParams) -> (Aabb, ParticleSet) {
    let domain = Aabb::from_size(2.0, 1.0);
    let pts = lattice_points(&domain, h, |_| true);
    (domain, with_velocity(pts, |p| leapfrog_velocity(p, params)))
}

/// Solid particles at `h/2` inside the floor and side walls.
fn wall_solids(domain: &Aabb, h: f64) -> Vec<Vec2> {
    let nx = (domain.width() / h).round() as usize;
    let ny = (domain.height() / h).round() as usize;
    let mut out = Vec::new();
    for i in 0..nx {
        out.push(domain.min + Vec2::new((i as f64 + 0.5) * h, 0.5 * h));
    }
    for j in 1..ny {
        let y = (j as f64 + 0.5) * h;
        out.push(domain.min + Vec2::new(0.5 * h, y));
        out.push(domain.min + Vec2::new(domain.width() - 0.5 * h, y));
    }
    out
}

pub fn dam_break_2d(h: f64, params: &SceneParams) -> (Aabb, ParticleSet) {
    let domain = Aabb::unit();
    let w = params.dam_width * domain.width();
    let top = params.dam_height * domain.height();
    let fluid = lattice_points(&domain, h, |p| p.x > h && p.y > h && p.x < w && p.y < top);
    let n = fluid.len();
    let solids = wall_solids(&domain, h);
    let ns = solids.len();
    let set = ParticleSet::new(fluid, vec![Vec2::zeros(); n], solids, vec![Vec2::zeros(); ns]);
    (domain, set)
}

pub fn karman_street(h: f64, params: &SceneParams) -> (Aabb, ParticleSet) {
    let domain = Aabb::from_size(params.channel_length, 1.0);
    let paddle = 2.0 * h;
    let center = Vec2::new(1.0, 0.5);
    let r = params.obstacle_radius;
    let outflow = domain.width() - 1.0;
    let fluid = lattice_points(&domain, h, |p| {
        p.x > paddle && p.x < outflow && (p - center).norm() >= r + 0.5 * h
    });
    let inflow = Vec2::new(params.inflow_speed, 0.0);
    let mut solids = lattice_points(&domain, h, |p| p.x < paddle);
    let n_paddle = solids.len();
    solids.extend(lattice_points(&domain, h, |p| (p - center).norm() < r));
    let mut solid_u = vec![inflow; n_paddle];
    solid_u.resize(solids.len(), Vec2::zeros());
    let n = fluid.len();
    let mut set = ParticleSet::new(fluid, vec![inflow; n], solids, solid_u);
    set.solid_motion = SolidMotion::Conveyor { lo: 0.0, hi: paddle };
    (domain, set)
}

pub fn moving_board_2d(h: f64, params: &SceneParams) -> (Aabb, ParticleSet) {
    let domain = Aabb::from_size(2.0, 1.0);
    let board_x = [0.25 - 0.5 * h, 0.25 + 0.5 * h];
    let board_top = 0.8;
    let on_board = |p: &Vec2| board_x.iter().any(|bx| (p.x - bx).abs() < 0.5 * h) && p.y < board_top;
    let fluid = lattice_points(&domain, h, |p| p.y < 0.5 && !on_board(p) && (p.x - 0.25).abs() > 1.5 * h);
    let solids = lattice_points(&domain, h, |p| on_board(p));
    let n = fluid.len();
    let ns = solids.len();
    let center0 = Vec2::new(0.25, 0.5 * board_top);
    let mut set = ParticleSet::new(fluid, vec![Vec2::zeros(); n], solids, vec![Vec2::zeros(); ns]);
    set.solid_motion = SolidMotion::Board {
        center0,
        amplitude: params.board_amplitude,
        period: params.board_period,
        omega: 0.0,
    };
    set.update_solid_velocity(0.0);
    (domain, set)
}
