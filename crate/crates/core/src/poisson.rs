//! Pressure Poisson system with free-surface and solid boundaries.
//!
//! Boundary faces extend the fluid divergence:
//!
//! * air face: the ghost takes the cell's own velocity, adding `A n . v_i`
//!   to the cell's diagonal block. Through `G = -D^T` this places `p = 0`
//!   on the face.
//! * solid or wall face: a prescribed flux `A n . u_b` moves to the
//!   right-hand side, with no pressure coupling.
//!
//! The solve is for `p_hat = p dt`; the corrected velocity is
//! `u = u* - V^-1 (G p_hat + c)`, where `c` carries non-zero Dirichlet values.

use std::collections::VecDeque;

use crate::geom::Vec2;
use crate::operators::OperatorSet;
use crate::sparse::{dot, norm, BlockCsr, Csr};
use crate::voronoi::{FaceKind, VoronoiDiagram};

/// Geometry-dependent part of the pressure system for one substep.
#[derive(Clone, Debug)]
pub struct BoundaryOps {
    /// Divergence including air faces, cells x fluid particles.
    pub d_full: BlockCsr,
    /// `-d_full^T`.
    pub g_full: BlockCsr,
    pub volume: Vec<f64>,
    /// `d_full V^-1 d_full^T` with isolated cells pinned.
    pub a: Csr,
    /// Per cell, `(generator id, A n)` over solid and wall faces. Walls use
    /// `usize::MAX` and have zero velocity.
    pub solid_faces: Vec<Vec<(usize, Vec2)>>,
    /// Per cell, `sum A n` over air faces.
    pub air_area_normal: Vec<Vec2>,
    pub dirichlet: Vec<bool>,
    /// Connected fluid components with no air face. Pressure is defined up
    /// to a constant on each.
    pub free_components: Vec<Vec<usize>>,
    /// Cells with no fluid neighbours and no usable boundary coupling; held
    /// at zero.
    pub pinned: Vec<usize>,
}

pub const WALL: usize = usize::MAX;

pub fn boundary_operators(diagram: &VoronoiDiagram, ops: &OperatorSet) -> BoundaryOps {
    let n = ops.n();
    let mut air_area_normal = vec![Vec2::zeros(); n];
    let mut solid_faces = vec![Vec::new(); n];
    let mut dirichlet = vec![false; n];
    for (i, cell) in diagram.cells.iter().enumerate() {
        for f in &cell.faces {
            match f.kind {
                FaceKind::ToAir => {
                    air_area_normal[i] += f.area * f.normal;
                    dirichlet[i] = true;
                }
                FaceKind::ToSolid => solid_faces[i].push((f.j.unwrap(), f.area * f.normal)),
                FaceKind::ToWall => solid_faces[i].push((WALL, f.area * f.normal)),
                FaceKind::Interior => {}
            }
        }
    }
    let rows: Vec<Vec<(usize, Vec2)>> = (0..n)
        .map(|i| {
            ops.d
                .row(i)
                .map(|(c, v)| if c == i { (c, v + air_area_normal[i]) } else { (c, v) })
                .collect()
        })
        .collect();
    let d_full = BlockCsr::from_rows(n, rows);
    let g_full = d_full.neg_transpose();
    let inv_v: Vec<f64> = ops.volume.iter().map(|v| 1.0 / v).collect();
    let mut a = d_full.weighted_gram(&inv_v);

    // Components over interior faces.
    let mut comp = vec![usize::MAX; n];
    let mut free_components = Vec::new();
    let mut pinned = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = start;
        let mut members = vec![start];
        comp[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for j in diagram.neighbors(i) {
                if comp[j] == usize::MAX {
                    comp[j] = id;
                    members.push(j);
                    queue.push_back(j);
                }
            }
        }
        if members.len() == 1 && dirichlet[start] {
            // A droplet closed off by air and nothing else has an empty row.
            let perimeter: f64 = diagram.cells[start].faces.iter().map(|f| f.area).sum();
            let row = d_full.get(start, start).norm();
            if row <= 1e-9 * perimeter {
                log::debug!("fluid cell {start} is enclosed by air; pinning its pressure to zero");
                pinned.push(start);
            }
            continue;
        }
        if members.iter().any(|&i| dirichlet[i]) {
            continue;
        }
        if members.len() == 1 {
            log::warn!("fluid cell {start} has no fluid neighbour and no free surface; pinning its pressure to zero");
            pinned.push(start);
        } else {
            members.sort_unstable();
            free_components.push(members);
        }
    }
    for &i in &pinned {
        a.pin(i);
    }
    BoundaryOps {
        d_full,
        g_full,
        volume: ops.volume.clone(),
        a,
        solid_faces,
        air_area_normal,
        dirichlet,
        free_components,
        pinned,
    }
}

impl BoundaryOps {
    pub fn n(&self) -> usize {
        self.volume.len()
    }

    /// Prescribed flux through solid and wall faces. `velocities` is indexed
    /// by generator id.
    pub fn solid_flux(&self, velocities: &[Vec2]) -> Vec<f64> {
        self.solid_faces
            .iter()
            .map(|faces| {
                faces
                    .iter()
                    .filter(|(j, _)| *j != WALL)
                    .map(|(j, an)| an.dot(&velocities[*j]))
                    .sum()
            })
            .collect()
    }

    /// `c_i = (sum_air A n) g_i` for one Dirichlet value `g_i` per cell.
    pub fn dirichlet_term(&self, values: &[f64]) -> Vec<Vec2> {
        self.air_area_normal.iter().zip(values).map(|(an, g)| an * *g).collect()
    }

    /// `(D_full u + f)_i`, the net outflow of each cell.
    pub fn net_flux(&self, u: &[Vec2], flux: &[f64]) -> Vec<f64> {
        let mut div = self.d_full.apply_to_vectors(u);
        for (d, f) in div.iter_mut().zip(flux) {
            *d += f;
        }
        div
    }

    fn remove_nullspace(&self, v: &mut [f64]) {
        for comp in &self.free_components {
            let mean = comp.iter().map(|&i| v[i]).sum::<f64>() / comp.len() as f64;
            for &i in comp {
                v[i] -= mean;
            }
        }
        for &i in &self.pinned {
            v[i] = 0.0;
        }
    }
}

/// Mean `|(D_full u + f)_i| / V_i`.
pub fn divergence_error(bops: &BoundaryOps, u: &[Vec2], flux: &[f64]) -> f64 {
    let div = bops.net_flux(u, flux);
    mean_scaled(&div, &bops.volume)
}

fn mean_scaled(r: &[f64], volume: &[f64]) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    r.iter().zip(volume).map(|(r, v)| (r / v).abs()).sum::<f64>() / r.len() as f64
}

#[derive(Clone, Debug)]
pub struct PoissonSystem<'a> {
    pub ops: &'a BoundaryOps,
    pub b: Vec<f64>,
    /// Mean divergence error per CG iteration of the last solve.
    pub history: Vec<f64>,
}

impl PoissonSystem<'_> {
    pub fn matrix(&self) -> &Csr {
        &self.ops.a
    }

    pub fn dirichlet_cells(&self) -> &[bool] {
        &self.ops.dirichlet
    }
}

/// Right-hand side `-(D_full u* + f) + D_full V^-1 c` for the corrected
/// velocity to be discretely divergence free. `c` is the air-face term
/// `sum_air A n g` of the Dirichlet values `g`.
pub fn assemble_system<'a>(
    bops: &'a BoundaryOps,
    u_star: &[Vec2],
    velocities: &[Vec2],
    dirichlet: Option<&[Vec2]>,
) -> PoissonSystem<'a> {
    let flux = bops.solid_flux(velocities);
    let mut b: Vec<f64> = bops.net_flux(u_star, &flux).into_iter().map(|v| -v).collect();
    if let Some(c) = dirichlet {
        let c: Vec<Vec2> = c
            .iter()
            .zip(&bops.volume)
            .map(|(c, v)| c / *v)
            .collect();
        for (bi, e) in b.iter_mut().zip(bops.d_full.apply_to_vectors(&c)) {
            *bi += e;
        }
    }
    bops.remove_nullspace(&mut b);
    PoissonSystem {
        ops: bops,
        b,
        history: Vec::new(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    /// Stop when `|b - A x| <= tol |b|`.
    pub tol: f64,
    /// Or when `|b - A x| <= abs_tol`.
    pub abs_tol: f64,
    pub maxiter: usize,
}

impl CgOptions {
    pub fn new(tol: f64, maxiter: usize) -> Self {
        Self {
            tol,
            abs_tol: 0.0,
            maxiter,
        }
    }

    /// `10 sqrt(n)` iterations.
    pub fn default_maxiter(n: usize) -> usize {
        ((10.0 * (n as f64).sqrt()).ceil() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Mean `|r_i| / V_i` after each iteration, starting with the initial guess.
    pub history: Vec<f64>,
}

/// Jacobi-preconditioned conjugate gradient on `system` from `x0`.
pub fn cg_solve(system: &mut PoissonSystem<'_>, x0: &[f64], opts: &CgOptions) -> CgOutcome {
    let out = conjugate_gradient(&system.ops.a, &system.b, x0, opts, |v| system.ops.remove_nullspace(v), &system.ops.volume);
    system.history = out.history.clone();
    out
}

/// Preconditioned CG with a caller-supplied projection onto the range of `a`.
pub fn conjugate_gradient(
    a: &Csr,
    b: &[f64],
    x0: &[f64],
    opts: &CgOptions,
    project: impl Fn(&mut [f64]),
    volume: &[f64],
) -> CgOutcome {
    let n = b.len();
    assert_eq!(x0.len(), n);
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let threshold = (opts.tol * norm(b)).max(opts.abs_tol);
    let mut x = x0.to_vec();
    let mut ax = vec![0.0; n];
    a.mul_vec_into(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    project(&mut r);
    let mut history = vec![mean_scaled(&r, volume)];
    let mut rnorm = norm(&r);
    if rnorm <= threshold {
        return CgOutcome {
            x,
            iterations: 0,
            residual: rnorm,
            converged: true,
            history,
        };
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    while iterations < opts.maxiter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        project(&mut r);
        iterations += 1;
        rnorm = norm(&r);
        history.push(mean_scaled(&r, volume));
        if rnorm <= threshold {
            break;
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        project(&mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    CgOutcome {
        x,
        iterations,
        residual: rnorm,
        converged: rnorm <= threshold,
        history,
    }
}

/// `u = u* - V^-1 (G_full p_hat + c)`.
pub fn project(u_star: &[Vec2], p_hat: &[f64], bops: &BoundaryOps, dirichlet: Option<&[Vec2]>) -> Vec<Vec2> {
    let gp = bops.g_full.apply_to_scalars(p_hat);
    (0..u_star.len())
        .map(|i| {
            let mut g = gp[i];
            if let Some(c) = dirichlet {
                g += c[i];
            }
            u_star[i] - g / bops.volume[i]
        })
        .collect()
}
