//! Matrix-form divergence, gradient and Laplacian built from cell geometry.
//!
//! For a face between fluid cells `i` and `j` with measure `A`, centroid `b`
//! and generator distance `l`:
//!
//! ```text
//! D_ij = (A/l) (x_j - b)          off-diagonal block
//! D_ii = sum_j (A/l) (b - x_i)    over fluid neighbours
//! G    = -D^T                     by transposition
//! L    = D V^-1 G                 symmetric negative semi-definite
//! ```
//!
//! Boundary faces (solid, air, wall) are not part of these operators; the
//! Poisson assembly adds them.

use rayon::prelude::*;

use crate::error::{Result, SimError};
use crate::geom::{sym_eigenvalues, Mat2, Vec2};
use crate::sparse::{BlockCsr, Csr};
use crate::voronoi::{FaceKind, VoronoiDiagram};

#[derive(Clone, Debug)]
pub struct OperatorSet {
    /// Divergence, cells x particles.
    pub d: BlockCsr,
    /// Gradient, particles x cells, exactly `-D^T`.
    pub g: BlockCsr,
    /// Cell volumes.
    pub volume: Vec<f64>,
    /// `D V^-1 G`.
    pub l: Csr,
}

impl OperatorSet {
    pub fn n(&self) -> usize {
        self.volume.len()
    }
}

/// `grad_{x_j} V_i` for every generator `j` sharing a face with fluid cell
/// `i`, plus the self-derivative `grad_{x_i} V_i`.
#[derive(Clone, Debug)]
pub struct VolumeGradients {
    /// `(i, j, grad_{x_j} V_i)`, `j` any generator id (fluid or ghost).
    pub pairs: Vec<(usize, usize, Vec2)>,
    /// `grad_{x_i} V_i = sum_j (A/l)(b - x_i)` over all generator neighbours.
    pub diag: Vec<Vec2>,
}

impl VolumeGradients {
    pub fn get(&self, i: usize, j: usize) -> Option<Vec2> {
        if i == j {
            return self.diag.get(i).copied();
        }
        self.pairs.iter().find(|&&(a, b, _)| a == i && b == j).map(|&(_, _, g)| g)
    }
}

pub fn volume_gradients(diagram: &VoronoiDiagram) -> VolumeGradients {
    let x = &diagram.generators;
    let mut pairs = Vec::new();
    let mut diag = Vec::with_capacity(diagram.n_fluid());
    for (i, cell) in diagram.cells.iter().enumerate() {
        let mut self_grad = Vec2::zeros();
        for f in &cell.faces {
            let Some(j) = f.j else { continue };
            let w = f.area / f.dist;
            pairs.push((i, j, w * (x[j] - f.midpoint)));
            self_grad += w * (f.midpoint - x[i]);
        }
        diag.push(self_grad);
    }
    VolumeGradients { pairs, diag }
}

/// Assemble `D`, `G`, `V` and `L` over the fluid cells.
pub fn assemble(diagram: &VoronoiDiagram) -> Result<OperatorSet> {
    let n = diagram.n_fluid();
    let floor = 1e-12 * diagram.spacing * diagram.spacing;
    for (i, c) in diagram.cells.iter().enumerate() {
        if !(c.volume >= floor) {
            return Err(SimError::DegenerateCell { id: i, volume: c.volume });
        }
    }
    let x = &diagram.generators;
    let rows: Vec<Vec<(usize, Vec2)>> = diagram
        .cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| {
            let mut row = Vec::new();
            let mut dii = Vec2::zeros();
            for f in cell.faces.iter().filter(|f| f.kind == FaceKind::Interior) {
                let j = f.j.expect("interior face has a neighbour");
                let w = f.area / f.dist;
                row.push((j, w * (x[j] - f.midpoint)));
                dii += w * (f.midpoint - x[i]);
            }
            row.push((i, dii));
            row.sort_by_key(|e| e.0);
            row
        })
        .collect();
    let d = BlockCsr::from_rows(n, rows);
    let g = d.neg_transpose();
    let volume = diagram.volumes();
    let inv_v: Vec<f64> = volume.iter().map(|v| 1.0 / v).collect();
    let mut l = d.weighted_gram(&inv_v);
    for v in &mut l.val {
        *v = -*v;
    }
    Ok(OperatorSet { d, g, volume, l })
}

/// `[Dv]_i`, the integrated divergence over cell `i`.
pub fn divergence(ops: &OperatorSet, v: &[Vec2]) -> Vec<f64> {
    ops.d.apply_to_vectors(v)
}

/// `V^-1 G p`, the pointwise gradient.
pub fn gradient_pointwise(ops: &OperatorSet, p: &[f64]) -> Vec<Vec2> {
    let mut g = ops.g.apply_to_scalars(p);
    for (gi, v) in g.iter_mut().zip(&ops.volume) {
        *gi /= *v;
    }
    g
}

/// Weighted least-squares linear fit `dy ~ J dx`. Returns `J` and the
/// condition number of the normal matrix, or `None` when it is singular.
pub(crate) fn fit_linear(samples: impl Iterator<Item = (f64, Vec2, Vec2)>) -> Option<(Mat2, f64)> {
    let mut m = Mat2::zeros();
    let mut c = Mat2::zeros();
    let mut count = 0;
    for (w, dx, dy) in samples {
        m += w * dx * dx.transpose();
        c += w * dy * dx.transpose();
        count += 1;
    }
    if count < 2 {
        return None;
    }
    let (lo, hi) = sym_eigenvalues(&m);
    if !(lo > 0.0) || !(hi.is_finite()) {
        return None;
    }
    let cond = hi / lo;
    let inv = m.try_inverse()?;
    Some((c * inv, cond))
}

/// Rank-deficiency threshold for the velocity-gradient fit.
const LS_MAX_COND: f64 = 1e12;

/// Per-particle velocity gradient `(grad u)_ab = du_a/dx_b` by weighted least
/// squares over fluid Voronoi neighbours (weights `A/l`). Particles whose
/// neighbourhood is rank-deficient get a zero matrix and a `true` flag.
pub fn ls_velocity_gradient(x: &[Vec2], u: &[Vec2], diagram: &VoronoiDiagram) -> (Vec<Mat2>, Vec<bool>) {
    diagram
        .cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| {
            let samples = cell
                .faces
                .iter()
                .filter(|f| f.kind == FaceKind::Interior)
                .map(|f| {
                    let j = f.j.unwrap();
                    (f.area / f.dist, x[j] - x[i], u[j] - u[i])
                });
            match fit_linear(samples) {
                Some((j, cond)) if cond <= LS_MAX_COND => (j, false),
                _ => (Mat2::zeros(), true),
            }
        })
        .unzip()
}

/// Scalar vorticity `dv/dx - du/dy` of a velocity gradient.
pub fn curl(grad: &Mat2) -> f64 {
    grad[(1, 0)] - grad[(0, 1)]
}
