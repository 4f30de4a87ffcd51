//! Clipped Voronoi diagram of the fluid particles.
//!
//! Each fluid cell is built by clipping the domain box with the bisectors of
//! nearby generators (fluid, solid and air alike), visiting candidates ring by
//! ring on a uniform bin grid until no unvisited generator can still cut the
//! cell (the security-radius test: every generator farther than twice the cell
//! radius is irrelevant). Ghost cells are never built; a fluid face is labeled
//! by the kind of generator across it, or `ToWall` when it comes from the box.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;

use crate::error::{Result, SimError};
use crate::geom::{cross, Aabb, Vec2};
use crate::particles::{ParticleKind, ParticleSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Wall {
    Bottom,
    Right,
    Top,
    Left,
}

impl Wall {
    pub fn normal(&self) -> Vec2 {
        match self {
            Wall::Bottom => Vec2::new(0.0, -1.0),
            Wall::Right => Vec2::new(1.0, 0.0),
            Wall::Top => Vec2::new(0.0, 1.0),
            Wall::Left => Vec2::new(-1.0, 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FaceKind {
    Interior,
    ToSolid,
    ToAir,
    ToWall,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EdgeLabel {
    Wall(Wall),
    Generator(usize),
}

/// One face of a fluid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct VoronoiFace {
    /// Owning fluid cell.
    pub i: usize,
    /// Generator across the face; `None` for box walls.
    pub j: Option<usize>,
    pub kind: FaceKind,
    /// Face measure `A_ij` (a length in 2D).
    pub area: f64,
    /// Face centroid `b_ij`.
    pub midpoint: Vec2,
    /// Generator distance `l_ij`. For walls, the distance to the mirror image.
    pub dist: f64,
    /// Unit normal pointing out of cell `i`.
    pub normal: Vec2,
    pub wall: Option<Wall>,
}

impl VoronoiFace {
    /// Distance from the owning generator to the face plane (`d_ij`).
    pub fn d_ij(&self, x_i: &Vec2) -> f64 {
        (self.midpoint - x_i).dot(&self.normal)
    }

    /// Distance from the neighbouring generator to the face plane (`d_ji`).
    pub fn d_ji(&self, x_j: &Vec2) -> f64 {
        (x_j - self.midpoint).dot(&self.normal)
    }
}

#[derive(Clone, Debug)]
pub struct VoronoiCell {
    pub volume: f64,
    pub centroid: Vec2,
    /// Counter-clockwise polygon.
    pub vertices: Vec<Vec2>,
    /// Faces sorted with fluid neighbours first (ascending id), then the rest
    /// in polygon order.
    pub faces: Vec<VoronoiFace>,
}

impl VoronoiCell {
    pub fn fluid_neighbors(&self) -> impl Iterator<Item = usize> + '_ {
        self.faces
            .iter()
            .filter(|f| f.kind == FaceKind::Interior)
            .filter_map(|f| f.j)
    }

    pub fn has_face(&self, kind: FaceKind) -> bool {
        self.faces.iter().any(|f| f.kind == kind)
    }
}

/// Fluid cells of the clipped diagram, indexed by fluid particle id.
#[derive(Clone, Debug)]
pub struct VoronoiDiagram {
    pub domain: Aabb,
    /// Nominal particle spacing `h` the diagram was built with.
    pub spacing: f64,
    /// Generator positions actually used (after any coincidence perturbation).
    pub generators: Vec<Vec2>,
    pub kinds: Vec<ParticleKind>,
    pub cells: Vec<VoronoiCell>,
}

impl VoronoiDiagram {
    pub fn n_fluid(&self) -> usize {
        self.cells.len()
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.volume).collect()
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.cells[i].fluid_neighbors()
    }
}

/// Uniform bin grid over a point set.
pub(crate) struct BinGrid {
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    start: Vec<usize>,
    items: Vec<usize>,
}

impl BinGrid {
    pub(crate) fn new(points: &[Vec2], ids: impl Iterator<Item = usize> + Clone, cell: f64, bounds: &Aabb) -> Self {
        let mut lo = bounds.min;
        let mut hi = bounds.max;
        for i in ids.clone() {
            lo = lo.inf(&points[i]);
            hi = hi.sup(&points[i]);
        }
        let nx = (((hi.x - lo.x) / cell).floor() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) / cell).floor() as usize + 1).max(1);
        let mut grid = Self {
            origin: lo,
            cell,
            nx,
            ny,
            start: vec![0; nx * ny + 1],
            items: vec![],
        };
        let bins: Vec<(usize, usize)> = ids.map(|i| (grid.bin_of(&points[i]), i)).collect();
        for &(b, _) in &bins {
            grid.start[b + 1] += 1;
        }
        for b in 0..nx * ny {
            grid.start[b + 1] += grid.start[b];
        }
        let mut next = grid.start.clone();
        grid.items = vec![0; bins.len()];
        for (b, i) in bins {
            grid.items[next[b]] = i;
            next[b] += 1;
        }
        grid
    }

    fn coords(&self, p: &Vec2) -> (i64, i64) {
        let cx = ((p.x - self.origin.x) / self.cell).floor() as i64;
        let cy = ((p.y - self.origin.y) / self.cell).floor() as i64;
        (cx.clamp(0, self.nx as i64 - 1), cy.clamp(0, self.ny as i64 - 1))
    }

    fn bin_of(&self, p: &Vec2) -> usize {
        let (cx, cy) = self.coords(p);
        cy as usize * self.nx + cx as usize
    }

    fn bin_items(&self, cx: i64, cy: i64) -> &[usize] {
        if cx < 0 || cy < 0 || cx >= self.nx as i64 || cy >= self.ny as i64 {
            return &[];
        }
        let b = cy as usize * self.nx + cx as usize;
        &self.items[self.start[b]..self.start[b + 1]]
    }

    /// Items in the square ring at Chebyshev bin distance `k` around `(cx, cy)`.
    fn ring(&self, cx: i64, cy: i64, k: i64, out: &mut Vec<usize>) {
        out.clear();
        if k == 0 {
            out.extend_from_slice(self.bin_items(cx, cy));
            return;
        }
        for dx in -k..=k {
            out.extend_from_slice(self.bin_items(cx + dx, cy - k));
            out.extend_from_slice(self.bin_items(cx + dx, cy + k));
        }
        for dy in (-k + 1)..k {
            out.extend_from_slice(self.bin_items(cx - k, cy + dy));
            out.extend_from_slice(self.bin_items(cx + k, cy + dy));
        }
    }

    fn max_ring(&self, cx: i64, cy: i64) -> i64 {
        let a = cx.max(self.nx as i64 - 1 - cx);
        let b = cy.max(self.ny as i64 - 1 - cy);
        a.max(b)
    }

    /// Distance from `p` to the nearest item within `radius`, if any.
    pub(crate) fn nearest_within(&self, points: &[Vec2], p: &Vec2, radius: f64) -> Option<f64> {
        let (cx, cy) = self.coords(p);
        let reach = (radius / self.cell).ceil() as i64 + 1;
        let mut best = f64::INFINITY;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                for &i in self.bin_items(cx + dx, cy + dy) {
                    best = best.min((points[i] - p).norm());
                }
            }
        }
        (best <= radius).then_some(best)
    }
}

type Polygon = Vec<(Vec2, EdgeLabel)>;

fn box_polygon(domain: &Aabb) -> Polygon {
    vec![
        (domain.min, EdgeLabel::Wall(Wall::Bottom)),
        (Vec2::new(domain.max.x, domain.min.y), EdgeLabel::Wall(Wall::Right)),
        (domain.max, EdgeLabel::Wall(Wall::Top)),
        (Vec2::new(domain.min.x, domain.max.y), EdgeLabel::Wall(Wall::Left)),
    ]
}

/// Keep the half-plane closer to `xi` than to `xj`. Returns `None` when the
/// bisector does not cut the polygon.
fn clip_polygon(poly: &Polygon, xi: &Vec2, xj: &Vec2, j: usize, eps: f64) -> Option<Polygon> {
    let d = xj - xi;
    let m = 0.5 * (xi + xj);
    let s: Vec<f64> = poly.iter().map(|(v, _)| (v - m).dot(&d)).collect();
    if s.iter().all(|&x| x <= 0.0) {
        return None;
    }
    let n = poly.len();
    let mut out: Polygon = Vec::with_capacity(n + 1);
    let push = |out: &mut Polygon, v: Vec2, label: EdgeLabel| {
        if let Some(last) = out.last_mut() {
            if (last.0 - v).norm() <= eps {
                // Zero-length edge: keep the earlier position, take the new edge.
                last.1 = label;
                return;
            }
        }
        out.push((v, label));
    };
    for k in 0..n {
        let (a, la) = poly[k];
        let b = poly[(k + 1) % n].0;
        let (sa, sb) = (s[k], s[(k + 1) % n]);
        if sa <= 0.0 {
            push(&mut out, a, la);
            if sb > 0.0 {
                let t = sa / (sa - sb);
                push(&mut out, a + t * (b - a), EdgeLabel::Generator(j));
            }
        } else if sb <= 0.0 {
            let t = sa / (sa - sb);
            push(&mut out, a + t * (b - a), la);
        }
    }
    while out.len() > 1 && (out[out.len() - 1].0 - out[0].0).norm() <= eps {
        out.pop();
    }
    Some(out)
}

fn polygon_area_centroid(poly: &[Vec2]) -> (f64, Vec2) {
    let n = poly.len();
    if n < 3 {
        return (0.0, poly.first().copied().unwrap_or_else(Vec2::zeros));
    }
    // Shift to the first vertex for accuracy.
    let o = poly[0];
    let mut area2 = 0.0;
    let mut c = Vec2::zeros();
    for k in 1..n - 1 {
        let a = poly[k] - o;
        let b = poly[k + 1] - o;
        let w = cross(&a, &b);
        area2 += w;
        c += w * (a + b);
    }
    if area2 == 0.0 {
        return (0.0, o);
    }
    (0.5 * area2, o + c / (3.0 * area2))
}

struct RawCell {
    polygon: Polygon,
}

fn build_raw_cell(i: usize, gens: &[Vec2], grid: &BinGrid, domain: &Aabb, eps: f64) -> RawCell {
    let xi = gens[i];
    let mut poly = box_polygon(domain);
    let (cx, cy) = grid.coords(&xi);
    let home_lo = grid.origin + Vec2::new(cx as f64, cy as f64) * grid.cell;
    let margin = (xi.x - home_lo.x)
        .min(home_lo.x + grid.cell - xi.x)
        .min(xi.y - home_lo.y)
        .min(home_lo.y + grid.cell - xi.y)
        .max(0.0);
    let max_ring = grid.max_ring(cx, cy);
    let mut ring = Vec::new();
    let mut cand: Vec<(f64, usize)> = Vec::new();
    for k in 0..=max_ring {
        grid.ring(cx, cy, k, &mut ring);
        cand.clear();
        cand.extend(ring.iter().filter(|&&j| j != i).map(|&j| ((gens[j] - xi).norm_squared(), j)));
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut r2 = poly.iter().map(|(v, _)| (v - xi).norm_squared()).fold(0.0, f64::max);
        for &(d2, j) in &cand {
            if d2 > 4.0 * r2 {
                break;
            }
            if let Some(next) = clip_polygon(&poly, &xi, &gens[j], j, eps) {
                poly = next;
                r2 = poly.iter().map(|(v, _)| (v - xi).norm_squared()).fold(0.0, f64::max);
            }
        }
        let covered = k as f64 * grid.cell + margin;
        if 4.0 * r2 <= covered * covered {
            break;
        }
    }
    RawCell { polygon: poly }
}

/// Deterministic unit direction derived from an id.
fn hash_direction(id: usize) -> Vec2 {
    let h = (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(29) ^ 0xD1B5_4A32_D192_ED03;
    let angle = (h >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
    Vec2::new(angle.cos(), angle.sin())
}

fn separate_coincident(gens: &mut [Vec2], h: f64, domain: &Aabb) {
    let tol = 1e-12 * h;
    let grid = BinGrid::new(gens, 0..gens.len(), h, domain);
    let mut moved = Vec::new();
    for i in 0..gens.len() {
        let (cx, cy) = grid.coords(&gens[i]);
        'outer: for dy in -1..=1 {
            for dx in -1..=1 {
                for &j in grid.bin_items(cx + dx, cy + dy) {
                    if j < i && (gens[j] - gens[i]).norm() <= tol {
                        moved.push(i);
                        break 'outer;
                    }
                }
            }
        }
    }
    for i in moved {
        log::warn!("generator {i} coincides with another generator; perturbing by 1e-10 h");
        gens[i] += 1e-10 * h * hash_direction(i);
    }
}

/// Build the clipped diagram. `h` is the nominal particle spacing.
pub fn build_diagram(particles: &ParticleSet, domain: &Aabb, h: f64) -> Result<VoronoiDiagram> {
    let mut gens = particles.x.clone();
    separate_coincident(&mut gens, h, domain);
    let n_fluid = particles.n_fluid;
    let grid = BinGrid::new(&gens, 0..gens.len(), h, domain);
    let eps = 1e-12 * domain.diagonal().max(h);

    let raws: Vec<RawCell> = (0..n_fluid)
        .into_par_iter()
        .map(|i| build_raw_cell(i, &gens, &grid, domain, eps))
        .collect();

    // Canonical fluid-fluid faces, measured on the lower-id side when both
    // sides see the face.
    let mut shared: BTreeMap<(usize, usize), (usize, f64, Vec2)> = BTreeMap::new();
    let mut cells = Vec::with_capacity(n_fluid);
    let mut non_shared: Vec<Vec<VoronoiFace>> = Vec::with_capacity(n_fluid);
    for (i, raw) in raws.iter().enumerate() {
        let verts: Vec<Vec2> = raw.polygon.iter().map(|(v, _)| *v).collect();
        let (volume, centroid) = polygon_area_centroid(&verts);
        if !(volume > 1e-12 * h * h) {
            return Err(SimError::DegenerateCell { id: i, volume });
        }
        let xi = gens[i];
        let min_face = 1e-10 * volume.sqrt();
        let n = raw.polygon.len();
        let mut others = Vec::new();
        for k in 0..n {
            let (a, label) = raw.polygon[k];
            let b = raw.polygon[(k + 1) % n].0;
            let len = (b - a).norm();
            if len <= min_face {
                continue;
            }
            let mid = 0.5 * (a + b);
            match label {
                EdgeLabel::Generator(j) if particles.kind[j] == ParticleKind::Fluid => {
                    let key = (i.min(j), i.max(j));
                    match shared.get(&key) {
                        Some(&(owner, _, _)) if owner == key.0 => {}
                        _ => {
                            shared.insert(key, (i, len, mid));
                        }
                    }
                }
                EdgeLabel::Generator(j) => {
                    let xj = gens[j];
                    let l = (xj - xi).norm();
                    let kind = match particles.kind[j] {
                        ParticleKind::Solid => FaceKind::ToSolid,
                        _ => FaceKind::ToAir,
                    };
                    others.push(VoronoiFace {
                        i,
                        j: Some(j),
                        kind,
                        area: len,
                        midpoint: mid,
                        dist: l,
                        normal: (xj - xi) / l,
                        wall: None,
                    });
                }
                EdgeLabel::Wall(w) => {
                    let nrm = w.normal();
                    let d = (mid - xi).dot(&nrm);
                    others.push(VoronoiFace {
                        i,
                        j: None,
                        kind: FaceKind::ToWall,
                        area: len,
                        midpoint: mid,
                        dist: 2.0 * d,
                        normal: nrm,
                        wall: Some(w),
                    });
                }
            }
        }
        non_shared.push(others);
        cells.push(VoronoiCell {
            volume,
            centroid,
            vertices: verts,
            faces: Vec::new(),
        });
    }

    let mut interior: Vec<Vec<VoronoiFace>> = vec![Vec::new(); n_fluid];
    for (&(a, b), &(_, area, mid)) in &shared {
        let l = (gens[b] - gens[a]).norm();
        let nab = (gens[b] - gens[a]) / l;
        for (i, j, nrm) in [(a, b, nab), (b, a, -nab)] {
            interior[i].push(VoronoiFace {
                i,
                j: Some(j),
                kind: FaceKind::Interior,
                area,
                midpoint: mid,
                dist: l,
                normal: nrm,
                wall: None,
            });
        }
    }
    for (i, cell) in cells.iter_mut().enumerate() {
        let mut faces = std::mem::take(&mut interior[i]);
        faces.sort_by_key(|f| f.j);
        faces.append(&mut non_shared[i]);
        cell.faces = faces;
    }

    Ok(VoronoiDiagram {
        domain: *domain,
        spacing: h,
        generators: gens,
        kinds: particles.kind.clone(),
        cells,
    })
}

/// Snap fluid particles to their cell centroids. Cells with a `ToAir` face
/// keep their generator: their centroid is set by where the air ghosts
/// happen to fall, and snapping to it would move the free surface.
pub fn lloyd_relax(particles: &mut ParticleSet, diagram: &VoronoiDiagram) {
    for (i, cell) in diagram.cells.iter().enumerate() {
        if !cell.has_face(FaceKind::ToAir) {
            particles.x[i] = cell.centroid;
        }
    }
}

/// Fluid cells within `k` adjacency hops of the free surface. Cells with a
/// `ToAir` face form layer 1.
pub fn adjacency_layers(diagram: &VoronoiDiagram, k: usize) -> BTreeSet<usize> {
    assert!(k >= 1, "layer count must be positive");
    let mut depth = vec![usize::MAX; diagram.n_fluid()];
    let mut queue = VecDeque::new();
    for (i, cell) in diagram.cells.iter().enumerate() {
        if cell.has_face(FaceKind::ToAir) {
            depth[i] = 1;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        if depth[i] >= k {
            continue;
        }
        for j in diagram.neighbors(i) {
            if depth[j] == usize::MAX {
                depth[j] = depth[i] + 1;
                queue.push_back(j);
            }
        }
    }
    depth
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= k)
        .map(|(i, _)| i)
        .collect()
}

/// Air lattice points closer than this (in units of `h`) to a fluid particle
/// are treated as inside the liquid.
pub const AIR_MIN_GAP: f64 = 0.99;
/// Width of the air band around the liquid, in units of `h`.
pub const AIR_BAND: f64 = 3.0;
/// Enclosed gaps of at most this many lattice sites are sampling holes in the
/// liquid, not air.
pub const AIR_MAX_POCKET: usize = 8;
/// Air lattice points closer than this (in units of `h`) to a solid are dropped.
pub const AIR_SOLID_GAP: f64 = 0.5;

/// Regenerate the air ghosts: lattice points of spacing `h` (cell-centred in
/// `domain`) lying in the empty band within `AIR_BAND * h` of the liquid.
///
/// A gap enclosed by liquid counts only if it reaches bulk air (a site with
/// no liquid within the band) or spans more than `AIR_MAX_POCKET` sites.
/// Smaller holes are sampling gaps of the particle set, not bubbles.
pub fn resample_air(particles: &mut ParticleSet, domain: &Aabb, h: f64) {
    #[derive(Clone, Copy, PartialEq)]
    enum Site {
        Liquid,
        Gap,
        Bulk,
    }
    let fluid_grid = BinGrid::new(&particles.x, particles.fluid_range(), h, domain);
    let solid_grid = BinGrid::new(&particles.x, particles.solid_range(), h, domain);
    let nx = (domain.width() / h).round() as usize;
    let ny = (domain.height() / h).round() as usize;
    let band = AIR_BAND * h * (1.0 + 1e-9);
    let site = |ix: usize, jy: usize| domain.min + Vec2::new((ix as f64 + 0.5) * h, (jy as f64 + 0.5) * h);
    let sites: Vec<Site> = (0..nx * ny)
        .into_par_iter()
        .map(|k| match fluid_grid.nearest_within(&particles.x, &site(k % nx, k / nx), band) {
            None => Site::Bulk,
            Some(d) if d < AIR_MIN_GAP * h => Site::Liquid,
            Some(_) => Site::Gap,
        })
        .collect();

    // 8-connected components of non-liquid sites.
    let mut keep = vec![false; nx * ny];
    let mut seen = vec![false; nx * ny];
    for start in 0..nx * ny {
        if seen[start] || sites[start] == Site::Liquid {
            continue;
        }
        seen[start] = true;
        let mut members = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(k) = queue.pop_front() {
            let (ix, jy) = ((k % nx) as isize, (k / nx) as isize);
            for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, -1), (-1, 1), (1, 1)] {
                let (x, y) = (ix + dx, jy + dy);
                if x < 0 || y < 0 || x >= nx as isize || y >= ny as isize {
                    continue;
                }
                let m = y as usize * nx + x as usize;
                if !seen[m] && sites[m] != Site::Liquid {
                    seen[m] = true;
                    members.push(m);
                    queue.push_back(m);
                }
            }
        }
        let air = members.len() > AIR_MAX_POCKET || members.iter().any(|&k| sites[k] == Site::Bulk);
        if !air {
            log::trace!("dropping a {}-site gap inside the liquid", members.len());
        }
        for k in members {
            keep[k] = air;
        }
    }

    let air = (0..nx * ny)
        .filter(|&k| sites[k] == Site::Gap && keep[k])
        .map(|k| site(k % nx, k / nx))
        .filter(|p| particles.n_solid == 0 || solid_grid.nearest_within(&particles.x, p, AIR_SOLID_GAP * h).is_none())
        .collect();
    particles.set_air(air);
}
