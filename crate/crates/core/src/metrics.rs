//! Diagnostics and text serialization of frames, metrics and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Result, SimError};
use crate::geom::Vec2;
use crate::operators::{curl, ls_velocity_gradient};
use crate::particles::{ParticleKind, ParticleSet};
use crate::voronoi::VoronoiDiagram;

/// Per-particle vorticity from the least-squares velocity gradient.
pub fn vorticity(x: &[Vec2], u: &[Vec2], diagram: &VoronoiDiagram) -> Vec<f64> {
    let (grads, _) = ls_velocity_gradient(x, u, diagram);
    grads.iter().map(curl).collect()
}

/// `sum V |u|^2 / 2 / sum V`.
pub fn kinetic_energy(u: &[Vec2], volume: &[f64]) -> f64 {
    let total: f64 = volume.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    u.iter().zip(volume).map(|(u, v)| 0.5 * v * u.norm_squared()).sum::<f64>() / total
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VortexPeak {
    pub id: usize,
    pub position: Vec2,
    pub sign: i8,
    pub magnitude: f64,
}

/// Width of the Gaussian that `vortex_peaks` smooths vorticity with, in
/// units of the particle spacing.
pub const PEAK_SMOOTHING: f64 = 2.0;

/// Vortex centres. `omega` is first smoothed with a Gaussian of width
/// `PEAK_SMOOTHING * h` (volume-weighted), which removes particle-scale
/// noise but keeps anything the size of a vortex core. Candidates are local
/// extrema of the smoothed field over Voronoi adjacency with
/// `|omega| >= threshold * max |omega|`; they are accepted strongest first
/// unless an accepted peak of the same sign lies within `radius`. Ties go to
/// the lower id.
pub fn vortex_peaks(omega: &[f64], diagram: &VoronoiDiagram, threshold: f64, radius: f64) -> Vec<VortexPeak> {
    let smooth = gaussian_smooth(omega, diagram, PEAK_SMOOTHING * diagram.spacing);
    let max = smooth.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if max == 0.0 {
        return Vec::new();
    }
    let floor = threshold * max;
    let n = smooth.len();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| {
            smooth[i].abs() >= floor
                && diagram
                    .neighbors(i)
                    .filter(|&j| j < n)
                    .all(|j| smooth[i].signum() != smooth[j].signum() || smooth[i].abs() >= smooth[j].abs())
        })
        .collect();
    candidates.sort_by(|&a, &b| smooth[b].abs().total_cmp(&smooth[a].abs()).then(a.cmp(&b)));
    let mut peaks: Vec<VortexPeak> = Vec::new();
    for i in candidates {
        let sign = if smooth[i] > 0.0 { 1 } else { -1 };
        let x = diagram.generators[i];
        if peaks.iter().any(|p| p.sign == sign && (p.position - x).norm() < radius) {
            continue;
        }
        peaks.push(VortexPeak {
            id: i,
            position: x,
            sign,
            magnitude: smooth[i].abs(),
        });
    }
    peaks
}

/// Volume-weighted Gaussian average of `values` over fluid cells within
/// `3 width` of each generator, reached through Voronoi adjacency.
fn gaussian_smooth(values: &[f64], diagram: &VoronoiDiagram, width: f64) -> Vec<f64> {
    let n = values.len();
    let x = &diagram.generators;
    let cutoff = 3.0 * width;
    (0..n)
        .into_par_iter()
        .map_init(
            || (vec![usize::MAX; n], Vec::new()),
            |(mark, stack), i| {
                let (mut sum, mut weight) = (0.0, 0.0);
                mark[i] = i;
                stack.push(i);
                while let Some(j) = stack.pop() {
                    let r2 = (x[j] - x[i]).norm_squared();
                    let w = diagram.cells[j].volume * (-0.5 * r2 / (width * width)).exp();
                    sum += w * values[j];
                    weight += w;
                    for k in diagram.neighbors(j) {
                        if k < n && mark[k] != i && (x[k] - x[i]).norm() <= cutoff {
                            mark[k] = i;
                            stack.push(k);
                        }
                    }
                }
                sum / weight
            },
        )
        .collect()
}

/// Distance between the two strongest peaks of the same sign as the
/// strongest peak; 0 when there is only one.
pub fn peak_separation(peaks: &[VortexPeak]) -> f64 {
    let Some(first) = peaks.first() else { return 0.0 };
    peaks
        .iter()
        .skip(1)
        .find(|p| p.sign == first.sign)
        .map_or(0.0, |p| (p.position - first.position).norm())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub energy: f64,
    pub divergence_error: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub cg_converged: bool,
    pub max_speed: f64,
    pub total_volume: f64,
    pub n_air: usize,
    /// Particles that took the passive-advection branch this substep.
    pub n_surface_branch: usize,
    pub peaks: Vec<VortexPeak>,
}

impl MetricsRow {
    pub fn peak_count(&self) -> usize {
        self.peaks.len()
    }

    pub fn peak_separation(&self) -> f64 {
        peak_separation(&self.peaks)
    }
}

pub const METRICS_HEADER: &str = "step,time,dt,energy,divergence_error,cg_iterations,cg_residual,cg_converged,max_speed,total_volume,n_air,n_surface_branch,peak_count,peak_separation,peaks";

pub const FRAME_HEADER: &str = "id,kind,x,y,u,v,omega,p,flag";

fn e(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let peaks: Vec<String> = r
            .peaks
            .iter()
            .map(|p| format!("{}:{}:{}:{}", e(p.position.x), e(p.position.y), p.sign, e(p.magnitude)))
            .collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            e(r.time),
            e(r.dt),
            e(r.energy),
            e(r.divergence_error),
            r.cg_iterations,
            e(r.cg_residual),
            u8::from(r.cg_converged),
            e(r.max_speed),
            e(r.total_volume),
            r.n_air,
            r.n_surface_branch,
            r.peak_count(),
            e(r.peak_separation()),
            peaks.join(";"),
        );
    }
    s
}

pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    write_text(path, &metrics_csv(rows))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| SimError::io(path, e))
}

/// Frame text: one row per particle in id order. `omega`, `pressure` and the
/// surface flag cover the fluid block; other particles get zeros.
pub fn frame_csv(particles: &ParticleSet, omega: &[f64], pressure: &[f64]) -> String {
    let mut s = String::from(FRAME_HEADER);
    s.push('\n');
    for i in 0..particles.len() {
        let fluid = particles.kind[i] == ParticleKind::Fluid;
        let w = if fluid { omega.get(i).copied().unwrap_or(0.0) } else { 0.0 };
        let p = if fluid { pressure.get(i).copied().unwrap_or(0.0) } else { 0.0 };
        let flag = fluid && particles.surface.get(i).copied().unwrap_or(false);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            i,
            particles.kind[i].as_str(),
            e(particles.x[i].x),
            e(particles.x[i].y),
            e(particles.u[i].x),
            e(particles.u[i].y),
            e(w),
            e(p),
            u8::from(flag)
        );
    }
    s
}

pub fn write_frame(particles: &ParticleSet, omega: &[f64], pressure: &[f64], path: &Path) -> Result<()> {
    write_text(path, &frame_csv(particles, omega, pressure))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRow {
    pub id: usize,
    pub kind: ParticleKind,
    pub x: Vec2,
    pub u: Vec2,
    pub omega: f64,
    pub p: f64,
    pub flag: bool,
}

pub fn parse_frame(text: &str) -> Result<Vec<FrameRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(FRAME_HEADER) {
        return Err(SimError::Config("frame header mismatch".to_string()));
    }
    let bad = |n: usize| SimError::Config(format!("malformed frame row {n}"));
    lines
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad(n + 1));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(n + 1));
            let kind = match f[1] {
                "fluid" => ParticleKind::Fluid,
                "solid" => ParticleKind::Solid,
                "air" => ParticleKind::Air,
                _ => return Err(bad(n + 1)),
            };
            Ok(FrameRow {
                id: f[0].parse().map_err(|_| bad(n + 1))?,
                kind,
                x: Vec2::new(num(2)?, num(3)?),
                u: Vec2::new(num(4)?, num(5)?),
                omega: num(6)?,
                p: num(7)?,
                flag: f[8] == "1",
            })
        })
        .collect()
}

pub fn frame_path(out: &Path, index: usize) -> std::path::PathBuf {
    out.join("frames").join(format!("frame_{index:06}.csv"))
}

/// Manifest text: configuration hash, seed, code version and the canonical
/// configuration itself.
pub fn manifest_text(config_hash: &str, seed: u64, canonical_config: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "config_hash={config_hash}");
    let _ = writeln!(s, "seed={seed}");
    let _ = writeln!(s, "version={}", env!("CARGO_PKG_VERSION"));
    s.push_str("[config]\n");
    s.push_str(canonical_config);
    s
}
