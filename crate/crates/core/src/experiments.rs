//! Runs, paired benchmarks, ablations and the operator property suite.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{Result, SimError};
use crate::geom::{Aabb, Vec2};
use crate::integrator::{step, ConvergenceProbe, Scheme, SimState, StepConfig, StepReport};
use crate::metrics::{frame_path, manifest_text, write_frame, write_metrics, write_text, MetricsRow};
use crate::operators::{assemble, volume_gradients};
use crate::particles::ParticleSet;
use crate::scenes::{build_scene, relaxed_points, SceneId};
use crate::sparse::dot;
use crate::voronoi::{build_diagram, resample_air};

/// Result of a simulation that may have stopped early.
#[derive(Debug)]
pub struct RunOutcome {
    pub state: SimState,
    pub rows: Vec<MetricsRow>,
    pub failure: Option<SimError>,
}

impl RunOutcome {
    pub fn into_result(self) -> Result<(SimState, Vec<MetricsRow>)> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok((self.state, self.rows)),
        }
    }
}

/// Initial state for a configuration.
pub fn initial_state(cfg: &Config) -> Result<SimState> {
    let mut spec = build_scene(cfg.scene, cfg.spacing, &cfg.scene_params, cfg.seed)?;
    spec.gravity = cfg.gravity();
    Ok(SimState::new(spec))
}

/// Step `state` up to `cfg.steps` times, calling `observe` after each
/// substep. A failing substep ends the run and is returned in the outcome.
pub fn simulate(
    mut state: SimState,
    cfg: &Config,
    step_cfg: &StepConfig,
    mut observe: impl FnMut(&SimState, &StepReport) -> Result<()>,
) -> RunOutcome {
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut failure = None;
    for _ in 0..cfg.steps {
        match step(&mut state, step_cfg).and_then(|r| {
            observe(&state, &r)?;
            Ok(r)
        }) {
            Ok(r) => rows.push(r.metrics),
            Err(e) => {
                log::error!("run stopped at step {}: {e}", state.step + 1);
                failure = Some(e);
                break;
            }
        }
    }
    RunOutcome { state, rows, failure }
}

fn write_current_frame(state: &SimState, out: &Path) -> Result<()> {
    let omega = state.vorticity();
    write_frame(&state.particles, &omega, &state.pressure, &frame_path(out, state.step))
}

fn initial_frame(state: &SimState, out: &Path) -> Result<()> {
    // Vorticity of the initial field needs a diagram of the initial positions.
    let mut s = state.clone();
    resample_air(&mut s.particles, &s.domain, s.h);
    s.diagram = Some(build_diagram(&s.particles, &s.domain, s.h)?);
    write_current_frame(&s, out)
}

fn write_manifest(cfg: &Config, out: &Path) -> Result<()> {
    write_text(&out.join("manifest.txt"), &manifest_text(&cfg.hash(), cfg.seed, &cfg.canonical()))
}

/// Simulate into `out`: frames every `frame_stride` substeps, one metrics row
/// per substep, and a manifest. Metrics of a failed run are still written
/// before the error is returned.
pub fn run_into(cfg: &Config, out: &Path, metrics_name: &str) -> Result<Vec<MetricsRow>> {
    let state = initial_state(cfg)?;
    initial_frame(&state, out)?;
    let stride = cfg.frame_stride.max(1);
    let outcome = simulate(state, cfg, &StepConfig::from(cfg), |s, _| {
        if s.step % stride == 0 {
            write_current_frame(s, out)?;
        }
        Ok(())
    });
    write_metrics(&outcome.rows, &out.join(metrics_name))?;
    outcome.into_result().map(|(_, rows)| rows)
}

pub fn run(cfg: &Config) -> Result<Vec<MetricsRow>> {
    write_manifest(cfg, &cfg.out)?;
    run_into(cfg, &cfg.out, "metrics.csv")
}

/// LMCP and PPM on the same initial data: `metrics_lmcp.csv` and
/// `metrics_ppm.csv` in the output directory, frames under `lmcp/` and `ppm/`.
pub fn bench(cfg: &Config) -> Result<(Vec<MetricsRow>, Vec<MetricsRow>)> {
    write_manifest(cfg, &cfg.out)?;
    let mut rows = Vec::new();
    for scheme in [Scheme::Lmcp, Scheme::Ppm] {
        let mut c = cfg.clone();
        c.scheme = scheme;
        let name = format!("metrics_{}.csv", scheme.as_str());
        rows.push(run_into(&c, &cfg.out.join(scheme.as_str()), &name).and_then(|r| {
            std::fs::copy(cfg.out.join(scheme.as_str()).join(&name), cfg.out.join(&name))
                .map_err(|e| SimError::io(cfg.out.join(&name), e))?;
            Ok(r)
        })?);
    }
    let ppm = rows.pop().unwrap_or_default();
    let lmcp = rows.pop().unwrap_or_default();
    Ok((lmcp, ppm))
}

/// Flow-map lengths compared by the convergence ablation.
pub const CONVERGENCE_LENGTHS: [usize; 3] = [1, 8, 17];

/// Per-substep CG comparison with and without the Lambda subtraction.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRecord {
    pub step: usize,
    pub substeps_since_reinit: usize,
    pub iterations_with: usize,
    pub iterations_without: usize,
    pub history_with: Vec<f64>,
    pub history_without: Vec<f64>,
}

/// Leapfrog runs at each flow-map length with the convergence probe on.
pub fn convergence_study(cfg: &Config, lengths: &[usize]) -> Result<Vec<(usize, Vec<ConvergenceRecord>)>> {
    let mut base = cfg.clone();
    base.scene = SceneId::Leapfrog;
    base.scheme = Scheme::Lmcp;
    let mut out = Vec::new();
    for &n in lengths {
        let mut c = base.clone();
        c.reinit_n = n;
        let mut sc = StepConfig::from(&c);
        sc.probe_convergence = true;
        let mut records = Vec::new();
        simulate(initial_state(&c)?, &c, &sc, |s, r| {
            let ConvergenceProbe {
                with_subtraction,
                without_subtraction,
                ..
            } = r.probe.clone().expect("probe requested");
            records.push(ConvergenceRecord {
                step: s.step,
                substeps_since_reinit: s.flow.substeps_since_reinit,
                iterations_with: with_subtraction.iterations,
                iterations_without: without_subtraction.iterations,
                history_with: with_subtraction.history,
                history_without: without_subtraction.history,
            });
            Ok(())
        })
        .into_result()?;
        out.push((n, records));
    }
    Ok(out)
}

pub fn convergence_csv(records: &[ConvergenceRecord]) -> String {
    let mut s = String::from("step,substeps_since_reinit,route,iteration,mean_divergence\n");
    for r in records {
        for (route, h) in [("with", &r.history_with), ("without", &r.history_without)] {
            for (k, v) in h.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{},{:.16e}", r.step, r.substeps_since_reinit, route, k, v);
            }
        }
    }
    s
}

/// Writes `cg_history_len{n}.csv` per flow-map length and a summary of the
/// iteration counts.
pub fn ablate_convergence(cfg: &Config) -> Result<Vec<(usize, Vec<ConvergenceRecord>)>> {
    write_manifest(cfg, &cfg.out)?;
    let study = convergence_study(cfg, &CONVERGENCE_LENGTHS)?;
    let mut summary = String::from("length,step,iterations_with,iterations_without\n");
    for (n, records) in &study {
        write_text(&cfg.out.join(format!("cg_history_len{n}.csv")), &convergence_csv(records))?;
        for r in records {
            let _ = writeln!(summary, "{n},{},{},{}", r.step, r.iterations_with, r.iterations_without);
        }
    }
    write_text(&cfg.out.join("convergence_summary.csv"), &summary)?;
    Ok(study)
}

#[derive(Debug)]
pub struct SurfaceAblation {
    pub with_branch: Vec<MetricsRow>,
    pub without_branch: Vec<MetricsRow>,
    /// Why the run without the branch stopped, if it did.
    pub without_failure: Option<String>,
}

/// Dam break with and without the surface branch. The run without it may
/// blow up; that outcome is recorded rather than returned as an error.
pub fn ablate_surface(cfg: &Config) -> Result<SurfaceAblation> {
    let mut base = cfg.clone();
    base.scene = SceneId::DamBreak2d;
    base.scheme = Scheme::Lmcp;
    write_manifest(&base, &cfg.out)?;
    let mut on = base.clone();
    on.surface_branch = true;
    let with_branch = run_into(&on, &cfg.out.join("surface_on"), "metrics.csv")?;
    let mut off = base;
    off.surface_branch = false;
    let (without_branch, without_failure) = match run_into(&off, &cfg.out.join("surface_off"), "metrics.csv") {
        Ok(rows) => (rows, None),
        Err(SimError::Io { path, source }) => return Err(SimError::Io { path, source }),
        Err(e) => {
            let text = std::fs::read_to_string(cfg.out.join("surface_off").join("metrics.csv")).unwrap_or_default();
            (parse_rows_lossy(&text), Some(e.to_string()))
        }
    };
    let max_on = with_branch.iter().fold(0.0f64, |m, r| m.max(r.max_speed));
    let max_off = without_branch.iter().fold(0.0f64, |m, r| m.max(r.max_speed));
    let summary = format!(
        "max_speed_with_branch={max_on:.16e}\nmax_speed_without_branch={max_off:.16e}\nwithout_branch_failure={}\n",
        without_failure.as_deref().unwrap_or("none")
    );
    write_text(&cfg.out.join("surface_summary.txt"), &summary)?;
    Ok(SurfaceAblation {
        with_branch,
        without_branch,
        without_failure,
    })
}

/// Step, time and max speed from a metrics file; enough for the ablation
/// summary after a failed run.
fn parse_rows_lossy(text: &str) -> Vec<MetricsRow> {
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Some(MetricsRow {
                step: f.first()?.parse().ok()?,
                time: f.get(1)?.parse().ok()?,
                dt: f.get(2)?.parse().ok()?,
                energy: f.get(3)?.parse().ok()?,
                divergence_error: f.get(4)?.parse().ok()?,
                cg_iterations: f.get(5)?.parse().ok()?,
                cg_residual: f.get(6)?.parse().ok()?,
                cg_converged: *f.get(7)? == "1",
                max_speed: f.get(8)?.parse().ok()?,
                total_volume: f.get(9)?.parse().ok()?,
                n_air: f.get(10)?.parse().ok()?,
                n_surface_branch: f.get(11)?.parse().ok()?,
                peaks: Vec::new(),
            })
        })
        .collect()
}

/// One property check of the validation suite.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Operator properties on random relaxed sets: `G = -D^T` exactly, `L`
/// symmetric and negative semi-definite, discrete integration by parts,
/// and volume gradients against central differences.
pub fn validate(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let domain = Aabb::unit();
    for (k, n) in [400usize, 1500].into_iter().enumerate() {
        let pts = relaxed_points(&domain, n, seed + k as u64, 5);
        let h = (domain.area() / n as f64).sqrt();
        let set = ParticleSet::fluid_only(pts, vec![Vec2::zeros(); n]);
        let d = build_diagram(&set, &domain, h)?;
        let ops = assemble(&d)?;

        let gt = ops.d.neg_transpose();
        let exact = (0..n).all(|i| {
            let a: Vec<_> = ops.g.row(i).collect();
            let b: Vec<_> = gt.row(i).collect();
            a == b
        });
        checks.push(check(&format!("G = -D^T (n={n})"), exact, String::new()));

        let scale = ops.l.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let asym = ops
            .l
            .triplets()
            .iter()
            .map(|&(r, c, v)| (v - ops.l.get(c, r)).abs())
            .fold(0.0f64, f64::max);
        checks.push(check(
            &format!("L symmetric (n={n})"),
            asym <= 1e-12 * scale,
            format!("max asymmetry {asym:e}"),
        ));

        let mut worst = f64::INFINITY;
        for _ in 0..20 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q = -dot(&x, &ops.l.mul_vec(&x)) / dot(&x, &x);
            worst = worst.min(q);
        }
        checks.push(check(
            &format!("-L positive semi-definite (n={n})"),
            worst >= -1e-12 * scale,
            format!("min Rayleigh quotient {worst:e}"),
        ));

        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<Vec2> = (0..n).map(|_| Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let lhs = dot(&p, &ops.d.apply_to_vectors(&v));
        let gp = ops.g.apply_to_scalars(&p);
        let rhs: f64 = -gp.iter().zip(&v).map(|(g, v)| g.dot(v)).sum::<f64>();
        checks.push(check(
            &format!("integration by parts (n={n})"),
            (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
            format!("{lhs:e} vs {rhs:e}"),
        ));

        let grads = volume_gradients(&d);
        let eps = 1e-6 * h;
        let mut worst_rel = 0.0f64;
        for &(i, j, g) in grads.pairs.iter().step_by((grads.pairs.len() / 10).max(1)).take(10) {
            let mut fd = Vec2::zeros();
            for axis in 0..2 {
                let mut plus = set.clone();
                plus.x[j][axis] += eps;
                let mut minus = set.clone();
                minus.x[j][axis] -= eps;
                let vp = build_diagram(&plus, &domain, h)?.cells[i].volume;
                let vm = build_diagram(&minus, &domain, h)?.cells[i].volume;
                fd[axis] = (vp - vm) / (2.0 * eps);
            }
            worst_rel = worst_rel.max((fd - g).norm() / g.norm().max(1e-300));
        }
        checks.push(check(
            &format!("volume gradients vs central differences (n={n})"),
            worst_rel <= 1e-4,
            format!("max relative error {worst_rel:e}"),
        ));
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scene: SceneId, dir: &Path) -> Config {
        let mut c = Config::new(scene);
        c.spacing = 1.0 / 16.0;
        c.steps = 3;
        c.frame_stride = 2;
        c.out = dir.to_path_buf();
        c
    }

    #[test]
    fn run_writes_frames_metrics_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(SceneId::TaylorGreen, dir.path());
        let rows = run(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 4);
        assert!(frame_path(dir.path(), 0).exists());
        assert!(frame_path(dir.path(), 2).exists());
        assert!(!frame_path(dir.path(), 1).exists());
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(manifest.contains(&cfg.hash()));
    }

    #[test]
    fn zero_steps_gives_initial_frame_and_empty_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(SceneId::DamBreak2d, dir.path());
        cfg.steps = 0;
        assert!(run(&cfg).unwrap().is_empty());
        assert!(frame_path(dir.path(), 0).exists());
        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 1);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut ca = small(SceneId::DamBreak2d, a.path());
        ca.scene_params.jitter = 0.2;
        ca.seed = 7;
        let mut cb = ca.clone();
        cb.out = b.path().to_path_buf();
        run(&ca).unwrap();
        run(&cb).unwrap();
        for f in ["metrics.csv", "frames/frame_000002.csv"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn bench_writes_both_schemes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(SceneId::TaylorGreen, dir.path());
        let (l, p) = bench(&cfg).unwrap();
        assert_eq!(l.len(), 3);
        assert_eq!(p.len(), 3);
        assert!(dir.path().join("metrics_lmcp.csv").exists());
        assert!(dir.path().join("metrics_ppm.csv").exists());
    }

    #[test]
    fn convergence_files_per_length() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(SceneId::Leapfrog, dir.path());
        cfg.steps = 4;
        let study = ablate_convergence(&cfg).unwrap();
        assert_eq!(study.iter().map(|(n, _)| *n).collect::<Vec<_>>(), CONVERGENCE_LENGTHS);
        for n in CONVERGENCE_LENGTHS {
            assert!(dir.path().join(format!("cg_history_len{n}.csv")).exists());
        }
        // With a fresh anchor every substep the two routes coincide.
        for r in &study[0].1 {
            assert_eq!(r.iterations_with, r.iterations_without);
        }
    }

    #[test]
    fn validation_suite_passes() {
        for c in validate(3).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
