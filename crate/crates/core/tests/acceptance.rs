//! End-to-end acceptance checks. Each check prints one `PASS`/`FAIL` line
//! straight to stderr, so the lines show up without `--nocapture`.
//!
//! The target reports; it does not fail on a red check. Set
//! `COVECTOR_STRICT=1` to turn any red check into a test failure.

use std::io::Write as _;
use std::time::{Duration, Instant};

use covector_core::config::Config;
use covector_core::experiments::{ablate_surface, convergence_study, initial_state, run, simulate};
use covector_core::flow_map::{advected_from_mapped, mapped_velocity};
use covector_core::integrator::{step, Scheme, SimState, StepConfig};
use covector_core::metrics::MetricsRow;
use covector_core::operators::{assemble, gradient_pointwise, volume_gradients};
use covector_core::particles::ParticleSet;
use covector_core::scenes::{lattice_points, relaxed_points, SceneId, SceneSpec};
use covector_core::voronoi::{build_diagram, FaceKind, VoronoiDiagram};
use covector_core::{Aabb, Mat2, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn report(index: usize, name: &str, elapsed: Duration, v: &Verdict) {
    let line = format!(
        "{} [{index:>2}] {name}: {} ({:.1} s)\n",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64()
    );
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(line.as_bytes());
    let _ = err.flush();
}

fn fluid_set(points: Vec<Vec2>) -> ParticleSet {
    let n = points.len();
    ParticleSet::fluid_only(points, vec![Vec2::zeros(); n])
}

fn diagram_of(points: &[Vec2], domain: &Aabb, h: f64) -> VoronoiDiagram {
    build_diagram(&fluid_set(points.to_vec()), domain, h).expect("valid diagram")
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn rows_of(cfg: &Config, step_cfg: &StepConfig) -> (Vec<MetricsRow>, Option<String>) {
    let out = simulate(initial_state(cfg).expect("scene builds"), cfg, step_cfg, |_, _| Ok(()));
    (out.rows, out.failure.map(|e| e.to_string()))
}

fn operator_algebra() -> Verdict {
    let start = Instant::now();
    let domain = Aabb::unit();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut exact, mut worst_asym, mut worst_quot) = (true, 0.0f64, f64::INFINITY);
    for k in 0..10u64 {
        let n = 1000 + 1000 * k as usize;
        let pts = relaxed_points(&domain, n, 40 + k, 3);
        let h = (domain.area() / n as f64).sqrt();
        let ops = assemble(&diagram_of(&pts, &domain, h)).expect("operators");

        for i in 0..n {
            for (j, v) in ops.g.row(i) {
                exact &= v == -ops.d.get(j, i);
            }
            for (j, v) in ops.d.row(i) {
                exact &= ops.g.get(j, i) == -v;
            }
        }
        for (r, c, v) in ops.l.triplets() {
            worst_asym = worst_asym.max((v - ops.l.get(c, r)).abs());
        }
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lx = ops.l.mul_vec(&x);
            let q = -x.iter().zip(&lx).map(|(a, b)| a * b).sum::<f64>() / x.iter().map(|a| a * a).sum::<f64>();
            worst_quot = worst_quot.min(q);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        exact && worst_asym <= 1e-12 && worst_quot >= -1e-12 && elapsed < 30.0,
        format!(
            "G = -D^T exact: {exact}, max |L - L^T| {worst_asym:.1e}, min x^T(-L)x/|x|^2 {worst_quot:.3e}, {elapsed:.1} s of 30 s"
        ),
    )
}

fn volume_gradient_fd() -> Verdict {
    let start = Instant::now();
    let domain = Aabb::unit();
    let n = 1000;
    let h = (domain.area() / n as f64).sqrt();
    let pts = relaxed_points(&domain, n, 7, 3);
    let d = diagram_of(&pts, &domain, h);
    let grads = volume_gradients(&d);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let eps = 1e-6 * h;
    let mut worst = 0.0f64;
    for k in 0..100 {
        let i = rng.gen_range(0..n);
        // Every fourth pair is the self-derivative.
        let j = if k % 4 == 0 {
            i
        } else {
            let nb: Vec<usize> = d.neighbors(i).collect();
            nb[rng.gen_range(0..nb.len())]
        };
        let analytic = grads.get(i, j).expect("neighbour pair");
        let mut fd = Vec2::zeros();
        for axis in 0..2 {
            let mut vol = [0.0; 2];
            for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
                let mut p = pts.clone();
                p[j][axis] += sign * eps;
                vol[s] = diagram_of(&p, &domain, h).cells[i].volume;
            }
            fd[axis] = (vol[0] - vol[1]) / (2.0 * eps);
        }
        worst = worst.max((fd - analytic).norm() / analytic.norm());
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-4 && elapsed < 60.0,
        format!("worst relative error {worst:.2e} over 100 pairs (bound 1e-4), {elapsed:.1} s of 60 s"),
    )
}

fn consistency() -> Verdict {
    let domain = Aabb::unit();
    let h = 1.0 / 64.0;
    let n = 64 * 64;
    let pts = relaxed_points(&domain, n, 3, 10);
    let d = diagram_of(&pts, &domain, h);
    let ops = assemble(&d).expect("operators");
    let x = &d.generators[..n];
    // Interior: neither the cell nor any neighbour touches a wall.
    let touches_wall = |i: usize| d.cells[i].has_face(FaceKind::ToWall);
    let interior: Vec<usize> = (0..n).filter(|&i| !touches_wall(i) && !d.neighbors(i).any(touches_wall)).collect();

    let a = Mat2::new(1.0, 0.5, -0.3, 2.0);
    let c = Vec2::new(0.2, -0.1);
    let u: Vec<Vec2> = x.iter().map(|p| a * p + c).collect();
    let div = ops.d.apply_to_vectors(&u);
    let trace = a.trace();
    let div_err: Vec<f64> = interior.iter().map(|&i| (div[i] / ops.volume[i] - trace).abs() / trace.abs()).collect();

    let k = Vec2::new(0.7, -1.9);
    let p: Vec<f64> = x.iter().map(|q| k.dot(q) + 0.4).collect();
    let grad = gradient_pointwise(&ops, &p);
    let grad_err: Vec<f64> = interior.iter().map(|&i| (grad[i] - k).norm() / k.norm()).collect();

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (div_max, grad_max) = (max_abs(div_err.iter().copied()), max_abs(grad_err.iter().copied()));
    verdict(
        div_max <= 0.05 && grad_max <= 0.05,
        format!(
            "{} interior cells; divergence error max {:.1}% mean {:.2}%; gradient error max {:.1}% mean {:.2}% (bound 5%)",
            interior.len(),
            100.0 * div_max,
            100.0 * mean(&div_err),
            100.0 * grad_max,
            100.0 * mean(&grad_err)
        ),
    )
}

fn one_step_identity() -> Verdict {
    // Square lattice cells differentiate quadratics exactly, so the
    // gradient of |u|^2 / 2 carries no discretization error on interior cells.
    let h = 1.0 / 32.0;
    let domain = Aabb::unit();
    let x = lattice_points(&domain, h, |_| true);
    let n = x.len();
    let d = diagram_of(&x, &domain, h);
    let ops = assemble(&d).expect("operators");
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let a = Mat2::new(
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-1.5..1.5),
        );
        let c = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let dt = 0.02;
        let u: Vec<Vec2> = x.iter().map(|p| a * p + c).collect();
        let t = Mat2::identity() - dt * a;
        let mapped: Vec<Vec2> = u.iter().map(|v| mapped_velocity(&t, v)).collect();
        let zero = vec![0.0; n];
        let adv = advected_from_mapped(&mapped, &zero, &u, &zero, &ops, dt);
        for i in 0..n {
            if d.cells[i].has_face(FaceKind::ToWall) {
                continue;
            }
            // Analytic closed form: T^T u + dt (grad u)^T u = u.
            worst = worst.max((adv[i] - u[i]).norm());
        }
    }
    verdict(worst <= 1e-6, format!("max |u_A - u| {worst:.2e} on interior cells (bound 1e-6)"))
}

fn lambda_equivalence() -> Verdict {
    // A 2048-particle leapfrog, checked at every substep of the first flow
    // map that starts with a nonzero Lambda.
    let mut cfg = Config::new(SceneId::Leapfrog);
    cfg.spacing = 1.0 / 32.0;
    cfg.reinit_n = 8;
    cfg.steps = 8;
    let mut sc = StepConfig::from(&cfg);
    sc.probe_convergence = true;
    // The equivalence is a statement about the interior formulation: every
    // particle carries Lambda.
    sc.surface_branch = false;
    let mut errors = Vec::new();
    let mut particles = 0;
    let out = simulate(initial_state(&cfg).expect("scene"), &cfg, &sc, |s, r| {
        particles = s.particles.n_fluid;
        let probe = r.probe.as_ref().expect("probe requested");
        if s.flow.substeps_since_reinit > 1 {
            let warm = &probe.warm_started.x;
            let scale = max_abs(warm.iter().copied());
            let err = max_abs((0..warm.len()).map(|i| probe.lambda_start[i] + probe.with_subtraction.x[i] - warm[i]));
            errors.push((s.step, probe.with_subtraction.iterations, err / scale));
        }
        Ok(())
    });
    if let Some(e) = out.failure {
        return verdict(false, format!("run failed: {e}"));
    }
    let worst = errors.iter().fold(0.0f64, |m, e| m.max(e.2));
    let listing: Vec<String> = errors.iter().map(|(s, it, e)| format!("step {s} ({it} it): {e:.1e}")).collect();
    verdict(
        worst <= 1e-10,
        format!("{particles} particles, relative Lambda difference per substep [{}] (bound 1e-10)", listing.join(", ")),
    )
}

fn convergence_property() -> Verdict {
    let mut cfg = Config::new(SceneId::Leapfrog);
    cfg.spacing = 1.0 / 72.0;
    cfg.steps = 100;
    let study = match convergence_study(&cfg, &[8, 17]) {
        Ok(s) => s,
        Err(e) => return verdict(false, format!("run failed: {e}")),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, records) in &study {
        let bad: Vec<String> = records
            .iter()
            .filter(|r| r.iterations_with > r.iterations_without)
            .map(|r| format!("step {} {} > {}", r.step, r.iterations_with, r.iterations_without))
            .collect();
        let with: usize = records.iter().map(|r| r.iterations_with).sum();
        let without: usize = records.iter().map(|r| r.iterations_without).sum();
        pass &= bad.is_empty() && records.len() == cfg.steps;
        parts.push(format!(
            "n={n}: {} substeps, total iterations {with} with vs {without} without, violations [{}]",
            records.len(),
            bad.join("; ")
        ));
    }
    verdict(pass, format!("{} particles; {}", 2 * 72 * 72, parts.join("; ")))
}

fn energy_ratio(scheme: Scheme) -> Result<(f64, usize), String> {
    let mut cfg = Config::new(SceneId::TaylorGreen);
    cfg.spacing = 1.0 / 100.0;
    cfg.steps = 500;
    cfg.scheme = scheme;
    let (rows, failure) = rows_of(&cfg, &StepConfig::from(&cfg));
    if let Some(e) = failure {
        return Err(format!("{scheme} failed: {e}"));
    }
    let e0 = rows[0].energy;
    Ok((rows.last().unwrap().energy / e0, rows.len()))
}

fn taylor_green_energy() -> Verdict {
    match (energy_ratio(Scheme::Lmcp), energy_ratio(Scheme::Ppm)) {
        (Ok((l, n)), Ok((p, _))) => verdict(
            l > p,
            format!("10000 particles, {n} substeps: E(500)/E(1) lmcp {l:.4}, ppm {p:.4}"),
        ),
        (a, b) => verdict(false, format!("{:?} {:?}", a.err(), b.err())),
    }
}

fn initial_pair_separation(cfg: &Config) -> f64 {
    // The peaks of the initial field, from the same detector.
    let state = initial_state(cfg).expect("scene");
    let mut p = state.particles.clone();
    covector_core::voronoi::resample_air(&mut p, &state.domain, state.h);
    let d = build_diagram(&p, &state.domain, state.h).expect("diagram");
    let n = p.n_fluid;
    let omega = covector_core::metrics::vorticity(&d.generators[..n], &p.u[..n], &d);
    let peaks = covector_core::metrics::vortex_peaks(&omega, &d, cfg.peak_threshold, cfg.peak_radius());
    covector_core::metrics::peak_separation(&peaks)
}

fn same_sign_count(row: &MetricsRow) -> usize {
    let Some(first) = row.peaks.first() else { return 0 };
    row.peaks.iter().filter(|p| p.sign == first.sign).count()
}

fn taylor_pair() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for scheme in [Scheme::Lmcp, Scheme::Ppm] {
        let mut cfg = Config::new(SceneId::TaylorPair);
        cfg.spacing = 1.0 / 50.0;
        cfg.steps = 300;
        cfg.scheme = scheme;
        let s0 = initial_pair_separation(&cfg);
        let (rows, failure) = rows_of(&cfg, &StepConfig::from(&cfg));
        if let Some(e) = failure {
            return verdict(false, format!("{scheme} failed: {e}"));
        }
        let last = rows.last().unwrap();
        let min_sep = rows.iter().map(|r| r.peak_separation()).fold(f64::INFINITY, f64::min);
        match scheme {
            Scheme::Lmcp => {
                let ok = same_sign_count(last) >= 2 && last.peak_separation() > 0.5 * s0;
                pass &= ok;
                parts.push(format!(
                    "lmcp at step {}: {} same-sign peaks, separation {:.3} = {:.2} x initial {s0:.3} (need > 0.5)",
                    last.step,
                    same_sign_count(last),
                    last.peak_separation(),
                    last.peak_separation() / s0
                ));
            }
            _ => {
                pass &= min_sep < 0.25 * s0;
                parts.push(format!(
                    "ppm minimum separation {min_sep:.3} = {:.2} x initial (need < 0.25), final {:.3}",
                    min_sep / s0,
                    last.peak_separation()
                ));
            }
        }
    }
    verdict(pass, parts.join("; "))
}

fn leapfrog_peaks() -> Verdict {
    let mut lost = Vec::new();
    let steps = 400;
    for scheme in [Scheme::Lmcp, Scheme::Ppm] {
        let mut cfg = Config::new(SceneId::Leapfrog);
        cfg.spacing = 1.0 / 72.0;
        cfg.steps = steps;
        cfg.scheme = scheme;
        let (rows, failure) = rows_of(&cfg, &StepConfig::from(&cfg));
        if let Some(e) = failure {
            return verdict(false, format!("{scheme} failed: {e}"));
        }
        // Four distinct peaks: two of each sign.
        let four = |r: &MetricsRow| {
            let pos = r.peaks.iter().filter(|p| p.sign > 0).count();
            let neg = r.peaks.iter().filter(|p| p.sign < 0).count();
            pos >= 2 && neg >= 2
        };
        lost.push(rows.iter().position(|r| !four(r)).map_or(rows.len(), |k| k));
    }
    let fmt = |k: usize| if k == steps { format!("all {steps}") } else { format!("{k}") };
    verdict(
        lost[0] > lost[1],
        format!("substeps with four peaks: lmcp {}, ppm {}", fmt(lost[0]), fmt(lost[1])),
    )
}

fn free_surface_ablation() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut cfg = Config::new(SceneId::DamBreak2d);
    cfg.steps = 200;
    cfg.out = dir.path().to_path_buf();
    let out = match ablate_surface(&cfg) {
        Ok(o) => o,
        Err(e) => return verdict(false, format!("LMCP run failed: {e}")),
    };
    let max_speed = |rows: &[MetricsRow]| rows.iter().fold(0.0f64, |m, r| m.max(r.max_speed));
    let (on, off) = (max_speed(&out.with_branch), max_speed(&out.without_branch));
    let blew_up = out.without_failure.is_some() || off > 10.0 * on;
    let completed = out.with_branch.len() == cfg.steps;
    let v0 = out.with_branch[0].total_volume;
    let v1 = out.with_branch.last().unwrap().total_volume;
    let drift = (v1 - v0) / v0;
    verdict(
        blew_up && completed && drift.abs() <= 0.02,
        format!(
            "branch off: {} (max|u| {off:.3e} vs {on:.3e}); branch on: {} substeps, volume {v0:.4} -> {v1:.4} ({:+.1}%, bound 2%)",
            match &out.without_failure {
                Some(e) => format!("stopped at substep {}: {e}", out.without_branch.len() + 1),
                None => "completed".into(),
            },
            out.with_branch.len(),
            100.0 * drift
        ),
    )
}

fn hydrostatic() -> Verdict {
    let h = 1.0 / 32.0;
    let domain = Aabb::unit();
    let g = Vec2::new(0.0, -9.8);
    let mut parts = Vec::new();
    let mut pass = true;
    // A closed box full of water, and an open tank filled to half height.
    for (name, level) in [("closed box", 1.0), ("open tank", 0.5)] {
        let pts = lattice_points(&domain, h, |p| p.y < level);
        let mut state = SimState::new(SceneSpec {
            id: SceneId::DamBreak2d,
            domain,
            h,
            gravity: g,
            particles: fluid_set(pts),
        });
        let cfg = StepConfig::default();
        let (mut time, mut worst) = (0.0, 0.0f64);
        for _ in 0..100 {
            match step(&mut state, &cfg) {
                Ok(r) => time += r.dt,
                Err(e) => return verdict(false, format!("{name} failed: {e}")),
            }
            worst = worst.max(state.max_speed());
        }
        let bound = 1e-3 * g.norm() * time;
        pass &= worst <= bound;
        parts.push(format!("{name} max|u| {worst:.2e} (bound {bound:.2e})"));
    }
    verdict(pass, parts.join("; "))
}

fn determinism() -> Verdict {
    let dirs = [tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir")];
    let mut bytes = Vec::new();
    for d in &dirs {
        let mut cfg = Config::new(SceneId::DamBreak2d);
        cfg.spacing = 1.0 / 24.0;
        cfg.steps = 30;
        cfg.seed = 11;
        cfg.out = d.path().to_path_buf();
        if let Err(e) = run(&cfg) {
            return verdict(false, format!("run failed: {e}"));
        }
        bytes.push(std::fs::read(d.path().join("metrics.csv")).expect("metrics written"));
    }
    verdict(bytes[0] == bytes[1], format!("two dam-break runs, metrics.csv {} bytes each, identical: {}", bytes[0].len(), bytes[0] == bytes[1]))
}

#[test]
fn acceptance() {
    let checks: [(&str, fn() -> Verdict); 12] = [
        ("operator algebra", operator_algebra),
        ("volume gradient finite differences", volume_gradient_fd),
        ("linear field consistency", consistency),
        ("one-step mapping identity", one_step_identity),
        ("Lambda subtraction equivalence", lambda_equivalence),
        ("CG iterations with Lambda subtraction", convergence_property),
        ("Taylor-Green energy retention", taylor_green_energy),
        ("Taylor vortex pair", taylor_pair),
        ("leapfrog vortex lifetime", leapfrog_peaks),
        ("free-surface ablation", free_surface_ablation),
        ("hydrostatic rest", hydrostatic),
        ("determinism", determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("COVECTOR_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (k, (name, check)) in checks.iter().enumerate() {
        let index = k + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&index)) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        report(index, name, start.elapsed(), &v);
        if !v.pass {
            failed.push(index);
        }
    }
    let _ = writeln!(std::io::stderr(), "acceptance: {} red {:?}", failed.len(), failed);
    if std::env::var("COVECTOR_STRICT").is_ok_and(|v| v == "1") {
        assert!(failed.is_empty(), "red checks: {failed:?}");
    }
}
