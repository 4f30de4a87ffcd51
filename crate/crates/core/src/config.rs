//! Run configuration: a flat `key=value` file merged with overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};
use crate::geom::Vec2;
use crate::integrator::Scheme;
use crate::scenes::{SceneId, SceneParams};

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub scene: SceneId,
    pub scheme: Scheme,
    pub spacing: f64,
    pub steps: usize,
    pub cfl: f64,
    pub reinit_n: usize,
    pub layers_k: usize,
    /// `None` uses the scene default.
    pub gravity: Option<Vec2>,
    pub tol: f64,
    /// `None` uses `10 sqrt(n)`.
    pub maxiter: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub frame_stride: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub surface_branch: bool,
    pub peak_threshold: f64,
    /// `None` uses the scene default.
    pub peak_radius: Option<f64>,
    pub scene_params: SceneParams,
}

impl Config {
    /// Defaults for a scene.
    pub fn new(scene: SceneId) -> Self {
        Self {
            scene,
            scheme: Scheme::Lmcp,
            spacing: 1.0 / 64.0,
            steps: 100,
            cfl: 1.0,
            reinit_n: 20,
            layers_k: 3,
            gravity: None,
            tol: 1e-6,
            maxiter: None,
            seed: 0,
            out: PathBuf::from("out"),
            frame_stride: 10,
            dt_min: 1e-6,
            dt_max: 0.01,
            surface_branch: true,
            peak_threshold: 0.5,
            peak_radius: None,
            scene_params: SceneParams::default(),
        }
    }

    pub fn gravity(&self) -> Vec2 {
        self.gravity.unwrap_or_else(|| self.scene.default_gravity())
    }

    pub fn peak_radius(&self) -> f64 {
        self.peak_radius.unwrap_or_else(|| self.scene_params.peak_radius(self.scene))
    }

    /// Canonical `key=value` listing of every setting, sorted by key.
    pub fn canonical(&self) -> String {
        let mut map = BTreeMap::new();
        let p = &self.scene_params;
        let f = |v: f64| format!("{v:e}");
        map.insert("scene", self.scene.as_str().to_string());
        map.insert("scheme", self.scheme.as_str().to_string());
        map.insert("spacing", f(self.spacing));
        map.insert("steps", self.steps.to_string());
        map.insert("cfl", f(self.cfl));
        map.insert("reinit_n", self.reinit_n.to_string());
        map.insert("layers_k", self.layers_k.to_string());
        let g = self.gravity();
        map.insert("gravity", format!("{},{}", f(g.x), f(g.y)));
        map.insert("tol", f(self.tol));
        map.insert("maxiter", self.maxiter.map_or("auto".to_string(), |m| m.to_string()));
        map.insert("seed", self.seed.to_string());
        map.insert("out", self.out.display().to_string());
        map.insert("frame_stride", self.frame_stride.to_string());
        map.insert("dt_min", f(self.dt_min));
        map.insert("dt_max", f(self.dt_max));
        map.insert("surface_branch", self.surface_branch.to_string());
        map.insert("peak_threshold", f(self.peak_threshold));
        map.insert("peak_radius", f(self.peak_radius()));
        map.insert("pair_u", f(p.pair_u));
        map.insert("pair_a", f(p.pair_a));
        map.insert("pair_separation", f(p.pair_separation));
        map.insert("pair_box", f(p.pair_box));
        map.insert("leapfrog_gamma", f(p.leapfrog_gamma));
        map.insert("leapfrog_sigma", f(p.leapfrog_sigma));
        map.insert("dam_width", f(p.dam_width));
        map.insert("dam_height", f(p.dam_height));
        map.insert("inflow_speed", f(p.inflow_speed));
        map.insert("channel_length", f(p.channel_length));
        map.insert("obstacle_radius", f(p.obstacle_radius));
        map.insert("board_amplitude", f(p.board_amplitude));
        map.insert("board_period", f(p.board_period));
        map.insert("jitter", f(p.jitter));
        let mut s = String::new();
        for (k, v) in map {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// SHA-256 of the canonical listing, lower-case hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.scene_params;
        match key {
            "scene" => self.scene = value.parse()?,
            "scheme" => self.scheme = value.parse()?,
            "spacing" => self.spacing = positive(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "cfl" => self.cfl = positive(key, value)?,
            "reinit_n" => self.reinit_n = at_least_one(key, value)?,
            "layers_k" => self.layers_k = at_least_one(key, value)?,
            "gravity" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(bad(key, value, "expected `gx,gy`"));
                }
                let gx: f64 = finite(key, parts[0])?;
                let gy: f64 = finite(key, parts[1])?;
                self.gravity = Some(Vec2::new(gx, gy));
            }
            "tol" => self.tol = positive(key, value)?,
            "maxiter" => self.maxiter = Some(at_least_one(key, value)?),
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "frame_stride" => self.frame_stride = at_least_one(key, value)?,
            "dt_min" => self.dt_min = positive(key, value)?,
            "dt_max" => self.dt_max = positive(key, value)?,
            "surface_branch" => self.surface_branch = parse(key, value)?,
            "peak_threshold" => {
                let t = positive(key, value)?;
                if t > 1.0 {
                    return Err(bad(key, value, "must be in (0, 1]"));
                }
                self.peak_threshold = t;
            }
            "peak_radius" => self.peak_radius = Some(positive(key, value)?),
            "pair_u" => p.pair_u = positive(key, value)?,
            "pair_a" => p.pair_a = positive(key, value)?,
            "pair_separation" => p.pair_separation = positive(key, value)?,
            "pair_box" => p.pair_box = positive(key, value)?,
            "leapfrog_gamma" => p.leapfrog_gamma = positive(key, value)?,
            "leapfrog_sigma" => p.leapfrog_sigma = positive(key, value)?,
            "dam_width" => p.dam_width = fraction(key, value)?,
            "dam_height" => p.dam_height = fraction(key, value)?,
            "inflow_speed" => p.inflow_speed = positive(key, value)?,
            "channel_length" => p.channel_length = positive(key, value)?,
            "obstacle_radius" => p.obstacle_radius = positive(key, value)?,
            "board_amplitude" => p.board_amplitude = positive(key, value)?,
            "board_period" => p.board_period = positive(key, value)?,
            "jitter" => {
                let j: f64 = finite(key, value)?;
                if !(0.0..0.5).contains(&j) {
                    return Err(bad(key, value, "must be in [0, 0.5)"));
                }
                p.jitter = j;
            }
            _ => return Err(SimError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

fn bad(key: &str, value: &str, why: &str) -> SimError {
    SimError::Config(format!("invalid value `{value}` for `{key}`: {why}"))
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, "cannot parse"))
}

fn finite(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse(key, value)?;
    if !v.is_finite() {
        return Err(bad(key, value, "must be finite"));
    }
    Ok(v)
}

fn positive(key: &str, value: &str) -> Result<f64> {
    let v = finite(key, value)?;
    if v <= 0.0 {
        return Err(bad(key, value, "must be positive"));
    }
    Ok(v)
}

fn fraction(key: &str, value: &str) -> Result<f64> {
    let v = positive(key, value)?;
    if v > 1.0 {
        return Err(bad(key, value, "must be in (0, 1]"));
    }
    Ok(v)
}

fn at_least_one(key: &str, value: &str) -> Result<usize> {
    let v: usize = parse(key, value)?;
    if v == 0 {
        return Err(bad(key, value, "must be at least 1"));
    }
    Ok(v)
}

/// Parse `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| SimError::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Merge the file pairs with the overrides (overrides win) and validate.
pub fn parse_config(file: Option<&str>, overrides: &[(String, String)]) -> Result<Config> {
    let mut pairs = match file {
        Some(text) => parse_pairs(text)?,
        None => Vec::new(),
    };
    pairs.extend(overrides.iter().cloned());
    let scene = pairs
        .iter()
        .rev()
        .find(|(k, _)| k == "scene")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| SimError::Config("missing required key `scene`".to_string()))?;
    let mut cfg = Config::new(scene.parse()?);
    for (k, v) in &pairs {
        cfg.set(k, v)?;
    }
    if cfg.dt_max < cfg.dt_min {
        return Err(SimError::Config(format!(
            "dt_max ({}) is smaller than dt_min ({})",
            cfg.dt_max, cfg.dt_min
        )));
    }
    Ok(cfg)
}
