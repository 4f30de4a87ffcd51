//! Command-line front end: `run`, `bench`, `ablate`, `validate`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use covector_core::config::{parse_config, parse_pairs, Config};
use covector_core::experiments::{ablate_convergence, ablate_surface, bench, run, validate};
use covector_core::metrics::MetricsRow;
use covector_core::{Result, SimError};

#[derive(Parser, Debug)]
#[command(name = "covector", version, about = "Covector flow-map fluid solver on clipped Voronoi particles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration.
    Run(RunArgs),
    /// Run LMCP and PPM on the same scene.
    Bench(RunArgs),
    /// Ablation studies.
    Ablate {
        #[arg(value_enum)]
        study: Study,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Operator property suite.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum Study {
    /// CG histories with and without the Λ subtraction.
    Convergence,
    /// Dam break with and without the free-surface branch.
    Surface,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// `key=value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    spacing: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    steps: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    cfl: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    reinit_n: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    layers_k: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    tol: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    frame_stride: Option<String>,
    /// Any other config key, e.g. `--set gravity=0,-9.8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let flags = [
            ("scene", &self.scene),
            ("scheme", &self.scheme),
            ("spacing", &self.spacing),
            ("steps", &self.steps),
            ("cfl", &self.cfl),
            ("reinit_n", &self.reinit_n),
            ("layers_k", &self.layers_k),
            ("tol", &self.tol),
            ("seed", &self.seed),
            ("out", &self.out),
            ("frame_stride", &self.frame_stride),
        ];
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| SimError::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        out.extend(flags.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))));
        Ok(out)
    }

    /// Merged config. `scene` fills in a missing scene id.
    fn config(&self, scene: Option<&str>) -> Result<Config> {
        let text = match &self.config {
            Some(path) => Some(std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?),
            None => None,
        };
        let mut overrides = self.overrides()?;
        if let Some(s) = scene {
            // Lowest precedence: the file and the flags both win over it.
            let in_file = match &text {
                Some(t) => parse_pairs(t)?.iter().any(|(k, _)| k == "scene"),
                None => false,
            };
            if !in_file && !overrides.iter().any(|(k, _)| k == "scene") {
                overrides.insert(0, ("scene".to_string(), s.to_string()));
            }
        }
        parse_config(text.as_deref(), &overrides)
    }
}

fn summarize(label: &str, rows: &[MetricsRow]) {
    let (Some(first), Some(last)) = (rows.first(), rows.last()) else {
        println!("{label}: no steps");
        return;
    };
    let ratio = if first.energy > 0.0 { last.energy / first.energy } else { f64::NAN };
    println!(
        "{label}: {} steps, t = {:.4}, energy ratio {:.6}, max speed {:.4e}, divergence {:.3e}, volume {:.6}",
        last.step, last.time, ratio, last.max_speed, last.divergence_error, last.total_volume
    );
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.config(None)?;
            let rows = run(&cfg)?;
            summarize(cfg.scene.as_str(), &rows);
            println!("wrote {}", cfg.out.display());
        }
        Command::Bench(args) => {
            let cfg = args.config(None)?;
            let (lmcp, ppm) = bench(&cfg)?;
            summarize("lmcp", &lmcp);
            summarize("ppm", &ppm);
            println!("wrote {}", cfg.out.display());
        }
        Command::Ablate { study, args } => match study {
            Study::Convergence => {
                let cfg = args.config(Some("leapfrog"))?;
                for (n, records) in ablate_convergence(&cfg)? {
                    let with: usize = records.iter().map(|r| r.iterations_with).sum();
                    let without: usize = records.iter().map(|r| r.iterations_without).sum();
                    println!("length {n}: {with} CG iterations with subtraction, {without} without");
                }
                println!("wrote {}", cfg.out.display());
            }
            Study::Surface => {
                let cfg = args.config(Some("dam_break_2d"))?;
                let out = ablate_surface(&cfg)?;
                summarize("surface branch on", &out.with_branch);
                summarize("surface branch off", &out.without_branch);
                if let Some(why) = &out.without_failure {
                    println!("surface branch off stopped: {why}");
                }
                println!("wrote {}", cfg.out.display());
            }
        },
        Command::Validate { seed } => {
            let checks = validate(seed)?;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
