use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use wri_cli::{run_check, run_forward, run_inversion, run_sweep, ExperimentConfig};

#[derive(Parser)]
#[command(name = "wri", version, about = "Frequency-domain FWI / WRI experiments on a Gaussian lens")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML config file; omitted keys take their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set sketch.k=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shorthand for `--set output.dir=...`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Shorthand for `--set inversion.method=...`.
    #[arg(short, long)]
    method: Option<String>,
    /// Shorthand for `--set sketch.k=...`.
    #[arg(short, long)]
    k: Option<usize>,
    /// Shorthand for `--set covariance.alpha=...`.
    #[arg(short, long)]
    alpha: Option<f64>,
    /// Comma-separated sketch seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut sets = self.sets.clone();
        if let Some(o) = &self.out {
            sets.push(format!("output.dir={:?}", o.display().to_string()));
        }
        if let Some(m) = &self.method {
            sets.push(format!("inversion.method=\"{m}\""));
        }
        if let Some(k) = self.k {
            sets.push(format!("sketch.k={k}"));
        }
        if let Some(a) = self.alpha {
            sets.push(format!("covariance.alpha={a:?}"));
        }
        if let Some(s) = &self.seeds {
            sets.push(format!("sketch.seeds={s:?}"));
        }
        ExperimentConfig::load(self.config.as_deref(), &sets)?.materialize()
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate observed data for the true model.
    Forward(Common),
    /// Invert the observed data with the configured method.
    Invert(Common),
    /// Run the (alpha, k) grid from `sweep.alphas` / `sweep.ks`.
    Sweep(Common),
    /// Run the built-in property checks on a tiny instance.
    Check,
    /// Print the fully materialized config.
    Config(Common),
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Forward(c) => {
            let out = run_forward(&c.load()?)?;
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            println!("pde_solves {}", out.pde_solves);
        }
        Cmd::Invert(c) => {
            let a = run_inversion(&c.load()?)?;
            for r in &a.runs {
                match &r.error {
                    None => println!(
                        "seed {:>4}  iters {:>4}  value {:.6e}  model_rel_err {:.5}  pde_solves {}",
                        r.seed, r.iters, r.final_value, r.model_rel_err, r.pde_solves
                    ),
                    Some(e) => println!("seed {:>4}  failed: {e}", r.seed),
                }
            }
            let (mean, std) = a.error_stats();
            println!("{}: model_rel_err mean {mean:.5} std {std:.5}, mean model {:.5}", a.label, a.mean_model_rel_err);
            println!("artifacts in {}", a.dir.display());
        }
        Cmd::Sweep(c) => {
            let cfg = c.load()?;
            let s = run_sweep(&cfg, &cfg.sweep.alphas, &cfg.sweep.ks)?;
            let n_s = cfg.acquisition.n_sources;
            for r in &s.rows {
                let what = match r.method {
                    wri_core::objectives::Method::Wariance => format!("wariance alpha={} r={}n_s", r.alpha, r.rank / n_s),
                    m => format!("{m} alpha={}", r.alpha),
                };
                match &r.error {
                    None => println!("{what:<28} model_rel_err {:.5} ± {:.5}  pde_solves {}", r.mean_err, r.std_err, r.total_pde_solves),
                    Some(e) => println!("{what:<28} failed: {e}"),
                }
            }
            println!("summary in {}", s.path.display());
        }
        Cmd::Check => {
            let results = run_check();
            for r in &results {
                println!("{r}");
            }
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Config(c) => print!("{}", c.load()?.to_toml()?),
    }
    Ok(ExitCode::SUCCESS)
}
