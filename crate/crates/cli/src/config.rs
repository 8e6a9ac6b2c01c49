//! Experiment configuration: a TOML document with one table per concern.
//!
//! Optional keys (`lens.center_x`, `acquisition.margin`, ...) are filled in
//! by [`ExperimentConfig::materialize`] so the persisted copy never relies on
//! an implicit default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wri_core::covariance::{CovarianceKind, SketchMode};
use wri_core::objectives::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
    pub x0: f64,
    pub z0: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nx: 101, nz: 101, dx: 10.0, dz: 10.0, x0: 0.0, z0: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LensConfig {
    pub v_background: f64,
    pub amplitude: f64,
    /// Defaults to the middle of the domain.
    pub center_x: Option<f64>,
    pub center_z: Option<f64>,
    pub radius: f64,
}

impl Default for LensConfig {
    fn default() -> Self {
        Self { v_background: 2000.0, amplitude: -400.0, center_x: None, center_z: None, radius: 150.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    pub n_sources: usize,
    pub n_receivers: usize,
    /// Nodes between the grid edge and the source/receiver lines; defaults to
    /// the sponge width so both lines sit on the undamped interior.
    pub margin: Option<usize>,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self { n_sources: 50, n_receivers: 201, margin: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub width: usize,
    pub strength: f64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self { width: 20, strength: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    /// Inverted one after another, each starting from the previous result.
    pub frequencies: Vec<f64>,
    /// Standard deviation of added complex Gaussian noise, relative to the
    /// RMS amplitude of the clean data. Zero leaves the data noise free.
    pub noise_level: f64,
    pub noise_seed: u64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self { frequencies: vec![6.0], noise_level: 0.0, noise_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    /// `fwi`, `wri` or `wariance`.
    pub method: String,
    /// Velocity of the homogeneous starting model; defaults to the lens
    /// background.
    pub start_velocity: Option<f64>,
    /// Velocity bounds as multiples of the true model's min and max.
    pub bound_low_factor: f64,
    pub bound_high_factor: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self { method: "wariance".into(), start_velocity: None, bound_low_factor: 0.7, bound_high_factor: 1.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceConfig {
    /// `source_focusing`, `depth_focusing` or `uniform`.
    pub kind: String,
    /// Regularizing distance in meters; defaults to `grid.dx`.
    pub delta: Option<f64>,
    pub alpha: f64,
    pub scale: f64,
    /// Derive `sigma_d_sq` from random probes of the propagated source
    /// covariance at the starting model instead of using the fixed value.
    pub calibrate_sigma_d: bool,
    pub sigma_d_sq: f64,
    /// Multiplier on the calibrated value.
    pub balance: f64,
    pub probes: usize,
    pub calibration_seed: u64,
    /// Cap on the dense per-source matrices of deterministic WRI.
    pub memory_budget_mb: usize,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            kind: "source_focusing".into(),
            delta: None,
            alpha: 1.0,
            scale: 1.0,
            calibrate_sigma_d: true,
            sigma_d_sq: 1.0,
            balance: 1.0,
            probes: 5,
            calibration_seed: 0,
            memory_budget_mb: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchConfig {
    /// Columns per source; the total rank is `k · n_sources`.
    pub k: usize,
    /// `fixed` or `redraw`.
    pub mode: String,
    pub seeds: Vec<u64>,
    /// Circular complex Gaussian columns; `false` draws real columns.
    pub complex: bool,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self { k: 1, mode: "fixed".into(), seeds: vec![1, 2, 3, 4, 5], complex: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// `anderson` or `descent`.
    pub algorithm: String,
    pub memory: usize,
    pub relaxation: f64,
    pub step: f64,
    pub normalize_step: bool,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub regularization: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: "anderson".into(),
            memory: 5,
            relaxation: 1.0,
            step: 0.02,
            normalize_step: true,
            max_iters: 50,
            grad_tol: 1e-6,
            regularization: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    /// One list of `k` per alpha, or a single list shared by all alphas.
    pub ks: Vec<Vec<usize>>,
    /// Also run FWI and deterministic WRI for comparison.
    pub references: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { alphas: vec![1.0, 2.0], ks: vec![vec![1, 10, 30, 50], vec![1, 2, 3, 4]], references: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Record elapsed seconds in logs and metrics. Off by default so that
    /// repeated runs write identical files.
    pub wall_time: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), wall_time: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub lens: LensConfig,
    pub acquisition: AcquisitionConfig,
    pub boundary: BoundaryConfig,
    pub physics: PhysicsConfig,
    pub inversion: InversionConfig,
    pub covariance: CovarianceConfig,
    pub sketch: SketchConfig,
    pub optimizer: OptimizerConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_table(toml::from_str(text).context("parsing config")?)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table).try_into().context("invalid config")
    }

    /// Reads `path` (if any) and applies `key=value` overrides such as
    /// `sketch.k=10` or `sketch.seeds=[7]`. Values are parsed as TOML and
    /// fall back to plain strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing config")
    }

    /// Fills every optional key with its derived default and validates.
    pub fn materialize(mut self) -> Result<Self> {
        let g = &self.grid;
        let cx = g.x0 + g.dx * (g.nx.saturating_sub(1)) as f64 / 2.0;
        let cz = g.z0 + g.dz * (g.nz.saturating_sub(1)) as f64 / 2.0;
        self.lens.center_x.get_or_insert(cx);
        self.lens.center_z.get_or_insert(cz);
        self.acquisition.margin.get_or_insert(self.boundary.width);
        self.covariance.delta.get_or_insert(g.dx);
        self.inversion.start_velocity.get_or_insert(self.lens.v_background);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.method()?;
        self.kind()?;
        self.sketch_mode()?;
        if self.physics.frequencies.is_empty() || self.physics.frequencies.iter().any(|&f| !(f > 0.0)) {
            bail!("physics.frequencies must be a non-empty list of positive values");
        }
        if !(self.physics.noise_level >= 0.0) {
            bail!("physics.noise_level must be non-negative");
        }
        if self.sketch.k == 0 {
            bail!("sketch.k must be at least 1");
        }
        if self.sketch.seeds.is_empty() {
            bail!("sketch.seeds must not be empty");
        }
        if !matches!(self.optimizer.algorithm.as_str(), "anderson" | "descent") {
            bail!("optimizer.algorithm must be `anderson` or `descent`, got `{}`", self.optimizer.algorithm);
        }
        let inv = &self.inversion;
        if !(inv.bound_low_factor > 0.0 && inv.bound_high_factor >= inv.bound_low_factor) {
            bail!("inversion bound factors must satisfy 0 < low <= high");
        }
        if self.covariance.probes == 0 {
            bail!("covariance.probes must be at least 1");
        }
        if !(self.covariance.sigma_d_sq > 0.0 && self.covariance.balance > 0.0) {
            bail!("covariance.sigma_d_sq and covariance.balance must be positive");
        }
        Ok(())
    }

    pub fn method(&self) -> Result<Method> {
        Ok(self.inversion.method.parse()?)
    }

    pub fn kind(&self) -> Result<CovarianceKind> {
        Ok(self.covariance.kind.parse()?)
    }

    pub fn sketch_mode(&self) -> Result<SketchMode> {
        Ok(self.sketch.mode.parse()?)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output.dir.join("data")
    }

    /// Directory name for one inversion setting, e.g. `wariance_a1_k10`.
    pub fn run_label(&self) -> Result<String> {
        let a = self.covariance.alpha;
        Ok(match self.method()? {
            Method::Fwi => "fwi".into(),
            Method::Wri => format!("wri_a{a}"),
            Method::Wariance => format!("wariance_a{a}_k{}", self.sketch.k),
        })
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').with_context(|| format!("override `{spec}` is not key=value"))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().context("empty override key")?;
    let mut cur = table;
    for p in path {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("`{p}` in `{key}` is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
