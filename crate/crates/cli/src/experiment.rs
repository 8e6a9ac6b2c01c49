//! Forward modelling, inversions over sketch seeds, and (alpha, k) sweeps
//! on the Gaussian-lens model.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wri_core::covariance::{DataCovariance, Sketch, SourceCovarianceSpec, VarianceField};
use wri_core::grid::{
    build_gaussian_lens, build_transmission_acquisition_with_margin, model_relative_error, Acquisition,
    GaussianLensSpec, Grid2D, SlownessSqModel, VelocityModel,
};
use wri_core::helmholtz::{forward, BoundaryLayer, ShotData, Wavefield};
use wri_core::io::{decode_shots, encode_field, encode_shots, field_to_csv, read_bytes, write_bytes};
use wri_core::objectives::{calibrate_sigma_d_sq, Method, Objective, WaveProblem};
use wri_core::optimizer::{anderson_run, gradient_descent_run, AndersonConfig, Bounds, Evaluation, IterationLog};
use wri_core::C;

use crate::config::ExperimentConfig;

/// Geometry, true model and sources derived from a config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: Grid2D<f64>,
    pub boundary: BoundaryLayer<f64>,
    pub acq: Acquisition<f64>,
    pub v_true: VelocityModel<f64>,
    pub m_true: SlownessSqModel<f64>,
    pub q: Wavefield<f64>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let g = &cfg.grid;
        let grid = Grid2D::with_origin(g.nx, g.nz, g.dx, g.dz, g.x0, g.z0)?;
        let boundary = BoundaryLayer { width: cfg.boundary.width, strength: cfg.boundary.strength };
        let margin = cfg.acquisition.margin.context("config not materialized")?;
        let acq = build_transmission_acquisition_with_margin(
            &grid,
            cfg.acquisition.n_sources,
            cfg.acquisition.n_receivers,
            margin,
        )?;
        let lens = GaussianLensSpec {
            v_background: cfg.lens.v_background,
            amplitude: cfg.lens.amplitude,
            center: (cfg.lens.center_x.context("config not materialized")?, cfg.lens.center_z.context("config not materialized")?),
            radius: cfg.lens.radius,
        };
        let v_true = build_gaussian_lens(&lens, &grid)?;
        let m_true = v_true.to_slowness_sq();
        let q = Wavefield::point_sources(grid, &acq);
        Ok(Self { grid, boundary, acq, v_true, m_true, q })
    }

    pub fn start_model(&self, cfg: &ExperimentConfig) -> Result<SlownessSqModel<f64>> {
        let v0 = cfg.inversion.start_velocity.context("config not materialized")?;
        Ok(SlownessSqModel::uniform(self.grid, 1.0 / (v0 * v0))?)
    }

    /// Box constraints in squared slowness from scaled velocity extremes.
    pub fn bounds(&self, cfg: &ExperimentConfig) -> Result<Bounds<f64>> {
        let v_hi = self.v_true.max() * cfg.inversion.bound_high_factor;
        let v_lo = self.v_true.min() * cfg.inversion.bound_low_factor;
        Ok(Bounds::new(1.0 / (v_hi * v_hi), 1.0 / (v_lo * v_lo))?)
    }

    pub fn source_spec(&self, cfg: &ExperimentConfig) -> Result<SourceCovarianceSpec<f64>> {
        let spec = SourceCovarianceSpec {
            kind: cfg.kind()?,
            delta: cfg.covariance.delta.context("config not materialized")?,
            alpha: cfg.covariance.alpha,
            scale: cfg.covariance.scale,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn variance_field(&self, cfg: &ExperimentConfig) -> Result<VarianceField<f64>> {
        let interior = self.boundary.interior_mask(&self.grid);
        Ok(VarianceField::build(&self.source_spec(cfg)?, &self.acq, &self.grid, &interior)?)
    }
}

pub fn omega(frequency: f64) -> f64 {
    2.0 * PI * frequency
}

pub fn shots_path(data_dir: &Path, i: usize) -> PathBuf {
    data_dir.join(format!("shots_{i}.bin"))
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub files: Vec<PathBuf>,
    pub data: Vec<ShotData<f64>>,
    pub pde_solves: u64,
}

/// Simulates observed data for the true model at every configured frequency
/// and writes it with the true model and the materialized config.
pub fn run_forward(cfg: &ExperimentConfig) -> Result<ForwardOutput> {
    let cfg = cfg.clone().materialize()?;
    let setup = Setup::new(&cfg)?;
    let dir = cfg.data_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut out = ForwardOutput { files: Vec::new(), data: Vec::new(), pde_solves: 0 };
    for (i, &f) in cfg.physics.frequencies.iter().enumerate() {
        let mut d = forward(&setup.m_true, omega(f), &setup.q, &setup.acq, setup.boundary)?;
        out.pde_solves += setup.acq.n_sources() as u64;
        if cfg.physics.noise_level > 0.0 {
            add_noise(&mut d, cfg.physics.noise_level, cfg.physics.noise_seed.wrapping_add(i as u64));
        }
        let path = shots_path(&dir, i);
        write_bytes(&path, &encode_shots(&d, f)?)?;
        out.files.push(path);
        out.data.push(d);
    }
    write_model(&dir.join("true_model"), &setup.m_true)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(out)
}

fn add_noise(d: &mut ShotData<f64>, level: f64, seed: u64) {
    let n = d.as_slice().len() as f64;
    let rms = (d.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>() / n).sqrt();
    let normal = Normal::new(0.0, level * rms / 2f64.sqrt()).expect("finite noise level");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for z in d.as_mut_slice() {
        *z += C::new(normal.sample(&mut rng), normal.sample(&mut rng));
    }
}

/// Writes `<stem>.bin` and `<stem>.csv`.
pub fn write_model(stem: &Path, m: &SlownessSqModel<f64>) -> Result<()> {
    write_bytes(&stem.with_extension("bin"), &encode_field(m.grid(), m.values())?)?;
    fs::write(stem.with_extension("csv"), field_to_csv(m.grid(), m.values()))?;
    Ok(())
}

/// Reads the shot files written by [`run_forward`], checking frequencies
/// and shapes against the config.
pub fn load_data(cfg: &ExperimentConfig, setup: &Setup) -> Result<Vec<ShotData<f64>>> {
    let dir = cfg.data_dir();
    let mut out = Vec::new();
    for (i, &f) in cfg.physics.frequencies.iter().enumerate() {
        let path = shots_path(&dir, i);
        let bytes = read_bytes(&path).with_context(|| format!("no observed data at {}; run `forward` first", path.display()))?;
        let (d, freq) = decode_shots::<f64>(&bytes)?;
        if freq != f {
            bail!("{} holds {freq} Hz data, config expects {f} Hz", path.display());
        }
        if d.n_receivers() != setup.acq.n_receivers() || d.blocks() != setup.acq.n_sources() {
            bail!("{} has shape {}x{}, config expects {}x{}", path.display(), d.n_receivers(), d.blocks(), setup.acq.n_receivers(), setup.acq.n_sources());
        }
        out.push(d);
    }
    Ok(out)
}

/// Outcome of one inversion (one sketch seed).
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub model: Option<SlownessSqModel<f64>>,
    pub final_value: f64,
    pub model_rel_err: f64,
    /// All PDE solves including `sigma_d` calibration.
    pub pde_solves: u64,
    pub setup_solves: u64,
    pub iters: usize,
    pub seconds: f64,
    /// PDE solves charged to each iteration after the first evaluation.
    pub solves_per_iter: Vec<u64>,
    pub sigma_d_sq: Vec<f64>,
    pub log: Option<IterationLog<f64>>,
    pub error: Option<String>,
}

impl RunResult {
    fn failed(seed: u64, err: String) -> Self {
        Self {
            seed,
            model: None,
            final_value: f64::NAN,
            model_rel_err: f64::NAN,
            pde_solves: 0,
            setup_solves: 0,
            iters: 0,
            seconds: 0.0,
            solves_per_iter: Vec::new(),
            sigma_d_sq: Vec::new(),
            log: None,
            error: Some(err),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub label: String,
    pub method: Method,
    pub alpha: f64,
    pub k: usize,
    pub runs: Vec<RunResult>,
    /// Elementwise mean of the successful final models.
    pub mean_model: Option<SlownessSqModel<f64>>,
    pub mean_model_rel_err: f64,
}

impl RunArtifacts {
    fn successes(&self) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(|r| r.ok())
    }

    /// Mean and population standard deviation of the per-run errors.
    pub fn error_stats(&self) -> (f64, f64) {
        mean_std(self.successes().map(|r| r.model_rel_err))
    }

    pub fn mean_value(&self) -> f64 {
        mean_std(self.successes().map(|r| r.final_value)).0
    }

    pub fn total_pde_solves(&self) -> u64 {
        self.runs.iter().map(|r| r.pde_solves).sum()
    }
}

fn mean_std(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Inverts the observed data from the homogeneous starting model. The
/// sketched method runs once per seed; FWI and deterministic WRI run once
/// (recorded with seed 0). Artifacts go to `output.dir/<label>`.
pub fn run_inversion(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let cfg = cfg.clone().materialize()?;
    let label = cfg.run_label()?;
    run_inversion_in(&cfg, &cfg.output.dir.join(&label))
}

pub fn run_inversion_in(cfg: &ExperimentConfig, dir: &Path) -> Result<RunArtifacts> {
    let cfg = cfg.clone().materialize()?;
    let setup = Setup::new(&cfg)?;
    let data = load_data(&cfg, &setup)?;
    let method = cfg.method()?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;

    let seeds: Vec<u64> = if method == Method::Wariance { cfg.sketch.seeds.clone() } else { vec![0] };
    let mut runs = Vec::new();
    for &seed in &seeds {
        let run = match invert_one(&cfg, &setup, &data, seed) {
            Ok(r) => r,
            Err(e) => RunResult::failed(seed, format!("{e:#}")),
        };
        write_run(&dir.join(format!("seed_{seed}")), &run, cfg.output.wall_time)?;
        runs.push(run);
    }

    let finals: Vec<&SlownessSqModel<f64>> = runs.iter().filter_map(|r| r.model.as_ref()).collect();
    let (mean_model, mean_model_rel_err) = if finals.is_empty() {
        (None, f64::NAN)
    } else {
        let n = finals.len() as f64;
        let mut acc = vec![0.0; setup.grid.len()];
        for m in &finals {
            acc.iter_mut().zip(m.values()).for_each(|(a, &v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= n);
        let mean = SlownessSqModel::new(setup.grid, acc)?;
        write_model(&dir.join("mean_model"), &mean)?;
        let err = model_relative_error(&mean, &setup.m_true)?;
        (Some(mean), err)
    };

    let arts = RunArtifacts {
        dir: dir.to_path_buf(),
        label: cfg.run_label()?,
        method,
        alpha: cfg.covariance.alpha,
        k: if method == Method::Wariance { cfg.sketch.k } else { 0 },
        runs,
        mean_model,
        mean_model_rel_err,
    };
    write_metrics(&dir.join("metrics.csv"), &arts, cfg.output.wall_time)?;
    Ok(arts)
}

fn invert_one(cfg: &ExperimentConfig, setup: &Setup, data: &[ShotData<f64>], seed: u64) -> Result<RunResult> {
    let method = cfg.method()?;
    let bounds = setup.bounds(cfg)?;
    let fields = setup.variance_field(cfg)?;
    let mut m = setup.start_model(cfg)?;
    let mut log: Option<IterationLog<f64>> = None;
    let mut setup_solves = 0;
    let mut sigmas = Vec::new();
    for (fi, (&f, d)) in cfg.physics.frequencies.iter().zip(data).enumerate() {
        let w = omega(f);
        let sigma_d_sq = if cfg.covariance.calibrate_sigma_d {
            setup_solves += 2 * cfg.covariance.probes as u64;
            calibrate_sigma_d_sq(
                &setup.grid,
                &setup.acq,
                w,
                setup.boundary,
                &m,
                &fields,
                cfg.covariance.probes,
                cfg.covariance.calibration_seed.wrapping_add(fi as u64),
                cfg.covariance.balance,
            )?
        } else {
            cfg.covariance.sigma_d_sq
        };
        sigmas.push(sigma_d_sq);
        let problem = WaveProblem::new(
            setup.grid,
            setup.acq.clone(),
            w,
            setup.boundary,
            setup.q.clone(),
            d.clone(),
            DataCovariance::new(sigma_d_sq)?,
        )?;
        let mut objective = match method {
            Method::Fwi => Objective::Fwi,
            Method::Wri => Objective::Wri { fields: fields.clone(), memory_budget: cfg.covariance.memory_budget_mb << 20 },
            Method::Wariance => Objective::Wariance {
                sketch: Sketch::new(&fields, cfg.sketch.k, seed, cfg.sketch_mode()?, cfg.sketch.complex)?,
            },
        };
        let eval = |x: &SlownessSqModel<f64>| objective.evaluate(&problem, x).map(Evaluation::from);
        let (m_next, l) = if cfg.optimizer.algorithm == "descent" {
            let step = descent_step(cfg, &bounds);
            gradient_descent_run(eval, &m, step, cfg.optimizer.max_iters, bounds, Some(&setup.m_true))?
        } else {
            let o = &cfg.optimizer;
            let acfg = AndersonConfig {
                memory: o.memory,
                relaxation: o.relaxation,
                step: o.step,
                normalize_step: o.normalize_step,
                max_iters: o.max_iters,
                grad_tol: o.grad_tol,
                regularization: o.regularization,
            };
            anderson_run(eval, &m, &acfg, bounds, Some(&setup.m_true))?
        };
        m = m_next;
        log = Some(match log {
            None => l,
            Some(prev) => concat_logs(prev, l),
        });
    }
    let log = log.context("no frequencies configured")?;
    let last = log.last();
    let solves_per_iter = log.records.windows(2).map(|w| w[1].pde_solves - w[0].pde_solves).collect();
    Ok(RunResult {
        seed,
        final_value: last.value,
        model_rel_err: model_relative_error(&m, &setup.m_true)?,
        pde_solves: last.pde_solves + setup_solves,
        setup_solves,
        iters: log.iterations(),
        seconds: last.seconds,
        solves_per_iter,
        sigma_d_sq: sigmas,
        model: Some(m),
        log: Some(log),
        error: None,
    })
}

/// Plain descent has no gradient scale to normalize against, so `step`
/// is taken in squared-slowness units unless normalization is requested, in
/// which case it is relative to the bound range.
fn descent_step(cfg: &ExperimentConfig, bounds: &Bounds<f64>) -> f64 {
    if cfg.optimizer.normalize_step {
        cfg.optimizer.step * (bounds.hi - bounds.lo)
    } else {
        cfg.optimizer.step
    }
}

/// Appends `next` to `prev`, continuing iteration numbers and cumulative
/// solve counts.
fn concat_logs(mut prev: IterationLog<f64>, next: IterationLog<f64>) -> IterationLog<f64> {
    let last = prev.last().clone();
    for mut r in next.records {
        r.iter += last.iter + 1;
        r.pde_solves += last.pde_solves;
        r.seconds += last.seconds;
        prev.records.push(r);
    }
    prev.termination = next.termination;
    prev.fallbacks += next.fallbacks;
    prev
}

fn write_run(dir: &Path, run: &RunResult, wall_time: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(m) = &run.model {
        write_model(&dir.join("model"), m)?;
    }
    if let Some(log) = &run.log {
        fs::write(dir.join("log.csv"), log.to_csv(wall_time))?;
    }
    let err_path = dir.join("error.txt");
    match &run.error {
        Some(e) => fs::write(err_path, format!("{e}\n"))?,
        None if err_path.exists() => fs::remove_file(err_path)?,
        None => {}
    }
    Ok(())
}

const METRICS_HEADER: [&str; 8] = ["alpha", "k", "seed", "final_value", "model_rel_err", "pde_solves", "iters", "seconds"];

/// One row per run, then `mean` and `std` rows over successful runs, a
/// `mean_model` row with the error of the averaged model, and a `total` row
/// with summed solves, iterations and seconds.
fn write_metrics(path: &Path, a: &RunArtifacts, wall_time: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    let secs = |s: f64| if wall_time { format!("{s:.6}") } else { "0".into() };
    let (alpha, k) = (a.alpha.to_string(), a.k.to_string());
    for r in &a.runs {
        w.write_record([
            alpha.clone(),
            k.clone(),
            r.seed.to_string(),
            format!("{:.17e}", r.final_value),
            format!("{:.17e}", r.model_rel_err),
            r.pde_solves.to_string(),
            r.iters.to_string(),
            secs(r.seconds),
        ])?;
    }
    let ok: Vec<&RunResult> = a.successes().collect();
    let stat = |f: fn(&RunResult) -> f64| mean_std(ok.iter().map(|r| f(r)));
    let (v_mean, v_std) = stat(|r| r.final_value);
    let (e_mean, e_std) = stat(|r| r.model_rel_err);
    let (p_mean, p_std) = stat(|r| r.pde_solves as f64);
    let (i_mean, i_std) = stat(|r| r.iters as f64);
    let (s_mean, s_std) = stat(|r| r.seconds);
    for (name, v, e, p, i, s) in [("mean", v_mean, e_mean, p_mean, i_mean, s_mean), ("std", v_std, e_std, p_std, i_std, s_std)] {
        w.write_record([
            alpha.clone(),
            k.clone(),
            name.into(),
            format!("{v:.17e}"),
            format!("{e:.17e}"),
            format!("{p}"),
            format!("{i}"),
            secs(s),
        ])?;
    }
    w.write_record([alpha.clone(), k.clone(), "mean_model".into(), String::new(), format!("{:.17e}", a.mean_model_rel_err), String::new(), String::new(), String::new()])?;
    let iters: usize = a.runs.iter().map(|r| r.iters).sum();
    let seconds: f64 = a.runs.iter().map(|r| r.seconds).sum();
    w.write_record([alpha, k, "total".into(), String::new(), String::new(), a.total_pde_solves().to_string(), iters.to_string(), secs(seconds)])?;
    w.flush()?;
    Ok(())
}

/// One cell of a sweep table.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub method: Method,
    pub alpha: f64,
    pub k: usize,
    pub rank: usize,
    pub mean_err: f64,
    pub std_err: f64,
    pub mean_model_err: f64,
    pub mean_objective: f64,
    pub total_pde_solves: u64,
    pub failed_runs: usize,
    /// Set when the whole cell could not run.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub path: PathBuf,
}

impl SweepSummary {
    pub fn find(&self, method: Method, alpha: f64, k: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.method == method && r.alpha == alpha && r.k == k)
    }
}

/// Runs the sketched method for every `(alpha, k)` cell, where `ks[i]` lists
/// the ranks for `alphas[i]` (a single list is shared by all alphas), plus
/// FWI and deterministic WRI references when `sweep.references` is set.
/// Cell failures are recorded in the table rather than aborting the sweep.
pub fn run_sweep(cfg: &ExperimentConfig, alphas: &[f64], ks: &[Vec<usize>]) -> Result<SweepSummary> {
    if alphas.is_empty() {
        bail!("sweep needs at least one alpha");
    }
    if ks.is_empty() || ks.iter().any(|row| row.is_empty()) {
        bail!("sweep needs a non-empty list of k for every alpha");
    }
    if ks.len() != 1 && ks.len() != alphas.len() {
        bail!("sweep has {} alphas but {} k lists", alphas.len(), ks.len());
    }
    let cfg = cfg.clone().materialize()?;
    let root = cfg.output.dir.join("sweep");
    fs::create_dir_all(&root)?;
    let n_s = cfg.acquisition.n_sources;
    let mut rows = Vec::new();
    let mut cell = |method: Method, alpha: f64, k: usize| {
        let mut c = cfg.clone();
        c.inversion.method = method.to_string();
        c.covariance.alpha = alpha;
        c.sketch.k = k.max(1);
        let label = c.run_label().expect("method is valid");
        let rank = if method == Method::Wariance { k * n_s } else { 0 };
        let row = match run_inversion_in(&c, &root.join(label)) {
            Ok(a) => {
                let (mean_err, std_err) = a.error_stats();
                SweepRow {
                    method,
                    alpha,
                    k,
                    rank,
                    mean_err,
                    std_err,
                    mean_model_err: a.mean_model_rel_err,
                    mean_objective: a.mean_value(),
                    total_pde_solves: a.total_pde_solves(),
                    failed_runs: a.runs.iter().filter(|r| !r.ok()).count(),
                    error: None,
                }
            }
            Err(e) => SweepRow {
                method,
                alpha,
                k,
                rank,
                mean_err: f64::NAN,
                std_err: f64::NAN,
                mean_model_err: f64::NAN,
                mean_objective: f64::NAN,
                total_pde_solves: 0,
                failed_runs: 0,
                error: Some(format!("{e:#}")),
            },
        };
        rows.push(row);
    };
    if cfg.sweep.references {
        cell(Method::Fwi, alphas[0], 0);
    }
    for (i, &alpha) in alphas.iter().enumerate() {
        if cfg.sweep.references {
            cell(Method::Wri, alpha, 0);
        }
        for &k in ks.get(i).unwrap_or(&ks[0]) {
            cell(Method::Wariance, alpha, k);
        }
    }
    let path = cfg.output.dir.join("sweep.csv");
    write_sweep(&path, &rows)?;
    Ok(SweepSummary { rows, path })
}

fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "alpha",
        "k",
        "rank",
        "mean_model_rel_err",
        "std_model_rel_err",
        "mean_model_err_of_mean",
        "mean_objective",
        "total_pde_solves",
        "status",
    ])?;
    for r in rows {
        let status = match (&r.error, r.failed_runs) {
            (Some(e), _) => format!("failed: {e}"),
            (None, 0) => "ok".into(),
            (None, n) => format!("{n} runs failed"),
        };
        w.write_record([
            r.method.to_string(),
            r.alpha.to_string(),
            r.k.to_string(),
            r.rank.to_string(),
            format!("{:.17e}", r.mean_err),
            format!("{:.17e}", r.std_err),
            format!("{:.17e}", r.mean_model_err),
            format!("{:.17e}", r.mean_objective),
            r.total_pde_solves.to_string(),
            status,
        ])?;
    }
    w.flush()?;
    Ok(())
}
