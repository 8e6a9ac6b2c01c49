//! Self-checks on a small instance: adjoint identities, the Woodbury solve,
//! the weighted-norm/Lagrangian duality, finite-difference gradients and
//! PDE-solve accounting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wri_core::covariance::{sample_sketch, woodbury_apply, DataCovariance, SourceCovarianceSpec, CovarianceKind, VarianceField};
use wri_core::grid::{build_gaussian_lens, build_transmission_acquisition_with_margin, GaussianLensSpec, Grid2D, SlownessSqModel};
use wri_core::helmholtz::{assemble, factorize, forward, restrict_adjoint_vec, restrict_vec, BoundaryLayer, Wavefield};
use wri_core::linalg::Cholesky;
use wri_core::objectives::{
    dense_perturbed_system, deterministic_wri_objective_gradient, fwi_objective_gradient, lagrangian,
    wariance_objective_gradient, ObjectiveReport, WaveProblem,
};
use wri_core::scalar::dot;
use wri_core::{Result, C};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

struct Tiny {
    p: WaveProblem<f64>,
    m0: SlownessSqModel<f64>,
    fields: VarianceField<f64>,
}

fn tiny(n_s: usize, n_r: usize, sigma_d_sq: f64) -> Result<Tiny> {
    let grid = Grid2D::new(17, 17, 25.0, 25.0)?;
    let boundary = BoundaryLayer { width: 3, strength: 2.0 };
    let acq = build_transmission_acquisition_with_margin(&grid, n_s, n_r, 3)?;
    let lens = GaussianLensSpec { v_background: 2000.0, amplitude: -300.0, center: (200.0, 200.0), radius: 70.0 };
    let m_true = build_gaussian_lens(&lens, &grid)?.to_slowness_sq();
    let omega = 2.0 * std::f64::consts::PI * 6.0;
    let q = Wavefield::point_sources(grid, &acq);
    let d = forward(&m_true, omega, &q, &acq, boundary)?;
    let m0 = SlownessSqModel::uniform(grid, 1.0 / (1950.0f64 * 1950.0))?;
    let spec = SourceCovarianceSpec { kind: CovarianceKind::SourceFocusing, delta: 25.0, alpha: 1.0, scale: 1.0 };
    let fields = VarianceField::build(&spec, &acq, &grid, &boundary.interior_mask(&grid))?;
    let p = WaveProblem::new(grid, acq, omega, boundary, q, d, DataCovariance::new(sigma_d_sq)?)?;
    Ok(Tiny { p, m0, fields })
}

fn rvec(n: usize, rng: &mut ChaCha8Rng) -> Vec<C<f64>> {
    (0..n).map(|_| C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn adjoint_check() -> Result<CheckResult> {
    let t = tiny(2, 7, 1.0)?;
    let n = t.p.grid.len();
    let f = factorize(&assemble(&t.m0, t.p.omega, t.p.boundary)?)?;
    let op = assemble(&t.m0, t.p.omega, t.p.boundary)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (x, y) = (rvec(n, &mut rng), rvec(n, &mut rng));
        let scale = dot(&x, &x).re.sqrt() * dot(&y, &y).re.sqrt();
        worst = worst.max((dot(&op.apply(&x), &y) - dot(&x, &op.apply_adjoint(&y))).norm() / scale);
        let (mut ax, mut ay) = (x.clone(), y.clone());
        f.solve_vec(&mut ax)?;
        f.solve_adjoint_vec(&mut ay)?;
        worst = worst.max((dot(&ax, &y) - dot(&x, &ay)).norm() / scale);
        let r = rvec(7, &mut rng);
        let mut rx = vec![C::new(0.0, 0.0); 7];
        restrict_vec(&x, &t.p.acq, &mut rx);
        let mut rtr = vec![C::new(0.0, 0.0); n];
        restrict_adjoint_vec(&r, &t.p.acq, &mut rtr);
        let s = dot(&x, &x).re.sqrt() * dot(&r, &r).re.sqrt();
        worst = worst.max((dot(&rx, &r) - dot(&x, &rtr)).norm() / s);
    }
    Ok(CheckResult { name: "adjoint identities", passed: worst <= 1e-10, detail: format!("max relative mismatch {worst:.2e}") })
}

fn woodbury_check() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for &(n, k) in &[(5, 1), (5, 3), (20, 10)] {
        let d_z = rvec(n * k, &mut rng);
        let rho = rvec(n, &mut rng);
        let sigma = DataCovariance::new(0.7)?;
        let y = woodbury_apply(&sigma, &d_z, k, &rho)?;
        let mut dense = vec![C::new(0.0, 0.0); n * n];
        for i in 0..n {
            dense[i * n + i] += C::new(0.7, 0.0);
            for j in 0..n {
                for c in 0..k {
                    dense[i * n + j] += d_z[c * n + i] * d_z[c * n + j].conj();
                }
            }
        }
        let mut x = rho.clone();
        Cholesky::factorize(&dense, n)?.solve_in_place(&mut x);
        let err: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        worst = worst.max(err / dot(&x, &x).re.sqrt());
    }
    Ok(CheckResult { name: "woodbury solve", passed: worst <= 1e-12, detail: format!("max relative error {worst:.2e}") })
}

fn duality_check() -> Result<CheckResult> {
    let t = tiny(3, 9, 60.0)?;
    let (res, covs) = dense_perturbed_system(&t.p, &t.m0, &t.fields)?;
    let n_r = t.p.n_receivers();
    let (mut lag, mut closed) = (0.0, 0.0);
    for (s, cov) in covs.iter().enumerate() {
        let rho = res.rho.column(s);
        let mut y = rho.to_vec();
        Cholesky::factorize(cov, n_r)?.solve_in_place(&mut y);
        lag += lagrangian(&y, rho, cov);
        closed += 0.5 * dot(&y, rho).re;
    }
    let det = deterministic_wri_objective_gradient(&t.p, &t.m0, &t.fields, 1 << 30)?.value;
    let worst = rel(lag, closed).max(rel(det, closed));
    Ok(CheckResult { name: "lagrangian duality", passed: worst <= 1e-10, detail: format!("max relative gap {worst:.2e}") })
}

fn fd_error(
    t: &Tiny,
    eval: &dyn Fn(&SlownessSqModel<f64>) -> Result<ObjectiveReport<f64>>,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = eval(&t.m0)?;
    let interior = t.p.interior_mask();
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let dir: Vec<f64> =
            interior.iter().map(|&i| if i { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
        let nm = t.m0.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        let nd = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = 1e-6 * nm / nd;
        let shift = |s: f64| {
            SlownessSqModel::new(t.p.grid, t.m0.values().iter().zip(&dir).map(|(m, d)| m + s * h * d).collect())
        };
        let fd = (eval(&shift(1.0)?)?.value - eval(&shift(-1.0)?)?.value) / (2.0 * h);
        let an: f64 = base.gradient.iter().zip(&dir).map(|(g, d)| g * d).sum();
        worst = worst.max(rel(fd, an));
    }
    Ok(worst)
}

fn gradient_check() -> Result<Vec<CheckResult>> {
    let t = tiny(2, 9, 60.0)?;
    let sk = sample_sketch(&t.fields, 3, 11)?;
    let fwi = fd_error(&t, &|m| fwi_objective_gradient(&t.p, m), 3)?;
    let wri = fd_error(&t, &|m| deterministic_wri_objective_gradient(&t.p, m, &t.fields, 1 << 30), 4)?;
    let war = fd_error(&t, &|m| wariance_objective_gradient(&t.p, m, &sk), 5)?;
    Ok(vec![
        CheckResult { name: "fwi gradient", passed: fwi <= 1e-5, detail: format!("finite-difference error {fwi:.2e}") },
        CheckResult { name: "wri gradient", passed: wri <= 1e-4, detail: format!("finite-difference error {wri:.2e}") },
        CheckResult { name: "wariance gradient", passed: war <= 1e-4, detail: format!("finite-difference error {war:.2e}") },
    ])
}

fn cost_check() -> Result<CheckResult> {
    let t = tiny(3, 9, 60.0)?;
    let n_s = 3;
    let mut got = Vec::new();
    let mut want = Vec::new();
    got.push(fwi_objective_gradient(&t.p, &t.m0)?.pde_solves);
    want.push(2 * n_s);
    for k in [1, 2, 5] {
        got.push(wariance_objective_gradient(&t.p, &t.m0, &sample_sketch(&t.fields, k, 1)?)?.pde_solves);
        want.push(2 * n_s + k * n_s);
    }
    let want: Vec<u64> = want.into_iter().map(|w| w as u64).collect();
    Ok(CheckResult { name: "pde solve count", passed: got == want, detail: format!("got {got:?}, expected {want:?}") })
}

/// Runs every check; a check that errors is reported as failed.
pub fn run_check() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut push = |name: &'static str, r: Result<Vec<CheckResult>>| match r {
        Ok(v) => out.extend(v),
        Err(e) => out.push(CheckResult { name, passed: false, detail: e.to_string() }),
    };
    push("adjoint identities", adjoint_check().map(|c| vec![c]));
    push("woodbury solve", woodbury_check().map(|c| vec![c]));
    push("lagrangian duality", duality_check().map(|c| vec![c]));
    push("gradients", gradient_check());
    push("pde solve count", cost_check().map(|c| vec![c]));
    out
}
