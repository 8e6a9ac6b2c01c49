#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wri_core::covariance::{CovarianceKind, DataCovariance, SourceCovarianceSpec, VarianceField};
use wri_core::grid::{build_gaussian_lens, build_transmission_acquisition_with_margin, GaussianLensSpec, Grid2D, SlownessSqModel, VelocityModel};
use wri_core::helmholtz::{forward, BoundaryLayer, Wavefield};
use wri_core::objectives::WaveProblem;
use wri_core::C;

pub const FREQ: f64 = 6.0;

pub fn omega() -> f64 {
    2.0 * std::f64::consts::PI * FREQ
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rvec(n: usize, rng: &mut ChaCha8Rng) -> Vec<C<f64>> {
    (0..n).map(|_| C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

/// 21×21 nodes at 25 m with a 4-node sponge, lens truth and a smooth
/// perturbed evaluation model.
pub struct Small {
    pub problem: WaveProblem<f64>,
    pub m_true: SlownessSqModel<f64>,
    pub m_eval: SlownessSqModel<f64>,
    pub boundary: BoundaryLayer<f64>,
}

pub fn small_problem(n_s: usize, n_r: usize, sigma_d_sq: f64) -> Small {
    let grid = Grid2D::new(21, 21, 25.0, 25.0).unwrap();
    let boundary = BoundaryLayer { width: 4, strength: 2.0 };
    let acq = build_transmission_acquisition_with_margin(&grid, n_s, n_r, boundary.width).unwrap();
    let lens = GaussianLensSpec { v_background: 2000.0, amplitude: -300.0, center: (250.0, 250.0), radius: 80.0 };
    let m_true = build_gaussian_lens(&lens, &grid).unwrap().to_slowness_sq();
    let v_eval: Vec<f64> = (0..grid.len())
        .map(|i| {
            let (ix, iz) = grid.coords_of(i);
            1950.0 + 40.0 * ((ix as f64) * 0.3).sin() * ((iz as f64) * 0.2).cos()
        })
        .collect();
    let m_eval = VelocityModel::new(grid, v_eval).unwrap().to_slowness_sq();
    let q = Wavefield::point_sources(grid, &acq);
    let d = forward(&m_true, omega(), &q, &acq, boundary).unwrap();
    let problem = WaveProblem::new(grid, acq, omega(), boundary, q, d, DataCovariance::new(sigma_d_sq).unwrap()).unwrap();
    Small { problem, m_true, m_eval, boundary }
}

pub fn focusing(alpha: f64, scale: f64) -> SourceCovarianceSpec<f64> {
    SourceCovarianceSpec { kind: CovarianceKind::SourceFocusing, delta: 25.0, alpha, scale }
}

pub fn fields(s: &Small, spec: &SourceCovarianceSpec<f64>) -> VarianceField<f64> {
    let p = &s.problem;
    VarianceField::build(spec, &p.acq, &p.grid, &p.interior_mask()).unwrap()
}

/// Random direction supported on the physical interior.
pub fn interior_direction(s: &Small, rng: &mut ChaCha8Rng) -> Vec<f64> {
    s.problem
        .interior_mask()
        .into_iter()
        .map(|inside| if inside { rng.random_range(-1.0..1.0) } else { 0.0 })
        .collect()
}

pub fn shifted(m: &SlownessSqModel<f64>, dir: &[f64], h: f64) -> SlownessSqModel<f64> {
    SlownessSqModel::new(*m.grid(), m.values().iter().zip(dir).map(|(a, b)| a + h * b).collect()).unwrap()
}

pub fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Relative error between the directional derivative `⟨g, δ⟩` and a central
/// difference with `h = 1e-6·‖m‖/‖δ‖`.
pub fn fd_relative_error(
    mut f: impl FnMut(&SlownessSqModel<f64>) -> f64,
    m: &SlownessSqModel<f64>,
    grad: &[f64],
    dir: &[f64],
) -> f64 {
    let h = 1e-6 * l2(m.values()) / l2(dir);
    let fd = (f(&shifted(m, dir, h)) - f(&shifted(m, dir, -h))) / (2.0 * h);
    let an: f64 = grad.iter().zip(dir).map(|(a, b)| a * b).sum();
    (fd - an).abs() / an.abs().max(fd.abs())
}
