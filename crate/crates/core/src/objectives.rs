//! Objective values and adjoint-state gradients for FWI, source-focusing
//! WRI with a dense perturbed data covariance, and the sketched variant
//! whose slack variable comes from a per-source Woodbury solve.
//!
//! Every method works source by source: `Σ_d`, `Σ_q` and `F(m)` are block
//! diagonal over sources, so each shot carries its own covariance system.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::covariance::{DataCovariance, Sketch, VarianceField};
pub use crate::covariance::woodbury_apply;
use crate::error::{Error, Result};
use crate::grid::{Acquisition, Grid2D, SlownessSqModel};
use crate::helmholtz::{
    accumulate_correlation, assemble, factorize, restrict_adjoint_vec, restrict_vec, BoundaryLayer, Factorization,
    ShotData, SourceTerm,
};
use crate::linalg::Cholesky;
use crate::scalar::{dot, Real, C};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fwi,
    Wri,
    Wariance,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fwi" => Ok(Self::Fwi),
            "wri" => Ok(Self::Wri),
            "wariance" => Ok(Self::Wariance),
            other => Err(Error::InvalidModel(format!("unknown method `{other}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fwi => "fwi",
            Self::Wri => "wri",
            Self::Wariance => "wariance",
        })
    }
}

/// Everything except the model: geometry, frequency, sources, observed data
/// and the data covariance.
#[derive(Debug, Clone)]
pub struct WaveProblem<T> {
    pub grid: Grid2D<T>,
    pub acq: Acquisition<T>,
    pub omega: T,
    pub boundary: BoundaryLayer<T>,
    pub q: SourceTerm<T>,
    pub d: ShotData<T>,
    pub sigma_d: DataCovariance<T>,
}

impl<T: Real> WaveProblem<T> {
    pub fn new(
        grid: Grid2D<T>,
        acq: Acquisition<T>,
        omega: T,
        boundary: BoundaryLayer<T>,
        q: SourceTerm<T>,
        d: ShotData<T>,
        sigma_d: DataCovariance<T>,
    ) -> Result<Self> {
        if q.blocks() != acq.n_sources() || q.grid() != &grid {
            return Err(Error::Shape { expected: acq.n_sources(), got: q.blocks() });
        }
        if d.blocks() != acq.n_sources() || d.n_receivers() != acq.n_receivers() {
            return Err(Error::Shape { expected: acq.n_sources() * acq.n_receivers(), got: d.as_slice().len() });
        }
        Ok(Self { grid, acq, omega, boundary, q, d, sigma_d })
    }

    pub fn n_sources(&self) -> usize {
        self.acq.n_sources()
    }

    pub fn n_receivers(&self) -> usize {
        self.acq.n_receivers()
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        self.boundary.interior_mask(&self.grid)
    }

    fn factorize(&self, m: &SlownessSqModel<T>) -> Result<Factorization<T>> {
        if m.grid() != &self.grid {
            return Err(Error::GridMismatch("model and problem grids differ".into()));
        }
        factorize(&assemble(m, self.omega, self.boundary)?)
    }

    fn zero_outside(&self, g: &mut [T]) {
        for (v, inside) in g.iter_mut().zip(self.interior_mask()) {
            if !inside {
                *v = T::zero();
            }
        }
    }
}

/// `ρ(m) = d − F(m) q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual<T> {
    pub rho: ShotData<T>,
}

/// Optimal multiplier of the saddle-point form, one column per source.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackVariable<T> {
    pub y: ShotData<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport<T> {
    pub value: T,
    /// Gradient with respect to squared slowness; zero on boundary-layer nodes.
    pub gradient: Vec<T>,
    pub pde_solves: u64,
    pub method: Method,
}

pub fn residual<T: Real>(
    m: &SlownessSqModel<T>,
    d: &ShotData<T>,
    q: &SourceTerm<T>,
    omega: T,
    acq: &Acquisition<T>,
    boundary: BoundaryLayer<T>,
) -> Result<Residual<T>> {
    let synth = crate::helmholtz::forward(m, omega, q, acq, boundary)?;
    Ok(Residual { rho: d.sub(&synth)? })
}

fn zero<T: Real>() -> C<T> {
    C::new(T::zero(), T::zero())
}

/// Per-source state shared by all methods: the forward field and residual.
struct Shot<T> {
    u: Vec<C<T>>,
    rho: Vec<C<T>>,
}

fn forward_shot<T: Real>(p: &WaveProblem<T>, f: &Factorization<T>, s: usize) -> Result<Shot<T>> {
    let mut u = p.q.block(s).to_vec();
    f.solve_vec(&mut u)?;
    let mut rho = vec![zero(); p.n_receivers()];
    restrict_vec(&u, &p.acq, &mut rho);
    for (r, d) in rho.iter_mut().zip(p.d.column(s)) {
        *r = d - *r;
    }
    Ok(Shot { u, rho })
}

/// Backward field for slack `y`: `−A⁻ᴴ Rᴴ y`, so that the zero-lag
/// correlation with the augmented forward field is the gradient.
fn backward_shot<T: Real>(p: &WaveProblem<T>, f: &Factorization<T>, y: &[C<T>]) -> Result<Vec<C<T>>> {
    let mut v = vec![zero(); p.grid.len()];
    let neg: Vec<C<T>> = y.iter().map(|z| -z).collect();
    restrict_adjoint_vec(&neg, &p.acq, &mut v);
    f.solve_adjoint_vec(&mut v)?;
    Ok(v)
}

fn finish<T: Real>(p: &WaveProblem<T>, value: T, mut gradient: Vec<T>, f: &Factorization<T>, method: Method) -> Result<ObjectiveReport<T>> {
    if !value.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(0));
    }
    p.zero_outside(&mut gradient);
    Ok(ObjectiveReport { value, gradient, pde_solves: f.solves(), method })
}

/// `½‖ρ‖²_{Σ_d}` and its adjoint-state gradient; `2·n_s` PDE solves.
pub fn fwi_objective_gradient<T: Real>(p: &WaveProblem<T>, m: &SlownessSqModel<T>) -> Result<ObjectiveReport<T>> {
    let f = p.factorize(m)?;
    let mut value = T::zero();
    let mut grad = vec![T::zero(); p.grid.len()];
    for s in 0..p.n_sources() {
        let shot = forward_shot(p, &f, s)?;
        let y = p.sigma_d.solve(&shot.rho);
        value += T::of(0.5) * dot(&y, &shot.rho).re;
        let v = backward_shot(p, &f, &y)?;
        accumulate_correlation(&mut grad, &shot.u, &v, p.omega);
    }
    finish(p, value, grad, &f, Method::Fwi)
}

/// Slack variables and residuals of the sketched method at `m`, without the
/// gradient. Costs `n_s + r` solves.
pub fn wariance_slack<T: Real>(
    p: &WaveProblem<T>,
    m: &SlownessSqModel<T>,
    sketch: &Sketch<T>,
) -> Result<(Residual<T>, SlackVariable<T>)> {
    let f = p.factorize(m)?;
    let (n_r, n_s) = (p.n_receivers(), p.n_sources());
    let mut rho = ShotData::zeros(n_r, n_s);
    let mut y = ShotData::zeros(n_r, n_s);
    for s in 0..n_s {
        let shot = forward_shot(p, &f, s)?;
        let (_, d_z) = sketch_shot(p, &f, sketch, s)?;
        let ys = woodbury_apply(&p.sigma_d, &d_z, sketch.k(), &shot.rho)?;
        rho.column_mut(s).copy_from_slice(&shot.rho);
        y.column_mut(s).copy_from_slice(&ys);
    }
    Ok((Residual { rho }, SlackVariable { y }))
}

/// Sketch wavefields `u_Z = A⁻¹ Z_s` and data `d_Z = R u_Z`, column-major.
fn sketch_shot<T: Real>(
    p: &WaveProblem<T>,
    f: &Factorization<T>,
    sketch: &Sketch<T>,
    s: usize,
) -> Result<(Vec<C<T>>, Vec<C<T>>)> {
    let (n, n_r, k) = (p.grid.len(), p.n_receivers(), sketch.k());
    let mut u_z = sketch.block(s);
    let mut d_z = vec![zero(); n_r * k];
    for (col, dcol) in u_z.chunks_exact_mut(n).zip(d_z.chunks_exact_mut(n_r)) {
        f.solve_vec(col)?;
        restrict_vec(col, &p.acq, dcol);
    }
    Ok((u_z, d_z))
}

/// Sketched WRI: value `½ Re⟨y, ρ⟩` at the Woodbury slack variable and the
/// gradient from the augmented field `ū = u + u_Z (d_Zᴴ y)`.
/// Costs exactly `2·n_s + k·n_s` PDE solves.
pub fn wariance_objective_gradient<T: Real>(
    p: &WaveProblem<T>,
    m: &SlownessSqModel<T>,
    sketch: &Sketch<T>,
) -> Result<ObjectiveReport<T>> {
    if sketch.variances().grid() != &p.grid || sketch.variances().n_sources() != p.n_sources() {
        return Err(Error::Covariance("sketch does not match the problem geometry".into()));
    }
    let f = p.factorize(m)?;
    let (n, n_r, k) = (p.grid.len(), p.n_receivers(), sketch.k());
    let mut value = T::zero();
    let mut grad = vec![T::zero(); n];
    for s in 0..p.n_sources() {
        let Shot { mut u, rho } = forward_shot(p, &f, s)?;
        let (u_z, d_z) = sketch_shot(p, &f, sketch, s)?;
        let y = woodbury_apply(&p.sigma_d, &d_z, k, &rho)?;
        value += T::of(0.5) * dot(&y, &rho).re;
        for (ucol, dcol) in u_z.chunks_exact(n).zip(d_z.chunks_exact(n_r)) {
            let c = dot(dcol, &y);
            for (a, b) in u.iter_mut().zip(ucol) {
                *a += b * c;
            }
        }
        let v = backward_shot(p, &f, &y)?;
        accumulate_correlation(&mut grad, &u, &v, p.omega);
    }
    finish(p, value, grad, &f, Method::Wariance)
}

/// Adjoint receiver fields `G = A⁻ᴴ Rᴴ`, one grid vector per receiver.
pub struct ReceiverGreens<T> {
    n: usize,
    cols: Vec<C<T>>,
}

impl<T: Real> ReceiverGreens<T> {
    fn compute(p: &WaveProblem<T>, f: &Factorization<T>) -> Result<Self> {
        let n = p.grid.len();
        let mut cols = vec![zero(); n * p.n_receivers()];
        for (col, &node) in cols.chunks_exact_mut(n).zip(p.acq.receiver_nodes()) {
            col[node] = C::new(T::one(), T::zero());
            f.solve_adjoint_vec(col)?;
        }
        Ok(Self { n, cols })
    }

    fn col(&self, j: usize) -> &[C<T>] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    fn n_receivers(&self) -> usize {
        self.cols.len() / self.n
    }

    /// Dense `Σ_d + F diag(σ²) Fᴴ` for one source, row-major.
    pub fn perturbed_covariance(&self, sigma_d: &DataCovariance<T>, var: &[T]) -> Vec<C<T>> {
        let n_r = self.n_receivers();
        let mut out = vec![zero(); n_r * n_r];
        let support: Vec<usize> = (0..self.n).filter(|&x| var[x] != T::zero()).collect();
        let mut weighted = vec![zero(); support.len()];
        for j in 0..n_r {
            let gj = self.col(j);
            for (w, &x) in weighted.iter_mut().zip(&support) {
                *w = gj[x] * var[x];
            }
            for i in j..n_r {
                let gi = self.col(i);
                let mut acc = zero();
                for (w, &x) in weighted.iter().zip(&support) {
                    acc += gi[x].conj() * w;
                }
                out[i * n_r + j] = acc;
                out[j * n_r + i] = acc.conj();
            }
            out[j * n_r + j] += C::new(sigma_d.sigma_d_sq(), T::zero());
        }
        out
    }

    /// `Σ_j g_j y_j = A⁻ᴴ Rᴴ y`.
    fn combine(&self, y: &[C<T>]) -> Vec<C<T>> {
        let mut out = vec![zero(); self.n];
        for (j, &yj) in y.iter().enumerate() {
            for (o, g) in out.iter_mut().zip(self.col(j)) {
                *o += g * yj;
            }
        }
        out
    }
}

/// Bytes needed for the dense per-source covariance plus receiver fields.
pub fn dense_wri_bytes(n_r: usize, grid_len: usize) -> usize {
    std::mem::size_of::<C<f64>>() * (2 * n_r * n_r + n_r * grid_len)
}

/// Source-focusing WRI with the exact perturbed covariance
/// `Σ_d + F Σ_q Fᴴ`, formed densely per source. Costs `2·n_s + n_r` solves.
pub fn deterministic_wri_objective_gradient<T: Real>(
    p: &WaveProblem<T>,
    m: &SlownessSqModel<T>,
    fields: &VarianceField<T>,
    memory_budget: usize,
) -> Result<ObjectiveReport<T>> {
    let n_r = p.n_receivers();
    if dense_wri_bytes(n_r, p.grid.len()) > memory_budget {
        return Err(Error::MemoryBudget { dim: n_r, budget: memory_budget });
    }
    let f = p.factorize(m)?;
    let greens = ReceiverGreens::compute(p, &f)?;
    let mut value = T::zero();
    let mut grad = vec![T::zero(); p.grid.len()];
    for s in 0..p.n_sources() {
        let Shot { mut u, rho } = forward_shot(p, &f, s)?;
        let var = fields.for_source(s);
        let cov = greens.perturbed_covariance(&p.sigma_d, var);
        let mut y = rho.clone();
        Cholesky::factorize(&cov, n_r)?.solve_in_place(&mut y);
        value += T::of(0.5) * dot(&y, &rho).re;
        // v⁺ = Fᴴ y; augmented source Σ_q Fᴴ y
        let v_plus = greens.combine(&y);
        let mut aug: Vec<C<T>> = v_plus.iter().zip(var).map(|(v, &w)| v * w).collect();
        f.solve_vec(&mut aug)?;
        for (a, b) in u.iter_mut().zip(&aug) {
            *a += b;
        }
        let v: Vec<C<T>> = v_plus.iter().map(|z| -z).collect();
        accumulate_correlation(&mut grad, &u, &v, p.omega);
    }
    finish(p, value, grad, &f, Method::Wri)
}

/// Dense perturbed covariances `Σ̃_d,s` and residuals at `m`, for oracles.
pub fn dense_perturbed_system<T: Real>(
    p: &WaveProblem<T>,
    m: &SlownessSqModel<T>,
    fields: &VarianceField<T>,
) -> Result<(Residual<T>, Vec<Vec<C<T>>>)> {
    let f = p.factorize(m)?;
    let greens = ReceiverGreens::compute(p, &f)?;
    let mut rho = ShotData::zeros(p.n_receivers(), p.n_sources());
    let mut covs = Vec::with_capacity(p.n_sources());
    for s in 0..p.n_sources() {
        rho.column_mut(s).copy_from_slice(&forward_shot(p, &f, s)?.rho);
        covs.push(greens.perturbed_covariance(&p.sigma_d, fields.for_source(s)));
    }
    Ok((Residual { rho }, covs))
}

/// `Re⟨y, ρ⟩ − ½⟨Σ̃ y, y⟩` for one source with dense row-major `Σ̃`.
pub fn lagrangian<T: Real>(y: &[C<T>], rho: &[C<T>], cov: &[C<T>]) -> T {
    let n = y.len();
    let sy: Vec<C<T>> = (0..n).map(|i| (0..n).map(|j| cov[i * n + j] * y[j]).fold(zero(), |a, b| a + b)).collect();
    dot(y, rho).re - T::of(0.5) * dot(y, &sy).re
}

/// Sets `σ_d²` to the mean Rayleigh quotient of `F Σ_q Fᴴ` over random
/// receiver probes at `m`, times `balance`. Probe `j` uses source `j mod n_s`.
pub fn calibrate_sigma_d_sq<T: Real>(
    grid: &Grid2D<T>,
    acq: &Acquisition<T>,
    omega: T,
    boundary: BoundaryLayer<T>,
    m: &SlownessSqModel<T>,
    fields: &VarianceField<T>,
    probes: usize,
    seed: u64,
    balance: T,
) -> Result<T> {
    let f = factorize(&assemble(m, omega, boundary)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_r = acq.n_receivers();
    let mut acc = T::zero();
    for j in 0..probes.max(1) {
        let s = j % acq.n_sources();
        let x: Vec<C<T>> = (0..n_r)
            .map(|_| C::new(T::of(rng.random_range(-1.0..1.0)), T::of(rng.random_range(-1.0..1.0))))
            .collect();
        let mut w = vec![zero(); grid.len()];
        restrict_adjoint_vec(&x, acq, &mut w);
        f.solve_adjoint_vec(&mut w)?;
        for (a, &v) in w.iter_mut().zip(fields.for_source(s)) {
            *a = *a * v;
        }
        f.solve_vec(&mut w)?;
        let mut t = vec![zero(); n_r];
        restrict_vec(&w, acq, &mut t);
        acc += dot(&x, &t).re / dot(&x, &x).re;
    }
    let out = balance * acc / T::of(probes.max(1) as f64);
    if !(out > T::zero() && out.is_finite()) {
        return Err(Error::Covariance(format!("calibrated sigma_d^2 is {out}")));
    }
    Ok(out)
}

/// A configured objective the optimizer can call repeatedly.
#[derive(Debug, Clone)]
pub enum Objective<T> {
    Fwi,
    Wri { fields: VarianceField<T>, memory_budget: usize },
    Wariance { sketch: Sketch<T> },
}

impl<T: Real> Objective<T> {
    pub fn method(&self) -> Method {
        match self {
            Self::Fwi => Method::Fwi,
            Self::Wri { .. } => Method::Wri,
            Self::Wariance { .. } => Method::Wariance,
        }
    }

    /// Evaluates at `m`; a redraw sketch moves to fresh samples afterwards.
    pub fn evaluate(&mut self, p: &WaveProblem<T>, m: &SlownessSqModel<T>) -> Result<ObjectiveReport<T>> {
        match self {
            Self::Fwi => fwi_objective_gradient(p, m),
            Self::Wri { fields, memory_budget } => deterministic_wri_objective_gradient(p, m, fields, *memory_budget),
            Self::Wariance { sketch } => {
                let r = wariance_objective_gradient(p, m, sketch);
                sketch.advance();
                r
            }
        }
    }
}
