//! Data covariance, the diagonal source-focusing covariance family, the
//! weighted norm, and Gaussian sketches of the source covariance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{Acquisition, Grid2D};
use crate::linalg::Cholesky;
use crate::scalar::{dot, norm_sq, Real, C};

/// `Σ_d = σ_d²·I` over every receiver and source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataCovariance<T> {
    sigma_d_sq: T,
}

impl<T: Real> DataCovariance<T> {
    pub fn new(sigma_d_sq: T) -> Result<Self> {
        if !(sigma_d_sq > T::zero() && sigma_d_sq.is_finite()) {
            return Err(Error::Covariance(format!("sigma_d^2 must be positive, got {sigma_d_sq}")));
        }
        Ok(Self { sigma_d_sq })
    }

    pub fn sigma_d_sq(&self) -> T {
        self.sigma_d_sq
    }

    /// `Σ_d⁻¹ x`.
    pub fn solve(&self, x: &[C<T>]) -> Vec<C<T>> {
        let inv = T::one() / self.sigma_d_sq;
        x.iter().map(|z| z * inv).collect()
    }
}

/// `Σ_d + D Dᴴ` with `D` an `n × k` column-major factor.
#[derive(Debug, Clone, Copy)]
pub struct LowRankPerturbed<'a, T> {
    pub base: DataCovariance<T>,
    pub factor: &'a [C<T>],
    pub rank: usize,
}

impl<T: Real> LowRankPerturbed<'_, T> {
    pub fn dim(&self) -> usize {
        if self.rank == 0 {
            0
        } else {
            self.factor.len() / self.rank
        }
    }

    pub fn apply(&self, x: &[C<T>]) -> Vec<C<T>> {
        let n = x.len();
        let mut out: Vec<C<T>> = x.iter().map(|z| z * self.base.sigma_d_sq).collect();
        for col in self.factor.chunks_exact(n).take(self.rank) {
            let c = dot(col, x);
            for (o, d) in out.iter_mut().zip(col) {
                *o += d * c;
            }
        }
        out
    }
}

/// Covariances usable in the weighted norm `‖x‖²_Σ = ⟨Σ⁻¹x, x⟩`.
pub trait CovarianceSolve<T: Real> {
    fn solve_vec(&self, x: &[C<T>]) -> Result<Vec<C<T>>>;
}

impl<T: Real> CovarianceSolve<T> for DataCovariance<T> {
    fn solve_vec(&self, x: &[C<T>]) -> Result<Vec<C<T>>> {
        Ok(self.solve(x))
    }
}

impl<T: Real> CovarianceSolve<T> for LowRankPerturbed<'_, T> {
    fn solve_vec(&self, x: &[C<T>]) -> Result<Vec<C<T>>> {
        woodbury_apply(&self.base, self.factor, self.rank, x)
    }
}

pub fn weighted_norm_sq<T: Real>(x: &[C<T>], cov: &impl CovarianceSolve<T>) -> Result<T> {
    Ok(dot(&cov.solve_vec(x)?, x).re)
}

/// `(Σ_d + D Dᴴ)⁻¹ ρ` through the Woodbury identity
/// `Σ_d⁻¹ − Σ_d⁻¹ D (I + Dᴴ Σ_d⁻¹ D)⁻¹ Dᴴ Σ_d⁻¹`, with the `k × k` inner
/// system solved by Cholesky. `d_z` holds `k` columns of length `ρ.len()`.
pub fn woodbury_apply<T: Real>(sigma_d: &DataCovariance<T>, d_z: &[C<T>], k: usize, rho: &[C<T>]) -> Result<Vec<C<T>>> {
    let n = rho.len();
    if d_z.len() != n * k {
        return Err(Error::Shape { expected: n * k, got: d_z.len() });
    }
    let inv = T::one() / sigma_d.sigma_d_sq;
    let mut y: Vec<C<T>> = rho.iter().map(|z| z * inv).collect();
    if k == 0 {
        return Ok(y);
    }
    let cols: Vec<&[C<T>]> = d_z.chunks_exact(n).collect();
    let mut inner = vec![C::new(T::zero(), T::zero()); k * k];
    for i in 0..k {
        for j in 0..=i {
            let v = dot(cols[i], cols[j]) * inv;
            inner[i * k + j] = v;
            inner[j * k + i] = v.conj();
        }
        inner[i * k + i] += C::new(T::one(), T::zero());
    }
    let mut c: Vec<C<T>> = cols.iter().map(|col| dot(col, &y)).collect();
    Cholesky::factorize(&inner, k)?.solve_in_place(&mut c);
    for (col, &cj) in cols.iter().zip(&c) {
        let s = cj * inv;
        for (o, d) in y.iter_mut().zip(col.iter()) {
            *o -= d * s;
        }
    }
    Ok(y)
}

/// `‖(Σ_d + D Dᴴ) y − ρ‖ / ‖ρ‖`.
pub fn woodbury_residual<T: Real>(sigma_d: &DataCovariance<T>, d_z: &[C<T>], k: usize, y: &[C<T>], rho: &[C<T>]) -> T {
    let cov = LowRankPerturbed { base: *sigma_d, factor: d_z, rank: k };
    let r: Vec<C<T>> = cov.apply(y).iter().zip(rho).map(|(a, b)| a - b).collect();
    let den = norm_sq(rho);
    if den == T::zero() {
        norm_sq(&r).sqrt()
    } else {
        (norm_sq(&r) / den).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    /// Variance decays with distance from the source position.
    SourceFocusing,
    /// Variance decays with depth below the top of the grid, independent of the source.
    DepthFocusing,
    Uniform,
}

impl std::str::FromStr for CovarianceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source_focusing" => Ok(Self::SourceFocusing),
            "depth_focusing" => Ok(Self::DepthFocusing),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::Covariance(format!("unknown covariance kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for CovarianceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SourceFocusing => "source_focusing",
            Self::DepthFocusing => "depth_focusing",
            Self::Uniform => "uniform",
        })
    }
}

/// Parameters of `Σ_q^α = diag(σ²)^α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceCovarianceSpec<T> {
    pub kind: CovarianceKind,
    /// Regularizing distance in meters.
    pub delta: T,
    pub alpha: T,
    pub scale: T,
}

impl<T: Real> SourceCovarianceSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > T::zero()) {
            return Err(Error::Covariance(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.alpha >= T::zero()) {
            return Err(Error::Covariance(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.scale > T::zero() && self.scale.is_finite()) {
            return Err(Error::Covariance(format!("scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }

    pub fn with_scale(self, scale: T) -> Self {
        Self { scale, ..self }
    }
}

/// Variance `σ²` at every node of `grid` for a source at `x_s`, before any
/// boundary masking.
pub fn variance_field<T: Real>(spec: &SourceCovarianceSpec<T>, x_s: (T, T), grid: &Grid2D<T>) -> Result<Vec<T>> {
    spec.validate()?;
    let d2 = spec.delta * spec.delta;
    let mut out = Vec::with_capacity(grid.len());
    for ix in 0..grid.nx {
        for iz in 0..grid.nz {
            let (x, z) = grid.position(ix, iz);
            let v = match spec.kind {
                CovarianceKind::SourceFocusing => {
                    let r2 = (x - x_s.0) * (x - x_s.0) + (z - x_s.1) * (z - x_s.1);
                    spec.scale * (r2 + d2).powf(-spec.alpha)
                }
                CovarianceKind::DepthFocusing => {
                    let depth = z - grid.z0;
                    spec.scale * (depth * depth + d2).powf(-spec.alpha)
                }
                CovarianceKind::Uniform => spec.scale,
            };
            out.push(v);
        }
    }
    Ok(out)
}

/// Per-source variances, zeroed outside the physical region.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceField<T> {
    grid: Grid2D<T>,
    fields: Vec<Vec<T>>,
    n_sources: usize,
}

impl<T: Real> VarianceField<T> {
    pub fn build(spec: &SourceCovarianceSpec<T>, acq: &Acquisition<T>, grid: &Grid2D<T>, interior: &[bool]) -> Result<Self> {
        if interior.len() != grid.len() {
            return Err(Error::Shape { expected: grid.len(), got: interior.len() });
        }
        let mask = |mut f: Vec<T>| {
            f.iter_mut().zip(interior).filter(|(_, &inside)| !inside).for_each(|(v, _)| *v = T::zero());
            f
        };
        let fields = match spec.kind {
            CovarianceKind::SourceFocusing => acq
                .sources()
                .iter()
                .map(|&xs| variance_field(spec, xs, grid).map(mask))
                .collect::<Result<Vec<_>>>()?,
            _ => vec![mask(variance_field(spec, acq.sources()[0], grid)?)],
        };
        Ok(Self { grid: *grid, fields, n_sources: acq.n_sources() })
    }

    /// Uses the given fields directly; a single field is shared by all sources.
    pub fn from_fields(grid: Grid2D<T>, fields: Vec<Vec<T>>, n_sources: usize) -> Result<Self> {
        if fields.is_empty() || (fields.len() != 1 && fields.len() != n_sources) {
            return Err(Error::Covariance(format!("{} fields for {n_sources} sources", fields.len())));
        }
        if let Some(f) = fields.iter().find(|f| f.len() != grid.len()) {
            return Err(Error::Shape { expected: grid.len(), got: f.len() });
        }
        if fields.iter().flatten().any(|&v| !(v >= T::zero() && v.is_finite())) {
            return Err(Error::Covariance("variances must be finite and non-negative".into()));
        }
        Ok(Self { grid, fields, n_sources })
    }

    pub fn grid(&self) -> &Grid2D<T> {
        &self.grid
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn for_source(&self, s: usize) -> &[T] {
        if self.fields.len() == 1 {
            &self.fields[0]
        } else {
            &self.fields[s]
        }
    }

    /// Multiplies every variance by `c`.
    pub fn scaled(&self, c: T) -> Self {
        Self {
            grid: self.grid,
            fields: self.fields.iter().map(|f| f.iter().map(|&v| v * c).collect()).collect(),
            n_sources: self.n_sources,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SketchMode {
    /// Same draws at every evaluation.
    Fixed,
    /// Fresh draws after every [`Sketch::advance`].
    Redraw,
}

impl std::str::FromStr for SketchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "redraw" => Ok(Self::Redraw),
            other => Err(Error::Covariance(format!("unknown sketch mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for SketchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::Redraw => "redraw",
        })
    }
}

/// Gaussian sketch of the source covariance: `k` columns per source, each
/// `z = σ ⊙ g`, scaled by `1/√k` inside the source block.
///
/// Columns are regenerated on demand from `(seed, epoch, source, column)`,
/// so blocks are independent of evaluation order and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch<T> {
    fields: VarianceField<T>,
    std_dev: Vec<Vec<T>>,
    k: usize,
    seed: u64,
    mode: SketchMode,
    complex: bool,
    epoch: u64,
}

pub fn sample_sketch<T: Real>(sigma: &VarianceField<T>, k: usize, seed: u64) -> Result<Sketch<T>> {
    Sketch::new(sigma, k, seed, SketchMode::Fixed, true)
}

impl<T: Real> Sketch<T> {
    pub fn new(sigma: &VarianceField<T>, k: usize, seed: u64, mode: SketchMode, complex: bool) -> Result<Self> {
        if k == 0 {
            return Err(Error::Covariance("sketch needs at least one column per source".into()));
        }
        let std_dev = sigma.fields.iter().map(|f| f.iter().map(|v| v.sqrt()).collect()).collect();
        Ok(Self { fields: sigma.clone(), std_dev, k, seed, mode, complex, epoch: 0 })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Total rank `r = k·n_s`.
    pub fn rank(&self) -> usize {
        self.k * self.fields.n_sources
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> SketchMode {
        self.mode
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn variances(&self) -> &VarianceField<T> {
        &self.fields
    }

    /// Moves a redraw sketch to fresh samples; no-op for fixed sketches.
    pub fn advance(&mut self) {
        if self.mode == SketchMode::Redraw {
            self.epoch += 1;
        }
    }

    fn rng(&self, source: usize, column: usize) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.epoch.to_le_bytes());
        key[16..24].copy_from_slice(&(source as u64).to_le_bytes());
        key[24..].copy_from_slice(&(column as u64).to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    /// Unscaled column `z_j` of source `s`, with `E[z zᴴ] = diag(σ_s²)`.
    pub fn column(&self, source: usize, j: usize) -> Vec<C<T>> {
        let sd = if self.std_dev.len() == 1 { &self.std_dev[0] } else { &self.std_dev[source] };
        let mut rng = self.rng(source, j);
        let half = std::f64::consts::FRAC_1_SQRT_2;
        sd.iter()
            .map(|&s| {
                let a: f64 = StandardNormal.sample(&mut rng);
                if self.complex {
                    let b: f64 = StandardNormal.sample(&mut rng);
                    C::new(s * T::of(a * half), s * T::of(b * half))
                } else {
                    C::new(s * T::of(a), T::zero())
                }
            })
            .collect()
    }

    /// Source block `Z_s = [z_1, …, z_k]/√k`, column-major.
    pub fn block(&self, source: usize) -> Vec<C<T>> {
        let scale = T::one() / T::of(self.k as f64).sqrt();
        let mut out = Vec::with_capacity(self.k * self.fields.grid.len());
        for j in 0..self.k {
            out.extend(self.column(source, j).into_iter().map(|z| z * scale));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_transmission_acquisition_with_margin;

    fn spec(alpha: f64, delta: f64, scale: f64) -> SourceCovarianceSpec<f64> {
        SourceCovarianceSpec { kind: CovarianceKind::SourceFocusing, delta, alpha, scale }
    }

    #[test]
    fn source_focusing_values() {
        let g = Grid2D::new(5, 5, 1.0, 1.0).unwrap();
        let f = variance_field(&spec(1.0, 2.0, 3.0), (2.0, 2.0), &g).unwrap();
        assert_eq!(f[g.index(2, 2)], 3.0 / 4.0);
        let f = variance_field(&spec(1.0, 1.0, 1.0), (2.0, 2.0), &g).unwrap();
        assert_eq!(f[g.index(3, 2)], 0.5);
        let f1 = variance_field(&spec(1.0, 1.0, 1.0), (1.0, 3.0), &g).unwrap();
        let f2 = variance_field(&spec(2.0, 1.0, 1.0), (1.0, 3.0), &g).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            assert!((a * a - b).abs() <= 1e-15 * b);
        }
    }

    #[test]
    fn power_consistency() {
        let g = Grid2D::new(7, 6, 3.0, 2.0).unwrap();
        let xs = (6.0, 4.0);
        let a = variance_field(&spec(0.7, 2.5, 1.0), xs, &g).unwrap();
        let b = variance_field(&spec(1.6, 2.5, 1.0), xs, &g).unwrap();
        let c = variance_field(&spec(2.3, 2.5, 1.0), xs, &g).unwrap();
        for i in 0..g.len() {
            assert!((a[i] * b[i] - c[i]).abs() <= 1e-13 * c[i]);
        }
    }

    #[test]
    fn monotone_away_from_source() {
        let g = Grid2D::new(15, 15, 10.0, 10.0).unwrap();
        for &alpha in &[0.25, 1.0, 2.0] {
            let f = variance_field(&spec(alpha, 10.0, 1.0), g.position(4, 7), &g).unwrap();
            for ix in 4..14 {
                assert!(f[g.index(ix + 1, 7)] < f[g.index(ix, 7)]);
            }
            for iz in 7..14 {
                assert!(f[g.index(4, iz + 1)] < f[g.index(4, iz)]);
            }
        }
    }

    #[test]
    fn other_kinds() {
        let g = Grid2D::new(4, 4, 1.0, 1.0).unwrap();
        let uni = SourceCovarianceSpec { kind: CovarianceKind::Uniform, delta: 1.0, alpha: 1.0, scale: 2.5 };
        assert!(variance_field(&uni, (0.0, 0.0), &g).unwrap().iter().all(|&v| v == 2.5));
        let depth = SourceCovarianceSpec { kind: CovarianceKind::DepthFocusing, ..uni };
        let a = variance_field(&depth, (0.0, 0.0), &g).unwrap();
        let b = variance_field(&depth, (3.0, 3.0), &g).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[g.index(2, 1)], 2.5 / 2.0);
        assert!(variance_field(&SourceCovarianceSpec { delta: 0.0, ..uni }, (0.0, 0.0), &g).is_err());
        assert!(variance_field(&SourceCovarianceSpec { alpha: -1.0, ..uni }, (0.0, 0.0), &g).is_err());
    }

    #[test]
    fn fields_are_zero_in_sponge() {
        let g = Grid2D::new(12, 12, 10.0, 10.0).unwrap();
        let acq = build_transmission_acquisition_with_margin(&g, 3, 4, 3).unwrap();
        let interior: Vec<bool> = (0..g.len())
            .map(|i| {
                let (ix, iz) = g.coords_of(i);
                (3..9).contains(&ix) && (3..9).contains(&iz)
            })
            .collect();
        let vf = VarianceField::build(&spec(1.0, 10.0, 1.0), &acq, &g, &interior).unwrap();
        for s in 0..3 {
            for (i, &v) in vf.for_source(s).iter().enumerate() {
                assert_eq!(v > 0.0, interior[i]);
            }
        }
    }

    #[test]
    fn sketch_zero_variance_and_determinism() {
        let g = Grid2D::new(4, 4, 1.0, 1.0).unwrap();
        let mut f = vec![1.0; g.len()];
        f[5] = 0.0;
        let vf = VarianceField::from_fields(g, vec![f], 2).unwrap();
        let a = sample_sketch(&vf, 6, 42).unwrap();
        let b = sample_sketch(&vf, 6, 42).unwrap();
        let c = sample_sketch(&vf, 6, 43).unwrap();
        for s in 0..2 {
            let ba = a.block(s);
            assert_eq!(ba, b.block(s));
            assert_ne!(ba, c.block(s));
            for j in 0..6 {
                assert_eq!(ba[j * g.len() + 5], C::new(0.0, 0.0));
            }
        }
        assert_ne!(a.block(0), a.block(1));
        assert_eq!(a.rank(), 12);
        assert!(sample_sketch(&vf, 0, 1).is_err());
    }

    #[test]
    fn redraw_changes_fixed_does_not() {
        let g = Grid2D::new(3, 3, 1.0, 1.0).unwrap();
        let vf = VarianceField::from_fields(g, vec![vec![1.0; 9]], 1).unwrap();
        let mut fixed = Sketch::new(&vf, 2, 9, SketchMode::Fixed, true).unwrap();
        let mut redraw = Sketch::new(&vf, 2, 9, SketchMode::Redraw, true).unwrap();
        let (f0, r0) = (fixed.block(0), redraw.block(0));
        assert_eq!(f0, r0);
        fixed.advance();
        redraw.advance();
        assert_eq!(fixed.block(0), f0);
        assert_ne!(redraw.block(0), r0);
        let real = Sketch::new(&vf, 2, 9, SketchMode::Fixed, false).unwrap();
        assert!(real.block(0).iter().all(|z| z.im == 0.0));
    }

    #[test]
    fn single_node_sample_variance() {
        let g = Grid2D::new(3, 3, 1.0, 1.0).unwrap();
        let mut f = vec![0.0; 9];
        f[4] = 4.0;
        let vf = VarianceField::from_fields(g, vec![f], 1).unwrap();
        let k = 10_000;
        let sk = sample_sketch(&vf, k, 2024).unwrap();
        let est: f64 = (0..k).map(|j| sk.column(0, j)[4].norm_sqr()).sum::<f64>() / k as f64;
        assert!((3.8..=4.2).contains(&est), "{est}");
    }

    #[test]
    fn weighted_norm_scalars() {
        let x = vec![C::new(2.0, 0.0), C::new(0.0, 2.0)];
        assert_eq!(weighted_norm_sq(&x, &DataCovariance::new(1.0).unwrap()).unwrap(), 8.0);
        assert_eq!(weighted_norm_sq(&x, &DataCovariance::new(4.0).unwrap()).unwrap(), 2.0);
        assert!(DataCovariance::new(0.0).is_err());
    }

    #[test]
    fn woodbury_degenerate_cases() {
        let sd = DataCovariance::new(2.0).unwrap();
        let rho = vec![C::new(1.0, -1.0), C::new(4.0, 0.5)];
        let zero = vec![C::new(0.0, 0.0); 4];
        let y = woodbury_apply(&sd, &zero, 2, &rho).unwrap();
        assert_eq!(y, sd.solve(&rho));
        let d = vec![C::new(1.0, 2.0), C::new(-1.0, 0.3), C::new(0.0, 1.0), C::new(2.0, 0.0)];
        let y = woodbury_apply(&sd, &d, 2, &zero[..2]).unwrap();
        assert!(y.iter().all(|z| *z == C::new(0.0, 0.0)));
        assert!(woodbury_apply(&sd, &d, 3, &rho).is_err());
        let y = woodbury_apply(&sd, &d, 2, &rho).unwrap();
        assert!(woodbury_residual(&sd, &d, 2, &y, &rho) < 1e-14);
    }
}
