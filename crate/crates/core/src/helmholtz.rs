//! Frequency-domain wave operator `A(m) = Δ_h + ω²·diag(m·(1 + iη))`, its
//! direct factorization, the receiver restriction and the forward map
//! `F(m) = R A(m)⁻¹`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Acquisition, Grid2D, SlownessSqModel};
use crate::linalg::{BandLu, BandMatrix};
use crate::scalar::{Real, C};

static TOTAL_PDE_SOLVES: AtomicU64 = AtomicU64::new(0);

/// Process-wide number of right-hand sides solved so far, forward and adjoint.
pub fn total_pde_solves() -> u64 {
    TOTAL_PDE_SOLVES.load(Ordering::Relaxed)
}

/// Complex sponge on all four sides: `m ↦ m·(1 + iη)` with
/// `η = strength·(depth into the layer / width)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryLayer<T> {
    pub width: usize,
    pub strength: T,
}

impl<T: Real> BoundaryLayer<T> {
    pub fn none() -> Self {
        Self { width: 0, strength: T::zero() }
    }

    fn validate(&self, grid: &Grid2D<T>) -> Result<()> {
        if 2 * self.width >= grid.nx.min(grid.nz) {
            return Err(Error::Boundary(format!(
                "width {} is not below half of the {}x{} grid",
                self.width, grid.nx, grid.nz
            )));
        }
        if !(self.strength >= T::zero() && self.strength.is_finite()) {
            return Err(Error::Boundary(format!("strength must be non-negative, got {}", self.strength)));
        }
        Ok(())
    }

    /// Damping profile; zero everywhere off the layer.
    pub fn eta(&self, grid: &Grid2D<T>) -> Vec<T> {
        let mut eta = vec![T::zero(); grid.len()];
        if self.width == 0 {
            return eta;
        }
        let w = self.width as f64;
        let depth = |i: usize, n: usize| -> f64 {
            let d = i.min(n - 1 - i);
            if d < self.width {
                (self.width - d) as f64 / w
            } else {
                0.0
            }
        };
        for ix in 0..grid.nx {
            for iz in 0..grid.nz {
                let r = depth(ix, grid.nx).max(depth(iz, grid.nz));
                eta[grid.index(ix, iz)] = self.strength * T::of(r * r);
            }
        }
        eta
    }

    /// `true` on nodes outside the layer: the physical model region.
    pub fn interior_mask(&self, grid: &Grid2D<T>) -> Vec<bool> {
        let w = self.width;
        let mut mask = vec![false; grid.len()];
        for ix in w..grid.nx - w {
            for iz in w..grid.nz - w {
                mask[grid.index(ix, iz)] = true;
            }
        }
        mask
    }
}

/// Complex field per node, stored as `blocks` consecutive grid-sized vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavefield<T> {
    grid: Grid2D<T>,
    blocks: usize,
    data: Vec<C<T>>,
}

/// Right-hand sides of the wave equation, one block per source.
pub type SourceTerm<T> = Wavefield<T>;

impl<T: Real> Wavefield<T> {
    pub fn zeros(grid: Grid2D<T>, blocks: usize) -> Self {
        Self { grid, blocks, data: vec![C::new(T::zero(), T::zero()); grid.len() * blocks] }
    }

    pub fn from_vec(grid: Grid2D<T>, blocks: usize, data: Vec<C<T>>) -> Result<Self> {
        if data.len() != grid.len() * blocks {
            return Err(Error::Shape { expected: grid.len() * blocks, got: data.len() });
        }
        Ok(Self { grid, blocks, data })
    }

    /// Unit-amplitude point source at each source node.
    pub fn point_sources(grid: Grid2D<T>, acq: &Acquisition<T>) -> Self {
        let mut q = Self::zeros(grid, acq.n_sources());
        for (s, &node) in acq.source_nodes().iter().enumerate() {
            q.block_mut(s)[node] = C::new(T::one(), T::zero());
        }
        q
    }

    pub fn grid(&self) -> &Grid2D<T> {
        &self.grid
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block(&self, b: usize) -> &[C<T>] {
        let n = self.grid.len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn block_mut(&mut self, b: usize) -> &mut [C<T>] {
        let n = self.grid.len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C<T>] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Receiver records, `n_r` rows by `blocks` columns, receiver-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotData<T> {
    n_r: usize,
    blocks: usize,
    data: Vec<C<T>>,
}

impl<T: Real> ShotData<T> {
    pub fn zeros(n_r: usize, blocks: usize) -> Self {
        Self { n_r, blocks, data: vec![C::new(T::zero(), T::zero()); n_r * blocks] }
    }

    pub fn from_vec(n_r: usize, blocks: usize, data: Vec<C<T>>) -> Result<Self> {
        if data.len() != n_r * blocks {
            return Err(Error::Shape { expected: n_r * blocks, got: data.len() });
        }
        Ok(Self { n_r, blocks, data })
    }

    pub fn n_receivers(&self) -> usize {
        self.n_r
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn column(&self, b: usize) -> &[C<T>] {
        &self.data[b * self.n_r..(b + 1) * self.n_r]
    }

    pub fn column_mut(&mut self, b: usize) -> &mut [C<T>] {
        &mut self.data[b * self.n_r..(b + 1) * self.n_r]
    }

    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C<T>] {
        &mut self.data
    }

    pub fn scale(&mut self, c: C<T>) {
        self.data.iter_mut().for_each(|z| *z = *z * c);
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.n_r != other.n_r || self.blocks != other.blocks {
            return Err(Error::Shape { expected: self.data.len(), got: other.data.len() });
        }
        Ok(())
    }

    /// `self − other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { n_r: self.n_r, blocks: self.blocks, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { n_r: self.n_r, blocks: self.blocks, data })
    }
}

/// Assembled five-point operator. Entries depend linearly on `m`.
#[derive(Debug, Clone)]
pub struct HelmholtzOperator<T> {
    grid: Grid2D<T>,
    omega: T,
    m: SlownessSqModel<T>,
    boundary: BoundaryLayer<T>,
    eta: Vec<T>,
}

pub fn assemble<T: Real>(m: &SlownessSqModel<T>, omega: T, boundary: BoundaryLayer<T>) -> Result<HelmholtzOperator<T>> {
    let grid = *m.grid();
    if !(omega > T::zero() && omega.is_finite()) {
        return Err(Error::InvalidModel(format!("angular frequency must be positive, got {omega}")));
    }
    boundary.validate(&grid)?;
    let eta = boundary.eta(&grid);
    Ok(HelmholtzOperator { grid, omega, m: m.clone(), boundary, eta })
}

impl<T: Real> HelmholtzOperator<T> {
    pub fn grid(&self) -> &Grid2D<T> {
        &self.grid
    }

    pub fn omega(&self) -> T {
        self.omega
    }

    pub fn model(&self) -> &SlownessSqModel<T> {
        &self.m
    }

    pub fn boundary(&self) -> &BoundaryLayer<T> {
        &self.boundary
    }

    pub fn eta(&self) -> &[T] {
        &self.eta
    }

    /// Diagonal entry `−2/dx² − 2/dz² + ω²·m·(1 + iη)` at node `i`.
    pub fn diagonal(&self, i: usize) -> C<T> {
        let g = &self.grid;
        let lap = -T::of(2.0) / (g.dx * g.dx) - T::of(2.0) / (g.dz * g.dz);
        let w2m = self.omega * self.omega * self.m.values()[i];
        C::new(lap + w2m, w2m * self.eta[i])
    }

    /// Visits the off-diagonal stencil entries of row `i` as `(column, value)`.
    fn for_each_neighbor(&self, i: usize, mut f: impl FnMut(usize, T)) {
        let g = &self.grid;
        let (ix, iz) = g.coords_of(i);
        let cx = T::one() / (g.dx * g.dx);
        let cz = T::one() / (g.dz * g.dz);
        if ix > 0 {
            f(i - g.nz, cx);
        }
        if iz > 0 {
            f(i - 1, cz);
        }
        if iz + 1 < g.nz {
            f(i + 1, cz);
        }
        if ix + 1 < g.nx {
            f(i + g.nz, cx);
        }
    }

    /// `y = A x` for a single grid-sized vector.
    pub fn apply(&self, x: &[C<T>]) -> Vec<C<T>> {
        (0..self.grid.len())
            .map(|i| {
                let mut s = self.diagonal(i) * x[i];
                self.for_each_neighbor(i, |j, c| s += x[j] * c);
                s
            })
            .collect()
    }

    /// `y = Aᴴ x`. The stencil is real and symmetric, so only the diagonal
    /// is conjugated.
    pub fn apply_adjoint(&self, x: &[C<T>]) -> Vec<C<T>> {
        (0..self.grid.len())
            .map(|i| {
                let mut s = self.diagonal(i).conj() * x[i];
                self.for_each_neighbor(i, |j, c| s += x[j] * c);
                s
            })
            .collect()
    }

    pub fn to_band(&self) -> BandMatrix<T> {
        let nz = self.grid.nz;
        let mut a = BandMatrix::zeros(self.grid.len(), nz, nz);
        for i in 0..self.grid.len() {
            a.set(i, i, self.diagonal(i));
            self.for_each_neighbor(i, |j, c| a.set(i, j, C::new(c, T::zero())));
        }
        a
    }
}

/// Immutable direct factorization of `A(m)`, reusable for any number of
/// right-hand sides. Every solved block is tallied.
#[derive(Debug, Clone)]
pub struct Factorization<T> {
    grid: Grid2D<T>,
    lu: Arc<BandLu<T>>,
    solves: Arc<AtomicU64>,
}

pub fn factorize<T: Real>(op: &HelmholtzOperator<T>) -> Result<Factorization<T>> {
    let lu = op.to_band().factorize()?;
    Ok(Factorization { grid: op.grid, lu: Arc::new(lu), solves: Arc::new(AtomicU64::new(0)) })
}

impl<T: Real> Factorization<T> {
    pub fn grid(&self) -> &Grid2D<T> {
        &self.grid
    }

    /// Number of right-hand sides solved with this factorization.
    pub fn solves(&self) -> u64 {
        self.solves.load(Ordering::Relaxed)
    }

    fn tally(&self, n: usize) {
        self.solves.fetch_add(n as u64, Ordering::Relaxed);
        TOTAL_PDE_SOLVES.fetch_add(n as u64, Ordering::Relaxed);
    }

    fn check(&self, b: &Wavefield<T>) -> Result<()> {
        if b.grid != self.grid {
            return Err(Error::Shape { expected: self.grid.len(), got: b.grid.len() });
        }
        Ok(())
    }

    /// Solves one grid-sized right-hand side in place.
    pub fn solve_vec(&self, b: &mut [C<T>]) -> Result<()> {
        if b.len() != self.grid.len() {
            return Err(Error::Shape { expected: self.grid.len(), got: b.len() });
        }
        self.lu.solve_in_place(b);
        self.tally(1);
        Ok(())
    }

    pub fn solve_adjoint_vec(&self, b: &mut [C<T>]) -> Result<()> {
        if b.len() != self.grid.len() {
            return Err(Error::Shape { expected: self.grid.len(), got: b.len() });
        }
        self.lu.solve_adjoint_in_place(b);
        self.tally(1);
        Ok(())
    }

    pub fn solve(&self, b: &Wavefield<T>) -> Result<Wavefield<T>> {
        self.check(b)?;
        let mut u = b.clone();
        for blk in 0..u.blocks {
            self.lu.solve_in_place(u.block_mut(blk));
        }
        self.tally(u.blocks);
        Ok(u)
    }

    pub fn solve_adjoint(&self, b: &Wavefield<T>) -> Result<Wavefield<T>> {
        self.check(b)?;
        let mut u = b.clone();
        for blk in 0..u.blocks {
            self.lu.solve_adjoint_in_place(u.block_mut(blk));
        }
        self.tally(u.blocks);
        Ok(u)
    }
}

pub fn solve<T: Real>(f: &Factorization<T>, b: &Wavefield<T>) -> Result<Wavefield<T>> {
    f.solve(b)
}

pub fn solve_adjoint<T: Real>(f: &Factorization<T>, b: &Wavefield<T>) -> Result<Wavefield<T>> {
    f.solve_adjoint(b)
}

/// Samples every block at the receiver nodes.
pub fn restrict<T: Real>(u: &Wavefield<T>, acq: &Acquisition<T>) -> ShotData<T> {
    let n_r = acq.n_receivers();
    let mut d = ShotData::zeros(n_r, u.blocks());
    for b in 0..u.blocks() {
        let blk = u.block(b);
        for (o, &node) in d.column_mut(b).iter_mut().zip(acq.receiver_nodes()) {
            *o = blk[node];
        }
    }
    d
}

pub fn restrict_vec<T: Real>(u: &[C<T>], acq: &Acquisition<T>, out: &mut [C<T>]) {
    for (o, &node) in out.iter_mut().zip(acq.receiver_nodes()) {
        *o = u[node];
    }
}

/// Injects receiver values at their nodes (summing coincident receivers).
pub fn restrict_adjoint<T: Real>(d: &ShotData<T>, acq: &Acquisition<T>, grid: Grid2D<T>) -> Result<Wavefield<T>> {
    if d.n_receivers() != acq.n_receivers() {
        return Err(Error::Shape { expected: acq.n_receivers(), got: d.n_receivers() });
    }
    let mut u = Wavefield::zeros(grid, d.blocks());
    for b in 0..d.blocks() {
        restrict_adjoint_vec(d.column(b), acq, u.block_mut(b));
    }
    Ok(u)
}

pub fn restrict_adjoint_vec<T: Real>(d: &[C<T>], acq: &Acquisition<T>, out: &mut [C<T>]) {
    for (&v, &node) in d.iter().zip(acq.receiver_nodes()) {
        out[node] += v;
    }
}

/// `F(m) q = R A(m)⁻¹ q`.
pub fn forward<T: Real>(
    m: &SlownessSqModel<T>,
    omega: T,
    q: &SourceTerm<T>,
    acq: &Acquisition<T>,
    boundary: BoundaryLayer<T>,
) -> Result<ShotData<T>> {
    let f = factorize(&assemble(m, omega, boundary)?)?;
    Ok(restrict(&f.solve(q)?, acq))
}

/// `F(m)ᴴ y = A(m)⁻ᴴ Rᴴ y`.
pub fn forward_adjoint<T: Real>(f: &Factorization<T>, y: &ShotData<T>, acq: &Acquisition<T>) -> Result<Wavefield<T>> {
    f.solve_adjoint(&restrict_adjoint(y, acq, f.grid)?)
}

/// Frequency-domain zero-lag correlation `−Re(ω² Σ_b ū_b · conj(v_b))` per node.
pub fn gradient_correlation<T: Real>(ubar: &Wavefield<T>, v: &Wavefield<T>, omega: T) -> Result<Vec<T>> {
    if ubar.blocks() != v.blocks() || ubar.grid != v.grid {
        return Err(Error::Shape { expected: ubar.as_slice().len(), got: v.as_slice().len() });
    }
    let mut g = vec![T::zero(); ubar.grid.len()];
    for b in 0..ubar.blocks() {
        accumulate_correlation(&mut g, ubar.block(b), v.block(b), omega);
    }
    Ok(g)
}

/// Adds `−Re(ω² ū · conj(v))` for one block into `g`.
pub fn accumulate_correlation<T: Real>(g: &mut [T], ubar: &[C<T>], v: &[C<T>], omega: T) {
    let w2 = omega * omega;
    for ((o, u), w) in g.iter_mut().zip(ubar).zip(v) {
        *o -= w2 * (u * w.conj()).re;
    }
}
