//! Grids, velocity and squared-slowness models, the Gaussian lens phantom
//! and transmission acquisition geometry.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Regular 2D node grid. Node `(ix, iz)` is stored at `ix * nz + iz`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D<T> {
    pub nx: usize,
    pub nz: usize,
    pub dx: T,
    pub dz: T,
    pub x0: T,
    pub z0: T,
}

impl<T: Real> Grid2D<T> {
    pub fn new(nx: usize, nz: usize, dx: T, dz: T) -> Result<Self> {
        Self::with_origin(nx, nz, dx, dz, T::zero(), T::zero())
    }

    pub fn with_origin(nx: usize, nz: usize, dx: T, dz: T, x0: T, z0: T) -> Result<Self> {
        if nx < 3 || nz < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3x3 nodes, got {nx}x{nz}")));
        }
        if !(dx > T::zero() && dz > T::zero()) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got dx={dx}, dz={dz}")));
        }
        if !(x0.is_finite() && z0.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { nx, nz, dx, dz, x0, z0 })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iz: usize) -> usize {
        debug_assert!(ix < self.nx && iz < self.nz);
        ix * self.nz + iz
    }

    #[inline]
    pub fn coords_of(&self, idx: usize) -> (usize, usize) {
        (idx / self.nz, idx % self.nz)
    }

    pub fn position(&self, ix: usize, iz: usize) -> (T, T) {
        (
            self.x0 + self.dx * T::of(ix as f64),
            self.z0 + self.dz * T::of(iz as f64),
        )
    }

    pub fn x_max(&self) -> T {
        self.x0 + self.dx * T::of((self.nx - 1) as f64)
    }

    pub fn z_max(&self) -> T {
        self.z0 + self.dz * T::of((self.nz - 1) as f64)
    }

    pub fn contains(&self, (x, z): (T, T)) -> bool {
        x >= self.x0 && x <= self.x_max() && z >= self.z0 && z <= self.z_max()
    }

    /// Nearest node to a physical position, clamped to the grid.
    pub fn nearest_node(&self, (x, z): (T, T)) -> (usize, usize) {
        let snap = |v: T, o: T, d: T, n: usize| {
            let i = ((v - o) / d).round().to_f64().unwrap_or(0.0);
            i.clamp(0.0, (n - 1) as f64) as usize
        };
        (snap(x, self.x0, self.dx, self.nx), snap(z, self.z0, self.dz, self.nz))
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self == other
    }
}

fn check_same_grid<T: Real>(a: &Grid2D<T>, b: &Grid2D<T>) -> Result<()> {
    if a.same_as(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "{}x{} (dx={}, dz={}) vs {}x{} (dx={}, dz={})",
            a.nx, a.nz, a.dx, a.dz, b.nx, b.nz, b.dx, b.dz
        )))
    }
}

/// Velocity in m/s, one value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel<T> {
    grid: Grid2D<T>,
    v: Vec<T>,
}

impl<T: Real> VelocityModel<T> {
    pub fn new(grid: Grid2D<T>, v: Vec<T>) -> Result<Self> {
        if v.len() != grid.len() {
            return Err(Error::Shape { expected: grid.len(), got: v.len() });
        }
        if let Some(i) = v.iter().position(|&x| !(x.is_finite() && x > T::zero())) {
            return Err(Error::InvalidModel(format!("velocity at node {i} is {}", v[i])));
        }
        Ok(Self { grid, v })
    }

    pub fn uniform(grid: Grid2D<T>, v: T) -> Result<Self> {
        Self::new(grid, vec![v; grid.len()])
    }

    pub fn grid(&self) -> &Grid2D<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.v
    }

    pub fn min(&self) -> T {
        self.v.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.v.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn to_slowness_sq(&self) -> SlownessSqModel<T> {
        velocity_to_slowness_sq(self)
    }
}

/// Squared slowness `m = 1/v²` in s²/m². The wave operator is linear in it.
#[derive(Debug, Clone, PartialEq)]
pub struct SlownessSqModel<T> {
    grid: Grid2D<T>,
    m: Vec<T>,
}

impl<T: Real> SlownessSqModel<T> {
    pub fn new(grid: Grid2D<T>, m: Vec<T>) -> Result<Self> {
        if m.len() != grid.len() {
            return Err(Error::Shape { expected: grid.len(), got: m.len() });
        }
        if let Some(i) = m.iter().position(|&x| !(x.is_finite() && x > T::zero())) {
            return Err(Error::InvalidModel(format!("squared slowness at node {i} is {}", m[i])));
        }
        Ok(Self { grid, m })
    }

    pub fn uniform(grid: Grid2D<T>, m: T) -> Result<Self> {
        Self::new(grid, vec![m; grid.len()])
    }

    pub fn grid(&self) -> &Grid2D<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.m
    }

    pub fn into_values(self) -> Vec<T> {
        self.m
    }

    pub fn to_velocity(&self) -> VelocityModel<T> {
        VelocityModel {
            grid: self.grid,
            v: self.m.iter().map(|&m| T::one() / m.sqrt()).collect(),
        }
    }
}

pub fn velocity_to_slowness_sq<T: Real>(vm: &VelocityModel<T>) -> SlownessSqModel<T> {
    SlownessSqModel {
        grid: vm.grid,
        m: vm.v.iter().map(|&v| T::one() / (v * v)).collect(),
    }
}

/// `‖m − m_true‖₂ / ‖m_true‖₂`.
pub fn model_relative_error<T: Real>(m: &SlownessSqModel<T>, m_true: &SlownessSqModel<T>) -> Result<T> {
    check_same_grid(&m.grid, &m_true.grid)?;
    let mut num = T::zero();
    let mut den = T::zero();
    for (&a, &b) in m.m.iter().zip(&m_true.m) {
        num += (a - b) * (a - b);
        den += b * b;
    }
    Ok((num / den).sqrt())
}

/// Low-velocity (negative amplitude) or high-velocity Gaussian anomaly on a
/// constant background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianLensSpec<T> {
    pub v_background: T,
    pub amplitude: T,
    pub center: (T, T),
    pub radius: T,
}

impl<T: Real> GaussianLensSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > T::zero()) {
            return Err(Error::InvalidModel(format!("lens radius must be positive, got {}", self.radius)));
        }
        if !(self.v_background + self.amplitude > T::zero()) {
            return Err(Error::InvalidModel(format!(
                "lens peak velocity {} + {} is not positive",
                self.v_background, self.amplitude
            )));
        }
        Ok(())
    }

    pub fn velocity_at(&self, (x, z): (T, T)) -> T {
        let (cx, cz) = self.center;
        let r2 = (x - cx) * (x - cx) + (z - cz) * (z - cz);
        self.v_background + self.amplitude * (-r2 / (T::of(2.0) * self.radius * self.radius)).exp()
    }
}

pub fn build_gaussian_lens<T: Real>(spec: &GaussianLensSpec<T>, grid: &Grid2D<T>) -> Result<VelocityModel<T>> {
    spec.validate()?;
    let mut v = Vec::with_capacity(grid.len());
    for ix in 0..grid.nx {
        for iz in 0..grid.nz {
            v.push(spec.velocity_at(grid.position(ix, iz)));
        }
    }
    VelocityModel::new(*grid, v)
}

/// Source and receiver positions, snapped to grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition<T> {
    sources: Vec<(T, T)>,
    receivers: Vec<(T, T)>,
    source_nodes: Vec<usize>,
    receiver_nodes: Vec<usize>,
}

impl<T: Real> Acquisition<T> {
    /// Snaps arbitrary positions to their nearest nodes.
    pub fn from_positions(grid: &Grid2D<T>, sources: &[(T, T)], receivers: &[(T, T)]) -> Result<Self> {
        if sources.is_empty() || receivers.is_empty() {
            return Err(Error::Acquisition("need at least one source and one receiver".into()));
        }
        let snap = |pts: &[(T, T)]| -> Result<(Vec<(T, T)>, Vec<usize>)> {
            let mut pos = Vec::with_capacity(pts.len());
            let mut idx = Vec::with_capacity(pts.len());
            for &p in pts {
                if !grid.contains(p) {
                    return Err(Error::Acquisition(format!("position ({}, {}) outside grid", p.0, p.1)));
                }
                let (ix, iz) = grid.nearest_node(p);
                pos.push(grid.position(ix, iz));
                idx.push(grid.index(ix, iz));
            }
            Ok((pos, idx))
        };
        let (sources, source_nodes) = snap(sources)?;
        let (receivers, receiver_nodes) = snap(receivers)?;
        Ok(Self { sources, receivers, source_nodes, receiver_nodes })
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }

    pub fn sources(&self) -> &[(T, T)] {
        &self.sources
    }

    pub fn receivers(&self) -> &[(T, T)] {
        &self.receivers
    }

    pub fn source_nodes(&self) -> &[usize] {
        &self.source_nodes
    }

    pub fn receiver_nodes(&self) -> &[usize] {
        &self.receiver_nodes
    }

    pub fn receivers_distinct(&self) -> bool {
        let mut n = self.receiver_nodes.clone();
        n.sort_unstable();
        n.windows(2).all(|w| w[0] != w[1])
    }
}

/// Equispaced positions between node indices `lo` and `hi` in continuous
/// coordinates; a single point sits at the midpoint.
fn equispaced_nodes(lo: usize, hi: usize, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi) as f64];
    }
    let span = (hi - lo) as f64;
    (0..n).map(|i| lo as f64 + span * i as f64 / (n - 1) as f64).collect()
}

/// Sources along the left edge and receivers along the right edge, both
/// `margin` nodes in from the grid boundary. Multiple positions may snap to
/// the same node when the edge has fewer nodes than requested positions.
pub fn build_transmission_acquisition_with_margin<T: Real>(
    grid: &Grid2D<T>,
    n_s: usize,
    n_r: usize,
    margin: usize,
) -> Result<Acquisition<T>> {
    if n_s == 0 || n_r == 0 {
        return Err(Error::Acquisition("need at least one source and one receiver".into()));
    }
    if 2 * margin + 1 > grid.nz || 2 * margin + 2 > grid.nx {
        return Err(Error::Acquisition(format!(
            "grid {}x{} too small for margin {margin}",
            grid.nx, grid.nz
        )));
    }
    let (lo, hi) = (margin, grid.nz - 1 - margin);
    let x_src = grid.x0 + grid.dx * T::of(margin as f64);
    let x_rec = grid.x0 + grid.dx * T::of((grid.nx - 1 - margin) as f64);
    let place = |x: T, n: usize| -> Vec<(T, T)> {
        equispaced_nodes(lo, hi, n)
            .into_iter()
            .map(|iz| (x, grid.z0 + grid.dz * T::of(iz)))
            .collect()
    };
    Acquisition::from_positions(grid, &place(x_src, n_s), &place(x_rec, n_r))
}

/// Transmission geometry one node in from the outer boundary.
pub fn build_transmission_acquisition<T: Real>(grid: &Grid2D<T>, n_s: usize, n_r: usize) -> Result<Acquisition<T>> {
    build_transmission_acquisition_with_margin(grid, n_s, n_r, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid101() -> Grid2D<f64> {
        Grid2D::new(101, 101, 10.0, 10.0).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid2D::<f64>::new(2, 10, 1.0, 1.0).is_err());
        assert!(Grid2D::<f64>::new(10, 10, 0.0, 1.0).is_err());
        assert!(Grid2D::<f64>::new(10, 10, 1.0, -1.0).is_err());
    }

    #[test]
    fn zero_amplitude_lens_is_uniform() {
        let g = grid101();
        let spec = GaussianLensSpec { v_background: 2000.0, amplitude: 0.0, center: (500.0, 500.0), radius: 150.0 };
        let vm = build_gaussian_lens(&spec, &g).unwrap();
        assert!(vm.values().iter().all(|&v| v == 2000.0));
    }

    #[test]
    fn lens_center_and_one_radius() {
        let g = grid101();
        let spec = GaussianLensSpec { v_background: 2000.0, amplitude: -400.0, center: (500.0, 500.0), radius: 150.0 };
        let vm = build_gaussian_lens(&spec, &g).unwrap();
        assert_eq!(vm.values()[g.index(50, 50)], 1600.0);
        // node (65, 50) sits exactly 150 m from the center
        let expected = 2000.0 - 400.0 * (-0.5f64).exp();
        assert!((vm.values()[g.index(65, 50)] - expected).abs() < 1e-12);
        assert!((vm.values()[g.index(50, 35)] - expected).abs() < 1e-12);
    }

    #[test]
    fn lens_is_mirror_symmetric() {
        let g = grid101();
        let spec = GaussianLensSpec { v_background: 2000.0, amplitude: -400.0, center: (500.0, 500.0), radius: 150.0 };
        let vm = build_gaussian_lens(&spec, &g).unwrap();
        for px in 0..=50 {
            for pz in 0..=50 {
                let a = vm.values()[g.index(50 + px, 50 + pz)];
                assert_eq!(a, vm.values()[g.index(50 - px, 50 - pz)]);
                assert_eq!(a, vm.values()[g.index(50 - px, 50 + pz)]);
            }
        }
    }

    #[test]
    fn lens_rejects_nonpositive_velocity() {
        let g = grid101();
        let spec = GaussianLensSpec { v_background: 2000.0, amplitude: -2000.0, center: (500.0, 500.0), radius: 150.0 };
        assert!(build_gaussian_lens(&spec, &g).is_err());
        let spec = GaussianLensSpec { radius: 0.0, amplitude: -100.0, ..spec };
        assert!(build_gaussian_lens(&spec, &g).is_err());
    }

    #[test]
    fn slowness_scalars() {
        let g = Grid2D::<f64>::new(3, 3, 1.0, 1.0).unwrap();
        let m = VelocityModel::uniform(g, 1000.0).unwrap().to_slowness_sq();
        assert!(m.values().iter().all(|&x| (x - 1e-6).abs() < 1e-22));
        let m = VelocityModel::uniform(g, 2000.0).unwrap().to_slowness_sq();
        assert!(m.values().iter().all(|&x| (x - 2.5e-7).abs() < 1e-22));
    }

    proptest! {
        #[test]
        fn slowness_round_trip(vs in proptest::collection::vec(100.0f64..8000.0, 16)) {
            let g = Grid2D::new(4, 4, 1.0, 1.0).unwrap();
            let vm = VelocityModel::new(g, vs.clone()).unwrap();
            let back = vm.to_slowness_sq().to_velocity();
            for (a, b) in back.values().iter().zip(&vs) {
                prop_assert!(((a - b) / b).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn full_size_geometry_counts() {
        let g = grid101();
        let acq = build_transmission_acquisition(&g, 50, 201).unwrap();
        assert_eq!(acq.n_sources(), 50);
        assert_eq!(acq.n_receivers(), 201);
        assert!(acq.sources().iter().all(|&(x, _)| x == 10.0));
        assert!(acq.receivers().iter().all(|&(x, _)| x == 990.0));
    }

    #[test]
    fn single_pair_at_midpoints() {
        let g = grid101();
        let acq = build_transmission_acquisition(&g, 1, 1).unwrap();
        assert_eq!(acq.sources()[0], (10.0, 500.0));
        assert_eq!(acq.receivers()[0], (990.0, 500.0));
    }

    #[test]
    fn two_sources_on_outermost_interior_rows() {
        let g = grid101();
        let acq = build_transmission_acquisition(&g, 2, 3).unwrap();
        let rows: Vec<_> = acq.source_nodes().iter().map(|&i| g.coords_of(i).1).collect();
        assert_eq!(rows, vec![1, 99]);
        let rows: Vec<_> = acq.receiver_nodes().iter().map(|&i| g.coords_of(i).1).collect();
        assert_eq!(rows, vec![1, 50, 99]);
    }

    #[test]
    fn positions_on_nodes() {
        let g = Grid2D::new(31, 41, 7.5, 5.0).unwrap();
        let acq = build_transmission_acquisition_with_margin(&g, 7, 13, 4).unwrap();
        for (&p, &i) in acq.sources().iter().zip(acq.source_nodes()) {
            let (ix, iz) = g.coords_of(i);
            assert_eq!(p, g.position(ix, iz));
        }
        assert!(acq.receivers_distinct());
        assert!(build_transmission_acquisition_with_margin(&g, 2, 2, 20).is_err());
        assert!(build_transmission_acquisition(&g, 0, 2).is_err());
    }

    #[test]
    fn relative_error() {
        let g = Grid2D::new(5, 4, 1.0, 1.0).unwrap();
        let vals: Vec<f64> = (0..20).map(|i| 1.0 + 0.1 * i as f64).collect();
        let m = SlownessSqModel::new(g, vals.clone()).unwrap();
        assert_eq!(model_relative_error(&m, &m).unwrap(), 0.0);
        let m2 = SlownessSqModel::new(g, vals.iter().map(|v| 2.0 * v).collect()).unwrap();
        assert!((model_relative_error(&m2, &m).unwrap() - 1.0).abs() < 1e-15);

        let pert: Vec<f64> = vals.iter().enumerate().map(|(i, v)| v + 0.01 * ((i * 7 % 5) as f64 - 2.0)).collect();
        let mp = SlownessSqModel::new(g, pert.clone()).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..20 {
            num += (pert[i] - vals[i]).powi(2);
            den += vals[i].powi(2);
        }
        assert!((model_relative_error(&mp, &m).unwrap() - (num / den).sqrt()).abs() < 1e-15);

        let other = SlownessSqModel::uniform(Grid2D::new(4, 5, 1.0, 1.0).unwrap(), 1.0).unwrap();
        assert!(model_relative_error(&other, &m).is_err());
    }
}
