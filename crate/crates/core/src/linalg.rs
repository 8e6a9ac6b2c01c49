//! Direct solvers: banded LU with partial pivoting for the sparse Helmholtz
//! system, and dense Hermitian Cholesky for the small covariance systems.

use crate::error::{Error, Result};
use crate::scalar::{Real, C};

/// Square complex matrix with `kl` sub- and `ku` super-diagonals, assembled
/// row by row before factorization.
#[derive(Debug, Clone)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    // row i holds columns [i - kl, i + kl + ku] to leave room for pivoting fill
    width: usize,
    data: Vec<C<T>>,
}

impl<T: Real> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![C::new(T::zero(), T::zero()); n * width] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> C<T> {
        if self.in_band(i, j) {
            self.data[self.offset(i, j)]
        } else {
            C::new(T::zero(), T::zero())
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: C<T>) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let o = self.offset(i, j);
        self.data[o] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: C<T>) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let o = self.offset(i, j);
        self.data[o] += v;
    }

    pub fn matvec(&self, x: &[C<T>], y: &mut [C<T>]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut s = C::new(T::zero(), T::zero());
            for j in lo..=hi {
                s += self.data[self.offset(i, j)] * x[j];
            }
            y[i] = s;
        }
    }

    /// `y = A^H x`.
    pub fn matvec_adjoint(&self, x: &[C<T>], y: &mut [C<T>]) {
        y.iter_mut().for_each(|v| *v = C::new(T::zero(), T::zero()));
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for j in lo..=hi {
                y[j] += self.data[self.offset(i, j)].conj() * x[i];
            }
        }
    }

    fn max_abs(&self) -> T {
        self.data.iter().map(|z| z.norm()).fold(T::zero(), T::max)
    }

    /// In-place LU with row interchanges restricted to the band.
    pub fn factorize(mut self) -> Result<BandLu<T>> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let uw = kl + ku + 1;
        let tiny = T::epsilon() * self.max_abs();
        let mut piv = vec![0usize; n];
        let mut lower = vec![C::new(T::zero(), T::zero()); n * kl];
        let mut upper = vec![C::new(T::zero(), T::zero()); n * uw];
        let w = self.width;

        for j in 0..n {
            let last_row = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = T::zero();
            for i in j..=last_row {
                let a = self.data[self.offset(i, j)].norm();
                if a > best {
                    best = a;
                    p = i;
                }
            }
            if !(best > tiny) || !best.is_finite() {
                return Err(Error::Singular(j));
            }
            piv[j] = p;
            let last_col = (j + kl + ku).min(n - 1);
            let span = last_col - j + 1;
            if p != j {
                let (oj, op) = (self.offset(j, j), self.offset(p, j));
                for c in 0..span {
                    self.data.swap(oj + c, op + c);
                }
            }
            let oj = self.offset(j, j);
            let inv = C::new(T::one(), T::zero()) / self.data[oj];
            let (head, tail) = self.data.split_at_mut((j + 1) * w);
            let pivot_row = &head[oj..oj + span];
            upper[j * uw..j * uw + span].copy_from_slice(pivot_row);
            for i in j + 1..=last_row {
                // offset of (i, j) within `tail`
                let base = (i - j - 1) * w + (j + kl - i);
                let l = tail[base] * inv;
                tail[base] = l;
                lower[j * kl + (i - j - 1)] = l;
                if l.re == T::zero() && l.im == T::zero() {
                    continue;
                }
                let row = &mut tail[base + 1..base + span];
                for (r, &u) in row.iter_mut().zip(&pivot_row[1..]) {
                    *r -= l * u;
                }
            }
        }
        // trailing zeros of each U row are skipped in the substitutions
        let ulen = upper
            .chunks_exact(uw)
            .map(|row| row.iter().rposition(|z| z.re != T::zero() || z.im != T::zero()).map_or(1, |p| p + 1))
            .collect();
        Ok(BandLu { n, kl, uw, piv, lower, upper, ulen })
    }
}

/// Factors `P_0 L_0 P_1 L_1 ⋯ U` of a band matrix.
#[derive(Debug, Clone)]
pub struct BandLu<T> {
    n: usize,
    kl: usize,
    uw: usize,
    piv: Vec<usize>,
    lower: Vec<C<T>>,
    upper: Vec<C<T>>,
    ulen: Vec<usize>,
}

impl<T: Real> BandLu<T> {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Overwrites `b` with `A⁻¹ b`.
    pub fn solve_in_place(&self, b: &mut [C<T>]) {
        let (n, kl, uw) = (self.n, self.kl, self.uw);
        assert_eq!(b.len(), n);
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            let m = kl.min(n - 1 - j);
            let col = &self.lower[j * kl..j * kl + m];
            for (t, &l) in b[j + 1..j + 1 + m].iter_mut().zip(col) {
                *t -= l * bj;
            }
        }
        for i in (0..n).rev() {
            let m = (self.ulen[i] - 1).min(n - 1 - i);
            let row = &self.upper[i * uw..i * uw + m + 1];
            let mut s = b[i];
            for (&u, &x) in row[1..].iter().zip(&b[i + 1..i + 1 + m]) {
                s -= u * x;
            }
            b[i] = s / row[0];
        }
    }

    /// Overwrites `b` with `A⁻ᴴ b`.
    pub fn solve_adjoint_in_place(&self, b: &mut [C<T>]) {
        let (n, kl, uw) = (self.n, self.kl, self.uw);
        assert_eq!(b.len(), n);
        for i in 0..n {
            let m = (self.ulen[i] - 1).min(n - 1 - i);
            let row = &self.upper[i * uw..i * uw + m + 1];
            let wi = b[i] / row[0].conj();
            b[i] = wi;
            for (t, &u) in b[i + 1..i + 1 + m].iter_mut().zip(&row[1..]) {
                *t -= u.conj() * wi;
            }
        }
        for j in (0..n).rev() {
            let m = kl.min(n - 1 - j);
            let col = &self.lower[j * kl..j * kl + m];
            let mut s = b[j];
            for (&l, &x) in col.iter().zip(&b[j + 1..j + 1 + m]) {
                s -= l.conj() * x;
            }
            b[j] = s;
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
        }
    }
}

/// Dense row-major Hermitian positive definite matrix factored as `L Lᴴ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<C<T>>,
}

impl<T: Real> Cholesky<T> {
    /// Only the lower triangle of `a` is read.
    pub fn factorize(a: &[C<T>], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut l = vec![C::new(T::zero(), T::zero()); n * n];
        for j in 0..n {
            let mut d = a[j * n + j].re;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::Singular(j));
            }
            let djj = d.sqrt();
            l[j * n + j] = C::new(djj, T::zero());
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [C<T>]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i].re;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i].conj() * b[k];
            }
            b[i] = s / self.l[i * n + i].re;
        }
    }
}
