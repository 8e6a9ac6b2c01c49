//! Anderson-accelerated projected fixed-point iteration on
//! `g(m) = clamp(m − step·∇f(m))`, plus plain projected gradient descent.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::SlownessSqModel;
use crate::linalg::Cholesky;
use crate::objectives::ObjectiveReport;
use crate::scalar::{Real, C};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AndersonConfig<T> {
    /// History depth; 0 disables mixing.
    pub memory: usize,
    /// Damping `β ∈ (0, 1]` on the fixed-point residual.
    pub relaxation: T,
    pub step: T,
    /// Interpret `step` in units of `(m_hi − m_lo) / ‖∇f(m0)‖_∞`.
    pub normalize_step: bool,
    pub max_iters: usize,
    /// Stop once `‖∇f‖ ≤ grad_tol·‖∇f(m0)‖`.
    pub grad_tol: T,
    /// Ridge on the mixing least-squares system, relative to its trace.
    pub regularization: T,
}

impl<T: Real> Default for AndersonConfig<T> {
    fn default() -> Self {
        Self {
            memory: 5,
            relaxation: T::one(),
            step: T::one(),
            normalize_step: false,
            max_iters: 50,
            grad_tol: T::of(1e-6),
            regularization: T::of(1e-10),
        }
    }
}

impl<T: Real> AndersonConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > T::zero()) {
            return Err(Error::Optimizer(format!("step must be positive, got {}", self.step)));
        }
        if !(self.relaxation > T::zero() && self.relaxation <= T::one()) {
            return Err(Error::Optimizer(format!("relaxation must be in (0, 1], got {}", self.relaxation)));
        }
        if self.max_iters == 0 {
            return Err(Error::Optimizer("max_iters must be at least 1".into()));
        }
        if !(self.regularization >= T::zero()) {
            return Err(Error::Optimizer("regularization must be non-negative".into()));
        }
        Ok(())
    }
}

/// One objective evaluation as seen by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    pub value: T,
    pub gradient: Vec<T>,
    pub pde_solves: u64,
}

impl<T: Real> From<ObjectiveReport<T>> for Evaluation<T> {
    fn from(r: ObjectiveReport<T>) -> Self {
        Self { value: r.value, gradient: r.gradient, pde_solves: r.pde_solves }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub iter: usize,
    pub value: T,
    pub grad_norm: T,
    pub model_rel_err: Option<T>,
    pub pde_solves: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// The objective became non-finite; the last finite iterate is returned.
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog<T> {
    pub records: Vec<IterationRecord<T>>,
    pub termination: Termination,
    /// Number of safeguard fallbacks to the plain fixed-point step.
    pub fallbacks: usize,
}

impl<T: Real> IterationLog<T> {
    pub fn last(&self) -> &IterationRecord<T> {
        self.records.last().expect("log holds the initial evaluation")
    }

    /// CSV with columns `iter,value,grad_norm,model_rel_err,pde_solves,seconds`.
    /// `wall_time = false` writes zero seconds so the output is reproducible.
    pub fn to_csv(&self, wall_time: bool) -> String {
        let mut s = String::from("iter,value,grad_norm,model_rel_err,pde_solves,seconds\n");
        for r in &self.records {
            let err = r.model_rel_err.map(|e| format!("{e:.17e}")).unwrap_or_default();
            let secs = if wall_time { r.seconds } else { 0.0 };
            s += &format!("{},{:.17e},{:.17e},{},{},{:.6}\n", r.iter, r.value, r.grad_norm, err, r.pde_solves, secs);
        }
        s
    }

    /// Number of iterations performed after the initial evaluation.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

/// Elementwise box constraints on the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Bounds<T> {
    pub fn new(lo: T, hi: T) -> Result<Self> {
        if !(lo > T::zero() && hi >= lo && hi.is_finite()) {
            return Err(Error::Optimizer(format!("invalid bounds [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    fn project(&self, x: &mut [T]) {
        for v in x {
            *v = v.max(self.lo).min(self.hi);
        }
    }
}

fn norm2<T: Real>(x: &[T]) -> T {
    x.iter().map(|&v| v * v).sum::<T>().sqrt()
}

fn norm_inf<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |a, &v| a.max(v.abs()))
}

fn rel_err<T: Real>(x: &[T], truth: Option<&[T]>) -> Option<T> {
    truth.map(|t| {
        let num: T = x.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let den: T = t.iter().map(|&b| b * b).sum();
        (num / den).sqrt()
    })
}

struct Tracker<'a, T> {
    log: Vec<IterationRecord<T>>,
    solves: u64,
    start: Instant,
    truth: Option<&'a [T]>,
}

impl<T: Real> Tracker<'_, T> {
    fn record(&mut self, iter: usize, x: &[T], e: &Evaluation<T>) {
        self.solves += e.pde_solves;
        self.log.push(IterationRecord {
            iter,
            value: e.value,
            grad_norm: norm2(&e.gradient),
            model_rel_err: rel_err(x, self.truth),
            pde_solves: self.solves,
            seconds: self.start.elapsed().as_secs_f64(),
        });
    }
}

fn is_finite_eval<T: Real>(e: &Evaluation<T>) -> bool {
    e.value.is_finite() && e.gradient.iter().all(|g| g.is_finite())
}

/// Calls `obj`, mapping non-finite results and non-finite errors to `None`.
fn try_eval<T: Real, F>(obj: &mut F, x: &[T], len: usize) -> Result<Option<Evaluation<T>>>
where
    F: FnMut(&[T]) -> Result<Evaluation<T>>,
{
    match obj(x) {
        Ok(e) if e.gradient.len() != len => Err(Error::Shape { expected: len, got: e.gradient.len() }),
        Ok(e) if is_finite_eval(&e) => Ok(Some(e)),
        Ok(_) | Err(Error::NonFinite(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Type-II Anderson mixing of fixed-point residuals `g(m) − m`, projected
/// onto `bounds` after every update. A mixed step that raises the objective
/// more than tenfold is replaced by the damped fixed-point step and the
/// history is cleared.
pub fn anderson_run<T: Real, F>(
    mut obj: F,
    m0: &SlownessSqModel<T>,
    cfg: &AndersonConfig<T>,
    bounds: Bounds<T>,
    truth: Option<&SlownessSqModel<T>>,
) -> Result<(SlownessSqModel<T>, IterationLog<T>)>
where
    F: FnMut(&SlownessSqModel<T>) -> Result<Evaluation<T>>,
{
    cfg.validate()?;
    let grid = *m0.grid();
    let mut call = |x: &[T]| obj(&SlownessSqModel::new(grid, x.to_vec())?);
    let (x, log) = anderson_core(&mut call, m0.values(), cfg, bounds, truth.map(|t| t.values()))?;
    Ok((SlownessSqModel::new(grid, x)?, log))
}

/// Slice-level driver behind [`anderson_run`].
pub fn anderson_core<T: Real, F>(
    obj: &mut F,
    x0: &[T],
    cfg: &AndersonConfig<T>,
    bounds: Bounds<T>,
    truth: Option<&[T]>,
) -> Result<(Vec<T>, IterationLog<T>)>
where
    F: FnMut(&[T]) -> Result<Evaluation<T>>,
{
    cfg.validate()?;
    let n = x0.len();
    let mut tr = Tracker { log: Vec::new(), solves: 0, start: Instant::now(), truth };
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut cur = try_eval(obj, &x, n)?.ok_or(Error::NonFinite(0))?;
    tr.record(0, &x, &cur);
    let g0 = norm2(&cur.gradient);
    let finish = |tr: Tracker<T>, term, fallbacks| IterationLog { records: tr.log, termination: term, fallbacks };
    if g0 == T::zero() {
        return Ok((x, finish(tr, Termination::GradientTolerance, 0)));
    }
    let step = if cfg.normalize_step {
        let gi = norm_inf(&cur.gradient);
        let range = if bounds.hi > bounds.lo { bounds.hi - bounds.lo } else { T::one() };
        cfg.step * range / gi
    } else {
        cfg.step
    };
    let beta = cfg.relaxation;

    let mut d_x: Vec<Vec<T>> = Vec::new();
    let mut d_f: Vec<Vec<T>> = Vec::new();
    let mut prev: Option<(Vec<T>, Vec<T>)> = None;
    let mut fallbacks = 0;
    let mut termination = Termination::MaxIterations;

    for it in 1..=cfg.max_iters {
        let mut gx: Vec<T> = x.iter().zip(&cur.gradient).map(|(&m, &g)| m - step * g).collect();
        bounds.project(&mut gx);
        let res: Vec<T> = gx.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        if let Some((xp, rp)) = prev.take() {
            d_x.push(x.iter().zip(&xp).map(|(&a, &b)| a - b).collect());
            d_f.push(res.iter().zip(&rp).map(|(&a, &b)| a - b).collect());
            if d_x.len() > cfg.memory {
                d_x.remove(0);
                d_f.remove(0);
            }
        }
        prev = Some((x.clone(), res.clone()));

        let plain = |x: &[T]| -> Vec<T> {
            if beta == T::one() {
                gx.clone()
            } else {
                x.iter().zip(&res).map(|(&a, &r)| a + beta * r).collect()
            }
        };
        let mixed = cfg.memory > 0 && !d_f.is_empty();
        let mut x_new = if mixed {
            let gamma = mixing_coefficients(&d_f, &res, cfg.regularization)?;
            let mut xn = plain(&x);
            for ((dx, df), &g) in d_x.iter().zip(&d_f).zip(&gamma) {
                for ((o, &a), &b) in xn.iter_mut().zip(dx).zip(df) {
                    *o -= g * (a + beta * b);
                }
            }
            xn
        } else {
            plain(&x)
        };
        bounds.project(&mut x_new);

        let mut next = try_eval(obj, &x_new, n)?;
        let blew_up = match &next {
            Some(e) => e.value > T::of(10.0) * cur.value.abs(),
            None => true,
        };
        if mixed && blew_up {
            fallbacks += 1;
            if let Some(e) = &next {
                tr.solves += e.pde_solves;
            }
            d_x.clear();
            d_f.clear();
            prev = None;
            x_new = plain(&x);
            bounds.project(&mut x_new);
            next = try_eval(obj, &x_new, n)?;
        }
        let Some(e) = next else {
            termination = Termination::NonFinite;
            break;
        };
        x = x_new;
        cur = e;
        tr.record(it, &x, &cur);
        if norm2(&cur.gradient) <= cfg.grad_tol * g0 {
            termination = Termination::GradientTolerance;
            break;
        }
    }
    Ok((x, finish(tr, termination, fallbacks)))
}

/// `argmin_γ ‖res − ΔF γ‖² + λ‖γ‖²` with `λ` relative to `trace(ΔFᵀΔF)`.
fn mixing_coefficients<T: Real>(d_f: &[Vec<T>], res: &[T], reg: T) -> Result<Vec<T>> {
    let k = d_f.len();
    let mut gram = vec![C::new(T::zero(), T::zero()); k * k];
    let mut rhs = vec![C::new(T::zero(), T::zero()); k];
    let mut trace = T::zero();
    for i in 0..k {
        for j in 0..=i {
            let v: T = d_f[i].iter().zip(&d_f[j]).map(|(&a, &b)| a * b).sum();
            gram[i * k + j] = C::new(v, T::zero());
            gram[j * k + i] = C::new(v, T::zero());
        }
        trace += gram[i * k + i].re;
        rhs[i] = C::new(d_f[i].iter().zip(res).map(|(&a, &b)| a * b).sum(), T::zero());
    }
    let ridge = (reg * trace / T::of(k as f64)).max(T::min_positive_value());
    for i in 0..k {
        gram[i * k + i].re += ridge;
    }
    match Cholesky::factorize(&gram, k) {
        Ok(ch) => {
            ch.solve_in_place(&mut rhs);
            Ok(rhs.into_iter().map(|z| z.re).collect())
        }
        // degenerate history: no mixing this step
        Err(Error::Singular(_)) => Ok(vec![T::zero(); k]),
        Err(e) => Err(e),
    }
}

/// Projected gradient descent with a fixed step.
pub fn gradient_descent_run<T: Real, F>(
    mut obj: F,
    m0: &SlownessSqModel<T>,
    step: T,
    max_iters: usize,
    bounds: Bounds<T>,
    truth: Option<&SlownessSqModel<T>>,
) -> Result<(SlownessSqModel<T>, IterationLog<T>)>
where
    F: FnMut(&SlownessSqModel<T>) -> Result<Evaluation<T>>,
{
    if !(step > T::zero()) || max_iters == 0 {
        return Err(Error::Optimizer("step must be positive and max_iters at least 1".into()));
    }
    let grid = *m0.grid();
    let n = grid.len();
    let mut call = |x: &[T]| obj(&SlownessSqModel::new(grid, x.to_vec())?);
    let mut tr = Tracker { log: Vec::new(), solves: 0, start: Instant::now(), truth: truth.map(|t| t.values()) };
    let mut x = m0.values().to_vec();
    bounds.project(&mut x);
    let mut cur = try_eval(&mut call, &x, n)?.ok_or(Error::NonFinite(0))?;
    tr.record(0, &x, &cur);
    let mut termination = Termination::MaxIterations;
    if norm2(&cur.gradient) == T::zero() {
        termination = Termination::GradientTolerance;
    } else {
        for it in 1..=max_iters {
            let mut xn: Vec<T> = x.iter().zip(&cur.gradient).map(|(&m, &g)| m - step * g).collect();
            bounds.project(&mut xn);
            let Some(e) = try_eval(&mut call, &xn, n)? else {
                termination = Termination::NonFinite;
                break;
            };
            x = xn;
            cur = e;
            tr.record(it, &x, &cur);
        }
    }
    let log = IterationLog { records: tr.log, termination, fallbacks: 0 };
    Ok((SlownessSqModel::new(grid, x)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;

    fn quadratic(target: Vec<f64>) -> impl FnMut(&SlownessSqModel<f64>) -> Result<Evaluation<f64>> {
        move |m| {
            let g: Vec<f64> = m.values().iter().zip(&target).map(|(a, b)| a - b).collect();
            Ok(Evaluation { value: 0.5 * g.iter().map(|v| v * v).sum::<f64>(), gradient: g, pde_solves: 2 })
        }
    }

    fn setup() -> (SlownessSqModel<f64>, Vec<f64>) {
        let g = Grid2D::new(4, 5, 1.0, 1.0).unwrap();
        let target: Vec<f64> = (0..20).map(|i| 1.0 + 0.37 * ((i * 13 % 7) as f64)).collect();
        (SlownessSqModel::uniform(g, 2.0).unwrap(), target)
    }

    #[test]
    fn anderson_solves_quadratic() {
        let (m0, target) = setup();
        for &step in &[0.3, 1.0, 1.7] {
            let cfg = AndersonConfig { step, max_iters: 20, grad_tol: 1e-12, ..Default::default() };
            let (m, log) = anderson_run(quadratic(target.clone()), &m0, &cfg, Bounds::new(0.1, 10.0).unwrap(), None).unwrap();
            let err = m.values().iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "step {step}: {err}");
            assert!(log.iterations() <= 20);
            assert_eq!(log.last().pde_solves, 2 * log.records.len() as u64 + 2 * log.fallbacks as u64);
        }
    }

    #[test]
    fn zero_gradient_returns_start() {
        let (m0, _) = setup();
        let target = m0.values().to_vec();
        let (m, log) =
            anderson_run(quadratic(target), &m0, &AndersonConfig::default(), Bounds::new(0.1, 10.0).unwrap(), None).unwrap();
        assert_eq!(m, m0);
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.termination, Termination::GradientTolerance);
    }

    #[test]
    fn memoryless_matches_descent() {
        let (m0, target) = setup();
        let cfg = AndersonConfig { memory: 0, step: 0.4, max_iters: 15, grad_tol: 0.0, ..Default::default() };
        let b = Bounds::new(1.2, 2.9).unwrap();
        let (ma, la) = anderson_run(quadratic(target.clone()), &m0, &cfg, b, None).unwrap();
        let (mg, lg) = gradient_descent_run(quadratic(target), &m0, 0.4, 15, b, None).unwrap();
        for (a, g) in ma.values().iter().zip(mg.values()) {
            assert!((a - g).abs() <= 1e-14);
        }
        for (ra, rg) in la.records.iter().zip(&lg.records) {
            assert!((ra.value - rg.value).abs() <= 1e-14);
        }
    }

    #[test]
    fn iterates_respect_bounds() {
        let (m0, target) = setup();
        let b = Bounds::new(1.5, 2.5).unwrap();
        let mut seen = Vec::new();
        let mut q = quadratic(target);
        let obj = |m: &SlownessSqModel<f64>| {
            seen.push(m.values().to_vec());
            q(m)
        };
        let cfg = AndersonConfig { step: 1.5, max_iters: 12, ..Default::default() };
        anderson_run(obj, &m0, &cfg, b, None).unwrap();
        assert!(seen.iter().flatten().all(|&v| (1.5..=2.5).contains(&v)));

        let (m0, target) = setup();
        let (m, _) = gradient_descent_run(quadratic(target), &m0, 0.5, 30, b, None).unwrap();
        assert!(m.values().iter().all(|&v| (1.5..=2.5).contains(&v)));
    }

    #[test]
    fn descent_converges() {
        let (m0, target) = setup();
        let (m, log) = gradient_descent_run(quadratic(target.clone()), &m0, 0.5, 60, Bounds::new(0.1, 10.0).unwrap(), None).unwrap();
        let err = m.values().iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8);
        assert_eq!(log.iterations(), 60);
    }

    #[test]
    fn non_finite_keeps_last_good() {
        let (m0, target) = setup();
        let mut calls = 0;
        let mut q = quadratic(target);
        let obj = |m: &SlownessSqModel<f64>| {
            calls += 1;
            let mut e = q(m)?;
            if calls > 3 {
                e.value = f64::NAN;
            }
            Ok(e)
        };
        let cfg = AndersonConfig { memory: 0, step: 0.1, max_iters: 10, ..Default::default() };
        let (_, log) = anderson_run(obj, &m0, &cfg, Bounds::new(0.1, 10.0).unwrap(), None).unwrap();
        assert_eq!(log.termination, Termination::NonFinite);
        assert_eq!(log.records.len(), 3);
    }

    #[test]
    fn deterministic_logs() {
        let (m0, target) = setup();
        let cfg = AndersonConfig { step: 0.8, max_iters: 10, ..Default::default() };
        let b = Bounds::new(0.1, 10.0).unwrap();
        let (_, a) = anderson_run(quadratic(target.clone()), &m0, &cfg, b, Some(&m0)).unwrap();
        let (_, c) = anderson_run(quadratic(target), &m0, &cfg, b, Some(&m0)).unwrap();
        assert_eq!(a.to_csv(false), c.to_csv(false));
    }

    #[test]
    fn config_validation() {
        let bad = AndersonConfig::<f64> { step: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AndersonConfig::<f64> { relaxation: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(Bounds::new(2.0, 1.0).is_err());
    }
}
