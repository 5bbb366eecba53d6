//! Product integrals of time-dependent generators.
//!
//! For a locally integrable matrix function `A`, the product integral
//! `F(t,s) = ∏_(t,s] (I + A(x) dx)` is the unique solution of the forward
//! equation `∂F/∂s = F(t,s)·A(s)`, `F(t,t) = I`, and simultaneously of the
//! backward equation `∂F/∂t = -A(t)·F(t,s)`, `F(s,s) = I`. When `A` is an
//! intensity matrix, `F` is the transition probability matrix; when `A` is a
//! sub-intensity block, `F` is the corresponding defective (stay) matrix.
//!
//! Both directions are integrated with the classical fixed-step fourth-order
//! Runge–Kutta scheme, taking [`TimeGrid::substeps`] steps per grid interval.
//! Entries beyond [`BLOWUP_THRESHOLD`] in absolute value (or NaN) abort the
//! sweep with [`Error::NumericalBlowup`].
//!
//! Generators are assumed smooth on the interior of each grid interval;
//! discontinuities (piecewise tables, payment thresholds) belong on grid
//! points.

use ndarray::linalg::general_mat_mul;
use ndarray::Array2;

use crate::grid::TimeGrid;
use crate::{Error, Result};

/// Abort threshold for ODE sweeps: any matrix entry beyond this (or NaN)
/// is treated as a numerical blow-up.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// A time-dependent square matrix, evaluated into a caller-owned buffer so
/// sweeps stay allocation-free.
pub trait MatrixFn: Sync {
    fn dim(&self) -> usize;

    /// Write the matrix at time `t` into `out` (shape `dim × dim`).
    fn eval_into(&self, t: f64, out: &mut Array2<f64>);

    fn eval(&self, t: f64) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((d, d));
        self.eval_into(t, &mut out);
        out
    }
}

impl<M: MatrixFn + ?Sized> MatrixFn for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, t: f64, out: &mut Array2<f64>) {
        (**self).eval_into(t, out)
    }
}

/// A constant matrix as a [`MatrixFn`].
#[derive(Debug, Clone)]
pub struct ConstMatrixFn(pub Array2<f64>);

impl MatrixFn for ConstMatrixFn {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn eval_into(&self, _t: f64, out: &mut Array2<f64>) {
        out.assign(&self.0);
    }
}

/// A closure as a [`MatrixFn`].
pub struct ClosureMatrixFn<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &mut Array2<f64>) + Sync> ClosureMatrixFn<F> {
    pub fn new(dim: usize, f: F) -> Self {
        ClosureMatrixFn { dim, f }
    }
}

impl<F: Fn(f64, &mut Array2<f64>) + Sync> MatrixFn for ClosureMatrixFn<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, t: f64, out: &mut Array2<f64>) {
        (self.f)(t, out)
    }
}

/// The same matrix function shifted in time: `eval(t) = inner(offset + t)`.
#[derive(Debug, Clone)]
pub struct ShiftedMatrixFn<M> {
    pub inner: M,
    pub offset: f64,
}

impl<M: MatrixFn> MatrixFn for ShiftedMatrixFn<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_into(&self, t: f64, out: &mut Array2<f64>) {
        self.inner.eval_into(self.offset + t, out)
    }
}

/// Reusable buffers for one RK4 sweep.
struct Rk4Scratch {
    a: Array2<f64>,
    k: Array2<f64>,
    stage: Array2<f64>,
    acc: Array2<f64>,
}

impl Rk4Scratch {
    fn new(d: usize) -> Self {
        Rk4Scratch {
            a: Array2::zeros((d, d)),
            k: Array2::zeros((d, d)),
            stage: Array2::zeros((d, d)),
            acc: Array2::zeros((d, d)),
        }
    }
}

fn check_entries(m: &Array2<f64>, time: f64) -> Result<()> {
    for &x in m.iter() {
        if !x.is_finite() || x.abs() > BLOWUP_THRESHOLD {
            return Err(Error::NumericalBlowup {
                time,
                detail: format!("entry {x:e} during product-integral sweep"),
            });
        }
    }
    Ok(())
}

/// One classical RK4 step of `Y' = Y·A(v)` (forward) or `G' = -A(v)·G`
/// (backward, taken with `h < 0` from the right endpoint).
fn rk4_step(a_fn: &dyn MatrixFn, y: &mut Array2<f64>, v: f64, h: f64, forward: bool, s: &mut Rk4Scratch) {
    let mul = |a: &Array2<f64>, st: &Array2<f64>, k: &mut Array2<f64>| {
        if forward {
            general_mat_mul(1.0, st, a, 0.0, k);
        } else {
            general_mat_mul(-1.0, a, st, 0.0, k);
        }
    };
    // k1
    a_fn.eval_into(v, &mut s.a);
    mul(&s.a, y, &mut s.k);
    s.acc.assign(&s.k);
    // k2 and k3 share the midpoint evaluation
    a_fn.eval_into(v + 0.5 * h, &mut s.a);
    s.stage.assign(y);
    s.stage.scaled_add(0.5 * h, &s.k);
    let a_mid = s.a.clone();
    mul(&a_mid, &s.stage, &mut s.k);
    s.acc.scaled_add(2.0, &s.k);
    s.stage.assign(y);
    s.stage.scaled_add(0.5 * h, &s.k);
    mul(&a_mid, &s.stage, &mut s.k);
    s.acc.scaled_add(2.0, &s.k);
    // k4
    a_fn.eval_into(v + h, &mut s.a);
    s.stage.assign(y);
    s.stage.scaled_add(h, &s.k);
    mul(&s.a, &s.stage, &mut s.k);
    s.acc.scaled_add(1.0, &s.k);

    y.scaled_add(h / 6.0, &s.acc);
}

/// Integrate one smooth segment `[a, b]` with `substeps` RK4 steps.
fn integrate_segment(
    a_fn: &dyn MatrixFn,
    y: &mut Array2<f64>,
    a: f64,
    b: f64,
    substeps: usize,
    forward: bool,
    scratch: &mut Rk4Scratch,
) -> Result<()> {
    let h = (b - a) / substeps as f64;
    if forward {
        for i in 0..substeps {
            rk4_step(a_fn, y, a + i as f64 * h, h, true, scratch);
        }
        check_entries(y, b)
    } else {
        // walk t downward from b to a
        for i in 0..substeps {
            rk4_step(a_fn, y, b - i as f64 * h, -h, false, scratch);
        }
        check_entries(y, a)
    }
}

fn identity(d: usize) -> Array2<f64> {
    Array2::eye(d)
}

/// `F(t, s)` for arbitrary `t ≤ s` inside the grid span.
///
/// The integration is split at interior grid points so that generator
/// discontinuities on the grid never fall inside an RK4 step; each segment
/// gets the grid's full substep count.
pub fn product_integral(
    a_fn: &dyn MatrixFn,
    t: f64,
    s: f64,
    grid: &TimeGrid,
) -> Result<Array2<f64>> {
    if !(t <= s) {
        return Err(Error::Domain(format!(
            "product integral needs t <= s, got t={t}, s={s}"
        )));
    }
    let tol = 1e-9 * t.abs().max(s.abs()).max(1.0);
    if t < grid.start() - tol || s > grid.end() + tol {
        return Err(Error::Domain(format!(
            "[{t}, {s}] is not covered by the grid span [{}, {}]",
            grid.start(),
            grid.end()
        )));
    }
    let mut y = identity(a_fn.dim());
    if s - t <= tol {
        return Ok(y);
    }
    let mut scratch = Rk4Scratch::new(a_fn.dim());
    let mut cursor = t;
    for &p in grid.points() {
        if p > cursor + tol && p < s - tol {
            integrate_segment(a_fn, &mut y, cursor, p, grid.substeps(), true, &mut scratch)?;
            cursor = p;
        }
    }
    integrate_segment(a_fn, &mut y, cursor, s, grid.substeps(), true, &mut scratch)?;
    Ok(y)
}

/// Forward sweep: `F(t, t_l)` for every grid point `t_l ≥ t`.
///
/// `t` must itself be a grid point; the result is aligned with
/// `grid.points()[i..]` where `i` is the index of `t`, and its first entry is
/// the exact identity.
pub fn forward_sweep(a_fn: &dyn MatrixFn, t: f64, grid: &TimeGrid) -> Result<Vec<Array2<f64>>> {
    let i0 = grid.require_index(t)?;
    let pts = grid.points();
    let mut out = Vec::with_capacity(pts.len() - i0);
    let mut y = identity(a_fn.dim());
    let mut scratch = Rk4Scratch::new(a_fn.dim());
    out.push(y.clone());
    for l in i0 + 1..pts.len() {
        integrate_segment(
            a_fn,
            &mut y,
            pts[l - 1],
            pts[l],
            grid.substeps(),
            true,
            &mut scratch,
        )?;
        out.push(y.clone());
    }
    Ok(out)
}

/// Backward sweep: `F(t_l, s)` for every grid point `t_l ≤ s`.
///
/// `s` must be a grid point; the result is aligned with `grid.points()[..=i]`
/// where `i` is the index of `s`, and its last entry is the exact identity.
pub fn backward_sweep(a_fn: &dyn MatrixFn, s: f64, grid: &TimeGrid) -> Result<Vec<Array2<f64>>> {
    let i1 = grid.require_index(s)?;
    let pts = grid.points();
    let mut out = vec![Array2::zeros((0, 0)); i1 + 1];
    let mut g = identity(a_fn.dim());
    let mut scratch = Rk4Scratch::new(a_fn.dim());
    out[i1] = g.clone();
    for l in (0..i1).rev() {
        integrate_segment(
            a_fn,
            &mut g,
            pts[l],
            pts[l + 1],
            grid.substeps(),
            false,
            &mut scratch,
        )?;
        out[l] = g.clone();
    }
    Ok(out)
}
