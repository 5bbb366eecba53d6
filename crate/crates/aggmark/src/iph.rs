//! Inhomogeneous phase-type distributions.
//!
//! A nonnegative random variable is inhomogeneous phase-type when it is the
//! absorption time of a time-dependent Markov jump process on finitely many
//! transient states. The representation is a pair `(π, T(·))` of an initial
//! row vector and a sub-intensity matrix function; with `F(0,x)` the product
//! integral of `T`,
//!
//! - survival: `π F(0,x) 1`
//! - density:  `π F(0,x) t(x)` with exit rates `t(x) = -T(x) 1`
//!
//! Conditional residual lifetimes stay in the class: given survival to `s`,
//! the overshoot is phase-type with initial vector `π F(0,s)` normalized and
//! sub-intensity `T(s + ·)`. Sojourn times of aggregate Markov models are
//! exactly of this form, with `T` one diagonal block of the full intensity.

use ndarray::{Array1, ArrayView1};

use crate::grid::TimeGrid;
use crate::prodint::{product_integral, MatrixFn, ShiftedMatrixFn};
use crate::{Error, Result};

/// Survival mass below this is treated as a null event for conditioning.
pub const SURVIVAL_FLOOR: f64 = 1e-14;

/// A phase-type representation `(π, T(·))`.
#[derive(Debug, Clone)]
pub struct IphRepresentation<M> {
    initial: Array1<f64>,
    sub: M,
}

impl<M: MatrixFn> IphRepresentation<M> {
    /// Build a representation, checking that `π` is a sub-probability vector
    /// matching the matrix dimension.
    pub fn new(initial: Array1<f64>, sub: M) -> Result<Self> {
        if initial.len() != sub.dim() {
            return Err(Error::Domain(format!(
                "initial vector has length {} but sub-intensity has dimension {}",
                initial.len(),
                sub.dim()
            )));
        }
        if initial.is_empty() {
            return Err(Error::Domain("empty phase-type representation".into()));
        }
        if initial.iter().any(|&p| !p.is_finite() || p < -1e-12) {
            return Err(Error::Domain(
                "initial vector must be nonnegative and finite".into(),
            ));
        }
        let total: f64 = initial.sum();
        if total > 1.0 + 1e-9 {
            return Err(Error::Domain(format!(
                "initial vector mass {total} exceeds 1"
            )));
        }
        Ok(IphRepresentation { initial, sub })
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> ArrayView1<'_, f64> {
        self.initial.view()
    }

    pub fn sub(&self) -> &M {
        &self.sub
    }

    /// Check the sub-intensity structure at the given times.
    fn validate_at(&self, times: &[f64]) -> Result<()> {
        let d = self.dim();
        for &t in times {
            let m = self.sub.eval(t);
            for i in 0..d {
                let mut row_sum = 0.0;
                for j in 0..d {
                    let x = m[[i, j]];
                    if !x.is_finite() {
                        return Err(Error::InvalidModel(format!(
                            "sub-intensity entry ({i},{j}) is not finite at time {t}"
                        )));
                    }
                    if i != j && x < -1e-12 {
                        return Err(Error::InvalidModel(format!(
                            "sub-intensity off-diagonal ({i},{j}) = {x} negative at time {t}"
                        )));
                    }
                    row_sum += x;
                }
                if row_sum > 1e-10 {
                    return Err(Error::InvalidModel(format!(
                        "sub-intensity row {i} sums to {row_sum} > 0 at time {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `P(X > x) = π F(0,x) 1`.
pub fn iph_survival<M: MatrixFn>(
    rep: &IphRepresentation<M>,
    x: f64,
    grid: &TimeGrid,
) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Domain(format!("negative evaluation point {x}")));
    }
    rep.validate_at(&[0.0, x])?;
    let f = product_integral(&rep.sub, 0.0, x, grid)?;
    Ok(rep.initial.dot(&f).sum())
}

/// Density `f(x) = π F(0,x) t(x)` with exit rates `t(x) = -T(x) 1`.
pub fn iph_density<M: MatrixFn>(
    rep: &IphRepresentation<M>,
    x: f64,
    grid: &TimeGrid,
) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::Domain(format!("negative evaluation point {x}")));
    }
    rep.validate_at(&[0.0, x])?;
    let f = product_integral(&rep.sub, 0.0, x, grid)?;
    let t_mat = rep.sub.eval(x);
    let exit: Array1<f64> = t_mat.rows().into_iter().map(|r| -r.sum()).collect();
    Ok(rep.initial.dot(&f).dot(&exit))
}

/// Conditional representation of the overshoot `X - s` given `X > s`:
/// normalized phase vector at `s` and the time-shifted sub-intensity.
pub fn overshoot_representation<'a, M: MatrixFn>(
    rep: &'a IphRepresentation<M>,
    s: f64,
    grid: &TimeGrid,
) -> Result<IphRepresentation<ShiftedMatrixFn<&'a M>>> {
    if s < 0.0 {
        return Err(Error::Domain(format!("negative conditioning point {s}")));
    }
    rep.validate_at(&[0.0, s])?;
    let f = product_integral(&rep.sub, 0.0, s, grid)?;
    let phase: Array1<f64> = rep.initial.dot(&f);
    let mass = phase.sum();
    if mass < SURVIVAL_FLOOR {
        return Err(Error::NullConditioning(format!(
            "survival mass {mass:e} at {s} is below {SURVIVAL_FLOOR:e}"
        )));
    }
    IphRepresentation::new(
        phase.mapv(|p| (p / mass).max(0.0)),
        ShiftedMatrixFn {
            inner: &rep.sub,
            offset: s,
        },
    )
}
