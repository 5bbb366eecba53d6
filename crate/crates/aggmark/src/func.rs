//! Scalar time functions: the serializable expression catalogue.
//!
//! Every rate that enters a model (transition intensities, reset weights,
//! interest) is a [`RateFn`] so that model files round-trip losslessly through
//! JSON. The catalogue is deliberately small: constants, polynomials,
//! Gompertz–Makeham `a + b·c^t`, a logistic ramp, piecewise-constant tables,
//! and the closure under sums, products, and affine scaling needed to build
//! derived models (row-sum diagonals, behaviour-scaled rates).
//!
//! Functions are smooth between declared breakpoints; the only discontinuities
//! come from [`RateFn::PiecewiseConstant`] tables, whose jump times should sit
//! on the evaluation grid of any sweep that crosses them.

use serde::{Deserialize, Serialize};

/// A deterministic scalar function of time from the expression catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateFn {
    /// `value`
    Constant { value: f64 },
    /// `coeffs[0] + coeffs[1]·t + coeffs[2]·t² + …`
    Polynomial { coeffs: Vec<f64> },
    /// `a + b·c^t`
    GompertzMakeham { a: f64, b: f64, c: f64 },
    /// `floor + cap / (1 + exp(-slope·(t - midpoint)))`
    Logistic {
        floor: f64,
        cap: f64,
        slope: f64,
        midpoint: f64,
    },
    /// Right-continuous step function: `values[i]` on `[times[i], times[i+1])`,
    /// `values[0]` before `times[0]`, last value after the final breakpoint.
    PiecewiseConstant { times: Vec<f64>, values: Vec<f64> },
    /// `factor · inner(t)`
    Scaled { factor: f64, inner: Box<RateFn> },
    /// `terms[0](t) + terms[1](t) + …`
    Sum { terms: Vec<RateFn> },
    /// `factors[0](t) · factors[1](t) · …`
    Product { factors: Vec<RateFn> },
}

impl RateFn {
    pub fn constant(value: f64) -> Self {
        RateFn::Constant { value }
    }

    pub fn linear(intercept: f64, slope: f64) -> Self {
        RateFn::Polynomial {
            coeffs: vec![intercept, slope],
        }
    }

    pub fn gompertz_makeham(a: f64, b: f64, c: f64) -> Self {
        RateFn::GompertzMakeham { a, b, c }
    }

    pub fn scaled(factor: f64, inner: RateFn) -> Self {
        RateFn::Scaled {
            factor,
            inner: Box::new(inner),
        }
    }

    pub fn sum(terms: Vec<RateFn>) -> Self {
        RateFn::Sum { terms }
    }

    pub fn product(factors: Vec<RateFn>) -> Self {
        RateFn::Product { factors }
    }

    /// `-(terms[0] + terms[1] + …)`, the usual diagonal of an intensity row.
    pub fn neg_sum(terms: Vec<RateFn>) -> Self {
        RateFn::scaled(-1.0, RateFn::sum(terms))
    }

    /// `1 - inner(t)`, used for behaviour scalings.
    pub fn one_minus(inner: RateFn) -> Self {
        RateFn::Sum {
            terms: vec![RateFn::constant(1.0), RateFn::scaled(-1.0, inner)],
        }
    }

    /// Evaluate at time `t`.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            RateFn::Constant { value } => *value,
            RateFn::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
            }
            RateFn::GompertzMakeham { a, b, c } => a + b * c.powf(t),
            RateFn::Logistic {
                floor,
                cap,
                slope,
                midpoint,
            } => floor + cap / (1.0 + (-slope * (t - midpoint)).exp()),
            RateFn::PiecewiseConstant { times, values } => {
                debug_assert_eq!(times.len(), values.len());
                match times.iter().rposition(|&b| b <= t) {
                    Some(i) => values[i],
                    None => values.first().copied().unwrap_or(0.0),
                }
            }
            RateFn::Scaled { factor, inner } => factor * inner.eval(t),
            RateFn::Sum { terms } => terms.iter().map(|f| f.eval(t)).sum(),
            RateFn::Product { factors } => factors.iter().map(|f| f.eval(t)).product(),
        }
    }

    /// True when the expression is structurally the zero function.
    pub fn is_zero(&self) -> bool {
        match self {
            RateFn::Constant { value } => *value == 0.0,
            RateFn::Polynomial { coeffs } => coeffs.iter().all(|&c| c == 0.0),
            RateFn::Scaled { factor, inner } => *factor == 0.0 || inner.is_zero(),
            RateFn::Sum { terms } => terms.iter().all(|f| f.is_zero()),
            RateFn::Product { factors } => factors.iter().any(|f| f.is_zero()),
            RateFn::PiecewiseConstant { values, .. } => values.iter().all(|&v| v == 0.0),
            _ => false,
        }
    }

    /// Breakpoints where the function may jump (piecewise tables only).
    pub fn breakpoints(&self, out: &mut Vec<f64>) {
        match self {
            RateFn::PiecewiseConstant { times, .. } => out.extend_from_slice(times),
            RateFn::Scaled { inner, .. } => inner.breakpoints(out),
            RateFn::Sum { terms } => terms.iter().for_each(|f| f.breakpoints(out)),
            RateFn::Product { factors } => factors.iter().for_each(|f| f.breakpoints(out)),
            _ => {}
        }
    }
}
