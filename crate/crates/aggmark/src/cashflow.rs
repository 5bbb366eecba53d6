//! Expected cash flows and prospective reserves.
//!
//! Payments attach to the observable macrostates only: sojourn rates
//! `b_j(s, z)` paid while in `j`, and lump sums `b_jk(s, z)` on transitions
//! `j → k`, both allowed to depend on calendar time `s` and on the duration
//! `z` of the spell being left. Everything stops after the horizon `η`.
//!
//! The expected cash-flow rate decomposes over the time `v` of the last
//! macro jump before `s`: enter some macrostate at `v` (full propagation
//! from `t` to `v`, one off-diagonal intensity factor), stay in it until `s`
//! (block-diagonal propagation), and collect the reward for time `s` at
//! duration `s − v`. The recursion below walks the valuation grid once,
//! reusing one forward sweep of the full generator while refreshing the
//! per-endpoint backward stay sweeps — quadratic in grid size overall. The
//! never-jumped-again remainder enters as an explicit terminal term at the
//! maximal duration `u + s − t`.
//!
//! Payment discontinuities (waiting periods `z > c`, coverage ends `s < T`,
//! the horizon itself) are handled by evaluating payments at one-sided
//! limits `s ± δ` and storing the node average: the plain trapezoid over
//! such node values telescopes into the sum of one-sided trapezoids, so
//! jumps sitting exactly on grid nodes cost no accuracy order. Thresholds
//! should therefore lie on grid nodes: time thresholds as grid points,
//! duration thresholds as multiples of the (uniform) spacing.
//!
//! When payments ignore duration, the z-dimension collapses: the rate is
//! the occupation row times the reward vector, one forward sweep total
//! ([`fast_path_cashflow`]).

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::func::RateFn;
use crate::grid::TimeGrid;
use crate::model::AggregateModel;
use crate::mpp::{conditional_phase, History};
use crate::occprob::gamma_matrix;
use crate::prodint::{backward_sweep, forward_sweep};
use crate::{Error, Result};

/// One-sided evaluation offset for payments at their discontinuities.
pub const SIGMA_SHIFT: f64 = 1e-9;

/// A payment amount as a function of time `s` and spell duration `z`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PaymentFn {
    Zero,
    Constant { value: f64 },
    /// A function of calendar time only.
    OfTime { f: RateFn },
    /// A function of the current spell duration only.
    OfDuration { f: RateFn },
    /// Indicator `1_(s < threshold)`: coverage that ends at a set time.
    TimeBefore { threshold: f64 },
    /// Indicator `1_(z > threshold)`: a waiting (deferral) period.
    DurationAbove { threshold: f64 },
    Product { factors: Vec<PaymentFn> },
    Sum { terms: Vec<PaymentFn> },
}

impl PaymentFn {
    pub fn eval(&self, s: f64, z: f64) -> f64 {
        match self {
            PaymentFn::Zero => 0.0,
            PaymentFn::Constant { value } => *value,
            PaymentFn::OfTime { f } => f.eval(s),
            PaymentFn::OfDuration { f } => f.eval(z),
            PaymentFn::TimeBefore { threshold } => {
                if s < *threshold {
                    1.0
                } else {
                    0.0
                }
            }
            PaymentFn::DurationAbove { threshold } => {
                if z > *threshold {
                    1.0
                } else {
                    0.0
                }
            }
            PaymentFn::Product { factors } => factors.iter().map(|f| f.eval(s, z)).product(),
            PaymentFn::Sum { terms } => terms.iter().map(|f| f.eval(s, z)).sum(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            PaymentFn::Zero => true,
            PaymentFn::Constant { value } => *value == 0.0,
            PaymentFn::OfTime { f } | PaymentFn::OfDuration { f } => f.is_zero(),
            PaymentFn::Product { factors } => factors.iter().any(|f| f.is_zero()),
            PaymentFn::Sum { terms } => terms.iter().all(|f| f.is_zero()),
            _ => false,
        }
    }

    /// Times where the payment may jump as a function of `s`.
    pub fn time_breakpoints(&self, out: &mut Vec<f64>) {
        match self {
            PaymentFn::OfTime { f } => f.breakpoints(out),
            PaymentFn::TimeBefore { threshold } => out.push(*threshold),
            PaymentFn::Product { factors } => {
                for f in factors {
                    f.time_breakpoints(out);
                }
            }
            PaymentFn::Sum { terms } => {
                for f in terms {
                    f.time_breakpoints(out);
                }
            }
            _ => {}
        }
    }

    /// Durations where the payment may jump as a function of `z`.
    pub fn duration_breakpoints(&self, out: &mut Vec<f64>) {
        match self {
            PaymentFn::OfDuration { f } => f.breakpoints(out),
            PaymentFn::DurationAbove { threshold } => out.push(*threshold),
            PaymentFn::Product { factors } => {
                for f in factors {
                    f.duration_breakpoints(out);
                }
            }
            PaymentFn::Sum { terms } => {
                for f in terms {
                    f.duration_breakpoints(out);
                }
            }
            _ => {}
        }
    }
}

/// The full payment schedule of a contract.
#[derive(Debug, Clone)]
pub struct PaymentSpec {
    /// Sojourn payment rate per macrostate (currency per year).
    pub sojourn: Vec<PaymentFn>,
    /// Lump transition payments per ordered macrostate pair.
    pub transition: BTreeMap<(usize, usize), PaymentFn>,
    /// Horizon `η`: all payments vanish for `s > η`.
    pub horizon: f64,
    /// Interest intensity `r(s)` for discounting.
    pub interest: RateFn,
    /// Declares that no payment depends on duration (checked by sampling).
    pub duration_independent: bool,
}

impl PaymentSpec {
    /// Sojourn rate in macrostate `j`, zero past the horizon.
    pub fn sojourn_rate(&self, j: usize, s: f64, z: f64) -> f64 {
        if s > self.horizon {
            0.0
        } else {
            self.sojourn[j].eval(s, z)
        }
    }

    /// Transition payment for `j → k`, zero past the horizon or if absent.
    pub fn transition_amount(&self, j: usize, k: usize, s: f64, z: f64) -> f64 {
        if s > self.horizon {
            return 0.0;
        }
        self.transition.get(&(j, k)).map_or(0.0, |f| f.eval(s, z))
    }

    /// Check shapes against a model and, when declared duration-independent,
    /// sample payments at distinct durations to catch a false declaration.
    pub fn validate(&self, model: &AggregateModel) -> Result<()> {
        if self.sojourn.len() != model.macro_count() {
            return Err(Error::Config(format!(
                "{} sojourn payments for {} macrostates",
                self.sojourn.len(),
                model.macro_count()
            )));
        }
        if !self.horizon.is_finite() {
            return Err(Error::Config(format!("horizon {} is not finite", self.horizon)));
        }
        for &(j, k) in self.transition.keys() {
            if j >= model.macro_count() || k >= model.macro_count() || j == k {
                return Err(Error::Config(format!(
                    "transition payment ({j},{k}) is out of range or diagonal"
                )));
            }
        }
        if self.duration_independent {
            let times = [0.0, 0.31 * self.horizon, 0.77 * self.horizon, self.horizon];
            let durations = [0.0, 0.37, 1.93, 7.51];
            for f in self.sojourn.iter().chain(self.transition.values()) {
                for &s in &times {
                    let base = f.eval(s, durations[0]);
                    if durations.iter().any(|&z| (f.eval(s, z) - base).abs() > 1e-12) {
                        return Err(Error::Config(
                            "payments declared duration-independent but differ across sampled durations"
                                .into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// All potential payment discontinuities in calendar time, horizon included.
    pub fn time_breakpoints(&self) -> Vec<f64> {
        let mut out = vec![self.horizon];
        for f in self.sojourn.iter().chain(self.transition.values()) {
            f.time_breakpoints(&mut out);
        }
        out
    }

    /// All potential payment discontinuities in duration.
    pub fn duration_breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for f in self.sojourn.iter().chain(self.transition.values()) {
            f.duration_breakpoints(&mut out);
        }
        out
    }
}

/// The reward matrix `R(t, u)`: sojourn rates on the diagonal, transition
/// intensities times transition payments on the cross blocks.
pub fn reward_matrix(
    model: &AggregateModel,
    payments: &PaymentSpec,
    t: f64,
    u: f64,
) -> Array2<f64> {
    let d = model.total_dim();
    let mut out = Array2::zeros((d, d));
    for j in 0..model.macro_count() {
        let b = payments.sojourn_rate(j, t, u);
        for p in model.offset(j)..model.offset(j) + model.micro_count(j) {
            out[[p, p]] = b;
        }
    }
    let mut cross = Array2::zeros((0, 0));
    for (&(j, k), f) in &payments.transition {
        let amount = if t > payments.horizon { 0.0 } else { f.eval(t, u) };
        if amount == 0.0 {
            continue;
        }
        let shape = (model.micro_count(j), model.micro_count(k));
        if cross.dim() != shape {
            cross = Array2::zeros(shape);
        }
        model.eval_cross_into(j, k, t, &mut cross);
        let (oj, ok) = (model.offset(j), model.offset(k));
        for p in 0..shape.0 {
            for q in 0..shape.1 {
                out[[oj + p, ok + q]] = amount * cross[[p, q]];
            }
        }
    }
    out
}

/// Scratch for repeated reward-vector evaluations.
struct RewardScratch {
    cross: Array2<f64>,
}

impl RewardScratch {
    fn new(model: &AggregateModel) -> Self {
        let dmax = (0..model.macro_count())
            .map(|j| model.micro_count(j))
            .max()
            .unwrap_or(1);
        RewardScratch {
            cross: Array2::zeros((dmax, dmax)),
        }
    }

    /// `R(s, z) 1`: per microstate, the sojourn rate plus the expected
    /// transition payment intensity.
    fn reward_vector_into(
        &mut self,
        model: &AggregateModel,
        payments: &PaymentSpec,
        s: f64,
        z: f64,
        out: &mut Array1<f64>,
    ) {
        for j in 0..model.macro_count() {
            let b = payments.sojourn_rate(j, s, z);
            for p in model.offset(j)..model.offset(j) + model.micro_count(j) {
                out[p] = b;
            }
        }
        if s > payments.horizon {
            return;
        }
        for (&(j, k), f) in &payments.transition {
            let amount = f.eval(s, z);
            if amount == 0.0 {
                continue;
            }
            let (dj, dk) = (model.micro_count(j), model.micro_count(k));
            let mut block = self.cross.slice_mut(ndarray::s![..dj, ..dk]);
            {
                let mut tmp = Array2::zeros((dj, dk));
                model.eval_cross_into(j, k, s, &mut tmp);
                block.assign(&tmp);
            }
            let oj = model.offset(j);
            for p in 0..dj {
                let row_sum: f64 = (0..dk).map(|q| block[[p, q]]).sum();
                out[oj + p] += amount * row_sum;
            }
        }
    }
}

/// Expected cash flows per conditioning row and grid time.
#[derive(Debug, Clone)]
pub struct CashFlowTable {
    /// Valuation time `t`; also the first grid time.
    pub start_time: f64,
    /// Grid times `t_ℓ` the rates live on.
    pub times: Vec<f64>,
    /// `(macrostate, duration at start_time)` labels, one per row.
    pub rows: Vec<(usize, f64)>,
    /// Cash-flow rates `a(t, t_ℓ)`, rows × times (currency per year).
    pub rates: Array2<f64>,
    /// Accumulated cash flows `A(t, t_ℓ)` by trapezoid over the rates.
    pub accumulated: Array2<f64>,
}

impl CashFlowTable {
    fn from_rates(start_time: f64, times: Vec<f64>, rows: Vec<(usize, f64)>, rates: Array2<f64>) -> Self {
        let (m, n) = rates.dim();
        let mut accumulated = Array2::zeros((m, n));
        for r in 0..m {
            let mut acc = 0.0;
            for l in 1..n {
                acc += 0.5 * (times[l] - times[l - 1]) * (rates[[r, l]] + rates[[r, l - 1]]);
                accumulated[[r, l]] = acc;
            }
        }
        CashFlowTable {
            start_time,
            times,
            rows,
            rates,
            accumulated,
        }
    }

    /// Index of the row conditioned on macrostate `i` (first match).
    pub fn row_for_state(&self, i: usize) -> Option<usize> {
        self.rows.iter().position(|&(state, _)| state == i)
    }
}

/// Prospective reserves: `V(t) = ∫ e^{−∫_t^s r} a(t,s) ds`, one value per
/// table row, by trapezoid over the table's grid.
pub fn reserve(table: &CashFlowTable, interest: &RateFn) -> Vec<f64> {
    let discount = discount_factors(&table.times, interest);
    let (m, n) = table.rates.dim();
    (0..m)
        .map(|r| {
            let mut total = 0.0;
            for l in 1..n {
                let h = table.times[l] - table.times[l - 1];
                total += 0.5
                    * h
                    * (discount[l] * table.rates[[r, l]] + discount[l - 1] * table.rates[[r, l - 1]]);
            }
            total
        })
        .collect()
}

/// `exp(−∫_t^{t_ℓ} r)` at every grid time, trapezoid in the exponent.
pub fn discount_factors(times: &[f64], interest: &RateFn) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut integral = 0.0;
    let mut prev_rate = interest.eval(times[0]);
    out.push(1.0);
    for l in 1..times.len() {
        let rate = interest.eval(times[l]);
        integral += 0.5 * (times[l] - times[l - 1]) * (rate + prev_rate);
        out.push((-integral).exp());
        prev_rate = rate;
    }
    out
}

/// Write a table as CSV with columns
/// `initial_state,initial_duration,s,rate,accumulated,discounted`, where
/// `discounted` is the running discounted accumulated cash flow.
pub fn write_cashflow_csv<W: std::io::Write>(
    out: W,
    table: &CashFlowTable,
    interest: &RateFn,
) -> Result<()> {
    let discount = discount_factors(&table.times, interest);
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "initial_state",
        "initial_duration",
        "s",
        "rate",
        "accumulated",
        "discounted",
    ])?;
    for (r, &(state, duration)) in table.rows.iter().enumerate() {
        let mut disc = 0.0;
        for l in 0..table.times.len() {
            if l > 0 {
                let h = table.times[l] - table.times[l - 1];
                disc += 0.5
                    * h
                    * (discount[l] * table.rates[[r, l]]
                        + discount[l - 1] * table.rates[[r, l - 1]]);
            }
            w.write_record([
                state.to_string(),
                format!("{duration}"),
                format!("{:.16e}", table.times[l]),
                format!("{:.16e}", table.rates[[r, l]]),
                format!("{:.16e}", table.accumulated[[r, l]]),
                format!("{:.16e}", disc),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn check_kernel_domain(t: f64, grid: &TimeGrid, payments: &PaymentSpec) -> Result<()> {
    if (grid.start() - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(Error::Domain(format!(
            "grid must start at the valuation time: grid starts {} but t = {t}",
            grid.start()
        )));
    }
    if grid.end() < payments.horizon - 1e-9 {
        return Err(Error::Domain(format!(
            "grid ends at {} before the payment horizon {}",
            grid.end(),
            payments.horizon
        )));
    }
    Ok(())
}

/// The shared valuation kernel: expected cash-flow rates for arbitrary
/// conditioning rows at time `t` whose spell began `u` ago.
///
/// For every grid time it assembles the last-entry decomposition
/// `rates = cond · (∫_t^{t_ℓ} F(t,v) M_off(v) P̄(v,t_ℓ) R(t_ℓ, t_ℓ−v) 1 dv
/// + P̄(t,t_ℓ) R(t_ℓ, u+t_ℓ−t) 1)` with composite trapezoid in `v`, and
/// payments evaluated at the one-sided `s ± δ` limits described in the
/// module docs.
fn cashflow_kernel(
    model: &AggregateModel,
    cond_rows: &Array2<f64>,
    labels: Vec<(usize, f64)>,
    u: f64,
    t: f64,
    grid: &TimeGrid,
    payments: &PaymentSpec,
) -> Result<CashFlowTable> {
    check_kernel_domain(t, grid, payments)?;
    payments.validate(model)?;
    let d = model.total_dim();
    let m = cond_rows.nrows();
    let n = grid.len();
    let points = grid.points();

    // one forward sweep of the full generator, shared by all end times
    let forward = forward_sweep(&model.full_intensity(), t, grid)?;
    let rows_at: Vec<Array2<f64>> = forward.iter().map(|f| cond_rows.dot(f)).collect();

    // off-diagonal intensity at every node, reused across end times
    let moff: Vec<Array2<f64>> = points
        .iter()
        .map(|&v| {
            let mut full = Array2::zeros((d, d));
            model.eval_full_into(v, &mut full);
            for j in 0..model.macro_count() {
                let off = model.offset(j);
                for p in 0..model.micro_count(j) {
                    for q in 0..model.micro_count(j) {
                        full[[off + p, off + q]] = 0.0;
                    }
                }
            }
            full
        })
        .collect();

    let columns: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|l| rate_column(model, payments, cond_rows, &rows_at, &moff, u, t, grid, l))
        .collect();
    let mut rates = Array2::zeros((m, n));
    for (l, col) in columns.into_iter().enumerate() {
        let col = col?;
        for r in 0..m {
            rates[[r, l]] = col[r];
        }
    }
    Ok(CashFlowTable::from_rates(t, points.to_vec(), labels, rates))
}

/// One column of the kernel: the rate vector at grid time index `l`,
/// averaged over the one-sided payment evaluations.
#[allow(clippy::too_many_arguments)]
fn rate_column(
    model: &AggregateModel,
    payments: &PaymentSpec,
    cond_rows: &Array2<f64>,
    rows_at: &[Array2<f64>],
    moff: &[Array2<f64>],
    u: f64,
    t: f64,
    grid: &TimeGrid,
    l: usize,
) -> Result<Vec<f64>> {
    let points = grid.points();
    let s = points[l];
    let m = cond_rows.nrows();

    // both one-sided values vanish past the horizon: skip the sweeps
    if s - SIGMA_SHIFT > payments.horizon {
        return Ok(vec![0.0; m]);
    }

    // per-macrostate stay probabilities F_jj(v, s) for all nodes v <= s
    let stays: Vec<Vec<Array2<f64>>> = (0..model.macro_count())
        .map(|j| backward_sweep(&model.diag_block(j), s, grid))
        .collect::<Result<_>>()?;

    let sigmas: &[f64] = if l == 0 {
        &[1.0]
    } else if l == grid.len() - 1 {
        &[-1.0]
    } else {
        &[-1.0, 1.0]
    };

    let d = model.total_dim();
    let mut scratch = RewardScratch::new(model);
    let mut reward = Array1::zeros(d);
    let mut q = Array1::zeros(d);
    let mut y = Array1::zeros(d);
    let mut total = vec![0.0; m];
    for &sigma in sigmas {
        let s_eval = s + sigma * SIGMA_SHIFT;
        // terminal term: no further macro jump, duration u + s - t
        scratch.reward_vector_into(model, payments, s_eval, (u + s_eval - t).max(0.0), &mut reward);
        stay_apply(model, &stays, 0, &reward, &mut q);
        for r in 0..m {
            total[r] += cond_rows.row(r).dot(&q);
        }
        // last-entry integral over v, composite trapezoid on the grid nodes
        for v_idx in 0..=l {
            let weight = trapezoid_weight(points, v_idx, l);
            if weight == 0.0 {
                continue;
            }
            let z = (s_eval - points[v_idx]).max(0.0);
            scratch.reward_vector_into(model, payments, s_eval, z, &mut reward);
            stay_apply(model, &stays, v_idx, &reward, &mut q);
            ndarray::linalg::general_mat_vec_mul(1.0, &moff[v_idx], &q, 0.0, &mut y);
            for r in 0..m {
                total[r] += weight * rows_at[v_idx].row(r).dot(&y);
            }
        }
    }
    let scale = 1.0 / sigmas.len() as f64;
    Ok(total.into_iter().map(|x| x * scale).collect())
}

/// Block-diagonal stay propagation: `q = P̄(v, s) reward` by blocks.
fn stay_apply(
    model: &AggregateModel,
    stays: &[Vec<Array2<f64>>],
    v_idx: usize,
    reward: &Array1<f64>,
    q: &mut Array1<f64>,
) {
    for j in 0..model.macro_count() {
        let off = model.offset(j);
        let dj = model.micro_count(j);
        let stay = &stays[j][v_idx];
        for p in 0..dj {
            let mut acc = 0.0;
            for c in 0..dj {
                acc += stay[[p, c]] * reward[off + c];
            }
            q[off + p] = acc;
        }
    }
}

/// Trapezoid weight of node `v_idx` on the subgrid `points[0..=l]`.
fn trapezoid_weight(points: &[f64], v_idx: usize, l: usize) -> f64 {
    if l == 0 {
        return 0.0;
    }
    let left = if v_idx > 0 {
        points[v_idx] - points[v_idx - 1]
    } else {
        0.0
    };
    let right = if v_idx < l {
        points[v_idx + 1] - points[v_idx]
    } else {
        0.0
    };
    0.5 * (left + right)
}

/// Expected cash flows for a reset model conditioned on sitting in
/// macrostate `i` at time `t` with running duration `u`.
pub fn expected_cashflow_reset(
    model: &AggregateModel,
    i: usize,
    u: f64,
    t: f64,
    grid: &TimeGrid,
    payments: &PaymentSpec,
) -> Result<CashFlowTable> {
    let gammas = gamma_matrix(model, t, u, grid)?;
    let row = gammas.row(i).to_owned().insert_axis(ndarray::Axis(0));
    cashflow_kernel(model, &row, vec![(i, u)], u, t, grid, payments)
}

/// [`expected_cashflow_reset`] for every initial macrostate at once; the
/// expensive sweeps are shared across rows.
pub fn expected_cashflows_reset(
    model: &AggregateModel,
    u: f64,
    t: f64,
    grid: &TimeGrid,
    payments: &PaymentSpec,
) -> Result<CashFlowTable> {
    let gammas = gamma_matrix(model, t, u, grid)?;
    let labels = (0..model.macro_count()).map(|i| (i, u)).collect();
    cashflow_kernel(model, &gammas, labels, u, t, grid, payments)
}

/// Expected cash flows for a general model conditioned on an observed
/// history: one row, the current sojourn's duration taken from the history.
pub fn expected_cashflow_general(
    model: &AggregateModel,
    history: &History,
    t: f64,
    grid: &TimeGrid,
    payments: &PaymentSpec,
) -> Result<CashFlowTable> {
    let (t_n, y_n) = (history.last_time(), history.last_state());
    if t < t_n {
        return Err(Error::Domain(format!(
            "valuation time {t} precedes the last jump at {t_n}"
        )));
    }
    let phase = if t > 0.0 {
        let hist_grid = grid.auxiliary(0.0, t)?;
        conditional_phase(model, history, t, &hist_grid)?
    } else {
        model.initial().to_owned()
    };
    let mut row = Array2::zeros((1, model.total_dim()));
    row.slice_mut(ndarray::s![0, model.offset(y_n)..model.offset(y_n) + phase.len()])
        .assign(&phase);
    let u = t - t_n;
    cashflow_kernel(model, &row, vec![(y_n, u)], u, t, grid, payments)
}

/// Conditioning for the duration-independent fast path.
#[derive(Debug, Clone)]
pub enum Conditioning<'a> {
    /// Reset models: duration `u` in every macrostate (one row each).
    Duration { u: f64 },
    /// General models: an observed history (single row).
    History(&'a History),
}

/// Duration-independent cash flows: one forward sweep of the full
/// generator, `a(t,s) = occupation row × reward vector`, no z-dimension.
pub fn fast_path_cashflow(
    model: &AggregateModel,
    conditioning: Conditioning<'_>,
    t: f64,
    grid: &TimeGrid,
    payments: &PaymentSpec,
) -> Result<CashFlowTable> {
    if !payments.duration_independent {
        return Err(Error::Domain(
            "fast path requires payments declared duration-independent".into(),
        ));
    }
    check_kernel_domain(t, grid, payments)?;
    payments.validate(model)?;
    let (cond_rows, labels) = match conditioning {
        Conditioning::Duration { u } => {
            let gammas = gamma_matrix(model, t, u, grid)?;
            let labels: Vec<(usize, f64)> =
                (0..model.macro_count()).map(|i| (i, u)).collect();
            (gammas, labels)
        }
        Conditioning::History(history) => {
            let (t_n, y_n) = (history.last_time(), history.last_state());
            let phase = if t > 0.0 {
                let hist_grid = grid.auxiliary(0.0, t)?;
                conditional_phase(model, history, t, &hist_grid)?
            } else {
                model.initial().to_owned()
            };
            let mut row = Array2::zeros((1, model.total_dim()));
            row.slice_mut(ndarray::s![0, model.offset(y_n)..model.offset(y_n) + phase.len()])
                .assign(&phase);
            (row, vec![(y_n, t - t_n)])
        }
    };
    let forward = forward_sweep(&model.full_intensity(), t, grid)?;
    let points = grid.points();
    let n = points.len();
    let m = cond_rows.nrows();
    let mut scratch = RewardScratch::new(model);
    let mut reward = Array1::zeros(model.total_dim());
    let mut rates = Array2::zeros((m, n));
    for l in 0..n {
        let sigmas: &[f64] = if l == 0 {
            &[1.0]
        } else if l == n - 1 {
            &[-1.0]
        } else {
            &[-1.0, 1.0]
        };
        let occupied = cond_rows.dot(&forward[l]);
        for &sigma in sigmas {
            let s_eval = points[l] + sigma * SIGMA_SHIFT;
            scratch.reward_vector_into(model, payments, s_eval, 0.0, &mut reward);
            let vals = occupied.dot(&reward);
            for r in 0..m {
                rates[[r, l]] += vals[r] / sigmas.len() as f64;
            }
        }
    }
    Ok(CashFlowTable::from_rates(t, points.to_vec(), labels, rates))
}
