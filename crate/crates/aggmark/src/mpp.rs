//! Conditional laws of the observed jump process.
//!
//! Watching only the macrostate process `Z` gives a marked point process of
//! jump times and destinations `(T_n, Y_n)`. All of its conditional
//! distributions flow through one object: the row vector obtained by
//! alternating stay product-integrals and jump blocks along the history,
//!
//! `α(s_n) = π₁(0) F_{y₀y₀}(t₀,t₁) M_{y₀y₁}(t₁) ⋯ M_{y_{n-1}y_n}(t_n)`.
//!
//! Normalized, `α` is the filtering distribution of the hidden microstate at
//! the last jump; its propagation through the current diagonal block yields
//! sojourn survival, the distribution of the next mark, and the compensator
//! intensities of the transition counting processes. For reset models the
//! normalized `α` collapses to the entry law `π_{y_n}(t_n)` — histories stop
//! mattering beyond their last jump.
//!
//! Histories of length 0 are the degenerate start `(0, state 0)` with
//! `α = π₁(0)`.

use ndarray::{Array1, Array2};

use crate::grid::TimeGrid;
use crate::model::{AggregateModel, MASS_FLOOR};
use crate::prodint::product_integral;
use crate::{Error, Result};

/// Alpha masses below this trigger a rescale with log bookkeeping.
const RESCALE_FLOOR: f64 = 1e-250;

/// An observed macrostate path: jump times and destinations, with the
/// implicit start `(0, state 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    jumps: Vec<(f64, usize)>,
}

impl History {
    /// The empty history: still in macrostate 0, entered at time 0.
    pub fn empty() -> Self {
        History { jumps: Vec::new() }
    }

    /// Build from `(time, macrostate)` pairs; times must be strictly
    /// increasing and positive, consecutive macrostates must differ.
    pub fn new(jumps: Vec<(f64, usize)>) -> Result<Self> {
        let mut prev = (0.0, 0usize);
        for &(t, y) in &jumps {
            if !t.is_finite() || t <= prev.0 {
                return Err(Error::Domain(format!(
                    "jump times must be strictly increasing, got {t} after {}",
                    prev.0
                )));
            }
            if y == prev.1 {
                return Err(Error::Domain(format!(
                    "consecutive jumps into the same macrostate {y} at time {t}"
                )));
            }
            prev = (t, y);
        }
        Ok(History { jumps })
    }

    pub fn jumps(&self) -> &[(f64, usize)] {
        &self.jumps
    }

    pub fn len(&self) -> usize {
        self.jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jumps.is_empty()
    }

    /// Time of the last jump (0 for the empty history).
    pub fn last_time(&self) -> f64 {
        self.jumps.last().map_or(0.0, |&(t, _)| t)
    }

    /// Current macrostate (0 for the empty history).
    pub fn last_state(&self) -> usize {
        self.jumps.last().map_or(0, |&(_, y)| y)
    }

    /// The history restricted to jumps at or before `t`.
    pub fn truncated(&self, t: f64) -> History {
        History {
            jumps: self
                .jumps
                .iter()
                .copied()
                .take_while(|&(ti, _)| ti <= t)
                .collect(),
        }
    }

    /// Number of observed `j → k` transitions up to and including time `t`.
    pub fn count_transitions(&self, j: usize, k: usize, t: f64) -> usize {
        let mut from = 0;
        let mut count = 0;
        for &(ti, y) in &self.jumps {
            if ti > t {
                break;
            }
            if from == j && y == k {
                count += 1;
            }
            from = y;
        }
        count
    }

    fn check_states(&self, model: &AggregateModel) -> Result<()> {
        if let Some(&(t, y)) = self.jumps.iter().find(|&&(_, y)| y >= model.macro_count()) {
            return Err(Error::Domain(format!(
                "history visits macrostate {y} at time {t}, model has {}",
                model.macro_count()
            )));
        }
        Ok(())
    }
}

/// Unnormalized filtering vector over the microstates of the current
/// macrostate. `log_scale` records rescalings applied to dodge underflow:
/// the true vector is `values · exp(log_scale)`.
#[derive(Debug, Clone)]
pub struct AlphaVector {
    values: Array1<f64>,
    log_scale: f64,
}

impl AlphaVector {
    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Raw mass of the stored values (scale factor not applied).
    pub fn mass(&self) -> f64 {
        self.values.sum()
    }

    /// Log of the true total mass — the log-likelihood of the history.
    pub fn log_mass(&self) -> f64 {
        self.mass().ln() + self.log_scale
    }

    /// The normalized filtering distribution.
    pub fn normalized(&self) -> Array1<f64> {
        let mass = self.mass();
        self.values.mapv(|v| (v / mass).max(0.0))
    }

    fn rescale_if_tiny(&mut self) {
        let mass = self.mass();
        if mass > 0.0 && mass < RESCALE_FLOOR {
            self.values.mapv_inplace(|v| v / mass);
            self.log_scale += mass.ln();
        }
    }
}

/// The filtering vector after the observed history.
pub fn alpha(model: &AggregateModel, history: &History, grid: &TimeGrid) -> Result<AlphaVector> {
    history.check_states(model)?;
    let mut out = AlphaVector {
        values: model.initial().to_owned(),
        log_scale: 0.0,
    };
    let mut prev = (0.0, 0usize);
    for &(t, y) in history.jumps() {
        let stay = product_integral(&model.diag_block(prev.1), prev.0, t, grid)?;
        let mut cross = Array2::zeros((model.micro_count(prev.1), model.micro_count(y)));
        model.eval_cross_into(prev.1, y, t, &mut cross);
        out.values = out.values.dot(&stay).dot(&cross);
        out.rescale_if_tiny();
        prev = (t, y);
    }
    if out.mass() <= 0.0 {
        return Err(Error::NullConditioning(format!(
            "history has zero probability (mass vanished by time {})",
            prev.0
        )));
    }
    Ok(out)
}

/// Normalized microstate distribution at time `t`, given the history and
/// that no further jump has happened: `α F_{y_n y_n}(t_n, t)` normalized.
pub fn conditional_phase(
    model: &AggregateModel,
    history: &History,
    t: f64,
    grid: &TimeGrid,
) -> Result<Array1<f64>> {
    let a = alpha(model, history, grid)?;
    let propagated = propagate(model, &a, history, t, grid)?;
    let mass = propagated.sum();
    if mass < MASS_FLOOR {
        return Err(Error::NullConditioning(format!(
            "survival mass {mass:e} in macrostate {} at time {t}",
            history.last_state()
        )));
    }
    Ok(propagated.mapv(|v| (v / mass).max(0.0)))
}

/// `α̂ F_{y_n y_n}(t_n, t)`, with `α̂` the normalized alpha.
fn propagate(
    model: &AggregateModel,
    a: &AlphaVector,
    history: &History,
    t: f64,
    grid: &TimeGrid,
) -> Result<Array1<f64>> {
    let (t_n, y_n) = (history.last_time(), history.last_state());
    if t < t_n {
        return Err(Error::Domain(format!(
            "time {t} precedes the last jump at {t_n}"
        )));
    }
    let stay = product_integral(&model.diag_block(y_n), t_n, t, grid)?;
    Ok(a.normalized().dot(&stay))
}

/// Probability that the current sojourn outlasts `t`.
pub fn sojourn_survival(
    model: &AggregateModel,
    history: &History,
    t: f64,
    grid: &TimeGrid,
) -> Result<f64> {
    let a = alpha(model, history, grid)?;
    Ok(propagate(model, &a, history, t, grid)?.sum())
}

/// Distribution of the next macrostate given a jump exactly at `t_next`:
/// a length-J probability vector, zero at the current state.
pub fn mark_distribution(
    model: &AggregateModel,
    history: &History,
    t_next: f64,
    grid: &TimeGrid,
) -> Result<Array1<f64>> {
    let a = alpha(model, history, grid)?;
    let at_jump = propagate(model, &a, history, t_next, grid)?;
    let y_n = history.last_state();
    let count = model.macro_count();
    let mut weights = Array1::zeros(count);
    let mut cross = Array2::zeros((0, 0));
    for k in 0..count {
        if k == y_n {
            continue;
        }
        let shape = (model.micro_count(y_n), model.micro_count(k));
        if cross.dim() != shape {
            cross = Array2::zeros(shape);
        }
        model.eval_cross_into(y_n, k, t_next, &mut cross);
        weights[k] = at_jump.dot(&cross).sum();
    }
    let total = weights.sum();
    if total < MASS_FLOOR {
        return Err(Error::NoJumpPossible { time: t_next });
    }
    Ok(weights.mapv(|w| (w / total).max(0.0)))
}

/// Intensity of observed `j → k` transitions at `t` given the history.
/// Zero unless `j` is the current macrostate.
pub fn compensator_intensity(
    model: &AggregateModel,
    history: &History,
    j: usize,
    k: usize,
    t: f64,
    grid: &TimeGrid,
) -> Result<f64> {
    if j != history.last_state() || j == k {
        return Ok(0.0);
    }
    let phase = conditional_phase(model, history, t, grid)?;
    let mut cross = Array2::zeros((model.micro_count(j), model.micro_count(k)));
    model.eval_cross_into(j, k, t, &mut cross);
    Ok(phase.dot(&cross).sum())
}

/// First-order probability of a jump into microstate `(k, micro)` during
/// `(t, t+h]`, given the history and survival to `t`: `φ(t) M_{y_n k}(t)
/// e_micro · h` with `φ(t)` the normalized filtered phase.
pub fn small_h_rhs(
    model: &AggregateModel,
    history: &History,
    k: usize,
    micro: usize,
    t: f64,
    h: f64,
    grid: &TimeGrid,
) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::Domain(format!("window {h} must be positive")));
    }
    let phase = conditional_phase(model, history, t, grid)?;
    let y_n = history.last_state();
    let mut cross = Array2::zeros((model.micro_count(y_n), model.micro_count(k)));
    model.eval_cross_into(y_n, k, t, &mut cross);
    Ok(phase.dot(&cross)[micro] * h)
}

/// Integrals of the `j → k` compensator intensity along the history, one
/// value per checkpoint (ascending). Between jumps the filtering vector and
/// the running integral are advanced together by one fixed-step RK4 pass
/// with steps of at most `max_step`.
pub fn compensator_path_integrals(
    model: &AggregateModel,
    history: &History,
    j: usize,
    k: usize,
    checkpoints: &[f64],
    max_step: f64,
) -> Result<Vec<f64>> {
    history.check_states(model)?;
    if !(max_step > 0.0) {
        return Err(Error::Domain(format!("step bound {max_step} must be positive")));
    }
    if checkpoints.windows(2).any(|w| w[1] < w[0]) || checkpoints.iter().any(|c| c < &0.0) {
        return Err(Error::Domain("checkpoints must be ascending and nonnegative".into()));
    }
    let mut results = Vec::with_capacity(checkpoints.len());
    let mut next_cp = 0;
    let mut total = 0.0;
    let mut v = model.initial().to_owned();
    let mut start = 0.0;
    let mut state = 0usize;
    let mut jump_iter = history.jumps().iter().copied().peekable();
    let last_cp = match checkpoints.last() {
        Some(&c) => c,
        None => return Ok(results),
    };

    loop {
        let (seg_end, next_state) = match jump_iter.peek() {
            Some(&(t, y)) if t <= last_cp => (t, Some(y)),
            _ => (last_cp, None),
        };
        // advance through this sojourn, pausing at checkpoints
        let mut cursor = start;
        while next_cp < checkpoints.len() && checkpoints[next_cp] <= seg_end {
            let cp = checkpoints[next_cp];
            total += advance(model, state, j, k, &mut v, cursor, cp, max_step);
            cursor = cp;
            results.push(total);
            next_cp += 1;
        }
        total += advance(model, state, j, k, &mut v, cursor, seg_end, max_step);
        match next_state {
            Some(y) => {
                jump_iter.next();
                let mut cross = Array2::zeros((model.micro_count(state), model.micro_count(y)));
                model.eval_cross_into(state, y, seg_end, &mut cross);
                v = v.dot(&cross);
                let mass = v.sum();
                if mass <= 0.0 {
                    return Err(Error::NullConditioning(format!(
                        "history has zero probability at jump time {seg_end}"
                    )));
                }
                v.mapv_inplace(|x| x / mass);
                start = seg_end;
                state = y;
            }
            None => break,
        }
    }
    Ok(results)
}

/// One RK4 pass over `[a, b]` inside a single sojourn in `state`: advances
/// the unnormalized filtering row `v` through the diagonal block and returns
/// the integral of the normalized `j → k` intensity over the interval.
fn advance(
    model: &AggregateModel,
    state: usize,
    j: usize,
    k: usize,
    v: &mut Array1<f64>,
    a: f64,
    b: f64,
    max_step: f64,
) -> f64 {
    if b <= a {
        return 0.0;
    }
    let active = state == j && j != k;
    let d = model.micro_count(state);
    let steps = ((b - a) / max_step).ceil().max(1.0) as usize;
    let h = (b - a) / steps as f64;
    let mut diag = Array2::zeros((d, d));
    let mut cross_ones: Array1<f64> = Array1::zeros(d);
    let mut cross = if active {
        Array2::zeros((d, model.micro_count(k)))
    } else {
        Array2::zeros((0, 0))
    };
    let mut integral = 0.0;

    // derivative of (v, ∫λ): dv = v M_jj(s), dI = v M_jk(s) 1 / (v 1)
    let mut eval = |s: f64, w: &Array1<f64>, dv: &mut Array1<f64>, cache_t: &mut f64| -> f64 {
        if *cache_t != s {
            model.eval_diag_into(state, s, &mut diag);
            if active {
                model.eval_cross_into(state, k, s, &mut cross);
                for (p, row) in cross.rows().into_iter().enumerate() {
                    cross_ones[p] = row.sum();
                }
            }
            *cache_t = s;
        }
        for q in 0..d {
            dv[q] = (0..d).map(|p| w[p] * diag[[p, q]]).sum();
        }
        if active {
            w.dot(&cross_ones) / w.sum()
        } else {
            0.0
        }
    };

    let mut k1 = Array1::zeros(d);
    let mut k2 = Array1::zeros(d);
    let mut k3 = Array1::zeros(d);
    let mut k4 = Array1::zeros(d);
    let mut trial = Array1::zeros(d);
    let mut cache_t = f64::NAN;
    for step in 0..steps {
        let s = a + step as f64 * h;
        let i1 = eval(s, v, &mut k1, &mut cache_t);
        trial.assign(v);
        trial.scaled_add(0.5 * h, &k1);
        let i2 = eval(s + 0.5 * h, &trial, &mut k2, &mut cache_t);
        trial.assign(v);
        trial.scaled_add(0.5 * h, &k2);
        let i3 = eval(s + 0.5 * h, &trial, &mut k3, &mut cache_t);
        trial.assign(v);
        trial.scaled_add(h, &k3);
        let i4 = eval(s + h, &trial, &mut k4, &mut cache_t);
        for q in 0..d {
            v[q] += h / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
        }
        integral += h / 6.0 * (i1 + 2.0 * (i2 + i3) + i4);
    }
    integral
}

/// Single-checkpoint convenience for [`compensator_path_integrals`].
pub fn compensator_path_integral(
    model: &AggregateModel,
    history: &History,
    j: usize,
    k: usize,
    t: f64,
    max_step: f64,
) -> Result<f64> {
    Ok(compensator_path_integrals(model, history, j, k, &[t], max_step)?[0])
}
