//! Monte Carlo simulation: the independent oracle.
//!
//! Paths of the full microstate chain are drawn by thinning: per window the
//! total exit intensity is bounded by 1.5 times its maximum over sampled
//! points (uniform points plus any rate breakpoints in the window),
//! exponential candidates are proposed at the bound and accepted with the
//! true-to-bound ratio. A candidate whose true rate exceeds the bound aborts
//! with an error rather than biasing results silently.
//!
//! Estimation is embarrassingly parallel with one counter-based RNG stream
//! per path slot, so results are bit-for-bit reproducible for a given seed
//! regardless of thread count; the reduction uses pairwise summation over
//! the slot-ordered values.
//!
//! Nothing here reuses the analytic machinery beyond the model's intensity
//! evaluations, which is the point: agreement between the two pillars is
//! evidence for both.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::cashflow::PaymentSpec;
use crate::model::{AggregateModel, MicroIndex};
use crate::mpp::{compensator_path_integral, conditional_phase, small_h_rhs, History};
use crate::phb::BehaviourSpec;
use crate::{Error, Result, TimeGrid};

/// Thinning window length in years.
const WINDOW: f64 = 0.25;
/// Safety factor on the sampled intensity maximum.
const BOUND_FACTOR: f64 = 1.5;
/// Uniform bound-sampling points per window.
const BOUND_SAMPLES: usize = 5;
/// Rejection attempts per path slot before conditioning counts as infeasible.
const MAX_ATTEMPTS: usize = 20_000;
/// One-sided evaluation offset keeping payment evaluations inside smooth pieces.
pub const EDGE_SHIFT: f64 = 1e-9;

/// One simulated path of the microstate chain.
#[derive(Debug, Clone)]
pub struct SimPath {
    start_time: f64,
    start: MicroIndex,
    jumps: Vec<(f64, MicroIndex)>,
    end_time: f64,
}

impl SimPath {
    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn end_time(&self) -> f64 {
        self.end_time
    }

    /// Microstate jumps, including moves within a macrostate.
    pub fn jumps(&self) -> &[(f64, MicroIndex)] {
        &self.jumps
    }

    /// Microstate occupied at `t` (right-continuous).
    pub fn micro_at(&self, t: f64) -> MicroIndex {
        let idx = self.jumps.partition_point(|&(time, _)| time <= t);
        if idx == 0 {
            self.start
        } else {
            self.jumps[idx - 1].1
        }
    }

    /// Macrostate occupied at `t`.
    pub fn macro_at(&self, t: f64) -> usize {
        self.micro_at(t).state
    }

    /// Macrostate jump sequence, collapsing moves within a macrostate.
    pub fn macro_jumps(&self) -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        let mut current = self.start.state;
        for &(time, micro) in &self.jumps {
            if micro.state != current {
                out.push((time, micro.state));
                current = micro.state;
            }
        }
        out
    }

    /// Time since the last macrostate change at `t` (the spell duration,
    /// measured from the path start for the first spell).
    pub fn duration_at(&self, t: f64) -> f64 {
        let mut entry = self.start_time;
        let mut current = self.start.state;
        for &(time, micro) in &self.jumps {
            if time > t {
                break;
            }
            if micro.state != current {
                entry = time;
                current = micro.state;
            }
        }
        t - entry
    }

    /// The observed macrostate history, for paths that start at the time
    /// origin in macrostate 0.
    pub fn macro_history(&self) -> Result<History> {
        if self.start_time != 0.0 || self.start.state != 0 {
            return Err(Error::Domain(format!(
                "histories describe paths observed from (0, state 0); this one starts \
                 at ({}, state {})",
                self.start_time, self.start.state
            )));
        }
        History::new(self.macro_jumps())
    }
}

/// Dump paths as CSV rows `(path_id, time, macro, micro)`, starting point
/// included.
pub fn write_paths_csv<W: std::io::Write>(out: W, paths: &[SimPath]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "time", "macro", "micro"])?;
    for (id, path) in paths.iter().enumerate() {
        let mut write = |time: f64, micro: MicroIndex| {
            w.write_record([
                id.to_string(),
                format!("{time:.16e}"),
                micro.state.to_string(),
                micro.micro.to_string(),
            ])
        };
        write(path.start_time, path.start)?;
        for &(time, micro) in &path.jumps {
            write(time, micro)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Simulation context reused across paths: breakpoints and scratch space.
struct Simulator<'m> {
    model: &'m AggregateModel,
    breakpoints: Vec<f64>,
}

impl<'m> Simulator<'m> {
    fn new(model: &'m AggregateModel) -> Self {
        let mut breakpoints = Vec::new();
        model.rate_breakpoints(&mut breakpoints);
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        Simulator { model, breakpoints }
    }

    fn exit_rate(&self, p: usize, t: f64, row: &mut Array1<f64>) -> f64 {
        self.model.eval_row_into(p, t, row);
        let mut total = 0.0;
        for (q, &r) in row.iter().enumerate() {
            if q != p {
                total += r.max(0.0);
            }
        }
        total
    }

    /// Simulate from `(from, micro)` to `to`, appending jumps; returns the
    /// microstate at `to`.
    fn segment(
        &self,
        rng: &mut ChaCha12Rng,
        from: f64,
        micro: MicroIndex,
        to: f64,
        jumps: &mut Vec<(f64, MicroIndex)>,
    ) -> Result<MicroIndex> {
        let d = self.model.total_dim();
        let mut row = Array1::zeros(d);
        let mut current = micro;
        let mut tau = from;
        while tau < to {
            let p = self.model.flat_index(current);
            let window_end = (tau + WINDOW).min(to);
            // bound the exit rate over the window: uniform samples plus any
            // breakpoints (and their one-sided neighbourhoods) inside it
            let mut bound: f64 = 0.0;
            for i in 0..BOUND_SAMPLES {
                let s = tau + (window_end - tau) * i as f64 / (BOUND_SAMPLES - 1) as f64;
                bound = bound.max(self.exit_rate(p, s, &mut row));
            }
            let lo = self.breakpoints.partition_point(|&b| b <= tau);
            for &b in &self.breakpoints[lo..] {
                if b >= window_end {
                    break;
                }
                bound = bound.max(self.exit_rate(p, b, &mut row));
                bound = bound.max(self.exit_rate(p, (b - 1e-9).max(tau), &mut row));
            }
            bound *= BOUND_FACTOR;
            if bound < 1e-13 {
                tau = window_end;
                continue;
            }
            // exponential candidates at the bound
            let mut s = tau;
            loop {
                let e = -(rng.gen::<f64>()).ln() / bound;
                s += e;
                if s >= window_end {
                    tau = window_end;
                    break;
                }
                let rate = self.exit_rate(p, s, &mut row);
                if rate > bound * (1.0 + 1e-9) {
                    return Err(Error::ThinningBound {
                        time: s,
                        rate,
                        bound,
                    });
                }
                if rng.gen::<f64>() * bound < rate {
                    // jump: pick the destination by its intensity share
                    let mut pick = rng.gen::<f64>() * rate;
                    let mut dest = None;
                    for (q, &r) in row.iter().enumerate() {
                        if q == p || r <= 0.0 {
                            continue;
                        }
                        pick -= r;
                        if pick <= 0.0 {
                            dest = Some(q);
                            break;
                        }
                    }
                    let q = dest.unwrap_or_else(|| {
                        (0..d).rev().find(|&q| q != p && row[q] > 0.0).unwrap()
                    });
                    current = self.model.micro_of(q);
                    jumps.push((s, current));
                    tau = s;
                    break;
                }
            }
        }
        Ok(current)
    }
}

fn sample_categorical(rng: &mut ChaCha12Rng, weights: &Array1<f64>) -> usize {
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let mut pick = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        pick -= w;
        if pick <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Simulate one path from time 0 (microstate drawn from the initial law)
/// to `horizon`, reproducibly for the given seed.
pub fn sample_path(model: &AggregateModel, horizon: f64, seed: u64) -> Result<SimPath> {
    let sim = Simulator::new(model);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    path_from_start(&sim, &mut rng, horizon)
}

fn path_from_start(sim: &Simulator<'_>, rng: &mut ChaCha12Rng, horizon: f64) -> Result<SimPath> {
    let initial = sim.model.initial().to_owned();
    let micro = MicroIndex::new(0, sample_categorical(rng, &initial));
    let mut jumps = Vec::new();
    sim.segment(rng, 0.0, micro, horizon, &mut jumps)?;
    Ok(SimPath {
        start_time: 0.0,
        start: micro,
        jumps,
        end_time: horizon,
    })
}

/// How to start each simulated path.
#[derive(Debug, Clone)]
pub enum PathSampler {
    /// From time 0, microstate from the model's initial law.
    FromStart { horizon: f64 },
    /// Conditioned on sitting in `state` at time `at` with spell duration
    /// `duration`: paths start at the spell beginning with the entry-law
    /// microstate and are rejected if they leave the state before `at`.
    /// Needs the reset structure.
    Conditioned {
        state: usize,
        duration: f64,
        at: f64,
        horizon: f64,
    },
    /// From time `at` in `state` with the microstate drawn from `phase`
    /// (an already-conditioned distribution, e.g. a filtered one).
    FromPhase {
        state: usize,
        phase: Array1<f64>,
        at: f64,
        horizon: f64,
    },
}

impl PathSampler {
    fn sample(&self, sim: &Simulator<'_>, rng: &mut ChaCha12Rng) -> Result<SimPath> {
        match self {
            PathSampler::FromStart { horizon } => path_from_start(sim, rng, *horizon),
            PathSampler::Conditioned {
                state,
                duration,
                at,
                horizon,
            } => {
                let entry_time = at - duration;
                if *duration < 0.0 || entry_time < -1e-12 {
                    return Err(Error::Domain(format!(
                        "conditioning duration {duration} at time {at} starts before 0"
                    )));
                }
                let entry_time = entry_time.max(0.0);
                let reset = sim.model.reset().ok_or_else(|| {
                    Error::Domain(
                        "conditioning by entry law requires the reset structure".into(),
                    )
                })?;
                let entry_law: Array1<f64> = reset.eval_pi(*state, entry_time).into();
                for _attempt in 0..MAX_ATTEMPTS {
                    let micro =
                        MicroIndex::new(*state, sample_categorical(rng, &entry_law));
                    let mut jumps = Vec::new();
                    let at_t = sim.segment(rng, entry_time, micro, *at, &mut jumps)?;
                    if jumps.iter().any(|(_, m)| m.state != *state) {
                        continue;
                    }
                    sim.segment(rng, *at, at_t, *horizon, &mut jumps)?;
                    return Ok(SimPath {
                        start_time: entry_time,
                        start: micro,
                        jumps,
                        end_time: *horizon,
                    });
                }
                Err(Error::InfeasibleConditioning { threshold: 1e-4 })
            }
            PathSampler::FromPhase {
                state,
                phase,
                at,
                horizon,
            } => {
                let micro = MicroIndex::new(*state, sample_categorical(rng, phase));
                let mut jumps = Vec::new();
                sim.segment(rng, *at, micro, *horizon, &mut jumps)?;
                Ok(SimPath {
                    start_time: *at,
                    start: micro,
                    jumps,
                    end_time: *horizon,
                })
            }
        }
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    /// `|estimate − reference|` in units of the standard error.
    pub fn z_score(&self, reference: f64) -> f64 {
        (self.mean - reference).abs() / self.std_error.max(f64::MIN_POSITIVE)
    }
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Estimate `E[f(path)]` over `n_paths` independent paths. One RNG stream
/// per path slot: results are identical for a given seed no matter how the
/// work is scheduled.
pub fn monte_carlo<F>(
    model: &AggregateModel,
    sampler: &PathSampler,
    n_paths: usize,
    seed: u64,
    f: F,
) -> Result<Estimate>
where
    F: Fn(&SimPath) -> f64 + Sync,
{
    let estimates = monte_carlo_vector(model, sampler, n_paths, seed, 1, |path, out| {
        out[0] = f(path);
    })?;
    Ok(estimates[0])
}

/// As [`monte_carlo`] for several functionals of the same paths: `f` fills
/// one value per functional and every functional gets its own [`Estimate`],
/// so the simulation cost is paid once.
pub fn monte_carlo_vector<F>(
    model: &AggregateModel,
    sampler: &PathSampler,
    n_paths: usize,
    seed: u64,
    dim: usize,
    f: F,
) -> Result<Vec<Estimate>>
where
    F: Fn(&SimPath, &mut [f64]) + Sync,
{
    if n_paths == 0 {
        return Err(Error::Domain("need at least one path".into()));
    }
    if dim == 0 {
        return Err(Error::Domain("need at least one functional".into()));
    }
    let sim = Simulator::new(model);
    let rows: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|slot| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(slot as u64);
            sampler.sample(&sim, &mut rng).map(|path| {
                let mut row = vec![0.0; dim];
                f(&path, &mut row);
                row
            })
        })
        .collect::<Result<_>>()?;
    let n = n_paths as f64;
    let mut column = vec![0.0; n_paths];
    let mut estimates = Vec::with_capacity(dim);
    for m in 0..dim {
        for (i, row) in rows.iter().enumerate() {
            column[i] = row[m];
        }
        let mean = pairwise_sum(&column) / n;
        let sq: Vec<f64> = column.iter().map(|&v| (v - mean) * (v - mean)).collect();
        let variance = if n_paths > 1 {
            pairwise_sum(&sq) / (n - 1.0)
        } else {
            0.0
        };
        estimates.push(Estimate {
            mean,
            std_error: (variance / n).sqrt(),
            n: n_paths,
        });
    }
    Ok(estimates)
}

/// Discounted payment stream along one path: sojourn payments integrated
/// with their running spell duration, transition payments at macro jumps,
/// all discounted back to `from` and cut off at the payment horizon.
pub fn discounted_payments(path: &SimPath, payments: &PaymentSpec, from: f64) -> f64 {
    stream_value(path, payments, from, None)
}

/// As [`discounted_payments`], but payments from the first pre-to-post
/// exercise transition onward are multiplied by the realized scaling
/// `ρ(τ)` — the defining expectation a behaviour-transformed valuation
/// must reproduce.
pub fn discounted_payments_scaled(
    path: &SimPath,
    payments: &PaymentSpec,
    from: f64,
    spec: &BehaviourSpec,
) -> f64 {
    let mut factor = None;
    let mut current = path.micro_at(from).state;
    for (time, state) in path.macro_jumps() {
        if time <= from {
            current = state;
            continue;
        }
        if spec.pre_exercise.contains(&current) && spec.post_exercise.contains(&state) {
            let rho = spec
                .scaling
                .get(&(current, state))
                .map_or(1.0, |f| f.eval(time));
            factor = Some((time, rho));
            break;
        }
        current = state;
    }
    stream_value(path, payments, from, factor)
}

/// Macrostate segments of a path: `(entry, exit, state)` with the entry of
/// the first spell at the path start.
fn macro_segments(path: &SimPath) -> Vec<(f64, f64, usize)> {
    let mut out = Vec::new();
    let mut entry = path.start_time;
    let mut state = path.start.state;
    for (time, next) in path.macro_jumps() {
        out.push((entry, time, state));
        entry = time;
        state = next;
    }
    out.push((entry, path.end_time, state));
    out
}

fn stream_value(
    path: &SimPath,
    payments: &PaymentSpec,
    from: f64,
    scale_from: Option<(f64, f64)>,
) -> f64 {
    let end = payments.horizon.min(path.end_time);
    let scale_at = |s: f64| match scale_from {
        Some((tau, rho)) if s >= tau => rho,
        _ => 1.0,
    };
    let mut time_cuts = payments.time_breakpoints();
    let mut interest_cuts = Vec::new();
    payments.interest.breakpoints(&mut interest_cuts);
    time_cuts.extend(interest_cuts);
    let duration_cuts = payments.duration_breakpoints();

    let mut total = 0.0;
    let mut discount_exponent = 0.0;
    let segments = macro_segments(path);
    for (seg_idx, &(entry, exit, state)) in segments.iter().enumerate() {
        let a = entry.max(from);
        let b = exit.min(end);
        if b > a {
            // smooth pieces: cut at payment/interest jumps in time and at
            // duration thresholds mapped through the spell entry
            let mut cuts: Vec<f64> = vec![a, b];
            for &c in &time_cuts {
                if c > a && c < b {
                    cuts.push(c);
                }
            }
            for &c in &duration_cuts {
                let s = entry + c;
                if s > a && s < b {
                    cuts.push(s);
                }
            }
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            for w in cuts.windows(2) {
                let (p0, p1) = (w[0], w[1]);
                let m = (((p1 - p0) / 0.05).ceil() as usize).max(2).next_multiple_of(2);
                let h = (p1 - p0) / m as f64;
                // composite Simpson over the piece, payments evaluated just
                // inside the endpoints so threshold values stay one-sided
                let mut piece = 0.0;
                let mut exponent_here = discount_exponent;
                for i in 0..=m {
                    let s = p0 + h * i as f64;
                    if i > 0 {
                        let mid = s - 0.5 * h;
                        exponent_here += h / 6.0
                            * (payments.interest.eval(s - h)
                                + 4.0 * payments.interest.eval(mid)
                                + payments.interest.eval(s));
                    }
                    let s_eval = if i == 0 {
                        s + EDGE_SHIFT
                    } else if i == m {
                        s - EDGE_SHIFT
                    } else {
                        s
                    };
                    let weight = if i == 0 || i == m {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    let rate = payments.sojourn_rate(state, s_eval, s_eval - entry)
                        * (-exponent_here).exp()
                        * scale_at(s_eval);
                    piece += weight * rate;
                }
                total += piece * h / 3.0;
                discount_exponent = exponent_here;
            }
        }
        // transition payment at the macro jump ending this segment; a paying
        // jump has from < tau <= end, so the sojourn walk above has already
        // advanced the discount exponent exactly to tau
        if seg_idx + 1 < segments.len() {
            let (tau, next_state) = (exit, segments[seg_idx + 1].2);
            if tau > from && tau <= end {
                let amount =
                    payments.transition_amount(state, next_state, tau - EDGE_SHIFT, tau - entry);
                total += amount * (-discount_exponent).exp() * scale_at(tau);
            }
        }
    }
    total
}

/// `N_jk(end) − Λ_jk(end)` along one from-start path: the jump count minus
/// the compensator integral, mean zero when model and paths agree.
pub fn martingale_residual(
    model: &AggregateModel,
    path: &SimPath,
    j: usize,
    k: usize,
    end: f64,
    max_step: f64,
) -> Result<f64> {
    let history = path.macro_history()?;
    let count = history.count_transitions(j, k, end) as f64;
    let integral = compensator_path_integral(model, &history, j, k, end, max_step)?;
    Ok(count - integral)
}

/// Empirical and analytic first-order jump probabilities for a window
/// `(t, t+h]`: simulate from the filtered phase and count paths sitting in
/// `(k, micro)` at `t+h`, against the compensator-based prediction.
#[allow(clippy::too_many_arguments)]
pub fn small_h_identity_check(
    model: &AggregateModel,
    history: &History,
    k: usize,
    micro: usize,
    t: f64,
    h: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<(Estimate, f64)> {
    let phase = conditional_phase(model, history, t, grid)?;
    let rhs = small_h_rhs(model, history, k, micro, t, h, grid)?;
    let sampler = PathSampler::FromPhase {
        state: history.last_state(),
        phase,
        at: t,
        horizon: t + h,
    };
    let target = MicroIndex::new(k, micro);
    let est = monte_carlo(model, &sampler, n_paths, seed, |path| {
        (path.micro_at(t + h) == target) as u8 as f64
    })?;
    Ok((est, rhs))
}
