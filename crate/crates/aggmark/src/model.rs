//! Aggregate Markov models.
//!
//! The insured's state is a pair `X(t) = (X₁(t), X₂(t))`: a biometric
//! macrostate (active, disabled, dead, ...) and a microstate refining it.
//! Only the macrostate process `Z = X₁` is observable; the microstates give
//! `Z` duration effects while `X` itself stays Markov. The full intensity
//! matrix `M(t)` is laid out in blocks: `M_jj(t)` governs microstate moves
//! inside macrostate `j` (its diagonal is data, not derived — row sums of
//! the block are the negated exit rates), and `M_jk(t)` the jumps `j → k`.
//!
//! A model has the *reset property* when every cross block factors as
//! `M_jk(t) = β_jk(t) π_k(t)` with `π_k(t)` a probability row vector: the new
//! microstate is drawn afresh on every macro jump, independent of the old
//! one. Reset models make `Z` itself semi-Markov and unlock the dedicated
//! duration-conditional machinery ([`AggregateModel::micro_distribution`],
//! [`AggregateModel::semi_markov_rate`], and the cash-flow recursion).
//!
//! Macrostates and microstates are indexed from 0; the initial macrostate is
//! always 0. Flattened indices stack microstates block by block.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::func::RateFn;
use crate::grid::TimeGrid;
use crate::prodint::{product_integral, MatrixFn};
use crate::{Error, Result};

/// Conditional micro mass below this is treated as a null event.
pub const MASS_FLOOR: f64 = 1e-14;

/// Durations below this are treated as a fresh entry (no sweep needed).
const DURATION_EPS: f64 = 1e-12;

/// Position of a microstate: macrostate `state`, microstate `micro` within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MicroIndex {
    pub state: usize,
    pub micro: usize,
}

impl MicroIndex {
    pub fn new(state: usize, micro: usize) -> Self {
        MicroIndex { state, micro }
    }
}

impl fmt::Display for MicroIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.state, self.micro)
    }
}

/// Rank-one factorization of the cross blocks: `M_jk(t) = β_jk(t) π_k(t)`.
#[derive(Debug, Clone)]
pub struct ResetStructure {
    /// `β_jk(t)`: per ordered pair `(j, k)`, `j ≠ k`, a column of `d_j` rates.
    beta: BTreeMap<(usize, usize), Vec<RateFn>>,
    /// `π_k(t)`: per macrostate `k`, a probability row over its microstates.
    pi: Vec<Vec<RateFn>>,
}

impl ResetStructure {
    pub fn new(beta: BTreeMap<(usize, usize), Vec<RateFn>>, pi: Vec<Vec<RateFn>>) -> Self {
        ResetStructure { beta, pi }
    }

    pub fn beta(&self, j: usize, k: usize) -> Option<&[RateFn]> {
        self.beta.get(&(j, k)).map(Vec::as_slice)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.beta.keys().copied()
    }

    pub fn pi(&self, k: usize) -> &[RateFn] {
        &self.pi[k]
    }

    pub fn eval_beta(&self, j: usize, k: usize, t: f64) -> Option<Array1<f64>> {
        self.beta
            .get(&(j, k))
            .map(|b| b.iter().map(|f| f.eval(t)).collect())
    }

    pub fn eval_pi(&self, k: usize, t: f64) -> Array1<f64> {
        self.pi[k].iter().map(|f| f.eval(t)).collect()
    }
}

/// Off-diagonal intensity blocks: explicit matrices or a reset factorization.
#[derive(Debug, Clone)]
pub enum CrossBlocks {
    Explicit(BTreeMap<(usize, usize), Vec<Vec<RateFn>>>),
    Reset(ResetStructure),
}

/// An aggregate Markov model: block intensity plus initial microstate law.
#[derive(Debug, Clone)]
pub struct AggregateModel {
    micro_counts: Vec<usize>,
    offsets: Vec<usize>,
    diag_blocks: Vec<Vec<Vec<RateFn>>>,
    cross: CrossBlocks,
    initial: Array1<f64>,
}

fn check_diag_blocks(micro_counts: &[usize], diag_blocks: &[Vec<Vec<RateFn>>]) -> Result<()> {
    if diag_blocks.len() != micro_counts.len() {
        return Err(Error::InvalidModel(format!(
            "{} diagonal blocks for {} macrostates",
            diag_blocks.len(),
            micro_counts.len()
        )));
    }
    for (j, (&d, block)) in micro_counts.iter().zip(diag_blocks).enumerate() {
        if d == 0 {
            return Err(Error::InvalidModel(format!(
                "macrostate {j} has no microstates"
            )));
        }
        if block.len() != d || block.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidModel(format!(
                "diagonal block {j} is not {d}x{d}"
            )));
        }
    }
    Ok(())
}

fn check_initial(initial: &Array1<f64>, d0: usize) -> Result<()> {
    if initial.len() != d0 {
        return Err(Error::InvalidModel(format!(
            "initial distribution has length {} but macrostate 0 has {} microstates",
            initial.len(),
            d0
        )));
    }
    Ok(())
}

impl AggregateModel {
    /// Model with explicit off-diagonal blocks.
    pub fn from_blocks(
        micro_counts: Vec<usize>,
        diag_blocks: Vec<Vec<Vec<RateFn>>>,
        cross: BTreeMap<(usize, usize), Vec<Vec<RateFn>>>,
        initial: Array1<f64>,
    ) -> Result<Self> {
        check_diag_blocks(&micro_counts, &diag_blocks)?;
        check_initial(&initial, micro_counts[0])?;
        let count = micro_counts.len();
        for (&(j, k), block) in &cross {
            if j >= count || k >= count || j == k {
                return Err(Error::InvalidModel(format!(
                    "cross block ({j},{k}) is out of range or diagonal"
                )));
            }
            if block.len() != micro_counts[j]
                || block.iter().any(|row| row.len() != micro_counts[k])
            {
                return Err(Error::InvalidModel(format!(
                    "cross block ({j},{k}) is not {}x{}",
                    micro_counts[j], micro_counts[k]
                )));
            }
        }
        Ok(AggregateModel {
            offsets: offsets_of(&micro_counts),
            micro_counts,
            diag_blocks,
            cross: CrossBlocks::Explicit(cross),
            initial,
        })
    }

    /// Model whose off-diagonal blocks factor as `β_jk(t) π_k(t)`.
    pub fn from_reset(
        micro_counts: Vec<usize>,
        diag_blocks: Vec<Vec<Vec<RateFn>>>,
        reset: ResetStructure,
        initial: Array1<f64>,
    ) -> Result<Self> {
        check_diag_blocks(&micro_counts, &diag_blocks)?;
        check_initial(&initial, micro_counts[0])?;
        let count = micro_counts.len();
        if reset.pi.len() != count {
            return Err(Error::InvalidModel(format!(
                "reset structure has {} entry laws for {} macrostates",
                reset.pi.len(),
                count
            )));
        }
        for (k, pi) in reset.pi.iter().enumerate() {
            if pi.len() != micro_counts[k] {
                return Err(Error::InvalidModel(format!(
                    "entry law for macrostate {k} has length {} instead of {}",
                    pi.len(),
                    micro_counts[k]
                )));
            }
        }
        for (&(j, k), beta) in &reset.beta {
            if j >= count || k >= count || j == k {
                return Err(Error::InvalidModel(format!(
                    "reset rate ({j},{k}) is out of range or diagonal"
                )));
            }
            if beta.len() != micro_counts[j] {
                return Err(Error::InvalidModel(format!(
                    "reset rate ({j},{k}) has length {} instead of {}",
                    beta.len(),
                    micro_counts[j]
                )));
            }
        }
        Ok(AggregateModel {
            offsets: offsets_of(&micro_counts),
            micro_counts,
            diag_blocks,
            cross: CrossBlocks::Reset(reset),
            initial,
        })
    }

    /// Classical Markov chain: one microstate per macrostate, diagonal
    /// derived from the off-diagonal rates. Represented as a reset model
    /// (with trivial entry laws) so the duration machinery applies.
    pub fn markov_chain(count: usize, rates: BTreeMap<(usize, usize), RateFn>) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidModel("empty state space".into()));
        }
        let mut beta = BTreeMap::new();
        let mut outflow: Vec<Vec<RateFn>> = vec![Vec::new(); count];
        for ((j, k), rate) in rates {
            if j >= count || k >= count || j == k {
                return Err(Error::InvalidModel(format!(
                    "transition rate ({j},{k}) is out of range or diagonal"
                )));
            }
            outflow[j].push(rate.clone());
            beta.insert((j, k), vec![rate]);
        }
        let diag_blocks = outflow
            .into_iter()
            .map(|terms| vec![vec![RateFn::neg_sum(terms)]])
            .collect();
        let reset = ResetStructure::new(beta, vec![vec![RateFn::constant(1.0)]; count]);
        AggregateModel::from_reset(vec![1; count], diag_blocks, reset, Array1::ones(1))
    }

    pub fn macro_count(&self) -> usize {
        self.micro_counts.len()
    }

    pub fn micro_counts(&self) -> &[usize] {
        &self.micro_counts
    }

    pub fn micro_count(&self, j: usize) -> usize {
        self.micro_counts[j]
    }

    /// Total microstate dimension `d̄`.
    pub fn total_dim(&self) -> usize {
        self.offsets[self.macro_count()]
    }

    /// First flat index of macrostate `j`'s block.
    pub fn offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    pub fn flat_index(&self, idx: MicroIndex) -> usize {
        debug_assert!(idx.micro < self.micro_counts[idx.state]);
        self.offsets[idx.state] + idx.micro
    }

    pub fn micro_of(&self, flat: usize) -> MicroIndex {
        debug_assert!(flat < self.total_dim());
        let state = self.offsets.partition_point(|&o| o <= flat) - 1;
        MicroIndex::new(state, flat - self.offsets[state])
    }

    /// Initial microstate distribution within macrostate 0.
    pub fn initial(&self) -> ArrayView1<'_, f64> {
        self.initial.view()
    }

    /// Initial distribution embedded in the full flat dimension.
    pub fn initial_full(&self) -> Array1<f64> {
        let mut full = Array1::zeros(self.total_dim());
        full.slice_mut(ndarray::s![..self.initial.len()])
            .assign(&self.initial);
        full
    }

    pub fn cross(&self) -> &CrossBlocks {
        &self.cross
    }

    pub fn reset(&self) -> Option<&ResetStructure> {
        match &self.cross {
            CrossBlocks::Reset(r) => Some(r),
            CrossBlocks::Explicit(_) => None,
        }
    }

    pub fn diag_rates(&self, j: usize) -> &Vec<Vec<RateFn>> {
        &self.diag_blocks[j]
    }

    /// Write the full `d̄ × d̄` intensity at time `t` into `out`.
    pub fn eval_full_into(&self, t: f64, out: &mut Array2<f64>) {
        out.fill(0.0);
        for (j, block) in self.diag_blocks.iter().enumerate() {
            let off = self.offsets[j];
            for (p, row) in block.iter().enumerate() {
                for (q, f) in row.iter().enumerate() {
                    out[[off + p, off + q]] = f.eval(t);
                }
            }
        }
        match &self.cross {
            CrossBlocks::Explicit(map) => {
                for (&(j, k), block) in map {
                    let (oj, ok) = (self.offsets[j], self.offsets[k]);
                    for (p, row) in block.iter().enumerate() {
                        for (q, f) in row.iter().enumerate() {
                            out[[oj + p, ok + q]] = f.eval(t);
                        }
                    }
                }
            }
            CrossBlocks::Reset(rs) => {
                let pis: Vec<Vec<f64>> = rs
                    .pi
                    .iter()
                    .map(|pi| pi.iter().map(|f| f.eval(t)).collect())
                    .collect();
                for (&(j, k), beta) in &rs.beta {
                    let (oj, ok) = (self.offsets[j], self.offsets[k]);
                    for (p, b) in beta.iter().enumerate() {
                        let b = b.eval(t);
                        for (q, &pq) in pis[k].iter().enumerate() {
                            out[[oj + p, ok + q]] = b * pq;
                        }
                    }
                }
            }
        }
    }

    /// Write one row (flat microstate index `p`) of the full intensity at
    /// time `t` into `out`: `d_j + Σ_k d_k` function evaluations instead of
    /// the full matrix, which is what a path simulator wants in its loop.
    pub fn eval_row_into(&self, p: usize, t: f64, out: &mut Array1<f64>) {
        debug_assert_eq!(out.len(), self.total_dim());
        out.fill(0.0);
        let here = self.micro_of(p);
        let (j, local) = (here.state, here.micro);
        let off_j = self.offsets[j];
        for (q, f) in self.diag_blocks[j][local].iter().enumerate() {
            out[off_j + q] = f.eval(t);
        }
        match &self.cross {
            CrossBlocks::Explicit(map) => {
                for (&(bj, k), block) in map {
                    if bj != j {
                        continue;
                    }
                    let ok = self.offsets[k];
                    for (q, f) in block[local].iter().enumerate() {
                        out[ok + q] = f.eval(t);
                    }
                }
            }
            CrossBlocks::Reset(rs) => {
                for (&(bj, k), beta) in &rs.beta {
                    if bj != j {
                        continue;
                    }
                    let b = beta[local].eval(t);
                    if b == 0.0 {
                        continue;
                    }
                    let ok = self.offsets[k];
                    for (q, f) in rs.pi[k].iter().enumerate() {
                        out[ok + q] = b * f.eval(t);
                    }
                }
            }
        }
    }

    /// Write the diagonal block `M_jj(t)` into `out`.
    pub fn eval_diag_into(&self, j: usize, t: f64, out: &mut Array2<f64>) {
        for (p, row) in self.diag_blocks[j].iter().enumerate() {
            for (q, f) in row.iter().enumerate() {
                out[[p, q]] = f.eval(t);
            }
        }
    }

    /// Write the cross block `M_jk(t)` into `out` (zeros when absent).
    pub fn eval_cross_into(&self, j: usize, k: usize, t: f64, out: &mut Array2<f64>) {
        out.fill(0.0);
        match &self.cross {
            CrossBlocks::Explicit(map) => {
                if let Some(block) = map.get(&(j, k)) {
                    for (p, row) in block.iter().enumerate() {
                        for (q, f) in row.iter().enumerate() {
                            out[[p, q]] = f.eval(t);
                        }
                    }
                }
            }
            CrossBlocks::Reset(rs) => {
                if let Some(beta) = rs.beta.get(&(j, k)) {
                    for (p, b) in beta.iter().enumerate() {
                        let b = b.eval(t);
                        for (q, f) in rs.pi[k].iter().enumerate() {
                            out[[p, q]] = b * f.eval(t);
                        }
                    }
                }
            }
        }
    }

    /// The full intensity as a matrix function (for product integrals).
    pub fn full_intensity(&self) -> FullIntensityFn<'_> {
        FullIntensityFn { model: self }
    }

    /// One diagonal block as a matrix function (a sub-intensity).
    pub fn diag_block(&self, j: usize) -> DiagBlockFn<'_> {
        debug_assert!(j < self.macro_count());
        DiagBlockFn { model: self, state: j }
    }

    /// Exit rates out of macrostate `j`: `m_j(t) = -M_jj(t) 1`, one entry per
    /// microstate. Zero for absorbing macrostates.
    pub fn exit_rate(&self, j: usize, t: f64) -> Array1<f64> {
        self.diag_blocks[j]
            .iter()
            .map(|row| -row.iter().map(|f| f.eval(t)).sum::<f64>())
            .collect()
    }

    /// Conditional microstate distribution in macrostate `j` at time `t`,
    /// given the current sojourn has lasted `u`: the entry law `π_j(t-u)`
    /// propagated through the diagonal block and normalized. Needs the reset
    /// structure unless `d_j = 1`, where the answer is trivially `(1)`.
    pub fn micro_distribution(
        &self,
        j: usize,
        t: f64,
        u: f64,
        grid: &TimeGrid,
    ) -> Result<Array1<f64>> {
        if j >= self.macro_count() {
            return Err(Error::Domain(format!("macrostate {j} out of range")));
        }
        if !u.is_finite() || u < 0.0 {
            return Err(Error::Domain(format!("invalid duration {u}")));
        }
        if self.micro_counts[j] == 1 {
            return Ok(Array1::ones(1));
        }
        let reset = self.reset().ok_or_else(|| {
            Error::Domain(format!(
                "duration conditioning in macrostate {j} needs the reset factorization"
            ))
        })?;
        let weights = if u <= DURATION_EPS {
            reset.eval_pi(j, t)
        } else {
            let aux = grid.auxiliary(t - u, t)?;
            let f = product_integral(&self.diag_block(j), t - u, t, &aux)?;
            reset.eval_pi(j, t - u).dot(&f)
        };
        let mass = weights.sum();
        if mass < MASS_FLOOR {
            return Err(Error::NullConditioning(format!(
                "no mass left in macrostate {j} after duration {u} at time {t}"
            )));
        }
        Ok(weights.mapv(|w| (w / mass).max(0.0)))
    }

    /// Semi-Markov transition rate of the macrostate process for a reset
    /// model: the observed jump intensity `j → k` at time `t` given the
    /// current sojourn duration `u`. At `u = 0` this is `π_j(t) β_jk(t)`.
    pub fn semi_markov_rate(
        &self,
        j: usize,
        k: usize,
        t: f64,
        u: f64,
        grid: &TimeGrid,
    ) -> Result<f64> {
        let reset = self.reset().ok_or_else(|| {
            Error::Domain("semi-Markov rates need the reset factorization".into())
        })?;
        let Some(beta) = reset.eval_beta(j, k, t) else {
            return Ok(0.0);
        };
        let weights = self.micro_distribution(j, t, u, grid)?;
        Ok(weights.dot(&beta))
    }

    /// Collect the declared breakpoints of every rate in the model.
    pub fn rate_breakpoints(&self, out: &mut Vec<f64>) {
        for block in &self.diag_blocks {
            for row in block {
                for f in row {
                    f.breakpoints(out);
                }
            }
        }
        match &self.cross {
            CrossBlocks::Explicit(map) => {
                for block in map.values() {
                    for row in block {
                        for f in row {
                            f.breakpoints(out);
                        }
                    }
                }
            }
            CrossBlocks::Reset(rs) => {
                for beta in rs.beta.values() {
                    for f in beta {
                        f.breakpoints(out);
                    }
                }
                for pi in &rs.pi {
                    for f in pi {
                        f.breakpoints(out);
                    }
                }
            }
        }
    }

    /// Check numerical validity at the given sample times.
    pub fn validate(&self, sample_times: &[f64]) -> ValidationReport {
        let mut violations = Vec::new();
        let initial_sum = self.initial.sum();
        if (initial_sum - 1.0).abs() > 1e-10 {
            violations.push(Violation {
                time: None,
                location: "initial".into(),
                detail: format!("initial distribution sums to {initial_sum}"),
            });
        }
        if let Some(p) = self.initial.iter().find(|&&p| p < -1e-12 || !p.is_finite()) {
            violations.push(Violation {
                time: None,
                location: "initial".into(),
                detail: format!("initial distribution has entry {p}"),
            });
        }
        let d = self.total_dim();
        let mut m = Array2::zeros((d, d));
        for &t in sample_times {
            self.eval_full_into(t, &mut m);
            for p in 0..d {
                let mut row_sum = 0.0;
                for q in 0..d {
                    let x = m[[p, q]];
                    row_sum += x;
                    if !x.is_finite() {
                        violations.push(Violation {
                            time: Some(t),
                            location: format!("M[{p},{q}]"),
                            detail: format!("entry {x} is not finite"),
                        });
                    } else if p != q && x < -1e-12 {
                        violations.push(Violation {
                            time: Some(t),
                            location: format!("M[{p},{q}]"),
                            detail: format!("off-diagonal entry {x} is negative"),
                        });
                    } else if p == q && x > 1e-12 {
                        violations.push(Violation {
                            time: Some(t),
                            location: format!("M[{p},{p}]"),
                            detail: format!("diagonal entry {x} is positive"),
                        });
                    }
                }
                if row_sum.abs() > 1e-10 {
                    violations.push(Violation {
                        time: Some(t),
                        location: format!("M row {p}"),
                        detail: format!("row sums to {row_sum:e}"),
                    });
                }
            }
            if let CrossBlocks::Reset(rs) = &self.cross {
                for (k, pi) in rs.pi.iter().enumerate() {
                    let mut total = 0.0;
                    for (q, f) in pi.iter().enumerate() {
                        let x = f.eval(t);
                        total += x;
                        if x < -1e-12 {
                            violations.push(Violation {
                                time: Some(t),
                                location: format!("pi[{k}][{q}]"),
                                detail: format!("entry law weight {x} is negative"),
                            });
                        }
                    }
                    if (total - 1.0).abs() > 1e-10 {
                        violations.push(Violation {
                            time: Some(t),
                            location: format!("pi[{k}]"),
                            detail: format!("entry law sums to {total}"),
                        });
                    }
                }
                for (&(j, k), beta) in &rs.beta {
                    for (p, f) in beta.iter().enumerate() {
                        let x = f.eval(t);
                        if x < -1e-12 {
                            violations.push(Violation {
                                time: Some(t),
                                location: format!("beta[{j},{k}][{p}]"),
                                detail: format!("rate {x} is negative"),
                            });
                        }
                    }
                }
            }
        }
        ValidationReport { violations }
    }
}

fn offsets_of(micro_counts: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(micro_counts.len() + 1);
    let mut acc = 0;
    offsets.push(0);
    for &d in micro_counts {
        acc += d;
        offsets.push(acc);
    }
    offsets
}

/// [`MatrixFn`] view of the full block intensity `M(t)`.
#[derive(Clone, Copy)]
pub struct FullIntensityFn<'a> {
    model: &'a AggregateModel,
}

impl MatrixFn for FullIntensityFn<'_> {
    fn dim(&self) -> usize {
        self.model.total_dim()
    }

    fn eval_into(&self, t: f64, out: &mut Array2<f64>) {
        self.model.eval_full_into(t, out);
    }
}

/// [`MatrixFn`] view of one diagonal block `M_jj(t)`.
#[derive(Clone, Copy)]
pub struct DiagBlockFn<'a> {
    model: &'a AggregateModel,
    state: usize,
}

impl MatrixFn for DiagBlockFn<'_> {
    fn dim(&self) -> usize {
        self.model.micro_counts[self.state]
    }

    fn eval_into(&self, t: f64, out: &mut Array2<f64>) {
        self.model.eval_diag_into(self.state, t, out);
    }
}

/// A single numerical defect found by [`AggregateModel::validate`].
#[derive(Debug, Clone)]
pub struct Violation {
    pub time: Option<f64>,
    pub location: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.time {
            Some(t) => write!(f, "at t={t}: {}: {}", self.location, self.detail),
            None => write!(f, "{}: {}", self.location, self.detail),
        }
    }
}

/// Outcome of model validation; empty means no defect was found.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Convert to an error carrying the first few violations.
    pub fn into_result(self) -> Result<()> {
        if self.violations.is_empty() {
            return Ok(());
        }
        let shown: Vec<String> = self.violations.iter().take(3).map(|v| v.to_string()).collect();
        let suffix = if self.violations.len() > 3 {
            format!(" (and {} more)", self.violations.len() - 3)
        } else {
            String::new()
        };
        Err(Error::InvalidModel(format!(
            "{}{suffix}",
            shown.join("; ")
        )))
    }
}

/// On-disk form of a model. Blocks are keyed `"j,k"` with 0-based indices;
/// diagonal keys `"j,j"` are required, off-diagonal keys are allowed only
/// without a `reset` section (which replaces them by `β_jk(t) π_k(t)`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub macrostates: usize,
    pub micro_counts: Vec<usize>,
    pub initial: Vec<f64>,
    pub blocks: BTreeMap<String, Vec<Vec<RateFn>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reset: Option<ResetFile>,
}

/// On-disk form of [`ResetStructure`]; `beta` is keyed `"j,k"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetFile {
    pub beta: BTreeMap<String, Vec<RateFn>>,
    pub pi: Vec<Vec<RateFn>>,
}

pub(crate) fn parse_pair(key: &str) -> Result<(usize, usize)> {
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("block key '{key}' is not of the form 'j,k'")))
    };
    let (a, b) = key
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("block key '{key}' is not of the form 'j,k'")))?;
    Ok((parse(a)?, parse(b)?))
}

fn format_pair(j: usize, k: usize) -> String {
    format!("{j},{k}")
}

impl TryFrom<ModelFile> for AggregateModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.macrostates != file.micro_counts.len() {
            return Err(Error::Config(format!(
                "macrostates is {} but micro_counts has {} entries",
                file.macrostates,
                file.micro_counts.len()
            )));
        }
        let count = file.macrostates;
        let mut diag: Vec<Option<Vec<Vec<RateFn>>>> = vec![None; count];
        let mut cross = BTreeMap::new();
        for (key, block) in file.blocks {
            let (j, k) = parse_pair(&key)?;
            if j >= count || k >= count {
                return Err(Error::Config(format!("block key '{key}' is out of range")));
            }
            if j == k {
                diag[j] = Some(block);
            } else {
                cross.insert((j, k), block);
            }
        }
        let diag_blocks: Vec<Vec<Vec<RateFn>>> = diag
            .into_iter()
            .enumerate()
            .map(|(j, b)| {
                b.ok_or_else(|| Error::Config(format!("missing diagonal block '{j},{j}'")))
            })
            .collect::<Result<_>>()?;
        let initial = Array1::from(file.initial);
        match file.reset {
            Some(reset) => {
                if !cross.is_empty() {
                    return Err(Error::Config(
                        "off-diagonal blocks and a reset section are mutually exclusive".into(),
                    ));
                }
                let mut beta = BTreeMap::new();
                for (key, column) in reset.beta {
                    let (j, k) = parse_pair(&key)?;
                    beta.insert((j, k), column);
                }
                AggregateModel::from_reset(
                    file.micro_counts,
                    diag_blocks,
                    ResetStructure::new(beta, reset.pi),
                    initial,
                )
            }
            None => AggregateModel::from_blocks(file.micro_counts, diag_blocks, cross, initial),
        }
    }
}

impl From<&AggregateModel> for ModelFile {
    fn from(model: &AggregateModel) -> Self {
        let mut blocks = BTreeMap::new();
        for (j, block) in model.diag_blocks.iter().enumerate() {
            blocks.insert(format_pair(j, j), block.clone());
        }
        let reset = match &model.cross {
            CrossBlocks::Explicit(map) => {
                for (&(j, k), block) in map {
                    blocks.insert(format_pair(j, k), block.clone());
                }
                None
            }
            CrossBlocks::Reset(rs) => Some(ResetFile {
                beta: rs
                    .beta
                    .iter()
                    .map(|(&(j, k), b)| (format_pair(j, k), b.clone()))
                    .collect(),
                pi: rs.pi.clone(),
            }),
        };
        ModelFile {
            macrostates: model.macro_count(),
            micro_counts: model.micro_counts.clone(),
            initial: model.initial.to_vec(),
            blocks,
            reset,
        }
    }
}

impl AggregateModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        AggregateModel::try_from(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Two macrostates, d = (1, 2), reset cross blocks, one absorbing-ish
    /// second state via different exit rates per micro.
    fn two_state_reset() -> AggregateModel {
        let diag0 = vec![vec![RateFn::constant(-0.3)]];
        let diag1 = vec![
            vec![RateFn::constant(-0.5), RateFn::constant(0.1)],
            vec![RateFn::constant(0.0), RateFn::constant(-0.8)],
        ];
        let mut beta = BTreeMap::new();
        beta.insert((0, 1), vec![RateFn::constant(0.3)]);
        beta.insert((1, 0), vec![RateFn::constant(0.4), RateFn::constant(0.8)]);
        let pi = vec![
            vec![RateFn::constant(1.0)],
            vec![RateFn::constant(0.6), RateFn::constant(0.4)],
        ];
        AggregateModel::from_reset(
            vec![1, 2],
            vec![diag0, diag1],
            ResetStructure::new(beta, pi),
            array![1.0],
        )
        .unwrap()
    }

    #[test]
    fn reset_blocks_expand_to_outer_products() {
        let model = two_state_reset();
        assert_eq!(model.total_dim(), 3);
        let m = model.full_intensity().eval(0.0);
        let expected = array![
            [-0.3, 0.3 * 0.6, 0.3 * 0.4],
            [0.4, -0.5, 0.1],
            [0.8, 0.0, -0.8],
        ];
        for (a, b) in m.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(model.validate(&[0.0, 1.0, 5.0]).is_ok());
    }

    #[test]
    fn flat_index_round_trip() {
        let model = two_state_reset();
        for flat in 0..model.total_dim() {
            assert_eq!(model.flat_index(model.micro_of(flat)), flat);
        }
        assert_eq!(model.micro_of(2), MicroIndex::new(1, 1));
        assert_eq!(model.offset(1), 1);
        let full = model.initial_full();
        assert_eq!(full.len(), 3);
        assert!((full[0] - 1.0).abs() < 1e-15 && full[1] == 0.0);
    }

    #[test]
    fn exit_rates_match_row_sums_and_reset_rates() {
        let model = two_state_reset();
        let m1 = model.exit_rate(1, 2.0);
        assert!((m1[0] - 0.4).abs() < 1e-15);
        assert!((m1[1] - 0.8).abs() < 1e-15);
        let beta = model.reset().unwrap().eval_beta(1, 0, 2.0).unwrap();
        for (a, b) in m1.iter().zip(beta.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((model.exit_rate(0, 2.0)[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn markov_chain_has_conservative_rows() {
        let mut rates = BTreeMap::new();
        rates.insert((0, 1), RateFn::constant(0.05));
        rates.insert((0, 2), RateFn::gompertz_makeham(5e-4, 7e-5, 1.09));
        rates.insert((1, 2), RateFn::gompertz_makeham(5e-4, 7e-5, 1.09));
        let model = AggregateModel::markov_chain(3, rates).unwrap();
        assert_eq!(model.total_dim(), 3);
        assert!(model.validate(&[0.0, 20.0, 60.0]).is_ok());
        let m = model.full_intensity().eval(40.0);
        for p in 0..3 {
            let row_sum: f64 = m.row(p).sum();
            assert!(row_sum.abs() < 1e-14);
        }
        assert!(m[[2, 0]] == 0.0 && m[[2, 1]] == 0.0 && m[[2, 2]] == 0.0);
    }

    #[test]
    fn micro_distribution_closed_form() {
        // diagonal block with no internal transfer: weights decay as
        // pi_q e^{-m_q u} and renormalize
        let diag0 = vec![vec![RateFn::constant(-1.0)]];
        let (a, b) = (0.4, 1.1);
        let diag1 = vec![
            vec![RateFn::constant(-a), RateFn::constant(0.0)],
            vec![RateFn::constant(0.0), RateFn::constant(-b)],
        ];
        let mut beta = BTreeMap::new();
        beta.insert((0, 1), vec![RateFn::constant(1.0)]);
        beta.insert((1, 0), vec![RateFn::constant(a), RateFn::constant(b)]);
        let pi1 = [0.7, 0.3];
        let pi = vec![
            vec![RateFn::constant(1.0)],
            vec![RateFn::constant(pi1[0]), RateFn::constant(pi1[1])],
        ];
        let model = AggregateModel::from_reset(
            vec![1, 2],
            vec![diag0, diag1],
            ResetStructure::new(beta, pi),
            array![1.0],
        )
        .unwrap();
        let grid = TimeGrid::uniform(0.0, 10.0, 100, 20).unwrap();

        let fresh = model.micro_distribution(1, 3.0, 0.0, &grid).unwrap();
        assert!((fresh[0] - pi1[0]).abs() < 1e-14);

        let u = 2.5;
        let w = [pi1[0] * (-a * u).exp(), pi1[1] * (-b * u).exp()];
        let mass = w[0] + w[1];
        let dist = model.micro_distribution(1, 6.0, u, &grid).unwrap();
        assert!((dist[0] - w[0] / mass).abs() < 1e-10);
        assert!((dist[1] - w[1] / mass).abs() < 1e-10);

        // observed jump rate 1 -> 0 given duration: weighted exit rate
        let nu = model.semi_markov_rate(1, 0, 6.0, u, &grid).unwrap();
        let expected = (w[0] * a + w[1] * b) / mass;
        assert!((nu - expected).abs() < 1e-10);
        // longer sojourn favours the slow micro, dragging the rate down
        let nu_fresh = model.semi_markov_rate(1, 0, 6.0, 0.0, &grid).unwrap();
        let nu_long = model.semi_markov_rate(1, 0, 9.0, 8.0, &grid).unwrap();
        assert!(nu_long < nu && nu < nu_fresh);
    }

    #[test]
    fn single_micro_duration_is_trivial() {
        let mut rates = BTreeMap::new();
        rates.insert((0, 1), RateFn::constant(0.2));
        let model = AggregateModel::markov_chain(2, rates).unwrap();
        let grid = TimeGrid::uniform(0.0, 10.0, 10, 4).unwrap();
        let dist = model.micro_distribution(0, 5.0, 3.7, &grid).unwrap();
        assert_eq!(dist.len(), 1);
        assert!((dist[0] - 1.0).abs() < 1e-15);
        let nu = model.semi_markov_rate(0, 1, 5.0, 3.7, &grid).unwrap();
        assert!((nu - 0.2).abs() < 1e-15);
        assert!((model.semi_markov_rate(1, 0, 5.0, 0.0, &grid).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn validation_flags_defects() {
        // bad initial mass
        let diag = vec![vec![vec![RateFn::constant(-0.1)]], vec![vec![RateFn::constant(0.0)]]];
        let mut beta = BTreeMap::new();
        beta.insert((0, 1), vec![RateFn::constant(0.1)]);
        let pi = vec![vec![RateFn::constant(1.0)], vec![RateFn::constant(0.7)]];
        let model = AggregateModel::from_reset(
            vec![1, 1],
            diag,
            ResetStructure::new(beta, pi),
            array![0.9],
        )
        .unwrap();
        let report = model.validate(&[0.0]);
        assert!(!report.is_ok());
        let text = report
            .violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("\n");
        assert!(text.contains("initial"));
        assert!(text.contains("pi[1]"));
        assert!(report.into_result().is_err());

        // explicit model with non-conservative row
        let diag = vec![vec![vec![RateFn::constant(-0.5)]], vec![vec![RateFn::constant(0.0)]]];
        let mut cross = BTreeMap::new();
        cross.insert((0, 1), vec![vec![RateFn::constant(0.2)]]);
        let model =
            AggregateModel::from_blocks(vec![1, 1], diag, cross, array![1.0]).unwrap();
        let report = model.validate(&[1.0]);
        assert!(report.violations.iter().any(|v| v.location.contains("row")));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let diag = vec![vec![vec![RateFn::constant(-0.1)]]];
        assert!(AggregateModel::from_blocks(
            vec![1],
            diag.clone(),
            BTreeMap::new(),
            array![1.0, 0.0]
        )
        .is_err());
        let mut cross = BTreeMap::new();
        cross.insert((0, 0), vec![vec![RateFn::constant(0.1)]]);
        assert!(AggregateModel::from_blocks(vec![1], diag.clone(), cross, array![1.0]).is_err());
        let reset = ResetStructure::new(BTreeMap::new(), vec![]);
        assert!(AggregateModel::from_reset(vec![1], diag, reset, array![1.0]).is_err());
    }

    #[test]
    fn json_round_trip_preserves_intensity() {
        let model = two_state_reset();
        let text = model.to_json();
        let back = AggregateModel::from_json(&text).unwrap();
        assert_eq!(back.micro_counts(), model.micro_counts());
        for &t in &[0.0, 1.5, 7.0] {
            let a = model.full_intensity().eval(t);
            let b = back.full_intensity().eval(t);
            assert_eq!(a, b);
        }
        assert!(back.reset().is_some());

        // explicit-block variant
        let mut cross = BTreeMap::new();
        cross.insert(
            (0, 1),
            vec![vec![RateFn::linear(0.1, 0.01), RateFn::constant(0.05)]],
        );
        let explicit = AggregateModel::from_blocks(
            vec![1, 2],
            vec![
                vec![vec![RateFn::neg_sum(vec![
                    RateFn::linear(0.1, 0.01),
                    RateFn::constant(0.05),
                ])]],
                vec![
                    vec![RateFn::constant(-0.2), RateFn::constant(0.2)],
                    vec![RateFn::constant(0.0), RateFn::constant(0.0)],
                ],
            ],
            cross,
            array![1.0],
        )
        .unwrap();
        let back = AggregateModel::from_json(&explicit.to_json()).unwrap();
        assert_eq!(
            back.full_intensity().eval(3.0),
            explicit.full_intensity().eval(3.0)
        );

        // conflicting sections are rejected
        let mut file = ModelFile::from(&model);
        file.blocks
            .insert("0,1".into(), vec![vec![RateFn::constant(0.1), RateFn::constant(0.1)]]);
        assert!(AggregateModel::try_from(file).is_err());
    }
}
