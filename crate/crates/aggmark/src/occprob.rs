//! Conditional occupation probabilities with duration tails.
//!
//! The central objects are tails of the joint law of position and elapsed
//! sojourn duration: the probability that at time `s` the process sits in
//! microstate `(j, j̃)` *and* entered macrostate `j` more than `z` ago,
//! conditional on what has been observed at time `t ≤ s`.
//!
//! The duration event `U(s) > z` forbids macro jumps on `(s−z, s]`, which
//! factorizes the probability into three product-integral legs: propagate
//! the time-`t` conditioning row through the full intensity up to
//! `v* = (s−z) ∨ t`, project onto macrostate `j`'s block, then propagate
//! through the diagonal block alone from `v*` to `s`. When the conditioning
//! already pins the recent past (`s − z ≤ t`), the first leg collapses to
//! the identity and only `j = current state` survives — the tail is constant
//! there, producing the plateau in `z` and the terminal atom of the duration
//! law at the maximal attainable duration.
//!
//! Conditioning comes in two flavours: an explicit observed [`History`]
//! (general models), or a `(macrostate, duration)` pair for reset models,
//! where the entry law `γ_i(t,u)` summarizes everything.

use ndarray::{Array1, Array2};

use crate::grid::TimeGrid;
use crate::model::{AggregateModel, MicroIndex};
use crate::mpp::{conditional_phase, History};
use crate::prodint::product_integral;
use crate::{Error, Result};

/// Embed a within-block row into the full flat dimension at block `j`.
fn embed_row(model: &AggregateModel, j: usize, row: &Array1<f64>) -> Array1<f64> {
    let mut full = Array1::zeros(model.total_dim());
    full.slice_mut(ndarray::s![model.offset(j)..model.offset(j) + row.len()])
        .assign(row);
    full
}

/// The two propagation legs shared by every tail: `F(t, v*)` on the full
/// space and the per-macrostate stay blocks `F_jj(v*, s)`.
fn tail_legs(
    model: &AggregateModel,
    t: f64,
    s: f64,
    z: f64,
    grid: &TimeGrid,
) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    let v_star = (s - z).max(t);
    let full = product_integral(&model.full_intensity(), t, v_star, grid)?;
    let stays = (0..model.macro_count())
        .map(|j| product_integral(&model.diag_block(j), v_star, s, grid))
        .collect::<Result<Vec<_>>>()?;
    Ok((full, stays))
}

/// Tails for every target microstate at once, given a full conditioning row
/// at time `t` whose last known macro jump happened at `anchor`.
fn tail_row(
    model: &AggregateModel,
    row: &Array1<f64>,
    anchor: f64,
    t: f64,
    s: f64,
    z: f64,
    grid: &TimeGrid,
) -> Result<Array1<f64>> {
    if s < t {
        return Err(Error::Domain(format!("end time {s} precedes start {t}")));
    }
    if !(z >= 0.0) {
        return Err(Error::Domain(format!("duration threshold {z} is invalid")));
    }
    let d = model.total_dim();
    if z >= s - anchor {
        return Ok(Array1::zeros(d));
    }
    let (full, stays) = tail_legs(model, t, s, z, grid)?;
    let at_v = row.dot(&full);
    let mut out = Array1::zeros(d);
    for (j, stay) in stays.iter().enumerate() {
        let off = model.offset(j);
        let dj = model.micro_count(j);
        let block = at_v.slice(ndarray::s![off..off + dj]);
        out.slice_mut(ndarray::s![off..off + dj])
            .assign(&block.dot(stay));
    }
    Ok(out)
}

/// `P(X(s) = (j, j̃), U(s) > z | history through t)` for a general model:
/// the history's last jump is at `t_n ≤ t` and no jump has happened since.
pub fn occupation_tail(
    model: &AggregateModel,
    history: &History,
    t: f64,
    s: f64,
    z: f64,
    target: MicroIndex,
    grid: &TimeGrid,
) -> Result<f64> {
    let tails = occupation_tail_row(model, history, t, s, z, grid)?;
    Ok(tails[model.flat_index(target)])
}

/// All-target version of [`occupation_tail`]: a length-`d̄` vector.
pub fn occupation_tail_row(
    model: &AggregateModel,
    history: &History,
    t: f64,
    s: f64,
    z: f64,
    grid: &TimeGrid,
) -> Result<Array1<f64>> {
    let phase = conditional_phase(model, history, t, grid)?;
    let row = embed_row(model, history.last_state(), &phase);
    tail_row(model, &row, history.last_time(), t, s, z, grid)
}

/// Entry-law conditioning row for reset models: `γ_i(t,u)` embedded in the
/// full dimension. Rows for every macrostate stack into [`gamma_matrix`].
pub fn gamma_row(
    model: &AggregateModel,
    i: usize,
    t: f64,
    u: f64,
    grid: &TimeGrid,
) -> Result<Array1<f64>> {
    let dist = model.micro_distribution(i, t, u, grid)?;
    Ok(embed_row(model, i, &dist))
}

/// `J × d̄` matrix whose row `i` is `γ_i(t,u)` in block `i`, zero elsewhere.
pub fn gamma_matrix(
    model: &AggregateModel,
    t: f64,
    u: f64,
    grid: &TimeGrid,
) -> Result<Array2<f64>> {
    let count = model.macro_count();
    let mut out = Array2::zeros((count, model.total_dim()));
    for i in 0..count {
        let row = gamma_row(model, i, t, u, grid)?;
        out.row_mut(i).assign(&row);
    }
    Ok(out)
}

/// `P(X(s) = (j, j̃), U(s) > z | Z(t) = i, U(t) = u)` for reset models.
/// Zero exactly when `z ≥ u + s − t` (the duration cannot reach that far)
/// and constant in `z` on `[s−t, u+s−t)`.
pub fn semi_markov_tail(
    model: &AggregateModel,
    i: usize,
    u: f64,
    t: f64,
    s: f64,
    z: f64,
    target: MicroIndex,
    grid: &TimeGrid,
) -> Result<f64> {
    if u > t {
        return Err(Error::Domain(format!("duration {u} exceeds time {t}")));
    }
    let row = gamma_row(model, i, t, u, grid)?;
    let tails = tail_row(model, &row, t - u, t, s, z, grid)?;
    Ok(tails[model.flat_index(target)])
}

/// The duration law's terminal atom: the probability that the process sits
/// in `(j, j̃)` at `s` with the maximal duration `u + s − t`, i.e. it never
/// left macrostate `i = j` along the way. Zero when `j ≠ i`.
pub fn duration_atom(
    model: &AggregateModel,
    i: usize,
    u: f64,
    t: f64,
    s: f64,
    target: MicroIndex,
    grid: &TimeGrid,
) -> Result<f64> {
    if target.state != i {
        return Ok(0.0);
    }
    let dist = model.micro_distribution(i, t, u, grid)?;
    let stay = product_integral(&model.diag_block(i), t, s, grid)?;
    Ok(dist.dot(&stay)[target.micro])
}

/// All semi-Markov tails for one duration threshold: rows are conditioning
/// macrostates `i` (all sharing duration `u` at time `t`), columns flat
/// target microstates.
pub fn tail_matrix(
    model: &AggregateModel,
    u: f64,
    t: f64,
    s: f64,
    z: f64,
    grid: &TimeGrid,
) -> Result<Array2<f64>> {
    if u > t {
        return Err(Error::Domain(format!("duration {u} exceeds time {t}")));
    }
    if s < t {
        return Err(Error::Domain(format!("end time {s} precedes start {t}")));
    }
    let count = model.macro_count();
    let d = model.total_dim();
    if z >= u + s - t {
        return Ok(Array2::zeros((count, d)));
    }
    let gammas = gamma_matrix(model, t, u, grid)?;
    let (full, stays) = tail_legs(model, t, s, z, grid)?;
    let at_v = gammas.dot(&full);
    let mut out = Array2::zeros((count, d));
    for (j, stay) in stays.iter().enumerate() {
        let off = model.offset(j);
        let dj = model.micro_count(j);
        let block = at_v.slice(ndarray::s![.., off..off + dj]);
        out.slice_mut(ndarray::s![.., off..off + dj])
            .assign(&block.dot(stay));
    }
    Ok(out)
}

/// Dump a tail surface as CSV with columns `i,u,s,z,j,j_tilde,value`.
pub fn write_tail_surface<W: std::io::Write>(
    out: W,
    model: &AggregateModel,
    u: f64,
    t: f64,
    end_times: &[f64],
    thresholds: &[f64],
    grid: &TimeGrid,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["i", "u", "s", "z", "j", "j_tilde", "value"])?;
    for &s in end_times {
        for &z in thresholds {
            let tails = tail_matrix(model, u, t, s, z, grid)?;
            for i in 0..model.macro_count() {
                for flat in 0..model.total_dim() {
                    let m = model.micro_of(flat);
                    w.write_record([
                        i.to_string(),
                        format!("{u}"),
                        format!("{s}"),
                        format!("{z}"),
                        m.state.to_string(),
                        m.micro.to_string(),
                        format!("{:.16e}", tails[[i, flat]]),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
