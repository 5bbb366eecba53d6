//! Policyholder behaviour: option exercise as a change of measure.
//!
//! Macrostates split into pre-exercise states `J₀` and post-exercise states
//! `J₁`, with no flow back from `J₁` to `J₀`. Exercising the option (free
//! policy, surrender) scales the post-exercise payments by a factor
//! `ρ(τ) ∈ (0, 1]` fixed at the exercise time `τ`. Rather than tracking `ρ`
//! along paths, the valuation absorbs it into the intensities: scale each
//! `J₀ → J₁` rate by `ρ` and divert the complementary mass `(1 − ρ)` into a
//! fresh absorbing macrostate `∇` that pays nothing. Total exit intensities
//! out of `J₀` are unchanged, so pre-exercise quantities — and any payments
//! attached to `J₀` states — are untouched; post-exercise payment streams
//! pick up exactly the factor `ρ(τ)`.
//!
//! Valuation conditions on a pre-exercise state. Conditioned after exercise
//! the same cash flows apply multiplied by the realized `ρ(τ, ...)`, which
//! the caller knows; the transform itself cannot.

use std::collections::BTreeMap;

use crate::cashflow::{
    expected_cashflow_general, expected_cashflows_reset, CashFlowTable, Conditioning, PaymentFn,
    PaymentSpec,
};
use crate::func::RateFn;
use crate::grid::TimeGrid;
use crate::model::{AggregateModel, CrossBlocks, ResetStructure};
use crate::{Error, Result};

/// The option structure: a partition of the macrostates and the payment
/// scaling per exercise transition.
#[derive(Debug, Clone)]
pub struct BehaviourSpec {
    /// Pre-exercise macrostates `J₀`; must contain the initial state 0.
    pub pre_exercise: Vec<usize>,
    /// Post-exercise macrostates `J₁`.
    pub post_exercise: Vec<usize>,
    /// `ρ(t)` per exercise transition `(j, k) ∈ J₀ × J₁`; missing pairs
    /// default to 1 (no scaling).
    pub scaling: BTreeMap<(usize, usize), RateFn>,
}

impl BehaviourSpec {
    /// Check the partition, the no-return structure, and that sampled `ρ`
    /// values stay in `(0, 1]`.
    pub fn validate(&self, model: &AggregateModel) -> Result<()> {
        let count = model.macro_count();
        let mut seen = vec![false; count];
        for &j in self.pre_exercise.iter().chain(&self.post_exercise) {
            if j >= count {
                return Err(Error::Config(format!("macrostate {j} out of range")));
            }
            if seen[j] {
                return Err(Error::Config(format!(
                    "macrostate {j} appears twice in the behaviour partition"
                )));
            }
            seen[j] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Config(
                "behaviour partition must cover every macrostate".into(),
            ));
        }
        if !self.pre_exercise.contains(&0) {
            return Err(Error::Config(
                "initial macrostate 0 must be pre-exercise".into(),
            ));
        }
        for (j, k) in cross_pairs(model) {
            if self.post_exercise.contains(&j) && self.pre_exercise.contains(&k) {
                return Err(Error::Config(format!(
                    "intensity block ({j},{k}) flows from post- back to pre-exercise"
                )));
            }
        }
        for (&(j, k), rho) in &self.scaling {
            if !self.pre_exercise.contains(&j) || !self.post_exercise.contains(&k) {
                return Err(Error::Config(format!(
                    "scaling ({j},{k}) is not a pre-to-post exercise pair"
                )));
            }
            let mut probes = vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];
            rho.breakpoints(&mut probes);
            for &t in &probes {
                let v = rho.eval(t);
                if !(v > 0.0 && v <= 1.0 + 1e-12) {
                    return Err(Error::Config(format!(
                        "scaling ({j},{k}) evaluates to {v} at t = {t}, outside (0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Off-diagonal block pairs that are not structurally zero.
fn cross_pairs(model: &AggregateModel) -> Vec<(usize, usize)> {
    match model.cross() {
        CrossBlocks::Explicit(blocks) => blocks
            .iter()
            .filter(|(_, block)| !block.iter().flatten().all(RateFn::is_zero))
            .map(|(&pair, _)| pair)
            .collect(),
        CrossBlocks::Reset(reset) => reset
            .pairs()
            .filter(|&(j, k)| reset.beta(j, k).is_some_and(|b| !b.iter().all(RateFn::is_zero)))
            .collect(),
    }
}

/// The scaled rate `ρ_jk · rate`, collapsing when `ρ` is absent.
fn scale_rate(rho: Option<&RateFn>, rate: &RateFn) -> RateFn {
    match rho {
        Some(r) => RateFn::product(vec![r.clone(), rate.clone()]),
        None => rate.clone(),
    }
}

/// The diverted rate `(1 − ρ_jk) · rate`, zero when `ρ` is absent.
fn diverted_rate(rho: Option<&RateFn>, rate: &RateFn) -> Option<RateFn> {
    rho.map(|r| RateFn::product(vec![RateFn::one_minus(r.clone()), rate.clone()]))
}

/// Build the behaviour-adjusted model: `J₀ → J₁` blocks scaled by `ρ`, the
/// complementary mass diverted into an appended absorbing macrostate `∇`
/// with a single microstate, everything else unchanged. Reset structure is
/// preserved when present.
pub fn transform(model: &AggregateModel, spec: &BehaviourSpec) -> Result<AggregateModel> {
    spec.validate(model)?;
    let count = model.macro_count();
    let nabla = count;
    let mut micro_counts: Vec<usize> = (0..count).map(|j| model.micro_count(j)).collect();
    micro_counts.push(1);
    let mut diag_blocks: Vec<Vec<Vec<RateFn>>> =
        (0..count).map(|j| model.diag_rates(j).clone()).collect();
    diag_blocks.push(vec![vec![RateFn::constant(0.0)]]);

    match model.cross() {
        CrossBlocks::Reset(reset) => {
            let mut beta = BTreeMap::new();
            let mut diverted: BTreeMap<usize, Vec<Vec<RateFn>>> = BTreeMap::new();
            for (j, k) in reset.pairs() {
                let rates = reset.beta(j, k).unwrap();
                let rho = spec.scaling.get(&(j, k));
                beta.insert((j, k), rates.iter().map(|r| scale_rate(rho, r)).collect());
                if let Some(terms) = rates
                    .iter()
                    .map(|r| diverted_rate(rho, r))
                    .collect::<Option<Vec<_>>>()
                {
                    diverted.entry(j).or_default().push(terms);
                }
            }
            for (j, term_sets) in diverted {
                let d = model.micro_count(j);
                let column: Vec<RateFn> = (0..d)
                    .map(|p| RateFn::sum(term_sets.iter().map(|set| set[p].clone()).collect()))
                    .collect();
                beta.insert((j, nabla), column);
            }
            let mut pi: Vec<Vec<RateFn>> = (0..count).map(|k| reset.pi(k).to_vec()).collect();
            pi.push(vec![RateFn::constant(1.0)]);
            AggregateModel::from_reset(
                micro_counts,
                diag_blocks,
                ResetStructure::new(beta, pi),
                model.initial().to_owned(),
            )
        }
        CrossBlocks::Explicit(blocks) => {
            let mut cross = BTreeMap::new();
            let mut diverted: BTreeMap<usize, Vec<Vec<RateFn>>> = BTreeMap::new();
            for (&(j, k), block) in blocks {
                let rho = spec.scaling.get(&(j, k));
                let scaled: Vec<Vec<RateFn>> = block
                    .iter()
                    .map(|row| row.iter().map(|r| scale_rate(rho, r)).collect())
                    .collect();
                cross.insert((j, k), scaled);
                if rho.is_some() {
                    let row_sums: Vec<RateFn> = block
                        .iter()
                        .map(|row| {
                            RateFn::sum(
                                row.iter().map(|r| diverted_rate(rho, r).unwrap()).collect(),
                            )
                        })
                        .collect();
                    diverted.entry(j).or_default().push(row_sums);
                }
            }
            for (j, term_sets) in diverted {
                let d = model.micro_count(j);
                let column: Vec<Vec<RateFn>> = (0..d)
                    .map(|p| {
                        vec![RateFn::sum(
                            term_sets.iter().map(|set| set[p].clone()).collect(),
                        )]
                    })
                    .collect();
                cross.insert((j, nabla), column);
            }
            AggregateModel::from_blocks(
                micro_counts,
                diag_blocks,
                cross,
                model.initial().to_owned(),
            )
        }
    }
}

/// Extend a payment schedule to the transformed state space: `∇` pays
/// nothing, everything else is untouched.
pub fn extended_payments(payments: &PaymentSpec) -> PaymentSpec {
    let mut out = payments.clone();
    out.sojourn.push(PaymentFn::Zero);
    out
}

/// Expected cash flows with the option's payment scaling priced in: the
/// ordinary cash flow under the transformed model with zero payments on `∇`.
///
/// Conditioning must be pre-exercise; a history whose current state is
/// post-exercise is rejected (its value is the plain cash flow times the
/// realized `ρ` at the observed exercise).
pub fn scaled_cashflow(
    model: &AggregateModel,
    spec: &BehaviourSpec,
    conditioning: Conditioning<'_>,
    t: f64,
    grid: &TimeGrid,
    payments: &PaymentSpec,
) -> Result<CashFlowTable> {
    let transformed = transform(model, spec)?;
    let extended = extended_payments(payments);
    match conditioning {
        Conditioning::Duration { u } => {
            expected_cashflows_reset(&transformed, u, t, grid, &extended)
        }
        Conditioning::History(history) => {
            if !spec.pre_exercise.contains(&history.last_state()) {
                return Err(Error::Domain(format!(
                    "history ends in post-exercise macrostate {}; multiply the unscaled \
                     cash flow by the realized scaling instead",
                    history.last_state()
                )));
            }
            expected_cashflow_general(&transformed, history, t, grid, &extended)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cashflow::reserve;
    use ndarray::{array, Array2};

    /// Active (2 micros, pre-exercise), free policy, dead.
    fn free_policy_model() -> AggregateModel {
        let mortality = RateFn::gompertz_makeham(0.05, 0.01, 1.05);
        let diag0 = vec![
            vec![RateFn::constant(-0.6), RateFn::constant(0.1)],
            vec![
                RateFn::constant(0.05),
                RateFn::neg_sum(vec![
                    RateFn::constant(0.05),
                    RateFn::constant(0.3),
                    mortality.clone(),
                ]),
            ],
        ];
        let diag1 = vec![vec![RateFn::constant(-0.02)]];
        let diag2 = vec![vec![RateFn::constant(0.0)]];
        let mut beta = BTreeMap::new();
        beta.insert((0, 1), vec![RateFn::constant(0.4), RateFn::constant(0.3)]);
        beta.insert((0, 2), vec![RateFn::constant(0.1), mortality]);
        beta.insert((1, 2), vec![RateFn::constant(0.02)]);
        let pi = vec![
            vec![RateFn::constant(0.8), RateFn::constant(0.2)],
            vec![RateFn::constant(1.0)],
            vec![RateFn::constant(1.0)],
        ];
        AggregateModel::from_reset(
            vec![2, 1, 1],
            vec![diag0, diag1, diag2],
            ResetStructure::new(beta, pi),
            array![1.0, 0.0],
        )
        .unwrap()
    }

    fn free_policy_spec(rho: RateFn) -> BehaviourSpec {
        let mut scaling = BTreeMap::new();
        scaling.insert((0, 1), rho);
        BehaviourSpec {
            pre_exercise: vec![0],
            post_exercise: vec![1, 2],
            scaling,
        }
    }

    fn eval_full(model: &AggregateModel, t: f64) -> Array2<f64> {
        let d = model.total_dim();
        let mut out = Array2::zeros((d, d));
        model.eval_full_into(t, &mut out);
        out
    }

    #[test]
    fn identity_scaling_reproduces_model() {
        let model = free_policy_model();
        let spec = free_policy_spec(RateFn::constant(1.0));
        let hat = transform(&model, &spec).unwrap();
        assert_eq!(hat.macro_count(), 4);
        assert_eq!(hat.micro_count(3), 1);
        let d = model.total_dim();
        for &t in &[0.0, 1.3, 7.9] {
            let orig = eval_full(&model, t);
            let new = eval_full(&hat, t);
            for p in 0..d {
                for q in 0..d {
                    assert!((new[[p, q]] - orig[[p, q]]).abs() < 1e-12);
                }
                // no flow into the appended absorbing state
                assert!(new[[p, d]].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn half_scaling_splits_mass() {
        let mu = 0.3;
        let mut rates = BTreeMap::new();
        rates.insert((0, 1), RateFn::constant(mu));
        let model = AggregateModel::markov_chain(2, rates).unwrap();
        let spec = BehaviourSpec {
            pre_exercise: vec![0],
            post_exercise: vec![1],
            scaling: BTreeMap::from([((0, 1), RateFn::constant(0.5))]),
        };
        let hat = transform(&model, &spec).unwrap();
        let m = eval_full(&hat, 2.0);
        assert!((m[[0, 1]] - 0.5 * mu).abs() < 1e-14);
        assert!((m[[0, 2]] - 0.5 * mu).abs() < 1e-14);
        assert!((m[[0, 0]] + mu).abs() < 1e-14);
        assert!(hat.validate(&[0.0, 1.0, 5.0]).is_ok());
    }

    #[test]
    fn transform_validates_and_preserves_reset() {
        let model = free_policy_model();
        let rho = RateFn::sum(vec![
            RateFn::constant(0.6),
            RateFn::scaled(0.2, RateFn::gompertz_makeham(0.0, 1.0, (-0.1f64).exp())),
        ]);
        let spec = free_policy_spec(rho.clone());
        let hat = transform(&model, &spec).unwrap();
        assert!(hat.reset().is_some());
        assert!(hat.validate(&[0.0, 0.7, 3.0, 12.0]).is_ok());
        // exercise flow scales by rho, the rest is untouched, totals conserved
        let d = model.total_dim();
        for &t in &[0.0, 2.5, 9.0] {
            let orig = eval_full(&model, t);
            let new = eval_full(&hat, t);
            let r = rho.eval(t);
            for p in 0..2 {
                // block (0,1) sits at column offset 2
                assert!((new[[p, 2]] - r * orig[[p, 2]]).abs() < 1e-12);
                assert!(new[[p, 2]] <= orig[[p, 2]] + 1e-12);
                // death block (0,2) at column offset 3 is unscaled
                assert!((new[[p, 3]] - orig[[p, 3]]).abs() < 1e-12);
                // diverted mass balances the scaling
                assert!((new[[p, 4]] - (1.0 - r) * orig[[p, 2]]).abs() < 1e-12);
                // row sums still vanish
                let sum: f64 = (0..=d).map(|q| new[[p, q]]).sum();
                assert!(sum.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn structural_violations_are_rejected() {
        let model = free_policy_model();
        // partition missing a state
        let spec = BehaviourSpec {
            pre_exercise: vec![0],
            post_exercise: vec![1],
            scaling: BTreeMap::new(),
        };
        assert!(matches!(transform(&model, &spec), Err(Error::Config(_))));
        // post-exercise flowing back: declare state 0 post, 1 pre
        let spec = BehaviourSpec {
            pre_exercise: vec![1, 2],
            post_exercise: vec![0],
            scaling: BTreeMap::new(),
        };
        assert!(matches!(transform(&model, &spec), Err(Error::Config(_))));
        // scaling outside (0,1]
        let spec = free_policy_spec(RateFn::constant(1.5));
        assert!(matches!(transform(&model, &spec), Err(Error::Config(_))));
        let spec = free_policy_spec(RateFn::constant(0.0));
        assert!(matches!(transform(&model, &spec), Err(Error::Config(_))));
        // scaling on a non-exercise pair
        let spec = BehaviourSpec {
            pre_exercise: vec![0],
            post_exercise: vec![1, 2],
            scaling: BTreeMap::from([((1, 2), RateFn::constant(0.5))]),
        };
        assert!(matches!(transform(&model, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn identity_scaling_reproduces_cashflow() {
        let model = free_policy_model();
        let eta = 6.0;
        let mut payments = PaymentSpec {
            sojourn: vec![PaymentFn::Zero; 3],
            transition: BTreeMap::new(),
            horizon: eta,
            interest: RateFn::constant(0.03),
            duration_independent: false,
        };
        payments.sojourn[1] = PaymentFn::Constant { value: 1.0 };
        payments
            .transition
            .insert((0, 2), PaymentFn::Constant { value: 2.0 });
        let grid = TimeGrid::uniform(0.0, eta, 90, 4).unwrap();
        let plain = expected_cashflows_reset(&model, 0.0, 0.0, &grid, &payments).unwrap();
        let spec = free_policy_spec(RateFn::constant(1.0));
        let scaled =
            scaled_cashflow(&model, &spec, Conditioning::Duration { u: 0.0 }, 0.0, &grid, &payments)
                .unwrap();
        for l in 0..plain.times.len() {
            assert!((plain.rates[[0, l]] - scaled.rates[[0, l]]).abs() < 1e-12);
        }
    }

    #[test]
    fn pre_exercise_payments_are_unaffected_by_scaling() {
        // diverting exercise mass to the absorbing state leaves total exit
        // intensities unchanged, so payments on pre-exercise states cannot move
        let model = free_policy_model();
        let eta = 6.0;
        let mut payments = PaymentSpec {
            sojourn: vec![PaymentFn::Zero; 3],
            transition: BTreeMap::new(),
            horizon: eta,
            interest: RateFn::constant(0.03),
            duration_independent: false,
        };
        payments.sojourn[0] = PaymentFn::OfTime {
            f: RateFn::linear(1.0, -0.05),
        };
        payments
            .transition
            .insert((0, 2), PaymentFn::Constant { value: 3.0 });
        let grid = TimeGrid::uniform(0.0, eta, 90, 4).unwrap();
        let plain = expected_cashflows_reset(&model, 0.0, 0.0, &grid, &payments).unwrap();
        let spec = free_policy_spec(RateFn::constant(0.6));
        let scaled =
            scaled_cashflow(&model, &spec, Conditioning::Duration { u: 0.0 }, 0.0, &grid, &payments)
                .unwrap();
        for l in 0..plain.times.len() {
            let a = plain.rates[[0, l]];
            let b = scaled.rates[[0, l]];
            assert!((a - b).abs() < 1e-9, "node {l}: {a} vs {b}");
        }
    }

    #[test]
    fn scaling_shrinks_post_exercise_value() {
        let model = free_policy_model();
        let eta = 8.0;
        let mut payments = PaymentSpec {
            sojourn: vec![PaymentFn::Zero; 3],
            transition: BTreeMap::new(),
            horizon: eta,
            interest: RateFn::constant(0.02),
            duration_independent: false,
        };
        payments.sojourn[1] = PaymentFn::Constant { value: 1.0 };
        let grid = TimeGrid::uniform(0.0, eta, 120, 4).unwrap();
        let plain = expected_cashflows_reset(&model, 0.0, 0.0, &grid, &payments).unwrap();
        let v_plain = reserve(&plain, &payments.interest)[0];
        let spec = free_policy_spec(RateFn::constant(0.7));
        let scaled =
            scaled_cashflow(&model, &spec, Conditioning::Duration { u: 0.0 }, 0.0, &grid, &payments)
                .unwrap();
        let v_scaled = reserve(&scaled, &payments.interest)[0];
        assert!((v_scaled - 0.7 * v_plain).abs() < 1e-8, "{v_scaled} vs 0.7·{v_plain}");
    }

    #[test]
    fn post_exercise_history_is_rejected() {
        let model = free_policy_model();
        let payments = PaymentSpec {
            sojourn: vec![PaymentFn::Zero; 3],
            transition: BTreeMap::new(),
            horizon: 5.0,
            interest: RateFn::constant(0.0),
            duration_independent: false,
        };
        let grid = TimeGrid::uniform(2.0, 5.0, 30, 4).unwrap();
        let spec = free_policy_spec(RateFn::constant(0.7));
        let history = crate::mpp::History::new(vec![(1.0, 1)]).unwrap();
        assert!(matches!(
            scaled_cashflow(
                &model,
                &spec,
                Conditioning::History(&history),
                2.0,
                &grid,
                &payments
            ),
            Err(Error::Domain(_))
        ));
    }
}
