//! Valuing a free-policy option by state augmentation and payment scaling.
//!
//! Before exercise the policyholder pays premiums and is covered in full;
//! after switching to free policy the premium stops and every payment
//! originating from post-exercise states is scaled by a factor ρ fixed at
//! the moment of exercise. The transform rebuilds the model with scaled
//! post-exercise payments and a bookkeeping macrostate, so the usual
//! cash-flow machinery values the option without any duration tricks.

use std::collections::BTreeMap;

use ndarray::array;

use aggmark::cashflow::{
    expected_cashflows_reset, reserve, Conditioning, PaymentFn, PaymentSpec,
};
use aggmark::phb::{scaled_cashflow, BehaviourSpec};
use aggmark::{AggregateModel, RateFn, ResetStructure, TimeGrid};

fn model_with_exercise_rate(exercise: f64) -> aggmark::Result<AggregateModel> {
    let mortality = RateFn::gompertz_makeham(0.002, 0.0004, 1.08);
    let diag0 = vec![vec![RateFn::neg_sum(vec![
        RateFn::constant(exercise),
        mortality.clone(),
    ])]];
    let diag1 = vec![vec![RateFn::neg_sum(vec![mortality.clone()])]];
    let diag2 = vec![vec![RateFn::constant(0.0)]];
    let mut beta = BTreeMap::new();
    beta.insert((0, 1), vec![RateFn::constant(exercise)]);
    beta.insert((0, 2), vec![mortality.clone()]);
    beta.insert((1, 2), vec![mortality]);
    let pi = vec![
        vec![RateFn::constant(1.0)],
        vec![RateFn::constant(1.0)],
        vec![RateFn::constant(1.0)],
    ];
    AggregateModel::from_reset(
        vec![1, 1, 1],
        vec![diag0, diag1, diag2],
        ResetStructure::new(beta, pi),
        array![1.0],
    )
}

fn main() -> aggmark::Result<()> {
    // premium-paying, free policy, dead
    let mut transition = BTreeMap::new();
    transition.insert((0, 2), PaymentFn::Constant { value: 1.0 });
    transition.insert((1, 2), PaymentFn::Constant { value: 1.0 });
    let payments = PaymentSpec {
        sojourn: vec![
            PaymentFn::Constant { value: -0.015 },
            PaymentFn::Zero,
            PaymentFn::Zero,
        ],
        transition,
        horizon: 20.0,
        interest: RateFn::constant(0.03),
        duration_independent: true,
    };
    let mut scaling = BTreeMap::new();
    // conversion factor grows toward 1 the later the option is exercised
    scaling.insert(
        (0, 1),
        RateFn::Logistic {
            floor: 0.55,
            cap: 0.4,
            slope: 0.25,
            midpoint: 8.0,
        },
    );
    let spec = BehaviourSpec {
        pre_exercise: vec![0],
        post_exercise: vec![1, 2],
        scaling,
    };
    let grid = TimeGrid::uniform(0.0, 20.0, 400, 4)?;

    println!("death cover 1 until 20, premium 0.015, free-policy factor in [0.55, 0.95):");
    println!("{:>14} {:>12} {:>12}", "exercise rate", "no option", "with option");
    for &exercise in &[0.0, 0.02, 0.05, 0.10] {
        let model = model_with_exercise_rate(exercise)?;
        let plain = {
            let table = expected_cashflows_reset(&model, 0.0, 0.0, &grid, &payments)?;
            reserve(&table, &payments.interest)[0]
        };
        let scaled = {
            let table = scaled_cashflow(
                &model,
                &spec,
                Conditioning::Duration { u: 0.0 },
                0.0,
                &grid,
                &payments,
            )?;
            reserve(&table, &payments.interest)[table.row_for_state(0).expect("state 0 row")]
        };
        println!("{exercise:14.2} {plain:12.5} {scaled:12.5}");
    }
    Ok(())
}
