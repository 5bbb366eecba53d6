//! The duration-independent fast path against the general kernel.
//!
//! When no payment looks at the spell duration, expected cash flows only
//! need occupation probabilities of the full microstate process — one
//! forward sweep instead of a backward sweep per grid point. This example
//! values a term-insurance-style payout on the shipped disability model
//! both ways and reports agreement and timings.

use std::collections::BTreeMap;
use std::time::Instant;

use aggmark::cashflow::{
    expected_cashflows_reset, fast_path_cashflow, reserve, Conditioning, PaymentFn, PaymentSpec,
};
use aggmark::{AggregateModel, RateFn, TimeGrid};

fn main() -> aggmark::Result<()> {
    let model = AggregateModel::from_json(include_str!("data/disability.json"))?;
    let mut transition = BTreeMap::new();
    transition.insert((0, 2), PaymentFn::Constant { value: 1.0 });
    transition.insert((1, 2), PaymentFn::Constant { value: 1.0 });
    let payments = PaymentSpec {
        sojourn: vec![
            PaymentFn::Constant { value: -0.012 },
            PaymentFn::Constant { value: 0.3 },
            PaymentFn::Zero,
        ],
        transition,
        horizon: 65.0,
        interest: RateFn::constant(0.02),
        duration_independent: true,
    };
    let grid = TimeGrid::uniform(40.0, 65.0, 300, 4)?;

    let started = Instant::now();
    let fast = fast_path_cashflow(&model, Conditioning::Duration { u: 0.0 }, 40.0, &grid, &payments)?;
    let fast_time = started.elapsed();

    let started = Instant::now();
    let slow = expected_cashflows_reset(&model, 0.0, 40.0, &grid, &payments)?;
    let slow_time = started.elapsed();

    let defect = (&fast.rates - &slow.rates)
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    println!("largest cash-flow rate difference: {defect:.2e}");
    println!("fast path: {fast_time:.2?}, general kernel: {slow_time:.2?}");

    let fast_reserves = reserve(&fast, &payments.interest);
    println!("\nreserves at age 40 (death benefit 1, disability annuity 0.3, premium 0.012):");
    for (row, &(state, _)) in fast.rows.iter().enumerate() {
        println!("  state {state}: {:9.5}", fast_reserves[row]);
    }
    Ok(())
}
