//! Expected cash flows and reserves of a disability annuity with a
//! three-month waiting period, conditioned on the running spell duration.
//!
//! This is the library equivalent of `aggmark run examples/data/valuation.json`:
//! a disabled policyholder at age 40 earns an annuity of rate 1 until 65,
//! but only while the current spell is older than a quarter year. Because
//! the disabled macrostate hides an acute and a chronic microstate, the
//! reserve genuinely depends on how long the spell has already lasted.

use std::collections::BTreeMap;

use aggmark::cashflow::{expected_cashflow_reset, reserve, PaymentFn, PaymentSpec};
use aggmark::{AggregateModel, RateFn, TimeGrid};

fn main() -> aggmark::Result<()> {
    let model = AggregateModel::from_json(include_str!("data/disability.json"))?;
    let payments = PaymentSpec {
        sojourn: vec![
            PaymentFn::Zero,
            PaymentFn::Product {
                factors: vec![
                    PaymentFn::TimeBefore { threshold: 65.0 },
                    PaymentFn::DurationAbove { threshold: 0.25 },
                ],
            },
            PaymentFn::Zero,
        ],
        transition: BTreeMap::new(),
        horizon: 65.0,
        interest: RateFn::constant(0.02),
        duration_independent: false,
    };
    let grid = TimeGrid::uniform(40.0, 65.0, 300, 4)?;

    println!("expected cash-flow rates from a disabled 40-year-old:");
    println!("{:>6} {:>10} {:>10}", "age", "u=0", "u=1");
    let fresh = expected_cashflow_reset(&model, 1, 0.0, 40.0, &grid, &payments)?;
    let seasoned = expected_cashflow_reset(&model, 1, 1.0, 40.0, &grid, &payments)?;
    for &age in &[40.5f64, 41.0, 43.0, 45.0, 50.0, 60.0] {
        let idx = ((age - 40.0) * 12.0).round() as usize;
        println!(
            "{age:6.1} {:10.5} {:10.5}",
            fresh.rates[[0, idx]],
            seasoned.rates[[0, idx]]
        );
    }

    println!("\nreserves by running spell duration:");
    println!("{:>6} {:>10}", "u", "reserve");
    for &u in &[0.0, 0.25, 0.5, 1.0, 2.0, 5.0] {
        let table = expected_cashflow_reset(&model, 1, u, 40.0, &grid, &payments)?;
        println!("{u:6.2} {:10.5}", reserve(&table, &payments.interest)[0]);
    }
    Ok(())
}
