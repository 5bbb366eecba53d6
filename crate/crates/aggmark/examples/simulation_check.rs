//! Monte Carlo verification of an analytic valuation.
//!
//! Simulates paths of the shipped disability model by thinning, evaluates
//! the discounted payment stream along each path, and compares the sample
//! mean against the analytic reserve — the same check `aggmark verify`
//! runs, spelled out with the library API.

use std::collections::BTreeMap;

use aggmark::cashflow::{expected_cashflow_reset, reserve, PaymentFn, PaymentSpec};
use aggmark::sim::{discounted_payments, monte_carlo, PathSampler};
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
    let n_paths = 20_000;

    println!("disability annuity reserve at 40, analytic vs {n_paths} simulated paths:");
    println!("{:>6} {:>10} {:>10} {:>9} {:>6}", "u", "analytic", "mc mean", "se", "z");
    for (row, &u) in [0.0, 1.0].iter().enumerate() {
        let table = expected_cashflow_reset(&model, 1, u, 40.0, &grid, &payments)?;
        let analytic = reserve(&table, &payments.interest)[0];
        let sampler = PathSampler::Conditioned {
            state: 1,
            duration: u,
            at: 40.0,
            horizon: 65.0,
        };
        let estimate = monte_carlo(&model, &sampler, n_paths, 7 + row as u64, |path| {
            discounted_payments(path, &payments, 40.0)
        })?;
        println!(
            "{u:6.2} {analytic:10.5} {:10.5} {:9.5} {:6.2}",
            estimate.mean,
            estimate.std_error,
            estimate.z_score(analytic)
        );
    }
    Ok(())
}
