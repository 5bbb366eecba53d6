//! Transition probability matrices by product integration.
//!
//! Builds a classical illness-death chain with age-dependent rates, computes
//! `P(t, s)` as a product integral of the intensity matrix, and checks the
//! Chapman-Kolmogorov factorization through an interior time point.

use std::collections::BTreeMap;

use aggmark::prodint::product_integral;
use aggmark::{AggregateModel, RateFn, TimeGrid};

fn main() -> aggmark::Result<()> {
    let mut rates = BTreeMap::new();
    rates.insert((0, 1), RateFn::linear(0.04, 0.002));
    rates.insert((1, 0), RateFn::constant(0.06));
    rates.insert((0, 2), RateFn::gompertz_makeham(0.002, 0.0003, 1.07));
    rates.insert((1, 2), RateFn::gompertz_makeham(0.004, 0.0005, 1.07));
    let model = AggregateModel::markov_chain(3, rates)?;

    let grid = TimeGrid::uniform(0.0, 10.0, 200, 10)?;
    let intensity = model.full_intensity();
    let p = product_integral(&intensity, 0.0, 10.0, &grid)?;

    println!("P(0, 10) for the active / disabled / dead chain:");
    for row in p.rows() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:8.5}")).collect();
        println!("  [{}]", cells.join(" "));
    }
    println!("row sums: {:?}", p.rows().into_iter().map(|r| r.sum()).collect::<Vec<_>>());

    // the flow over [0, 10] factors through any interior point
    let first = product_integral(&intensity, 0.0, 4.0, &grid)?;
    let second = product_integral(&intensity, 4.0, 10.0, &grid)?;
    let defect = (&p - &first.dot(&second))
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    println!("Chapman-Kolmogorov defect through t=4: {defect:.2e}");
    Ok(())
}
