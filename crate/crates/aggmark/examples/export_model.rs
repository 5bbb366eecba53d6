//! Build the disability model in code and write it as a JSON model file
//! for the `aggmark` command line (the shipped `examples/data/disability.json`
//! was produced by this example).
//!
//! Usage: `cargo run --example export_model -- [path]`
//!
//! Active and dead are plain states; the disabled macrostate hides two
//! microstates. Fresh disabilities start mostly in the acute microstate,
//! which recovers quickly; a constant drift moves long spells into the
//! chronic microstate with a lower recovery rate and higher mortality. The
//! longer a spell has lasted, the more chronic weight the duration carries,
//! so recovery prospects — and reserves — genuinely depend on duration.

use std::collections::BTreeMap;

use ndarray::array;

use aggmark::{AggregateModel, RateFn, ResetStructure};

fn disability_model() -> AggregateModel {
    let onset = RateFn::gompertz_makeham(0.0, 0.0008, 1.06);
    let active_mortality = RateFn::gompertz_makeham(0.0005, 5e-5, 1.09);
    let disabled_mortality = RateFn::gompertz_makeham(0.001, 1e-4, 1.09);
    let drift = RateFn::constant(0.5);
    let recovery = [RateFn::constant(0.35), RateFn::constant(0.14)];
    let mortality = [
        RateFn::scaled(2.0, disabled_mortality.clone()),
        RateFn::scaled(3.0, disabled_mortality),
    ];

    let diag0 = vec![vec![RateFn::neg_sum(vec![
        onset.clone(),
        active_mortality.clone(),
    ])]];
    let diag1 = vec![
        vec![
            RateFn::neg_sum(vec![
                recovery[0].clone(),
                mortality[0].clone(),
                drift.clone(),
            ]),
            drift,
        ],
        vec![
            RateFn::constant(0.0),
            RateFn::neg_sum(vec![recovery[1].clone(), mortality[1].clone()]),
        ],
    ];
    let diag2 = vec![vec![RateFn::constant(0.0)]];

    let mut beta = BTreeMap::new();
    beta.insert((0, 1), vec![onset]);
    beta.insert((0, 2), vec![active_mortality]);
    beta.insert((1, 0), recovery.to_vec());
    beta.insert((1, 2), mortality.to_vec());
    let pi = vec![
        vec![RateFn::constant(1.0)],
        vec![RateFn::constant(0.85), RateFn::constant(0.15)],
        vec![RateFn::constant(1.0)],
    ];

    AggregateModel::from_reset(
        vec![1, 2, 1],
        vec![diag0, diag1, diag2],
        ResetStructure::new(beta, pi),
        array![1.0],
    )
    .expect("model is well-formed")
}

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "disability.json".into());
    let model = disability_model();
    std::fs::write(&path, model.to_json()).expect("model file is writable");
    println!(
        "wrote {path}: {} macrostates, microstate counts {:?}",
        model.macro_count(),
        model.micro_counts()
    );
}
