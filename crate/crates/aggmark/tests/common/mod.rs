//! Fixtures and independent oracles shared by the integration tests.
//!
//! The oracles here deliberately share no code with the crate's numerics:
//! the matrix exponential is scaling-and-squaring around a Taylor core, and
//! the classical Markov-chain valuation hand-rolls its own RK4 sweep on the
//! Kolmogorov forward equation plus the textbook cash-flow display.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::{array, Array1, Array2};

use aggmark::cashflow::{PaymentFn, PaymentSpec};
use aggmark::model::ResetStructure;
use aggmark::phb::BehaviourSpec;
use aggmark::{AggregateModel, RateFn};

/// Matrix exponential by scaling and squaring around a Taylor core; good to
/// roughly 1e-13 for the moderate-norm generators used in the tests.
pub fn expm(a: &Array2<f64>) -> Array2<f64> {
    let dim = a.nrows();
    let norm = a
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.mapv(|x| x / 2f64.powi(squarings));
    let mut result = Array2::eye(dim);
    let mut term = Array2::eye(dim);
    for k in 1..60 {
        term = term.dot(&scaled) / k as f64;
        result += &term;
        if term.iter().map(|x: &f64| x.abs()).fold(0.0, f64::max) < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

/// A random conservative intensity matrix with off-diagonal rates in [0, 1).
pub fn random_generator<R: rand::Rng>(rng: &mut R, dim: usize) -> Array2<f64> {
    let mut a = Array2::zeros((dim, dim));
    for p in 0..dim {
        let mut row_sum = 0.0;
        for q in 0..dim {
            if p != q {
                let x: f64 = rng.gen();
                a[[p, q]] = x;
                row_sum += x;
            }
        }
        a[[p, p]] = -row_sum;
    }
    a
}

/// Independently coded classical Markov-chain valuation on `states` states
/// with off-diagonal rates keyed `(j, k)`.
pub struct ClassicalOracle {
    pub states: usize,
    pub rates: BTreeMap<(usize, usize), RateFn>,
    pub sojourn: Vec<PaymentFn>,
    pub transition: BTreeMap<(usize, usize), PaymentFn>,
    pub horizon: f64,
    pub interest: RateFn,
}

impl ClassicalOracle {
    fn intensity(&self, t: f64) -> Array2<f64> {
        let mut m = Array2::zeros((self.states, self.states));
        for (&(j, k), rate) in &self.rates {
            let x = rate.eval(t);
            m[[j, k]] = x;
            m[[j, j]] -= x;
        }
        m
    }

    /// Transition probability rows `p_i(times[0], s)` at every time in
    /// `times`, RK4 with `substeps` stages per interval.
    pub fn probabilities(&self, i: usize, times: &[f64], substeps: usize) -> Vec<Array1<f64>> {
        let mut p: Array1<f64> = Array1::zeros(self.states);
        p[i] = 1.0;
        let mut out = vec![p.clone()];
        for w in times.windows(2) {
            let h = (w[1] - w[0]) / substeps as f64;
            for step in 0..substeps {
                let t0 = w[0] + step as f64 * h;
                let k1 = p.dot(&self.intensity(t0));
                let k2 = (&p + &(&k1 * (h / 2.0))).dot(&self.intensity(t0 + h / 2.0));
                let k3 = (&p + &(&k2 * (h / 2.0))).dot(&self.intensity(t0 + h / 2.0));
                let k4 = (&p + &(&k3 * h)).dot(&self.intensity(t0 + h));
                p = &p + &((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0));
            }
            out.push(p.clone());
        }
        out
    }

    /// Cash-flow rates from state `i`: occupation probability times sojourn
    /// payment plus rate-weighted transition payments, cut at the horizon.
    pub fn cashflow_rates(&self, i: usize, times: &[f64], substeps: usize) -> Vec<f64> {
        let probs = self.probabilities(i, times, substeps);
        times
            .iter()
            .zip(&probs)
            .map(|(&s, p)| {
                if s > self.horizon {
                    return 0.0;
                }
                (0..self.states)
                    .map(|j| {
                        let mut flow = self.sojourn[j].eval(s, 0.0);
                        for (&(from, to), payment) in &self.transition {
                            if from == j {
                                let lambda =
                                    self.rates.get(&(from, to)).map_or(0.0, |r| r.eval(s));
                                flow += lambda * payment.eval(s, 0.0);
                            }
                        }
                        p[j] * flow
                    })
                    .sum()
            })
            .collect()
    }

    /// Prospective reserve at `times[0]`: trapezoid of the discounted rates,
    /// discount exponent itself by trapezoid of the interest curve.
    pub fn reserve(&self, i: usize, times: &[f64], substeps: usize) -> f64 {
        let rates = self.cashflow_rates(i, times, substeps);
        let mut exponent = 0.0f64;
        let mut total = 0.0;
        for w in 0..times.len() - 1 {
            let (a, b) = (times[w], times[w + 1]);
            let disc_a = (-exponent).exp();
            exponent += 0.5 * (b - a) * (self.interest.eval(a) + self.interest.eval(b));
            let disc_b = (-exponent).exp();
            total += 0.5 * (b - a) * (disc_a * rates[w] + disc_b * rates[w + 1]);
        }
        total
    }
}

/// Rates of a 3-state term-insurance chain: active, disabled, dead, with
/// Gompertz-Makeham mortality and a drifting disability rate.
pub fn term_insurance_rates() -> BTreeMap<(usize, usize), RateFn> {
    let mut rates = BTreeMap::new();
    rates.insert((0, 1), RateFn::linear(0.04, 0.002));
    rates.insert((1, 0), RateFn::constant(0.06));
    rates.insert((0, 2), RateFn::gompertz_makeham(0.002, 0.0003, 1.07));
    rates.insert((1, 2), RateFn::gompertz_makeham(0.004, 0.0005, 1.07));
    rates
}

/// Death benefit of 1, level premium while active, horizon 10.
pub fn term_insurance_payments() -> PaymentSpec {
    let mut transition = BTreeMap::new();
    transition.insert((0, 2), PaymentFn::Constant { value: 1.0 });
    transition.insert((1, 2), PaymentFn::Constant { value: 1.0 });
    PaymentSpec {
        sojourn: vec![
            PaymentFn::Constant { value: -0.03 },
            PaymentFn::Zero,
            PaymentFn::Zero,
        ],
        transition,
        horizon: 10.0,
        interest: RateFn::constant(0.03),
        duration_independent: true,
    }
}

/// Synthetic age-dependent disability model: active, disabled with `d2`
/// progression microstates, dead. Fresh disability starts mostly acute;
/// drift toward later microstates lowers the recovery rate, which makes the
/// macro process genuinely semi-Markov for `d2 ≥ 2` while `d2 = 1` is a
/// plain Markov chain.
pub fn disability_model(d2: usize) -> AggregateModel {
    assert!(d2 >= 1);
    let onset = RateFn::gompertz_makeham(0.0, 0.0008, 1.06);
    let active_mortality = RateFn::gompertz_makeham(0.0005, 5e-5, 1.09);
    let disabled_mortality = RateFn::gompertz_makeham(0.001, 1e-4, 1.09);
    let drift = 0.5;
    let recovery = |q: usize| 0.35 * 0.4f64.powi(q as i32);
    let mortality_factor = |q: usize| 2.0 + q as f64;

    let diag0 = vec![vec![RateFn::neg_sum(vec![
        onset.clone(),
        active_mortality.clone(),
    ])]];
    let mut diag1 = vec![vec![RateFn::constant(0.0); d2]; d2];
    for (q, row) in diag1.iter_mut().enumerate() {
        let mut outflow = vec![
            RateFn::constant(recovery(q)),
            RateFn::scaled(mortality_factor(q), disabled_mortality.clone()),
        ];
        if q + 1 < d2 {
            row[q + 1] = RateFn::constant(drift);
            outflow.push(RateFn::constant(drift));
        }
        row[q] = RateFn::neg_sum(outflow);
    }
    let diag2 = vec![vec![RateFn::constant(0.0)]];

    let mut beta = BTreeMap::new();
    beta.insert((0, 1), vec![onset]);
    beta.insert((0, 2), vec![active_mortality]);
    beta.insert(
        (1, 0),
        (0..d2).map(|q| RateFn::constant(recovery(q))).collect(),
    );
    beta.insert(
        (1, 2),
        (0..d2)
            .map(|q| RateFn::scaled(mortality_factor(q), disabled_mortality.clone()))
            .collect(),
    );
    let entry = if d2 == 1 {
        vec![RateFn::constant(1.0)]
    } else {
        let mut entry = vec![RateFn::constant(0.85)];
        entry.extend((1..d2).map(|_| RateFn::constant(0.15 / (d2 - 1) as f64)));
        entry
    };
    let pi = vec![
        vec![RateFn::constant(1.0)],
        entry,
        vec![RateFn::constant(1.0)],
    ];

    AggregateModel::from_reset(
        vec![1, d2, 1],
        vec![diag0, diag1, diag2],
        ResetStructure::new(beta, pi),
        array![1.0],
    )
    .unwrap()
}

/// Disability annuity of rate 1 with a 3-month waiting period, payable
/// while disabled until retirement at 65.
pub fn disability_payments() -> PaymentSpec {
    PaymentSpec {
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
    }
}

/// A genuinely non-reset model: two communicating macrostates with two
/// microstates each and full-rank cross blocks, one rate drifting in time.
pub fn general_two_state() -> AggregateModel {
    let up = RateFn::linear(0.25, 0.02);
    let mut cross = BTreeMap::new();
    cross.insert(
        (0, 1),
        vec![
            vec![RateFn::constant(0.20), RateFn::constant(0.10)],
            vec![RateFn::constant(0.05), up.clone()],
        ],
    );
    cross.insert(
        (1, 0),
        vec![
            vec![RateFn::constant(0.15), RateFn::constant(0.05)],
            vec![RateFn::constant(0.10), RateFn::constant(0.05)],
        ],
    );
    let diag0 = vec![
        vec![
            RateFn::neg_sum(vec![
                RateFn::constant(0.30),
                RateFn::constant(0.20),
                RateFn::constant(0.10),
            ]),
            RateFn::constant(0.30),
        ],
        vec![
            RateFn::constant(0.10),
            RateFn::neg_sum(vec![RateFn::constant(0.10), RateFn::constant(0.05), up]),
        ],
    ];
    let diag1 = vec![
        vec![
            RateFn::neg_sum(vec![
                RateFn::constant(0.25),
                RateFn::constant(0.15),
                RateFn::constant(0.05),
            ]),
            RateFn::constant(0.25),
        ],
        vec![
            RateFn::constant(0.05),
            RateFn::neg_sum(vec![
                RateFn::constant(0.05),
                RateFn::constant(0.10),
                RateFn::constant(0.05),
            ]),
        ],
    ];
    AggregateModel::from_blocks(vec![2, 2], vec![diag0, diag1], cross, array![0.7, 0.3]).unwrap()
}

/// A lively two-macrostate reset model whose disabled entry law drifts in
/// time via a logistic weight.
pub fn reset_two_state() -> AggregateModel {
    let acute_weight = RateFn::Logistic {
        floor: 0.2,
        cap: 0.8,
        slope: 0.4,
        midpoint: 4.0,
    };
    let diag0 = vec![vec![RateFn::constant(-0.45)]];
    let diag1 = vec![
        vec![
            RateFn::neg_sum(vec![RateFn::constant(0.35), RateFn::constant(0.55)]),
            RateFn::constant(0.35),
        ],
        vec![
            RateFn::constant(0.10),
            RateFn::neg_sum(vec![RateFn::constant(0.10), RateFn::constant(0.15)]),
        ],
    ];
    let mut beta = BTreeMap::new();
    beta.insert((0, 1), vec![RateFn::constant(0.45)]);
    beta.insert((1, 0), vec![RateFn::constant(0.55), RateFn::constant(0.15)]);
    let pi = vec![
        vec![RateFn::constant(1.0)],
        vec![acute_weight.clone(), RateFn::one_minus(acute_weight)],
    ];
    AggregateModel::from_reset(
        vec![1, 2],
        vec![diag0, diag1],
        ResetStructure::new(beta, pi),
        array![1.0],
    )
    .unwrap()
}

/// Active (two microstates), free policy, dead — the policyholder-behaviour
/// playground.
pub fn free_policy_model() -> AggregateModel {
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
    // initial law equals the entry law so that paths sampled from the start
    // follow the same law as duration-zero conditioning at time 0
    AggregateModel::from_reset(
        vec![2, 1, 1],
        vec![diag0, diag1, diag2],
        ResetStructure::new(beta, pi),
        array![0.8, 0.2],
    )
    .unwrap()
}

/// Premium while active, annuity after the free-policy switch, death
/// benefits out of both states.
pub fn free_policy_payments() -> PaymentSpec {
    let mut transition = BTreeMap::new();
    transition.insert((0, 2), PaymentFn::Constant { value: 1.0 });
    transition.insert((1, 2), PaymentFn::Constant { value: 0.8 });
    PaymentSpec {
        sojourn: vec![
            PaymentFn::Constant { value: -0.10 },
            PaymentFn::Constant { value: 0.5 },
            PaymentFn::Zero,
        ],
        transition,
        horizon: 15.0,
        interest: RateFn::constant(0.03),
        duration_independent: true,
    }
}

/// Free-policy behaviour: state 1 is the scaled post-exercise state.
pub fn free_policy_behaviour(rho: RateFn) -> BehaviourSpec {
    let mut scaling = BTreeMap::new();
    scaling.insert((0, 1), rho);
    BehaviourSpec {
        pre_exercise: vec![0],
        post_exercise: vec![1, 2],
        scaling,
    }
}

/// Benchmark model with microstate counts (2, 4, 2): three communicating
/// macrostates, all transition rates at most 0.5 on the span [0, 2].
pub fn bench_model() -> AggregateModel {
    let drifting = RateFn::linear(0.2, 0.1);
    let diag0 = vec![
        vec![
            RateFn::neg_sum(vec![
                RateFn::constant(0.25),
                drifting.clone(),
                RateFn::constant(0.05),
            ]),
            RateFn::constant(0.25),
        ],
        vec![
            RateFn::constant(0.15),
            RateFn::neg_sum(vec![
                RateFn::constant(0.15),
                RateFn::constant(0.20),
                RateFn::constant(0.10),
            ]),
        ],
    ];
    let ring = 0.2;
    let exits1 = [(0.15, 0.10), (0.10, 0.05), (0.05, 0.15), (0.20, 0.05)];
    let mut diag1 = vec![vec![RateFn::constant(0.0); 4]; 4];
    for (q, row) in diag1.iter_mut().enumerate() {
        let next = (q + 1) % 4;
        let within = if q == 3 { 0.1 } else { ring };
        row[next] = RateFn::constant(within);
        row[q] = RateFn::neg_sum(vec![
            RateFn::constant(within),
            RateFn::constant(exits1[q].0),
            RateFn::constant(exits1[q].1),
        ]);
    }
    let diag2 = vec![
        vec![
            RateFn::neg_sum(vec![
                RateFn::constant(0.30),
                RateFn::constant(0.05),
                RateFn::constant(0.10),
            ]),
            RateFn::constant(0.30),
        ],
        vec![
            RateFn::constant(0.25),
            RateFn::neg_sum(vec![
                RateFn::constant(0.25),
                RateFn::constant(0.10),
                RateFn::constant(0.05),
            ]),
        ],
    ];
    let mut beta = BTreeMap::new();
    beta.insert((0, 1), vec![drifting, RateFn::constant(0.20)]);
    beta.insert((0, 2), vec![RateFn::constant(0.05), RateFn::constant(0.10)]);
    beta.insert(
        (1, 0),
        vec![
            RateFn::constant(0.15),
            RateFn::constant(0.10),
            RateFn::constant(0.05),
            RateFn::constant(0.20),
        ],
    );
    beta.insert(
        (1, 2),
        vec![
            RateFn::constant(0.10),
            RateFn::constant(0.05),
            RateFn::constant(0.15),
            RateFn::constant(0.05),
        ],
    );
    beta.insert((2, 0), vec![RateFn::constant(0.05), RateFn::constant(0.10)]);
    beta.insert((2, 1), vec![RateFn::constant(0.10), RateFn::constant(0.05)]);
    let pi = vec![
        vec![RateFn::constant(0.6), RateFn::constant(0.4)],
        vec![
            RateFn::constant(0.4),
            RateFn::constant(0.3),
            RateFn::constant(0.2),
            RateFn::constant(0.1),
        ],
        vec![RateFn::constant(0.5), RateFn::constant(0.5)],
    ];
    AggregateModel::from_reset(
        vec![2, 4, 2],
        vec![diag0, diag1, diag2],
        ResetStructure::new(beta, pi),
        array![0.6, 0.4],
    )
    .unwrap()
}

/// Duration-independent payments for the benchmark model.
pub fn bench_payments() -> PaymentSpec {
    let mut transition = BTreeMap::new();
    transition.insert((0, 1), PaymentFn::Constant { value: 0.5 });
    PaymentSpec {
        sojourn: vec![
            PaymentFn::Constant { value: 1.0 },
            PaymentFn::Constant { value: 0.5 },
            PaymentFn::Constant { value: 0.25 },
        ],
        transition,
        horizon: 2.0,
        interest: RateFn::constant(0.02),
        duration_independent: true,
    }
}
