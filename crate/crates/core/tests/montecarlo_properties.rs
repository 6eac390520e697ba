use mfcce::abatement::*;
use mfcce::grid_ode::At;
use mfcce::moments::{expected_payoff, AffinePolicy, Gain};
use mfcce::montecarlo::*;
use mfcce::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn session(nu2: f64, n: usize) -> Session {
    let p = AbatementParams::new(2.0, 1.0, 1.0, 0.1, nu2, 5.0).unwrap();
    Session::new(map_to_lq(&p), TimeGrid::new(5.0, n).unwrap()).unwrap()
}

fn fig1_flow(s: &Session) -> CorrelatedFlow {
    let law = LinearFlowLaw::new(0.6, 0.06).unwrap().to_scenario_law().unwrap();
    build_flow(s, &law).unwrap()
}

/// Euler–Maruyama bias halves when the step halves.
#[test]
fn weak_error_is_first_order() {
    let bias = |n: usize| {
        let s = session(0.02, n);
        let f = fig1_flow(&s);
        let exact = f.payoff(&s).unwrap().total;
        let r = simulate_flow(&s, &f, &SimConfig::new(200_000, 7).unwrap().antithetic(true)).unwrap();
        (r.payoff.mean - exact, r.payoff.std_error)
    };
    let (b20, se20) = bias(20);
    let (b40, se40) = bias(40);
    assert!(b20.abs() > 20.0 * se20 && b40.abs() > 20.0 * se40, "{b20} ({se20}) {b40} ({se40})");
    let ratio = b20 / b40;
    assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}: {b20} / {b40}");
}

/// Scenario-blind feedbacks around the best deviation: random constant and
/// linear offset shifts, plus gain shifts.
fn perturbations(s: &Session, best: &AffinePolicy, count: usize) -> Vec<AffinePolicy> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = *s.grid();
    (0..count)
        .map(|k| {
            let c0: f64 = rng.random_range(-0.6..0.6);
            let c1: f64 = rng.random_range(-0.15..0.15);
            let offset = Trajectory::from_fn(grid, |i, t| {
                best.offsets[0].get(i) + DVector::from_element(1, c0 + c1 * t)
            });
            let gain = if k % 2 == 0 {
                Gain::Feedback
            } else {
                let dk: f64 = rng.random_range(-0.5..0.5);
                Gain::Table(Trajectory::from_fn(grid, |i, _| {
                    s.feedback(At::Node(i)).neg_gain.clone() + DMatrix::from_element(1, 1, dk)
                }))
            };
            AffinePolicy {
                gain,
                offsets: vec![offset],
            }
        })
        .collect()
}

#[test]
fn best_deviation_beats_perturbed_feedbacks() {
    let s = session(0.02, 200);
    let f = fig1_flow(&s);
    let best = f.deviation.policy();
    let others = perturbations(&s, &best, 10);
    let mut policies = vec![&best];
    policies.extend(others.iter());
    let batch = simulate_policies(&s, &policies, &f.flows, f.law.weights(), &SimConfig::new(20_000, 5).unwrap(), false)
        .unwrap();
    let j_best = expected_payoff(&s, &best, &f.flows, f.law.weights()).unwrap().total;
    for (k, p) in others.iter().enumerate() {
        let gap = j_best - expected_payoff(&s, p, &f.flows, f.law.weights()).unwrap().total;
        let est = batch.differences[k + 1];
        assert!(gap > 0.0, "policy {k}: analytic gap {gap}");
        assert!(est.mean < 0.0, "policy {k}: estimated difference {est:?}");
        if gap > 5.0 * est.std_error {
            assert!(-est.mean > 3.0 * est.std_error, "policy {k}: gap {gap}, estimate {est:?}");
        }
    }
}

#[test]
fn reference_flow_survives_simulated_deviation() {
    let s = session(0.02, 200);
    let f = fig1_flow(&s);
    let batch = simulate_deviation(&s, &f, &f.deviation.policy(), &SimConfig::new(50_000, 9).unwrap()).unwrap();
    let diff = batch.differences[1];
    assert!(diff.mean <= 3.0 * diff.std_error, "J(best) − J(flow) = {diff:?}");
}

#[test]
fn antithetic_sampling_never_raises_standard_error() {
    let s = session(0.02, 100);
    let flows: Vec<CorrelatedFlow> = [(0.6, 0.06), (0.3, 0.0), (1.0, 0.4)]
        .iter()
        .map(|&(z1, s2)| build_flow(&s, &LinearFlowLaw::new(z1, s2).unwrap().to_scenario_law().unwrap()).unwrap())
        .collect();
    for (k, f) in flows.iter().enumerate() {
        for seed in [1u64, 2, 3] {
            let plain = simulate_flow(&s, f, &SimConfig::new(10_000, seed).unwrap()).unwrap();
            let anti = simulate_flow(&s, f, &SimConfig::new(10_000, seed).unwrap().antithetic(true)).unwrap();
            assert!(
                anti.payoff.std_error <= plain.payoff.std_error,
                "flow {k} seed {seed}: {} > {}",
                anti.payoff.std_error,
                plain.payoff.std_error
            );
        }
    }
}
