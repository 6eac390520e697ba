//! Acceptance criteria 1 to 8. Each criterion prints one PASS/FAIL line with
//! its measured quantities and wall-clock time.

use std::time::{Duration, Instant};

use mfcce::abatement::{
    gl_verdict, linear_class_coefficients, map_to_lq, maximal_payoff_cce, outperformance_region,
    payoff_offset, AbatementParams, LinearFlowLaw,
};
use mfcce::flows::DeltaPath;
use mfcce::grid_ode::{TimeGrid, Trajectory};
use mfcce::lq_model::{Coef, InitialLaw, LqModel};
use mfcce::montecarlo::{simulate_deviation, simulate_flow, simulate_policies, SimConfig};
use mfcce::{build_flow, check_cce, Benchmarks, ScenarioLaw, Session};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 2000;
const T: f64 = 5.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn ok(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn fig1_params() -> AbatementParams {
    AbatementParams::new(2.0, 1.0, 1.0, 0.1, 0.01, T).unwrap()
}

fn session(p: &AbatementParams, n: usize) -> Session {
    Session::new(map_to_lq(p), TimeGrid::new(p.horizon, n).unwrap()).unwrap()
}

fn tanh_form(c: f64, t: f64) -> f64 {
    c.sqrt() * (c.sqrt() * (T - t)).tanh()
}

fn riccati_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for (eps, b) in [(1.0, 1.0), (0.5, 2.0), (3.0, 0.2)] {
        let p = AbatementParams::new(2.0, b, eps, 0.1, 0.01, T).unwrap();
        let s = session(&p, N);
        let coeffs = linear_class_coefficients(&p, s.grid()).unwrap();
        let bench = Benchmarks::solve(&s).unwrap();
        for i in 0..s.grid().len() {
            let t = s.grid().time(i);
            worst = worst.max((s.phi().get(i)[(0, 0)] - tanh_form(eps, t)).abs());
            worst = worst.max((coeffs.phi.get(i) - tanh_form(eps, t)).abs());
            worst = worst.max((bench.mfc.phi_mfc.get(i)[(0, 0)] - tanh_form(b, t)).abs());
        }
    }
    ok(worst <= 1e-8, format!("max error {worst:.3e}"))
}

fn sign_results() -> Outcome {
    let mut cm_bad = 0;
    let mut cv_bad = 0;
    let mut flagged = 0;
    for i in 0..10 {
        let eps = 0.2 + 2.8 * i as f64 / 9.0;
        for j in 0..10 {
            let horizon = 1.0 + 7.0 * j as f64 / 9.0;
            let p = AbatementParams::new(2.0, 1.0, eps, 0.1, 0.01, horizon).unwrap();
            let c = linear_class_coefficients(&p, &TimeGrid::new(horizon, N).unwrap()).unwrap();
            if c.c_m >= 0.0 {
                cm_bad += 1;
            }
            let x = eps * horizon * horizon;
            // quadrature tolerance, relative to the size of the integrals
            if (x - 3.0).abs() < 1e-6 * x.max(3.0) || c.c_v.abs() < 1e-9 * horizon {
                flagged += 1;
                continue;
            }
            if (c.c_v > 0.0) != (x >= 3.0) {
                cv_bad += 1;
            }
        }
    }
    ok(
        cm_bad == 0 && cv_bad == 0,
        format!("c_M sign failures {cm_bad}, c_V sign failures {cv_bad}, boundary points {flagged}"),
    )
}

fn fig1_configuration() -> Outcome {
    let p = fig1_params();
    let s = session(&p, N);
    let coeffs = linear_class_coefficients(&p, s.grid()).unwrap();
    let law = LinearFlowLaw::new(0.6, 0.06).unwrap();
    let closed = gl_verdict(&p, &coeffs, &law);
    let bench = Benchmarks::solve(&s).unwrap();
    let flow = build_flow(&s, &law.to_scenario_law().unwrap()).unwrap();
    let j = flow.payoff(&s).unwrap().total;
    let (ne, mfc) = (bench.ne.payoff.total, bench.mfc.payoff.total);
    let mu_t = flow.mean_flow.last()[0];
    let x_t = bench.mfc.x_bar.last()[0];
    let pass = closed.is_cce
        && closed.outperforms_ne
        && j - ne > 1e-6
        && mfc - j > 1e-6
        && mu_t > x_t
        && x_t > p.nu1;
    ok(
        pass,
        format!(
            "is_cce {} outperforms {} | J_NE {ne:.6} J_CCE {j:.6} J_MFC {mfc:.6} | E[mu_T] {mu_t:.4} xbar_T {x_t:.4}",
            closed.is_cce, closed.outperforms_ne
        ),
    )
}

fn closed_form_equivalence() -> Outcome {
    let p = fig1_params();
    let s = session(&p, N);
    let coeffs = linear_class_coefficients(&p, s.grid()).unwrap();
    let region = outperformance_region(&p, &coeffs, 2);
    let bench = Benchmarks::solve(&s).unwrap();
    let z_hi = 1.05 * region.upper_slope;
    let s_hi = 0.3;
    let mut disagreements = 0;
    let mut worst_rel: f64 = 0.0;
    let mut worst_closed: f64 = 0.0;
    for i in 0..50 {
        let z1 = z_hi * i as f64 / 49.0;
        for k in 0..50 {
            let sigma2 = s_hi * k as f64 / 49.0;
            let law = LinearFlowLaw::new(z1, sigma2).unwrap();
            let closed = gl_verdict(&p, &coeffs, &law);
            let v = check_cce(&s, &bench, &law.to_scenario_law().unwrap()).unwrap();
            if v.is_cce != closed.is_cce || v.outperforms_ne != closed.outperforms_ne {
                disagreements += 1;
            }
            let diff = v.payoffs.flow - v.payoffs.ne;
            let scale = diff.abs().max(f64::MIN_POSITIVE);
            worst_rel = worst_rel.max((v.outperformance.value - diff).abs() / scale);
            worst_closed = worst_closed.max((payoff_offset(&p, &law) - diff).abs() / scale);
        }
    }
    ok(
        disagreements == 0 && worst_rel <= 1e-6 && worst_closed <= 1e-6,
        format!(
            "window z1 [0, {z_hi:.4}] x sigma2 [0, {s_hi}] | disagreements {disagreements} | outperf vs J_flow - J_NE rel {worst_rel:.3e}, closed-form offset rel {worst_closed:.3e}"
        ),
    )
}

fn region_criterion() -> Outcome {
    let mut bad = Vec::new();
    for a in [0.0, 0.05, 0.1, 0.2] {
        for eps in [0.2, 1.0, 3.0] {
            let p = AbatementParams::new(a, 1.0, eps, 0.1, 0.01, T).unwrap();
            let coeffs = linear_class_coefficients(&p, &TimeGrid::new(T, N).unwrap()).unwrap();
            let region = outperformance_region(&p, &coeffs, 400);
            let expected = p.net_benefit() > 0.0;
            // the region must also contain a point off the origin exactly when nonempty
            let witness = if region.nonempty {
                let z = 0.5 * region.z1_max();
                let mid = 0.5 * (region.lower_at(z) + region.upper_at(z));
                let law = LinearFlowLaw::new(z, mid).unwrap();
                let v = gl_verdict(&p, &coeffs, &law);
                v.is_cce && v.outperforms_ne && z > 0.0
            } else {
                true
            };
            if region.nonempty != expected || !witness {
                bad.push(format!("a={a} eps={eps}"));
            }
        }
    }
    ok(bad.is_empty(), format!("mismatches {bad:?}"))
}

fn maximizer() -> Outcome {
    let p = fig1_params();
    let coeffs = linear_class_coefficients(&p, &TimeGrid::new(T, N).unwrap()).unwrap();
    let best = maximal_payoff_cce(&p, &coeffs).unwrap();
    let kappa = coeffs.ratio();
    let region = outperformance_region(&p, &coeffs, 400);
    let step = 1e-3;
    let mut arg = 0.0;
    let mut top = f64::NEG_INFINITY;
    let mut z = 0.0;
    while z <= region.z1_max() + step {
        let law = LinearFlowLaw::new(z, kappa * z * z).unwrap();
        let v = payoff_offset(&p, &law);
        if v > top {
            top = v;
            arg = z;
        }
        z += step;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut dominated = 0;
    for _ in 0..5000 {
        let z1 = rng.random::<f64>() * region.z1_max();
        let lo = region.lower_at(z1);
        let hi = region.upper_at(z1);
        if hi < lo {
            continue;
        }
        let s2 = lo + rng.random::<f64>() * (hi - lo);
        let law = LinearFlowLaw::new(z1, s2).unwrap();
        if payoff_offset(&p, &law) > best.payoff_offset + 1e-12 {
            dominated += 1;
        }
    }
    let inside = region.contains(best.z1, best.sigma2);
    ok(
        (best.z1 - arg).abs() <= step && dominated == 0 && inside,
        format!(
            "z1* {:.6} grid argmax {arg:.3} sigma2* {:.6} | sampled points above maximizer {dominated} | inside region {inside}",
            best.z1, best.sigma2
        ),
    )
}

fn monte_carlo() -> Outcome {
    let p = AbatementParams::new(2.0, 1.0, 1.0, 0.1, 0.02, T).unwrap();
    let s = session(&p, N);
    let bench = Benchmarks::solve(&s).unwrap();
    let cfg = SimConfig::new(100_000, 42).unwrap();

    let flow = build_flow(&s, &LinearFlowLaw::new(0.6, 0.06).unwrap().to_scenario_law().unwrap()).unwrap();
    let rep = simulate_flow(&s, &flow, &cfg).unwrap();
    let resid = rep.consistency_residual_se.unwrap();
    let z_cce = rep.payoff.z_score(flow.payoff(&s).unwrap().total);

    let ne = simulate_policies(&s, &[&bench.ne.policy], std::slice::from_ref(&bench.ne.m_hat), &[1.0], &cfg, false)
        .unwrap();
    let z_ne = ne.reports[0].payoff.z_score(bench.ne.payoff.total);
    let mfc = simulate_policies(&s, &[&bench.mfc.policy], std::slice::from_ref(&bench.mfc.x_bar), &[1.0], &cfg, false)
        .unwrap();
    let z_mfc = mfc.reports[0].payoff.z_score(bench.mfc.payoff.total);

    let bad = build_flow(&s, &LinearFlowLaw::new(0.5, 0.0).unwrap().to_scenario_law().unwrap()).unwrap();
    let dev = simulate_deviation(&s, &bad, &bad.deviation.policy(), &cfg).unwrap();
    let gain = dev.differences[1];
    let pass = resid <= 3.0 && z_cce <= 3.0 && z_ne <= 3.0 && z_mfc <= 3.0 && gain.mean > 3.0 * gain.std_error;
    ok(
        pass,
        format!(
            "residual {resid:.2} SE | payoff z NE {z_ne:.2} MFC {z_mfc:.2} CCE {z_cce:.2} | deviation gain {:.5} ({:.1} SE)",
            gain.mean,
            gain.mean / gain.std_error
        ),
    )
}

fn two_dim_model() -> LqModel {
    let mut m = LqModel::zeros(2, 2, 1.5);
    m.a = Coef::Constant(DMatrix::from_row_slice(2, 2, &[0.1, 0.3, -0.2, 0.0]));
    m.b = Coef::Constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 0.7]));
    m.sigma = Coef::Constant(DMatrix::from_row_slice(2, 2, &[0.4, 0.0, 0.1, 0.3]));
    m.q = Coef::Constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.8]));
    m.q_bar = Coef::Constant(DMatrix::from_row_slice(2, 2, &[0.5, -0.1, -0.1, 0.3]));
    m.q_tilde = Coef::Constant(DMatrix::from_row_slice(2, 2, &[-0.3, 0.05, 0.05, -0.2]));
    m.r = Coef::Constant(DMatrix::from_row_slice(2, 2, &[1.2, 0.1, 0.1, 0.9]));
    m.h = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4]);
    m.h_tilde = DMatrix::from_row_slice(2, 2, &[0.1, 0.02, 0.02, 0.05]);
    m.l = Coef::vector(DVector::from_row_slice(&[0.4, -0.2]));
    m.q_lin = Coef::vector(DVector::from_row_slice(&[0.1, 0.3]));
    m.initial = InitialLaw::gaussian(
        DVector::from_row_slice(&[0.3, -0.5]),
        DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1]),
    );
    m
}

fn rigidity() -> Outcome {
    let mut notes = Vec::new();
    let p = fig1_params();
    let s = session(&p, N);
    let bench = Benchmarks::solve(&s).unwrap();

    // deterministic flows with a nonzero slope
    let mut det_fail = 0;
    for z1 in [-0.8, -0.1, 0.05, 0.3, 0.6, 1.5] {
        let law = ScenarioLaw::degenerate(DeltaPath::Constant(DVector::from_element(1, -z1))).unwrap();
        if check_cce(&s, &bench, &law).unwrap().is_cce {
            det_fail += 1;
        }
    }
    let g = TimeGrid::new(1.5, 600).unwrap();
    let s2 = Session::new(two_dim_model(), g).unwrap();
    let bench2 = Benchmarks::solve(&s2).unwrap();
    let ne_delta = bench2.ne.degenerate_delta(&s2);
    for shift in [[0.2, 0.0], [0.0, -0.3], [0.1, 0.1]] {
        let shifted = Trajectory::from_fn(g, |i, t| {
            ne_delta.get(i) + DVector::from_row_slice(&shift) * (1.0 + t)
        });
        let law = ScenarioLaw::degenerate(DeltaPath::Table(shifted)).unwrap();
        if check_cce(&s2, &bench2, &law).unwrap().is_cce {
            det_fail += 1;
        }
    }
    notes.push(format!("deterministic flows passing optimality {det_fail}"));

    // sampled equilibria never beat the control optimum
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut cces = 0;
    let mut above_mfc = 0;
    for _ in 0..60 {
        let z1 = rng.random::<f64>() * 1.2;
        let s2v = rng.random::<f64>() * 0.4;
        let law = LinearFlowLaw::new(z1, s2v).unwrap().to_scenario_law().unwrap();
        let v = check_cce(&s, &bench, &law).unwrap();
        if v.is_cce {
            cces += 1;
            if v.payoffs.flow > v.payoffs.mfc {
                above_mfc += 1;
            }
        }
    }
    for _ in 0..20 {
        let w: f64 = 0.1 + 0.8 * rng.random::<f64>();
        let mut delta = || {
            let c = DVector::from_fn(2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            Trajectory::from_fn(g, |i, t| ne_delta.get(i) + &c * (1.0 + t))
        };
        let law = ScenarioLaw::new(vec![w, 1.0 - w], vec![DeltaPath::Table(delta()), DeltaPath::Table(delta())])
            .unwrap();
        let v = check_cce(&s2, &bench2, &law).unwrap();
        if v.is_cce {
            cces += 1;
            if v.payoffs.flow > v.payoffs.mfc {
                above_mfc += 1;
            }
        }
    }
    notes.push(format!("sampled CCEs {cces}, above J_MFC {above_mfc}"));

    // without the reputational cost only the NE survives
    let p0 = AbatementParams::relaxed(2.0, 1.0, 0.0, 0.1, 0.01, T).unwrap();
    let s0 = session(&p0, N);
    let bench0 = Benchmarks::solve(&s0).unwrap();
    let c0 = linear_class_coefficients(&p0, s0.grid()).unwrap();
    let mut eps0_pass = 0;
    for (z1, s2v) in [(0.6, 0.06), (0.0, 0.1), (0.3, 0.0), (-0.4, 0.2), (1e-2, 1e-4)] {
        let law = LinearFlowLaw::new(z1, s2v).unwrap();
        let v = check_cce(&s0, &bench0, &law.to_scenario_law().unwrap()).unwrap();
        if v.is_cce || gl_verdict(&p0, &c0, &law).is_cce {
            eps0_pass += 1;
        }
    }
    notes.push(format!("eps = 0 nonzero laws passing {eps0_pass}"));
    ok(det_fail == 0 && cces > 0 && above_mfc == 0 && eps0_pass == 0, notes.join(" | "))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome, Duration); 8] = [
        ("riccati oracle", riccati_oracle, Duration::from_secs(1)),
        ("sign results", sign_results, Duration::from_secs(10)),
        ("fig. 1 configuration", fig1_configuration, Duration::from_secs(5)),
        ("closed form vs generic", closed_form_equivalence, Duration::from_secs(60)),
        ("region criterion", region_criterion, Duration::from_secs(10)),
        ("maximizer", maximizer, Duration::from_secs(30)),
        ("monte carlo", monte_carlo, Duration::from_secs(180)),
        ("rigidity", rigidity, Duration::from_secs(30)),
    ];
    let mut failed = Vec::new();
    for (k, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let pass = out.pass && took < *budget;
        println!(
            "{} criterion {} ({name}): {} [{:.2}s / {}s]",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            out.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
        if !pass {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria {failed:?}");
}

