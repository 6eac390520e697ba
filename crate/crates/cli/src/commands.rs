//! `solve` and `check-cce`.

use std::path::Path;

use anyhow::Result;
use log::info;
use mfcce::abatement::{gl_verdict, linear_class_coefficients};
use mfcce::cce::{CceVerdict, Term};
use mfcce::montecarlo::{simulate_deviation, SimBatch};
use mfcce::riccati::{solve_mfc, solve_ne};
use mfcce::{build_flow, check_flow, Benchmarks, Trajectory};

use crate::inputs::{load_law, load_model, session, Settings, SimFlags};
use crate::output::{fmt_f64, record_csv, Run, Table};
use crate::What;

fn time_column(grid: &mfcce::TimeGrid) -> Trajectory<f64> {
    Trajectory::from_fn(*grid, |_, t| t)
}

pub fn solve(model: &Path, flags: &SimFlags, what: What, law: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let input = load_model(model)?;
    let settings = Settings::resolve(&input, flags)?;
    let grid = settings.grid(&input)?;
    let mut run = Run::new("solve", out)?;
    run.input(&input.path, &input.text);
    settings.record(&mut run, &grid, false);
    let s = session(&input, grid)?;
    let mut table = Table::new();
    table.scalar("t", &time_column(&grid));
    let (name, payoff) = match what {
        What::Ne => {
            run.param("what", "ne");
            let ne = solve_ne(&s)?;
            table.matrix("phi", s.phi());
            table.matrix("psi", s.psi());
            table.matrix("phi_ne", &ne.phi_ne);
            table.vector("theta", &ne.theta_ne);
            table.vector("m_hat", &ne.m_hat);
            table.vector("theta_m_hat", &ne.theta_m_hat);
            ("ne.csv", ne.payoff.total)
        }
        What::Mfc => {
            run.param("what", "mfc");
            let mfc = solve_mfc(&s)?;
            table.matrix("phi", &mfc.phi_mfc);
            table.vector("theta", &mfc.theta_mfc);
            table.matrix("psi_bar", &mfc.psi_bar);
            table.vector("theta_bar", &mfc.theta_bar);
            table.vector("x_bar", &mfc.x_bar);
            ("mfc.csv", mfc.payoff.total)
        }
        What::Deviation => {
            run.param("what", "deviation");
            let path = law.expect("clap requires --law for deviation");
            let law = load_law(path, &grid)?;
            run.input(&law.path, &law.text);
            let flow = build_flow(&s, &law.law)?;
            table.matrix("phi", s.phi());
            table.matrix("psi", s.psi());
            table.vector("theta", &flow.deviation.theta);
            table.vector("mean", &flow.mean_flow);
            table.vector("offset", &flow.deviation.offset);
            ("deviation.csv", flow.deviation_payoff(&s)?.total)
        }
    };
    run.emit(name, &table)?;
    let summary = format!("payoff {}", fmt_f64(payoff));
    if run.has_dir() {
        println!("{summary}");
        run.finish()?;
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn print_terms(title: &str, terms: &[Term]) {
    println!("{title}");
    for t in terms {
        println!("  {:<72} {:>24}", t.label, fmt_f64(t.value));
    }
}

fn print_verdict(v: &CceVerdict) {
    print_terms("optimality, left side:", &v.optimality.lhs_terms);
    print_terms("optimality, right side:", &v.optimality.rhs_terms);
    println!("lhs {} rhs {} (tolerance {:e})", fmt_f64(v.optimality.lhs), fmt_f64(v.optimality.rhs), v.optimality.tolerance());
    print_terms("outperformance:", &v.outperformance.terms);
    println!("outperformance value {}", fmt_f64(v.outperformance.value));
    println!(
        "payoffs: flow {} best deviation {} ne {} mfc {}",
        fmt_f64(v.payoffs.flow),
        fmt_f64(v.payoffs.best_deviation),
        fmt_f64(v.payoffs.ne),
        fmt_f64(v.payoffs.mfc)
    );
    println!(
        "identity gaps: optimality {:e} outperformance {:e} | consistency residual {:e}",
        v.optimality_identity_gap, v.outperformance_identity_gap, v.consistency_residual
    );
    println!("is_cce {} boundary {} outperforms_ne {}", v.is_cce, v.boundary, v.outperforms_ne);
}

fn verdict_record(v: &CceVerdict) -> Vec<(&'static str, String)> {
    vec![
        ("is_cce", v.is_cce.to_string()),
        ("boundary", v.boundary.to_string()),
        ("outperforms_ne", v.outperforms_ne.to_string()),
        ("optimality_lhs", fmt_f64(v.optimality.lhs)),
        ("optimality_rhs", fmt_f64(v.optimality.rhs)),
        ("outperformance_value", fmt_f64(v.outperformance.value)),
        ("payoff_flow", fmt_f64(v.payoffs.flow)),
        ("payoff_best_deviation", fmt_f64(v.payoffs.best_deviation)),
        ("payoff_ne", fmt_f64(v.payoffs.ne)),
        ("payoff_mfc", fmt_f64(v.payoffs.mfc)),
        ("optimality_identity_gap", fmt_f64(v.optimality_identity_gap)),
        ("outperformance_identity_gap", fmt_f64(v.outperformance_identity_gap)),
        ("consistency_residual", fmt_f64(v.consistency_residual)),
    ]
}

fn simulation_table(batch: &SimBatch, analytic_flow: f64, analytic_dev: f64) -> Table {
    let flow = batch.reports[0].payoff;
    let dev = batch.reports[1].payoff;
    let diff = batch.differences[1];
    let mut t = Table::new();
    t.push("payoff_flow", vec![flow.mean]);
    t.push("payoff_flow_se", vec![flow.std_error]);
    t.push("payoff_flow_analytic", vec![analytic_flow]);
    t.push("payoff_deviation", vec![dev.mean]);
    t.push("payoff_deviation_se", vec![dev.std_error]);
    t.push("payoff_deviation_analytic", vec![analytic_dev]);
    t.push("deviation_gain", vec![diff.mean]);
    t.push("deviation_gain_se", vec![diff.std_error]);
    t.push(
        "consistency_residual_se",
        vec![batch.reports[0].consistency_residual_se.unwrap_or(f64::NAN)],
    );
    t
}

pub fn check_cce(model: &Path, flags: &SimFlags, law: &Path, simulate: Option<usize>, out: Option<&Path>) -> Result<()> {
    let input = load_model(model)?;
    let mut flags = flags.clone();
    if simulate.is_some() {
        flags.paths = simulate;
    }
    let settings = Settings::resolve(&input, &flags)?;
    let grid = settings.grid(&input)?;
    let mut run = Run::new("check-cce", out)?;
    run.input(&input.path, &input.text);
    settings.record(&mut run, &grid, simulate.is_some());
    let s = session(&input, grid)?;
    let law = load_law(law, &grid)?;
    run.input(&law.path, &law.text);
    let bench = Benchmarks::solve(&s)?;
    let flow = build_flow(&s, &law.law)?;
    let verdict = check_flow(&s, &bench, &flow)?;
    print_verdict(&verdict);
    if let (Some(p), Some(l)) = (&input.abatement, &law.linear) {
        let coeffs = linear_class_coefficients(p, &grid)?;
        let closed = gl_verdict(p, &coeffs, l);
        println!(
            "closed form: c_M {} c_V {} optimality value {} is_cce {} boundary {} outperformance value {} outperforms_ne {} payoff offset {}",
            fmt_f64(coeffs.c_m),
            fmt_f64(coeffs.c_v),
            fmt_f64(closed.optimality_value),
            closed.is_cce,
            closed.boundary,
            fmt_f64(closed.outperformance_value),
            closed.outperforms_ne,
            fmt_f64(closed.payoff_offset)
        );
    }
    if run.has_dir() {
        run.emit_text("verdict.csv", record_csv(&verdict_record(&verdict))?)?;
    }
    if simulate.is_some() {
        info!("simulating {} paths", settings.sim.paths);
        let batch = simulate_deviation(&s, &flow, &flow.deviation.policy(), &settings.sim)?;
        let table = simulation_table(&batch, verdict.payoffs.flow, verdict.payoffs.best_deviation);
        let f = batch.reports[0].payoff;
        let d = batch.differences[1];
        println!(
            "simulated: flow payoff {} ± {} (z {:.2}) | deviation gain {} ± {} | consistency residual {:.2} SE",
            fmt_f64(f.mean),
            fmt_f64(f.std_error),
            f.z_score(verdict.payoffs.flow),
            fmt_f64(d.mean),
            fmt_f64(d.std_error),
            batch.reports[0].consistency_residual_se.unwrap_or(f64::NAN)
        );
        if run.has_dir() {
            run.emit("simulation.csv", &table)?;
        }
    }
    if run.has_dir() {
        run.finish()?;
    }
    Ok(())
}
