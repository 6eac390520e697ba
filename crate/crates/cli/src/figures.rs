//! Data behind the figures of the abatement game.

use std::path::{Path, PathBuf};

use anyhow::Result;
use mfcce::abatement::{
    average_abatement, linear_class_coefficients, linear_mean, maximal_payoff_cce, outperformance_region,
    payoff_offset, AbatementParams, AbatementRegion, LinearFlowLaw,
};
use mfcce::{build_flow, Benchmarks, Session, TimeGrid, Trajectory};

use crate::failure::Failure;
use crate::inputs::{load_law, load_model, session, LawInput, ModelInput, Settings, SimFlags};
use crate::output::{Run, Table};

pub const REFERENCE_Z1: f64 = 0.6;
pub const REFERENCE_SIGMA2: f64 = 0.06;
const REGION_SAMPLES: usize = 400;
const EPS_SAMPLES: usize = 200;
const TRADE_OFF_SAMPLES: usize = 200;
const SURFACE_SIDE: usize = 60;

#[derive(Debug, Clone)]
pub struct FigureOptions {
    pub which: u8,
    pub law: Option<PathBuf>,
    pub points: Option<usize>,
    pub eps_max: f64,
    pub allow_empty: bool,
}

fn abatement(input: &ModelInput) -> Result<AbatementParams> {
    input.abatement.ok_or_else(|| {
        Failure::Usage(format!("{}: figures need an [abatement] section", input.path.display())).into()
    })
}

fn first(traj: &Trajectory<nalgebra::DVector<f64>>) -> Trajectory<f64> {
    traj.map(|v| v[0])
}

pub fn figure(model: &Path, flags: &SimFlags, opts: &FigureOptions, out: &Path) -> Result<()> {
    let input = load_model(model)?;
    let params = abatement(&input)?;
    let settings = Settings::resolve(&input, flags)?;
    let grid = settings.grid(&input)?;
    let mut run = Run::new("figure", Some(out))?;
    run.input(&input.path, &input.text);
    settings.record(&mut run, &grid, false);
    run.param("which", opts.which);
    match opts.which {
        1 | 2 => {
            let s = session(&input, grid)?;
            let law = match &opts.law {
                Some(p) => {
                    let l = load_law(p, &grid)?;
                    run.input(&l.path, &l.text);
                    l
                }
                None => {
                    run.param("z1", REFERENCE_Z1);
                    run.param("sigma2", REFERENCE_SIGMA2);
                    let linear = LinearFlowLaw::new(REFERENCE_Z1, REFERENCE_SIGMA2)?;
                    LawInput {
                        path: PathBuf::new(),
                        text: String::new(),
                        law: linear.to_scenario_law()?,
                        linear: Some(linear),
                    }
                }
            };
            let table = if opts.which == 1 { fig1(&s, &law)? } else { fig2(&s, &law)? };
            run.emit(&format!("fig{}.csv", opts.which), &table)?;
        }
        3 => {
            let n = opts.points.unwrap_or(REGION_SAMPLES);
            run.param("points", n);
            let region = region(&params, &grid, n, opts.allow_empty)?;
            let s = session(&input, grid)?;
            let j_ne = Benchmarks::solve(&s)?.ne.payoff.total;
            run.emit("fig3.csv", &fig3(&region))?;
            run.emit("fig3_surface.csv", &fig3_surface(&params, &region, j_ne))?;
        }
        4 => {
            let n = opts.points.unwrap_or(EPS_SAMPLES);
            run.param("points", n);
            run.param("eps_max", opts.eps_max);
            run.emit("fig4.csv", &fig4(&params, &grid, n, opts.eps_max)?)?;
        }
        5 => {
            let n = opts.points.unwrap_or(TRADE_OFF_SAMPLES);
            run.param("points", n);
            region(&params, &grid, 2, opts.allow_empty)?;
            let s = session(&input, grid)?;
            run.emit("fig5.csv", &fig5(&params, &s, n)?)?;
        }
        other => return Err(Failure::Usage(format!("no figure {other}")).into()),
    }
    run.finish()?;
    Ok(())
}

fn region(p: &AbatementParams, grid: &TimeGrid, samples: usize, allow_empty: bool) -> Result<AbatementRegion> {
    let coeffs = linear_class_coefficients(p, grid)?;
    let region = outperformance_region(p, &coeffs, samples.max(2));
    if !region.nonempty && !allow_empty {
        return Err(Failure::Empty(format!(
            "no linear equilibrium outperforms the Nash payoff (a - b nu1 = {}, eps T^2 = {})",
            p.net_benefit(),
            p.eps * p.horizon * p.horizon
        ))
        .into());
    }
    Ok(region)
}

/// `t, running_cce, running_mfc, running_ne, total_cce, total_mfc, total_ne`
pub fn fig1(s: &Session, law: &LawInput) -> Result<Table> {
    let bench = Benchmarks::solve(s)?;
    let flow = build_flow(s, &law.law)?;
    let cce = flow.payoff(s)?;
    let grid = *s.grid();
    let rows = grid.len();
    let mut t = Table::new();
    t.scalar("t", &Trajectory::from_fn(grid, |_, t| t));
    t.scalar("running_cce", &cce.running);
    t.scalar("running_mfc", &bench.mfc.payoff.running);
    t.scalar("running_ne", &bench.ne.payoff.running);
    t.push("total_cce", vec![cce.total; rows]);
    t.push("total_mfc", vec![bench.mfc.payoff.total; rows]);
    t.push("total_ne", vec![bench.ne.payoff.total; rows]);
    Ok(t)
}

/// `t, mu_mean_cce, xbar_mfc, m_ne`
pub fn fig2(s: &Session, law: &LawInput) -> Result<Table> {
    let bench = Benchmarks::solve(s)?;
    let flow = build_flow(s, &law.law)?;
    let mut t = Table::new();
    t.scalar("t", &Trajectory::from_fn(*s.grid(), |_, t| t));
    t.scalar("mu_mean_cce", &first(&flow.mean_flow));
    t.scalar("xbar_mfc", &first(&bench.mfc.x_bar));
    t.scalar("m_ne", &first(&bench.ne.m_hat));
    Ok(t)
}

/// `z1, sigma2_lower, sigma2_upper`
pub fn fig3(region: &AbatementRegion) -> Table {
    let mut t = Table::new();
    t.push("z1", region.z1.clone());
    t.push("sigma2_lower", region.lower.clone());
    t.push("sigma2_upper", region.upper.clone());
    t
}

/// `z1, sigma2, payoff_cce` on a square grid over the region's bounding box,
/// keeping points inside the region.
pub fn fig3_surface(p: &AbatementParams, region: &AbatementRegion, j_ne: f64) -> Table {
    let (mut zs, mut ss, mut js) = (Vec::new(), Vec::new(), Vec::new());
    if region.nonempty {
        let zmax = region.z1_max();
        let smax = region.upper.iter().copied().fold(0.0, f64::max);
        for i in 0..SURFACE_SIDE {
            let z1 = zmax * i as f64 / (SURFACE_SIDE - 1) as f64;
            for j in 0..SURFACE_SIDE {
                let sigma2 = smax * j as f64 / (SURFACE_SIDE - 1) as f64;
                if !region.contains(z1, sigma2) {
                    continue;
                }
                zs.push(z1);
                ss.push(sigma2);
                js.push(j_ne + payoff_offset(p, &LinearFlowLaw { z1, sigma2 }));
            }
        }
    }
    let mut t = Table::new();
    t.push("z1", zs);
    t.push("sigma2", ss);
    t.push("payoff_cce", js);
    t
}

/// `eps, ratio` with `ratio = −c_M / c_V` on `(3/T², eps_max]`.
pub fn fig4(p: &AbatementParams, grid: &TimeGrid, n: usize, eps_max: f64) -> Result<Table> {
    let pole = 3.0 / (p.horizon * p.horizon);
    if n == 0 || !(eps_max > pole) {
        return Err(Failure::Usage(format!("need --points > 0 and --eps-max > 3/T^2 = {pole}")).into());
    }
    let mut eps = Vec::with_capacity(n);
    let mut ratio = Vec::with_capacity(n);
    for k in 1..=n {
        let e = pole + (eps_max - pole) * k as f64 / n as f64;
        let q = AbatementParams { eps: e, ..*p };
        eps.push(e);
        ratio.push(linear_class_coefficients(&q, grid)?.ratio());
    }
    let mut t = Table::new();
    t.push("eps", eps);
    t.push("ratio", ratio);
    Ok(t)
}

/// `z1, payoff_*, abatement_*` along `σ² = −z₁² c_M / c_V`, with the
/// payoff-maximizing `z₁*` as the last row.
pub fn fig5(p: &AbatementParams, s: &Session, n: usize) -> Result<Table> {
    let grid = *s.grid();
    let coeffs = linear_class_coefficients(p, &grid)?;
    let region = outperformance_region(p, &coeffs, 2);
    let best = maximal_payoff_cce(p, &coeffs)
        .ok_or_else(|| Failure::Empty("no payoff-maximizing linear equilibrium".into()))?;
    let bench = Benchmarks::solve(s)?;
    let (j_ne, j_mfc) = (bench.ne.payoff.total, bench.mfc.payoff.total);
    let ab_ne = average_abatement(&first(&bench.ne.m_hat));
    let ab_mfc = average_abatement(&first(&bench.mfc.x_bar));
    let kappa = coeffs.ratio();
    let mut z1s: Vec<f64> = (0..n.max(2))
        .map(|k| region.z1_max() * k as f64 / (n.max(2) - 1) as f64)
        .collect();
    z1s.push(best.z1);
    let mut t = Table::new();
    let law = |z1: f64| LinearFlowLaw { z1, sigma2: kappa * z1 * z1 };
    t.push("z1", z1s.clone());
    t.push("payoff_cce", z1s.iter().map(|&z| j_ne + payoff_offset(p, &law(z))).collect());
    t.push("payoff_mfc", vec![j_mfc; z1s.len()]);
    t.push("payoff_ne", vec![j_ne; z1s.len()]);
    t.push(
        "abatement_cce",
        z1s.iter().map(|&z| average_abatement(&linear_mean(p, &law(z), &grid))).collect(),
    );
    t.push("abatement_mfc", vec![ab_mfc; z1s.len()]);
    t.push("abatement_ne", vec![ab_ne; z1s.len()]);
    Ok(t)
}
