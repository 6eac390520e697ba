//! Monte Carlo simulation of the representative player under affine
//! policies, with the moderator's scenario drawn per path.
//!
//! Paths are grouped in fixed blocks of [`BLOCK`] with one ChaCha stream per
//! block, and block statistics are reduced in block order, so results do not
//! depend on the number of threads.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flows::CorrelatedFlow;
use crate::grid_ode::{simpson_weights, At, Trajectory};
use crate::moments::AffinePolicy;
use crate::session::Session;

pub const BLOCK: usize = 256;
const SCENARIO_SALT: u64 = 0x5eed_5ce7_a410_0001;

/// Time stepping of the state equation on the session grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Euler–Maruyama, weak order one.
    #[default]
    EulerMaruyama,
    /// Heun predictor-corrector; weak order two for additive noise.
    Heun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    /// Number of paths, or of antithetic pairs.
    pub paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub scheme: Scheme,
}

impl SimConfig {
    pub fn new(paths: usize, seed: u64) -> Result<Self> {
        if paths < 2 {
            return Err(Error::InvalidSimConfig(format!("need at least 2 paths, got {paths}")));
        }
        Ok(Self {
            paths,
            seed,
            antithetic: false,
            scheme: Scheme::EulerMaruyama,
        })
    }

    pub fn scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }
}

/// Mean and standard error of one estimated quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {

    /// `|mean − target|` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if self.std_error > 0.0 {
            d / self.std_error
        } else if d <= 1e-12 * target.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub payoff: Estimate,
    /// Payoff conditional on each scenario.
    pub scenario_payoffs: Vec<Estimate>,
    pub scenario_counts: Vec<usize>,
    /// `max_{s,t} |Ê[X_t | s] − μ^s_t| / SE`, when tracked.
    pub consistency_residual_se: Option<f64>,
}

/// Running count, mean and centered second moment (Welford), merged with
/// Chan's formula.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        let (na, nb) = (self.n as f64, o.n as f64);
        self.mean += d * nb / n as f64;
        self.m2 += o.m2 + d * d * na * nb / n as f64;
        self.n = n;
    }

    fn estimate(&self) -> Estimate {
        if self.n == 0 {
            return Estimate {
                mean: f64::NAN,
                std_error: f64::NAN,
            };
        }
        let nf = self.n as f64;
        let var = if self.n > 1 { self.m2 / (nf - 1.0) } else { 0.0 };
        Estimate {
            mean: self.mean,
            std_error: (var / nf).sqrt(),
        }
    }
}

/// Per-node data of one policy, flattened for the inner loop.
struct PolicyTables {
    /// `A + BK`, row-major `d × d` per node.
    drift: Vec<f64>,
    /// `Bk^s`, `d` per node and scenario.
    shift: Vec<Vec<f64>>,
    /// Running payoff `c + ℓ·x − ½xᵀWx`: `W` per node.
    quad: Vec<f64>,
    /// `ℓ` per node and scenario.
    lin: Vec<Vec<f64>>,
    /// `c` per node and scenario.
    cst: Vec<Vec<f64>>,
}

struct Tables {
    d: usize,
    n: usize,
    h: f64,
    quad_w: Vec<f64>,
    /// `σ` per step: at the left node for Euler–Maruyama, at the midpoint
    /// for Heun, `d × d` each.
    sigma: Vec<f64>,
    policies: Vec<PolicyTables>,
    /// Terminal `W = H`, and `ℓ`, `c` per scenario.
    term_quad: Vec<f64>,
    term_lin: Vec<Vec<f64>>,
    term_cst: Vec<f64>,
    cum_weights: Vec<f64>,
    init_mean: Vec<f64>,
    init_root: Vec<f64>,
    /// Flows at the nodes per scenario, for the consistency check.
    flows: Vec<Vec<f64>>,
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn psd_root(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn build_tables(
    session: &Session,
    policies: &[&AffinePolicy],
    flows: &[Trajectory<DVector<f64>>],
    weights: &[f64],
    scheme: Scheme,
) -> Result<Tables> {
    let grid = *session.grid();
    let md = session.model();
    let (d, n) = (md.d, grid.steps());
    if flows.is_empty() || flows.len() != weights.len() {
        return Err(Error::DimensionMismatch("one weight per flow required".into()));
    }
    for f in flows {
        session.ensure_grid(f)?;
    }
    let mut tables = Vec::with_capacity(policies.len());
    for policy in policies {
        if !policy.is_scenario_blind() && policy.offsets.len() != flows.len() {
            return Err(Error::DimensionMismatch(format!(
                "policy has {} scenario offsets for {} flows",
                policy.offsets.len(),
                flows.len()
            )));
        }
        for o in &policy.offsets {
            session.ensure_grid(o)?;
        }
        let mut t = PolicyTables {
            drift: Vec::with_capacity((n + 1) * d * d),
            shift: vec![Vec::with_capacity((n + 1) * d); flows.len()],
            quad: Vec::with_capacity((n + 1) * d * d),
            lin: vec![Vec::with_capacity((n + 1) * d); flows.len()],
            cst: vec![Vec::with_capacity(n + 1); flows.len()],
        };
        for i in 0..=n {
            let c = session.coefs().node(i);
            let k = policy.gain_node(session, i);
            t.drift.extend(flat(&(&c.a + &c.b * &k)));
            let ks = k.transpose() * &c.s;
            let w = &c.q + k.transpose() * &c.r * &k + &ks + ks.transpose();
            t.quad.extend(flat(&w));
            for (s, flow) in flows.iter().enumerate() {
                let off = policy.offset(s).get(i);
                let mu = flow.get(i);
                t.shift[s].extend((&c.b * off).iter());
                let lin = -(c.q_tilde.transpose() * mu)
                    - &c.q_lin
                    - k.transpose() * (&c.r * off)
                    - c.s.transpose() * off
                    - k.transpose() * &c.r_lin;
                t.lin[s].extend(lin.iter());
                t.cst[s].push(
                    c.l.dot(mu) - 0.5 * mu.dot(&(&c.q_bar * mu))
                        - 0.5 * off.dot(&(&c.r * off))
                        - c.r_lin.dot(off),
                );
            }
        }
        tables.push(t);
    }
    let mut sigma = Vec::with_capacity(n * d * d);
    for i in 0..n {
        let at = match scheme {
            Scheme::EulerMaruyama => At::Node(i),
            Scheme::Heun => At::Mid(i),
        };
        sigma.extend(flat(&session.coef(at).sigma));
    }
    let mut cum = 0.0;
    let cum_weights = weights
        .iter()
        .map(|w| {
            cum += w;
            cum
        })
        .collect();
    Ok(Tables {
        d,
        n,
        h: grid.dt(),
        quad_w: simpson_weights(&grid),
        sigma,
        policies: tables,
        term_quad: flat(&md.h),
        term_lin: flows
            .iter()
            .map(|f| (-(md.h_tilde.transpose() * f.last())).iter().copied().collect())
            .collect(),
        term_cst: flows
            .iter()
            .map(|f| -0.5 * f.last().dot(&(&md.h_bar * f.last())))
            .collect(),
        cum_weights,
        init_mean: md.initial.mean.iter().copied().collect(),
        init_root: flat(&psd_root(&md.initial.covariance())),
        flows: flows
            .iter()
            .map(|f| f.iter().flat_map(|v| v.iter().copied()).collect())
            .collect(),
    })
}

/// Box–Muller normals with the spare value cached.
struct Normals {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Normals {
    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = m[r * d..(r + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn payoff_at(c: f64, lin: &[f64], quad: &[f64], x: &[f64], tmp: &mut [f64]) -> f64 {
    matvec(quad, x, tmp);
    c + lin.iter().zip(x).map(|(l, v)| l * v).sum::<f64>()
        - 0.5 * tmp.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

#[derive(Clone)]
struct BlockStats {
    payoff: Vec<Moments>,
    /// Per policy, `J_p − J_0`.
    diff: Vec<Moments>,
    scen: Vec<Vec<Moments>>,
    scen_count: Vec<usize>,
    /// States of policy 0 per scenario, node and coordinate.
    states: Vec<Vec<Moments>>,
}

impl BlockStats {
    fn new(p: usize, s: usize, len: usize) -> Self {
        Self {
            payoff: vec![Moments::default(); p],
            diff: vec![Moments::default(); p],
            scen: vec![vec![Moments::default(); s]; p],
            scen_count: vec![0; s],
            states: vec![vec![Moments::default(); len]; s],
        }
    }

    fn merge(&mut self, o: &BlockStats) {
        let add = |a: &mut [Moments], b: &[Moments]| a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y));
        add(&mut self.payoff, &o.payoff);
        add(&mut self.diff, &o.diff);
        for (a, b) in self.scen.iter_mut().zip(&o.scen) {
            add(a, b);
        }
        for (a, b) in self.scen_count.iter_mut().zip(&o.scen_count) {
            *a += b;
        }
        for (a, b) in self.states.iter_mut().zip(&o.states) {
            add(a, b);
        }
    }
}

/// One path (or antithetic pair) for every policy with shared noise.
/// Returns per-policy payoffs; fills the state trace of policy 0.
fn run_sample(
    t: &Tables,
    scenario: usize,
    normals: &mut Normals,
    cfg: &SimConfig,
    trace: Option<&mut [f64]>,
) -> Vec<f64> {
    let antithetic = cfg.antithetic;
    let d = t.d;
    let signs: &[f64] = if antithetic { &[1.0, -1.0] } else { &[1.0] };
    let reps = signs.len();
    let np = t.policies.len();
    let mut z = vec![0.0; d];
    for v in z.iter_mut() {
        *v = normals.next();
    }
    let mut x0 = vec![0.0; d];
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(np * reps);
    for &sg in signs {
        matvec(&t.init_root, &z, &mut x0);
        let xi: Vec<f64> = t.init_mean.iter().zip(&x0).map(|(m, e)| m + sg * e).collect();
        for _ in 0..np {
            xs.push(xi.clone());
        }
    }
    let mut acc = vec![0.0; np * reps];
    let mut tmp = vec![0.0; d];
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut xe = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let sqh = t.h.sqrt();
    let node_payoff = |acc: &mut [f64], xs: &[Vec<f64>], i: usize, tmp: &mut [f64]| {
        let w = t.quad_w[i];
        for (j, x) in xs.iter().enumerate() {
            let pt = &t.policies[j % np];
            acc[j] += w * payoff_at(
                pt.cst[scenario][i],
                &pt.lin[scenario][i * d..(i + 1) * d],
                &pt.quad[i * d * d..(i + 1) * d * d],
                x,
                tmp,
            );
        }
    };
    node_payoff(&mut acc, &xs, 0, &mut tmp);
    let mut trace = trace;
    if let Some(tr) = trace.as_deref_mut() {
        tr[..d].copy_from_slice(&xs[0]);
    }
    for i in 0..t.n {
        for v in z.iter_mut() {
            *v = normals.next() * sqh;
        }
        matvec(&t.sigma[i * d * d..(i + 1) * d * d], &z, &mut noise);
        for (j, x) in xs.iter_mut().enumerate() {
            let sg = signs[j / np];
            let pt = &t.policies[j % np];
            let dr0 = &pt.drift[i * d * d..(i + 1) * d * d];
            let dr1 = &pt.drift[(i + 1) * d * d..(i + 2) * d * d];
            let sh0 = &pt.shift[scenario][i * d..(i + 1) * d];
            let sh1 = &pt.shift[scenario][(i + 1) * d..(i + 2) * d];
            matvec(dr0, x, &mut k1);
            match cfg.scheme {
                Scheme::EulerMaruyama => {
                    for r in 0..d {
                        x[r] += t.h * (k1[r] + sh0[r]) + sg * noise[r];
                    }
                }
                Scheme::Heun => {
                    for r in 0..d {
                        k1[r] += sh0[r];
                        xe[r] = x[r] + t.h * k1[r] + sg * noise[r];
                    }
                    matvec(dr1, &xe, &mut k2);
                    for r in 0..d {
                        k2[r] += sh1[r];
                        x[r] += 0.5 * t.h * (k1[r] + k2[r]) + sg * noise[r];
                    }
                }
            }
        }
        node_payoff(&mut acc, &xs, i + 1, &mut tmp);
        if let Some(tr) = trace.as_deref_mut() {
            tr[(i + 1) * d..(i + 2) * d].copy_from_slice(&xs[0]);
        }
    }
    for (j, x) in xs.iter().enumerate() {
        acc[j] += payoff_at(t.term_cst[scenario], &t.term_lin[scenario], &t.term_quad, x, &mut tmp);
    }
    (0..np)
        .map(|p| (0..reps).map(|r| acc[r * np + p]).sum::<f64>() / reps as f64)
        .collect()
}

fn run_block(t: &Tables, cfg: &SimConfig, block: usize, count: usize, track: bool) -> BlockStats {
    let np = t.policies.len();
    let ns = t.cum_weights.len();
    let len = (t.n + 1) * t.d;
    let mut stats = BlockStats::new(np, ns, if track { len } else { 0 });
    let mut path_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    path_rng.set_stream(block as u64);
    let mut normals = Normals {
        rng: path_rng,
        spare: None,
    };
    let mut scen_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SCENARIO_SALT);
    scen_rng.set_stream(block as u64);
    let mut trace = vec![0.0; if track { len } else { 0 }];
    for _ in 0..count {
        let u: f64 = scen_rng.random();
        let s = t
            .cum_weights
            .iter()
            .position(|&c| u < c)
            .unwrap_or(ns - 1);
        let pays = run_sample(
            t,
            s,
            &mut normals,
            cfg,
            if track { Some(&mut trace) } else { None },
        );
        stats.scen_count[s] += 1;
        for (p, &j) in pays.iter().enumerate() {
            stats.payoff[p].push(j);
            stats.scen[p][s].push(j);
            stats.diff[p].push(j - pays[0]);
        }
        if track {
            for (m, v) in stats.states[s].iter_mut().zip(&trace) {
                m.push(*v);
            }
        }
    }
    stats
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = std::env::var("MFCCE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidSimConfig(e.to_string()))
}

/// Estimates for several policies simulated with common random numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct SimBatch {
    pub reports: Vec<SimReport>,
    /// `J_p − J_0` for every policy `p`.
    pub differences: Vec<Estimate>,
}

/// Simulates every policy against the same scenario draws and noise.
/// The first policy's states are compared with the flows when `track` is set.
pub fn simulate_policies(
    session: &Session,
    policies: &[&AffinePolicy],
    flows: &[Trajectory<DVector<f64>>],
    weights: &[f64],
    cfg: &SimConfig,
    track: bool,
) -> Result<SimBatch> {
    if cfg.paths < 2 {
        return Err(Error::InvalidSimConfig(format!("need at least 2 paths, got {}", cfg.paths)));
    }
    if policies.is_empty() {
        return Err(Error::InvalidSimConfig("no policy to simulate".into()));
    }
    let t = build_tables(session, policies, flows, weights, cfg.scheme)?;
    let blocks = cfg.paths.div_ceil(BLOCK);
    let pool = thread_pool()?;
    let parts: Vec<BlockStats> = pool.install(|| {
        (0..blocks)
            .into_par_iter()
            .map(|b| {
                let count = BLOCK.min(cfg.paths - b * BLOCK);
                run_block(&t, cfg, b, count, track)
            })
            .collect()
    });
    let mut total = parts[0].clone();
    for p in &parts[1..] {
        total.merge(p);
    }
    let residual = if track {
        let mut worst: f64 = 0.0;
        for (s, flow) in t.flows.iter().enumerate() {
            if total.scen_count[s] < 2 {
                continue;
            }
            for (m, target) in total.states[s].iter().zip(flow) {
                worst = worst.max(m.estimate().z_score(*target));
            }
        }
        Some(worst)
    } else {
        None
    };
    let reports = (0..policies.len())
        .map(|p| SimReport {
            payoff: total.payoff[p].estimate(),
            scenario_payoffs: total.scen[p].iter().map(Moments::estimate).collect(),
            scenario_counts: total.scen_count.clone(),
            consistency_residual_se: if p == 0 { residual } else { None },
        })
        .collect();
    let differences = (0..policies.len())
        .map(|p| total.diff[p].estimate())
        .collect();
    Ok(SimBatch {
        reports,
        differences,
    })
}

/// Follows the recommendation of a correlated flow; tracks consistency.
pub fn simulate_flow(session: &Session, flow: &CorrelatedFlow, cfg: &SimConfig) -> Result<SimReport> {
    let batch = simulate_policies(
        session,
        &[&flow.recommendation],
        &flow.flows,
        flow.law.weights(),
        cfg,
        true,
    )?;
    Ok(batch.reports.into_iter().next().expect("one policy"))
}

/// Simulates the recommendation and a deviation with common random numbers.
/// Deviations may only depend on the initial condition and the noise.
pub fn simulate_deviation(
    session: &Session,
    flow: &CorrelatedFlow,
    deviation: &AffinePolicy,
    cfg: &SimConfig,
) -> Result<SimBatch> {
    if !deviation.is_scenario_blind() {
        return Err(Error::ScenarioDependentDeviation);
    }
    simulate_policies(
        session,
        &[&flow.recommendation, deviation],
        &flow.flows,
        flow.law.weights(),
        cfg,
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abatement::{map_to_lq, AbatementParams, LinearFlowLaw};
    use crate::flows::build_flow;
    use crate::grid_ode::TimeGrid;
    use crate::riccati::solve_ne;

    fn setup(n: usize) -> (Session, CorrelatedFlow) {
        let p = AbatementParams::new(2.0, 1.0, 1.0, 0.1, 0.02, 5.0).unwrap();
        let s = Session::new(map_to_lq(&p), TimeGrid::new(5.0, n).unwrap()).unwrap();
        let law = LinearFlowLaw::new(0.6, 0.06).unwrap().to_scenario_law().unwrap();
        let f = build_flow(&s, &law).unwrap();
        (s, f)
    }

    #[test]
    fn config_rejects_single_path() {
        assert!(matches!(SimConfig::new(1, 0), Err(Error::InvalidSimConfig(_))));
    }

    #[test]
    fn estimates_agree_with_moment_engine() {
        let (s, f) = setup(200);
        let cfg = SimConfig::new(4000, 7).unwrap();
        let rep = simulate_flow(&s, &f, &cfg).unwrap();
        let exact = f.payoff(&s).unwrap().total;
        assert!(rep.payoff.z_score(exact) < 4.0, "{:?} vs {exact}", rep.payoff);
        assert!(rep.consistency_residual_se.unwrap() < 5.0);
        assert_eq!(rep.scenario_counts.iter().sum::<usize>(), 4000);
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let (s, f) = setup(50);
        let cfg = SimConfig::new(700, 42).unwrap();
        let a = simulate_flow(&s, &f, &cfg).unwrap();
        let b = simulate_flow(&s, &f, &cfg).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let t = build_tables(&s, &[&f.recommendation], &f.flows, f.law.weights(), cfg.scheme).unwrap();
        let blocks = 700usize.div_ceil(BLOCK);
        let serial: Vec<_> = (0..blocks)
            .map(|b| run_block(&t, &cfg, b, BLOCK.min(700 - b * BLOCK), false).payoff[0].mean)
            .collect();
        let parallel: Vec<_> = pool.install(|| {
            (0..blocks)
                .into_par_iter()
                .map(|b| run_block(&t, &cfg, b, BLOCK.min(700 - b * BLOCK), false).payoff[0].mean)
                .collect()
        });
        assert_eq!(serial, parallel);
    }

    #[test]
    fn antithetic_pairs_reduce_variance_of_linear_terms() {
        let (s, f) = setup(100);
        let plain = simulate_flow(&s, &f, &SimConfig::new(2000, 3).unwrap()).unwrap();
        let anti = simulate_flow(&s, &f, &SimConfig::new(2000, 3).unwrap().antithetic(true)).unwrap();
        assert!(anti.payoff.std_error < plain.payoff.std_error);
    }

    #[test]
    fn scenario_dependent_deviation_is_rejected() {
        let (s, f) = setup(20);
        let cfg = SimConfig::new(10, 1).unwrap();
        assert!(matches!(
            simulate_deviation(&s, &f, &f.recommendation, &cfg),
            Err(Error::ScenarioDependentDeviation)
        ));
        let ne = solve_ne(&s).unwrap();
        assert!(simulate_deviation(&s, &f, &ne.policy, &cfg).is_ok());
    }

    fn noiseless(n: usize) -> (Session, CorrelatedFlow) {
        let p = AbatementParams::new(2.0, 1.0, 1.0, 0.1, 0.01, 5.0).unwrap();
        let mut m = map_to_lq(&p);
        m.sigma = crate::lq_model::Coef::scalar(0.0);
        let s = Session::new(m, TimeGrid::new(5.0, n).unwrap()).unwrap();
        let law = LinearFlowLaw::new(0.6, 0.06).unwrap().to_scenario_law().unwrap();
        let f = build_flow(&s, &law).unwrap();
        (s, f)
    }

    fn noiseless_bias(n: usize, scheme: Scheme) -> (f64, Vec<Estimate>) {
        let (s, f) = noiseless(n);
        let cfg = SimConfig::new(64, 5).unwrap().scheme(scheme);
        let rep = simulate_flow(&s, &f, &cfg).unwrap();
        let mut bias = 0.0;
        for (k, e) in rep.scenario_payoffs.iter().enumerate() {
            let one = expected_payoff_single(&s, &f, k);
            bias += f.law.weights()[k] * (e.mean - one);
        }
        (bias, rep.scenario_payoffs)
    }

    fn expected_payoff_single(s: &Session, f: &CorrelatedFlow, k: usize) -> f64 {
        let policy = AffinePolicy::feedback(vec![f.recommendation.offsets[k].clone()]);
        crate::moments::expected_payoff(s, &policy, std::slice::from_ref(&f.flows[k]), &[1.0])
            .unwrap()
            .total
    }

    #[test]
    fn noiseless_paths_match_moments() {
        let (b1, est) = noiseless_bias(400, Scheme::EulerMaruyama);
        assert!(est.iter().all(|e| e.std_error < 1e-12), "{est:?}");
        assert!(b1.abs() < 1e-8, "{b1}");
        let (b2, _) = noiseless_bias(800, Scheme::EulerMaruyama);
        assert!(b2.abs() < b1.abs() / 8.0, "{b1} {b2}");
        let (h1, _) = noiseless_bias(400, Scheme::Heun);
        assert!((h1 - b1).abs() < 1e-12, "{h1} vs {b1}");
    }
}
