//! Equilibrium verdicts for class-𝒢 correlated flows: the optimality
//! inequality against the best deviation, and the comparison with the Nash
//! payoff, both as labeled term breakdowns.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::flows::{build_flow, CorrelatedFlow, ScenarioLaw};
use crate::grid_ode::{simpson_weights, At};
use crate::riccati::{solve_mfc, solve_ne, MfcSolution, NeSolution};
use crate::moments::bilinear;
use crate::session::Session;

/// Relative tolerance of the generic verdicts.
pub const VERDICT_TOL: f64 = 1e-9;

/// `⟨m x, y⟩`
/// `⟨Mx, y⟩`
fn ip(m: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    bilinear(m, y, x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub label: &'static str,
    pub value: f64,
}

fn terms(labels: &[&'static str], values: &[f64]) -> Vec<Term> {
    labels
        .iter()
        .zip(values)
        .map(|(&label, &value)| Term { label, value })
        .collect()
}

fn scale(ts: &[Term]) -> f64 {
    ts.iter().map(|t| t.value.abs()).fold(1.0, f64::max)
}

/// Both sides of the optimality inequality `lhs ≤ rhs`; `rhs − lhs` is the
/// payoff advantage of following the recommendation over the best deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityBreakdown {
    pub lhs_terms: Vec<Term>,
    pub rhs_terms: Vec<Term>,
    pub lhs: f64,
    pub rhs: f64,
}

impl OptimalityBreakdown {
    pub fn tolerance(&self) -> f64 {
        VERDICT_TOL * 1f64.max(self.lhs.abs()).max(self.rhs.abs())
    }

    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + self.tolerance()
    }

    pub fn on_boundary(&self) -> bool {
        (self.rhs - self.lhs).abs() <= 10.0 * self.tolerance()
    }
}

const LHS_LABELS: [&str; 5] = [
    "E<N(mu - E mu), mu - E mu>",
    "1/2 (E<G mu, mu> - <G E mu, E mu>)",
    "1/2 E<R^-1 delta, delta>",
    "-1/2 <R Theta, Theta>",
    "terminal E<H_tilde (mu_T - E mu_T), mu_T - E mu_T>",
];

const RHS_LABELS: [&str; 9] = [
    "1/2 (E<M(mu + f), mu + f> - E<M mu, mu>)",
    "E<N f, E mu>",
    "<q - Phi^T r, E f>",
    "<B^T(phi + psi) E mu, Theta>",
    "-E<B^T(phi + psi) mu, R^-1 delta>",
    "E<B^T phi f, Theta>",
    "-E<r, Theta - R^-1 delta>",
    "terminal 1/2 (E<H(mu_T + f_T), mu_T + f_T> - E<H mu_T, mu_T>)",
    "terminal <H_tilde E f_T, E mu_T>",
];

pub fn check_optimality(session: &Session, flow: &CorrelatedFlow) -> OptimalityBreakdown {
    let grid = session.grid();
    let weights = simpson_weights(grid);
    let md = session.model();
    let law = &flow.law;
    let mut lhs = [0.0; 5];
    let mut rhs = [0.0; 9];
    for (i, &h) in weights.iter().enumerate() {
        let c = session.coefs().node(i);
        let fb = session.feedback(At::Node(i));
        let theta = flow.deviation.offset.get(i);
        let em = flow.mean_flow.get(i);
        let (bt_phi, bt_psi) = (&fb.bt_phi, &fb.bt_psi);
        let mut node_l = [0.0; 4];
        let mut node_r = [0.0; 7];
        let mut ef = DVector::zeros(md.d);
        for (s, &w) in law.weights().iter().enumerate() {
            let mu = flow.flows[s].get(i);
            let f = flow.gaps[s].get(i);
            let delta = law.deltas()[s].node_value(i);
            let rd = &c.r_inv * &delta;
            let dev = mu - em;
            let mf = mu + f;
            let (rd_delta, r_rd) = (rd.dot(&delta), c.r_lin.dot(&rd));
            node_l[0] += w * ip(&fb.n, &dev, &dev);
            node_l[1] += w * 0.5 * ip(&fb.g, mu, mu);
            node_l[2] += w * 0.5 * rd_delta;
            node_r[0] += w * 0.5 * (ip(&fb.m, &mf, &mf) - ip(&fb.m, mu, mu));
            node_r[1] += w * ip(&fb.n, f, em);
            node_r[4] -= w * (ip(bt_phi, mu, &rd) + ip(bt_psi, mu, &rd));
            node_r[5] += w * ip(bt_phi, f, theta);
            node_r[6] -= w * (c.r_lin.dot(theta) - r_rd);
            ef.axpy(w, f, 1.0);
        }
        node_l[1] -= 0.5 * ip(&fb.g, em, em);
        node_l[3] = -0.5 * ip(&c.r, theta, theta);
        node_r[2] = fb.theta_base.dot(&ef);
        node_r[3] = ip(bt_phi, em, theta) + ip(bt_psi, em, theta);
        for k in 0..4 {
            lhs[k] += h * node_l[k];
        }
        for k in 0..7 {
            rhs[k] += h * node_r[k];
        }
    }
    let n = grid.steps();
    let em = flow.mean_flow.get(n);
    let mut ef = DVector::zeros(md.d);
    for (s, &w) in law.weights().iter().enumerate() {
        let mu = flow.flows[s].get(n);
        let f = flow.gaps[s].get(n);
        let dev = mu - em;
        let mf = mu + f;
        lhs[4] += w * ip(&md.h_tilde, &dev, &dev);
        rhs[7] += w * 0.5 * (ip(&md.h, &mf, &mf) - ip(&md.h, mu, mu));
        ef += f * w;
    }
    rhs[8] = ip(&md.h_tilde, &ef, em);
    OptimalityBreakdown {
        lhs_terms: terms(&LHS_LABELS, &lhs),
        rhs_terms: terms(&RHS_LABELS, &rhs),
        lhs: lhs.iter().sum(),
        rhs: rhs.iter().sum(),
    }
}

/// Terms of `J(λ, μ) − J(α̂, m̂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutperformanceBreakdown {
    pub terms: Vec<Term>,
    pub value: f64,
}

impl OutperformanceBreakdown {
    pub fn tolerance(&self) -> f64 {
        VERDICT_TOL * scale(&self.terms)
    }

    pub fn holds(&self) -> bool {
        self.value >= -self.tolerance()
    }
}

const OUTPERF_LABELS: [&str; 11] = [
    "1/2 (<Q_bar m, m> - E<Q_bar mu, mu>)",
    "1/2 (<M m, m> - E<M mu, mu>)",
    "1/2 (<G m, m> - E<G mu, mu>)",
    "<N m, m> - E<N mu, mu>",
    "<L - q + (Phi + Psi)^T r, E mu - m>",
    "<B^T phi m, Theta_m> - E<B^T phi mu, R^-1 delta>",
    "<B^T psi m, Theta_m> - E<B^T psi mu, R^-1 delta>",
    "1/2 (<R Theta_m, Theta_m> - E<R^-1 delta, delta>) - <r, Theta_m - R^-1 E delta>",
    "terminal 1/2 (<H_bar m, m> - E<H_bar mu, mu>)",
    "terminal 1/2 (<H m, m> - E<H mu, mu>)",
    "terminal <H_tilde m, m> - E<H_tilde mu, mu>",
];

pub fn check_outperformance(
    session: &Session,
    flow: &CorrelatedFlow,
    ne: &NeSolution,
) -> OutperformanceBreakdown {
    let grid = session.grid();
    let weights = simpson_weights(grid);
    let md = session.model();
    let law = &flow.law;
    let mut acc = [0.0; 11];
    for (i, &h) in weights.iter().enumerate() {
        let c = session.coefs().node(i);
        let fb = session.feedback(At::Node(i));
        let m = ne.m_hat.get(i);
        let th = ne.offset_m_hat.get(i);
        let (bt_phi, bt_psi) = (&fb.bt_phi, &fb.bt_psi);
        let mut node = [
            0.5 * ip(&c.q_bar, m, m),
            0.5 * ip(&fb.m, m, m),
            0.5 * ip(&fb.g, m, m),
            ip(&fb.n, m, m),
            0.0,
            ip(bt_phi, m, th),
            ip(bt_psi, m, th),
            0.5 * ip(&c.r, th, th) - c.r_lin.dot(th),
        ];
        let mut e_rd = DVector::zeros(md.k);
        for (s, &w) in law.weights().iter().enumerate() {
            let mu = flow.flows[s].get(i);
            let delta = law.deltas()[s].node_value(i);
            let rd = &c.r_inv * &delta;
            node[0] -= w * 0.5 * ip(&c.q_bar, mu, mu);
            node[1] -= w * 0.5 * ip(&fb.m, mu, mu);
            node[2] -= w * 0.5 * ip(&fb.g, mu, mu);
            node[3] -= w * ip(&fb.n, mu, mu);
            node[5] -= w * ip(bt_phi, mu, &rd);
            node[6] -= w * ip(bt_psi, mu, &rd);
            node[7] -= w * 0.5 * rd.dot(&delta);
            e_rd.axpy(w, &rd, 1.0);
        }
        node[7] += c.r_lin.dot(&e_rd);
        let lin = &c.l - &c.q_lin + (&fb.gain + &fb.mean_gain).transpose() * &c.r_lin;
        node[4] = lin.dot(&(flow.mean_flow.get(i) - m));
        for (a, v) in acc.iter_mut().zip(node) {
            *a += h * v;
        }
    }
    let n = grid.steps();
    let m = ne.m_hat.get(n);
    acc[8] = 0.5 * ip(&md.h_bar, m, m);
    acc[9] = 0.5 * ip(&md.h, m, m);
    acc[10] = ip(&md.h_tilde, m, m);
    for (s, &w) in law.weights().iter().enumerate() {
        let mu = flow.flows[s].get(n);
        acc[8] -= w * 0.5 * ip(&md.h_bar, mu, mu);
        acc[9] -= w * 0.5 * ip(&md.h, mu, mu);
        acc[10] -= w * ip(&md.h_tilde, mu, mu);
    }
    OutperformanceBreakdown {
        terms: terms(&OUTPERF_LABELS, &acc),
        value: acc.iter().sum(),
    }
}

/// Nash and mean field control benchmarks of a session.
#[derive(Debug, Clone)]
pub struct Benchmarks {
    pub ne: NeSolution,
    pub mfc: MfcSolution,
}

impl Benchmarks {
    pub fn solve(session: &Session) -> Result<Self> {
        Ok(Self {
            ne: solve_ne(session)?,
            mfc: solve_mfc(session)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Payoffs {
    /// Following the recommendation.
    pub flow: f64,
    pub best_deviation: f64,
    pub ne: f64,
    pub mfc: f64,
}

#[derive(Debug, Clone)]
pub struct CceVerdict {
    pub optimality: OptimalityBreakdown,
    pub outperformance: OutperformanceBreakdown,
    pub is_cce: bool,
    pub boundary: bool,
    pub outperforms_ne: bool,
    pub payoffs: Payoffs,
    /// `(rhs − lhs) − (J_flow − J_deviation)`
    pub optimality_identity_gap: f64,
    /// `value − (J_flow − J_NE)`
    pub outperformance_identity_gap: f64,
    pub consistency_residual: f64,
}

pub fn check_flow(session: &Session, bench: &Benchmarks, flow: &CorrelatedFlow) -> Result<CceVerdict> {
    let optimality = check_optimality(session, flow);
    let outperformance = check_outperformance(session, flow, &bench.ne);
    let report = flow.payoff(session)?;
    let payoffs = Payoffs {
        flow: report.total,
        best_deviation: flow.deviation_payoff(session)?.total,
        ne: bench.ne.payoff.total,
        mfc: bench.mfc.payoff.total,
    };
    Ok(CceVerdict {
        is_cce: optimality.holds(),
        boundary: optimality.on_boundary(),
        outperforms_ne: outperformance.holds(),
        optimality_identity_gap: (optimality.rhs - optimality.lhs)
            - (payoffs.flow - payoffs.best_deviation),
        outperformance_identity_gap: outperformance.value - (payoffs.flow - payoffs.ne),
        consistency_residual: flow.residual_of(&report.means),
        optimality,
        outperformance,
        payoffs,
    })
}

pub fn check_cce(session: &Session, bench: &Benchmarks, law: &ScenarioLaw) -> Result<CceVerdict> {
    let flow = build_flow(session, law)?;
    check_flow(session, bench, &flow)
}
