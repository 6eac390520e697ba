//! Affine feedback policies and exact payoff evaluation through conditional
//! moment ODEs.
//!
//! Under `a = K_t X + k_t` the conditional mean and covariance of the state
//! solve `ṁ = (A + BK)m + Bk` and `V̇ = (A + BK)V + V(A + BK)ᵀ + σσᵀ`. The
//! payoff is quadratic, so its expectation is a function of `(m, V, μ)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid_ode::{integrate_forward, integrate_linear, simpson, slot_values, At, Trajectory};
use crate::lq_model::CoefPoint;
use crate::session::Session;

/// State gain `K` of an affine policy.
#[derive(Debug, Clone, PartialEq)]
pub enum Gain {
    /// `K = −Φ`, the feedback gain shared by every equilibrium object.
    Feedback,
    Table(Trajectory<DMatrix<f64>>),
}

/// `a = K_t X + k_t^s`, with one offset per scenario, or a single offset for
/// policies that ignore the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePolicy {
    pub gain: Gain,
    pub offsets: Vec<Trajectory<DVector<f64>>>,
}

impl AffinePolicy {
    pub fn feedback(offsets: Vec<Trajectory<DVector<f64>>>) -> Self {
        Self {
            gain: Gain::Feedback,
            offsets,
        }
    }

    pub fn is_scenario_blind(&self) -> bool {
        self.offsets.len() == 1
    }

    pub fn gain_at(&self, session: &Session, at: At) -> DMatrix<f64> {
        match &self.gain {
            Gain::Feedback => session.feedback(at).neg_gain.clone(),
            Gain::Table(k) => k.at(at),
        }
    }

    pub fn gain_node(&self, session: &Session, i: usize) -> DMatrix<f64> {
        self.gain_at(session, At::Node(i))
    }

    pub fn offset(&self, scenario: usize) -> &Trajectory<DVector<f64>> {
        if self.is_scenario_blind() {
            &self.offsets[0]
        } else {
            &self.offsets[scenario]
        }
    }

    fn check(&self, session: &Session) -> Result<()> {
        if self.offsets.is_empty() {
            return Err(Error::DimensionMismatch("policy without offsets".into()));
        }
        let (d, k) = (session.model().d, session.model().k);
        if let Gain::Table(g) = &self.gain {
            session.ensure_grid(g)?;
            if g.first().shape() != (k, d) {
                return Err(Error::DimensionMismatch(format!(
                    "policy gain is {:?}, expected {:?}",
                    g.first().shape(),
                    (k, d)
                )));
            }
        }
        for o in &self.offsets {
            session.ensure_grid(o)?;
            if o.first().len() != k {
                return Err(Error::DimensionMismatch("policy offset length differs from k".into()));
            }
        }
        Ok(())
    }
}

/// Conditional covariance of the state under gain `K`; identical for every
/// scenario.
pub fn propagate_covariance(session: &Session, policy: &AffinePolicy) -> Result<Trajectory<DMatrix<f64>>> {
    if policy.gain == Gain::Feedback {
        return session.feedback_covariance().cloned();
    }
    let v0 = session.model().initial.covariance();
    integrate_forward(session.grid(), v0, |at, v: &DMatrix<f64>| {
        let c = session.coef(at);
        let drift = &c.a + &c.b * policy.gain_at(session, at);
        let dv = &drift * v;
        &dv + dv.transpose() + &c.sigma_sigma_t
    })
}

/// Conditional mean of the state in one scenario.
pub fn propagate_mean(
    session: &Session,
    policy: &AffinePolicy,
    scenario: usize,
) -> Result<Trajectory<DVector<f64>>> {
    let offset = policy.offset(scenario);
    let m0 = session.model().initial.mean.clone();
    match &policy.gain {
        Gain::Feedback => {
            let source = slot_values(session.grid(), |at| &session.coef(at).b * offset.at(at));
            integrate_linear(session.grid(), m0, false, 1.0, |at| &session.feedback(at).closed_loop, &source)
        }
        Gain::Table(k) => integrate_forward(session.grid(), m0, |at, m: &DVector<f64>| {
            let c = session.coef(at);
            (&c.a + &c.b * k.at(at)) * m + &c.b * offset.at(at)
        }),
    }
}

/// Expected payoff of an affine policy against a finite family of flows.
#[derive(Debug, Clone)]
pub struct PayoffReport {
    pub total: f64,
    /// Expected running payoff at every node.
    pub running: Trajectory<f64>,
    pub terminal: f64,
    /// Conditional state mean per scenario (one entry for scenario-blind
    /// policies).
    pub means: Vec<Trajectory<DVector<f64>>>,
    pub covariance: Trajectory<DMatrix<f64>>,
}

/// `xᵀAy` without temporaries.
pub(crate) fn bilinear(a: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        let col: f64 = (0..a.nrows()).map(|i| x[i] * a[(i, j)]).sum();
        acc += col * y[j];
    }
    acc
}

/// Part of `E f` driven by the covariance `v` of `X` under `a = Kx + k`.
pub fn covariance_running(c: &CoefPoint, gain: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let kv = gain * v;
    let tr_rkvk = (&c.r * &kv * gain.transpose()).trace();
    let tr_ksv = (gain.transpose() * &c.s * v).trace();
    -0.5 * ((&c.q * v).trace() + tr_rkvk) - tr_ksv
}

/// Part of `E f` driven by the mean `m` of `X`, the flow `μ` and the mean
/// action `Km + k`.
pub fn mean_running(
    c: &CoefPoint,
    gain: &DMatrix<f64>,
    offset: &DVector<f64>,
    m: &DVector<f64>,
    mu: &DVector<f64>,
) -> f64 {
    let mut a_bar = offset.clone();
    a_bar.gemv(1.0, gain, m, 1.0);
    c.l.dot(mu) - 0.5 * bilinear(&c.q_bar, mu, mu)
        - 0.5 * bilinear(&c.q, m, m)
        - bilinear(&c.q_tilde, mu, m)
        - c.q_lin.dot(m)
        - 0.5 * bilinear(&c.r, &a_bar, &a_bar)
        - bilinear(&c.s, &a_bar, m)
        - c.r_lin.dot(&a_bar)
}

/// `E f(t, X, μ, a)` for `X` with mean `m`, covariance `v` and `a = Kx + k`.
pub fn expected_running(
    c: &CoefPoint,
    gain: &DMatrix<f64>,
    offset: &DVector<f64>,
    m: &DVector<f64>,
    v: &DMatrix<f64>,
    mu: &DVector<f64>,
) -> f64 {
    covariance_running(c, gain, v) + mean_running(c, gain, offset, m, mu)
}

/// `E g(X_T, μ_T)`.
pub fn expected_terminal(
    session: &Session,
    m: &DVector<f64>,
    v: &DMatrix<f64>,
    mu: &DVector<f64>,
) -> f64 {
    let md = session.model();
    -(0.5 * mu.dot(&(&md.h_bar * mu))
        + 0.5 * ((&md.h * v).trace() + m.dot(&(&md.h * m)))
        + mu.dot(&(&md.h_tilde * m)))
}

pub fn expected_payoff(
    session: &Session,
    policy: &AffinePolicy,
    flows: &[Trajectory<DVector<f64>>],
    weights: &[f64],
) -> Result<PayoffReport> {
    policy.check(session)?;
    if flows.len() != weights.len() || flows.is_empty() {
        return Err(Error::DimensionMismatch("one weight per flow required".into()));
    }
    if !policy.is_scenario_blind() && policy.offsets.len() != flows.len() {
        return Err(Error::DimensionMismatch(format!(
            "policy has {} scenario offsets for {} flows",
            policy.offsets.len(),
            flows.len()
        )));
    }
    for f in flows {
        session.ensure_grid(f)?;
    }
    let grid = *session.grid();
    let covariance = propagate_covariance(session, policy)?;
    let means: Vec<_> = (0..policy.offsets.len())
        .map(|s| propagate_mean(session, policy, s))
        .collect::<Result<_>>()?;
    let gain = |i: usize| -> &DMatrix<f64> {
        match &policy.gain {
            Gain::Feedback => &session.feedback(At::Node(i)).neg_gain,
            Gain::Table(k) => k.get(i),
        }
    };
    let wsum: f64 = weights.iter().sum();
    let mut running: Vec<f64> = (0..grid.len())
        .map(|i| wsum * covariance_running(session.coefs().node(i), gain(i), covariance.get(i)))
        .collect();
    let mut terminal = 0.0;
    for (s, (flow, w)) in flows.iter().zip(weights).enumerate() {
        let mean = if policy.is_scenario_blind() { &means[0] } else { &means[s] };
        let offset = policy.offset(s);
        for (i, r) in running.iter_mut().enumerate() {
            *r += w * mean_running(
                session.coefs().node(i),
                gain(i),
                offset.get(i),
                mean.get(i),
                flow.get(i),
            );
        }
        terminal += w * expected_terminal(session, mean.last(), covariance.last(), flow.last());
    }
    let running = Trajectory::from_values(grid, running)?;
    let total = simpson(&running) + terminal;
    Ok(PayoffReport {
        total,
        running,
        terminal,
        means,
        covariance,
    })
}
