//! Backward Riccati systems: the deviating player's `(φ, ψ, θ)`, the Nash
//! equilibrium and the mean field control optimum.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::grid_ode::{integrate_backward, integrate_forward, integrate_linear, slot_values, At, Trajectory};
use crate::lq_model::{CoefPoint, SampledModel};
use crate::moments::{expected_payoff, AffinePolicy, PayoffReport};
use crate::session::Session;

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `(φB + Sᵀ)R⁻¹(Bᵀφ + S)` written as `KᵀRK`, symmetrized.
fn riccati_rhs(c: &CoefPoint, phi: &DMatrix<f64>, running: &DMatrix<f64>) -> DMatrix<f64> {
    let k = &c.r_inv * (c.b.transpose() * phi + &c.s);
    let quad = symmetrize(k.transpose() * &c.r * &k);
    let pa = phi * &c.a;
    -(symmetrize(&pa + pa.transpose()) + running - quad)
}

/// Matrix Riccati `φ̇ + φA + Aᵀφ + Q_x − (φB + Sᵀ)R⁻¹(Bᵀφ + S) = 0`,
/// `φ_T = terminal`, with `Q_x` built from the coefficients.
pub fn solve_riccati(
    coefs: &SampledModel,
    running: impl Fn(&CoefPoint) -> DMatrix<f64>,
    terminal: DMatrix<f64>,
) -> Result<Trajectory<DMatrix<f64>>> {
    integrate_backward(coefs.grid(), terminal, |at, phi: &DMatrix<f64>| {
        let c = coefs.at(at);
        riccati_rhs(c, phi, &running(c))
    })
}

/// The law-independent pair `(φ, ψ)` of the deviating player.
pub fn solve_feedback_riccati(
    coefs: &SampledModel,
    h: &DMatrix<f64>,
    h_tilde: &DMatrix<f64>,
) -> Result<(Trajectory<DMatrix<f64>>, Trajectory<DMatrix<f64>>)> {
    let pair = integrate_backward(
        coefs.grid(),
        (h.clone(), h_tilde.clone()),
        |at, (phi, psi): &(DMatrix<f64>, DMatrix<f64>)| {
            let c = coefs.at(at);
            let dphi = riccati_rhs(c, phi, &c.q);
            let gain = &c.r_inv * (c.b.transpose() * phi + &c.s);
            let bt_psi = c.b.transpose() * psi;
            let dpsi = -(c.a.transpose() * psi + &c.q_tilde - gain.transpose() * bt_psi);
            (dphi, dpsi)
        },
    )?;
    let grid = *coefs.grid();
    let (phi, psi): (Vec<_>, Vec<_>) = pair.into_values().into_iter().unzip();
    Ok((
        Trajectory::from_values(grid, phi)?,
        Trajectory::from_values(grid, psi)?,
    ))
}

/// Linear backward equation `θ̇ + Aᵀθ + F_t − Kᵀ(Bᵀθ + r) = 0`, `θ_T = 0`,
/// where `K = R⁻¹(Bᵀφ_x + S)` for the given Riccati solution `φ_x`.
pub fn solve_linear_theta(
    coefs: &SampledModel,
    phi_x: &Trajectory<DMatrix<f64>>,
    forcing: impl Fn(At) -> DVector<f64>,
) -> Result<Trajectory<DVector<f64>>> {
    let d = phi_x.first().nrows();
    integrate_backward(coefs.grid(), DVector::zeros(d), |at, theta: &DVector<f64>| {
        let c = coefs.at(at);
        let gain = &c.r_inv * (c.b.transpose() * phi_x.at(at) + &c.s);
        let ctrl = c.b.transpose() * theta + &c.r_lin;
        -(c.a.transpose() * theta + forcing(at) - gain.transpose() * ctrl)
    })
}

/// Best deviation against a flow whose expectation is `mean`.
#[derive(Debug, Clone)]
pub struct DeviationSolution {
    pub theta: Trajectory<DVector<f64>>,
    pub mean: Trajectory<DVector<f64>>,
    /// `Θ = R⁻¹(Bᵀθ + r)` at the nodes.
    pub offset: Trajectory<DVector<f64>>,
    /// `Θ` at the midpoints.
    mid_offset: Vec<DVector<f64>>,
    /// `−(ΨE[μ] + Θ)`, the offset of `β̂`.
    pub policy_offset: Trajectory<DVector<f64>>,
}

impl DeviationSolution {
    /// `β̂ = −(ΦX + ΨE[μ] + Θ)`, blind to the scenario.
    pub fn policy(&self) -> AffinePolicy {
        AffinePolicy::feedback(vec![self.policy_offset.clone()])
    }

    /// `Θ` at any evaluation point.
    pub fn offset_at(&self, at: At) -> &DVector<f64> {
        match at {
            At::Node(i) => self.offset.get(i),
            At::Mid(i) => &self.mid_offset[i],
        }
    }
}

/// Solves `θ` against `E[μ]` with its time derivative supplied at the nodes.
pub fn solve_deviation(
    session: &Session,
    mean: &Trajectory<DVector<f64>>,
    mean_dot: &Trajectory<DVector<f64>>,
) -> Result<DeviationSolution> {
    session.ensure_grid(mean)?;
    session.ensure_grid(mean_dot)?;
    // θ̇ = −((A − BΦ)ᵀθ + q − Φᵀr + ψ dE[μ]/dt)
    let source = slot_values(session.grid(), |at| {
        let fb = session.feedback(at);
        -(&fb.psi * mean_dot.at(at) + &fb.theta_base)
    });
    let theta = integrate_linear(
        session.grid(),
        DVector::zeros(session.model().d),
        true,
        -1.0,
        |at| &session.feedback(at).closed_loop_t,
        &source,
    )?;
    let grid = *session.grid();
    let offset = Trajectory::from_fn(grid, |i, _| {
        let at = At::Node(i);
        session.feedback(at).offset(session.coef(at), theta.get(i))
    });
    let mid_offset = (0..grid.steps())
        .map(|i| {
            let at = At::Mid(i);
            session.feedback(at).offset(session.coef(at), &theta.at(at))
        })
        .collect();
    let policy_offset = Trajectory::from_fn(grid, |i, _| {
        -(&session.feedback(At::Node(i)).mean_gain * mean.get(i) + offset.get(i))
    });
    Ok(DeviationSolution {
        theta,
        mean: mean.clone(),
        offset,
        mid_offset,
        policy_offset,
    })
}

#[derive(Debug, Clone)]
pub struct NeSolution {
    pub phi_ne: Trajectory<DMatrix<f64>>,
    pub theta_ne: Trajectory<DVector<f64>>,
    /// Equilibrium mean flow `m̂`.
    pub m_hat: Trajectory<DVector<f64>>,
    pub m_hat_dot: Trajectory<DVector<f64>>,
    /// Deviation `θ` solved against `m̂`.
    pub theta_m_hat: Trajectory<DVector<f64>>,
    /// `Θ^m̂`
    pub offset_m_hat: Trajectory<DVector<f64>>,
    /// `α̂ = −(ΦX + Ψm̂ + Θ^m̂)`
    pub policy: AffinePolicy,
    pub payoff: PayoffReport,
}

impl NeSolution {
    /// `δ = RΘ^m̂`, the class-𝒢 parameter that reproduces the equilibrium.
    pub fn degenerate_delta(&self, session: &Session) -> Trajectory<DVector<f64>> {
        Trajectory::from_fn(*session.grid(), |i, _| {
            &session.coefs().node(i).r * self.offset_m_hat.get(i)
        })
    }
}

/// `ẋ = (A − BR⁻¹(Bᵀφ_x + S))x − BR⁻¹(Bᵀθ_x + r)`, `x_0 = ν₁`, together
/// with its derivative at the nodes.
fn mean_flow(
    session: &Session,
    phi_x: &Trajectory<DMatrix<f64>>,
    theta_x: &Trajectory<DVector<f64>>,
) -> Result<(Trajectory<DVector<f64>>, Trajectory<DVector<f64>>)> {
    let rhs = |at: At, x: &DVector<f64>| {
        let c = session.coef(at);
        let bt = c.b.transpose();
        let gain = &c.r_inv * (&bt * phi_x.at(at) + &c.s);
        let off = &c.r_inv * (&bt * theta_x.at(at) + &c.r_lin);
        (&c.a - &c.b * gain) * x - &c.b * off
    };
    let x = integrate_forward(session.grid(), session.model().initial.mean.clone(), rhs)?;
    let x_dot = Trajectory::from_fn(*session.grid(), |i, _| rhs(At::Node(i), x.get(i)));
    Ok((x, x_dot))
}

pub fn solve_ne(session: &Session) -> Result<NeSolution> {
    let md = session.model();
    let coefs = session.coefs();
    let phi_ne = solve_riccati(coefs, |c| &c.q + &c.q_tilde, &md.h + &md.h_tilde)?;
    let theta_ne = solve_linear_theta(coefs, &phi_ne, |at| session.coef(at).q_lin.clone())?;
    let (m_hat, m_hat_dot) = mean_flow(session, &phi_ne, &theta_ne)?;
    let dev = solve_deviation(session, &m_hat, &m_hat_dot)?;
    let policy = dev.policy();
    let payoff = expected_payoff(session, &policy, std::slice::from_ref(&m_hat), &[1.0])?;
    Ok(NeSolution {
        phi_ne,
        theta_ne,
        m_hat,
        m_hat_dot,
        theta_m_hat: dev.theta,
        offset_m_hat: dev.offset,
        policy,
        payoff,
    })
}

#[derive(Debug, Clone)]
pub struct MfcSolution {
    pub phi_mfc: Trajectory<DMatrix<f64>>,
    pub theta_mfc: Trajectory<DVector<f64>>,
    pub psi_bar: Trajectory<DMatrix<f64>>,
    pub theta_bar: Trajectory<DVector<f64>>,
    /// Optimal mean flow `x̄`.
    pub x_bar: Trajectory<DVector<f64>>,
    /// `α = −(ΦX + R⁻¹Bᵀψ̄x̄ + R⁻¹(Bᵀθ̄ + r))`
    pub policy: AffinePolicy,
    pub payoff: PayoffReport,
}

pub fn solve_mfc(session: &Session) -> Result<MfcSolution> {
    let md = session.model();
    let coefs = session.coefs();
    let phi_mfc = solve_riccati(
        coefs,
        |c| &c.q + &c.q_tilde * 2.0 + &c.q_bar,
        &md.h + &md.h_tilde * 2.0 + &md.h_bar,
    )?;
    let theta_mfc = solve_linear_theta(coefs, &phi_mfc, |at| {
        let c = session.coef(at);
        &c.q_lin - &c.l
    })?;
    let (x_bar, _) = mean_flow(session, &phi_mfc, &theta_mfc)?;

    // ψ̄ solves ψ̄̇ + ψ̄Ā + Aᵀψ̄ + (Q̄ + 2Q̃) − Φᵀ Bᵀψ̄ = 0
    let closed_loop_mfc = |at: At| {
        let c = session.coef(at);
        let gain = &c.r_inv * (c.b.transpose() * phi_mfc.at(at) + &c.s);
        &c.a - &c.b * gain
    };
    let psi_bar = integrate_backward(
        session.grid(),
        &md.h_bar + &md.h_tilde * 2.0,
        |at, pb: &DMatrix<f64>| {
            let c = session.coef(at);
            let fb = session.feedback(at);
            -(pb * closed_loop_mfc(at) + c.a.transpose() * pb + &c.q_bar + &c.q_tilde * 2.0
                - fb.gain.transpose() * (c.b.transpose() * pb))
        },
    )?;
    let theta_bar = solve_linear_theta(coefs, session.phi(), |at| {
        let c = session.coef(at);
        let b_bar = &c.r_inv * (c.b.transpose() * theta_mfc.at(at) + &c.r_lin);
        &c.q_lin - &c.l - psi_bar.at(at) * (&c.b * b_bar)
    })?;
    let offset = Trajectory::from_fn(*session.grid(), |i, _| {
        let c = coefs.node(i);
        let bt = c.b.transpose();
        -(&c.r_inv * (&bt * psi_bar.get(i) * x_bar.get(i) + &bt * theta_bar.get(i) + &c.r_lin))
    });
    let policy = AffinePolicy::feedback(vec![offset]);
    let payoff = expected_payoff(session, &policy, std::slice::from_ref(&x_bar), &[1.0])?;
    Ok(MfcSolution {
        phi_mfc,
        theta_mfc,
        psi_bar,
        theta_bar,
        x_bar,
        policy,
        payoff,
    })
}
