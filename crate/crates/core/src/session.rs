//! A validated model on a fixed grid, with the law-independent feedback
//! Riccati pair `(φ, ψ)` solved once and cached at every node and midpoint.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid_ode::{At, TimeGrid, Trajectory};
use crate::lq_model::{CoefPoint, LqModel, SampledModel, ValidationReport};
use crate::riccati;

/// Feedback quantities at one evaluation point.
#[derive(Debug, Clone)]
pub struct FeedbackPoint {
    pub phi: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    /// `Φ = R⁻¹(Bᵀφ + S)`
    pub gain: DMatrix<f64>,
    /// `−Φ`, the state gain of every equilibrium policy
    pub neg_gain: DMatrix<f64>,
    /// `Ψ = R⁻¹Bᵀψ`
    pub mean_gain: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// `A − BΦ`
    pub closed_loop: DMatrix<f64>,
    /// `A − BΦ − BΨ`
    pub flow_drift: DMatrix<f64>,
    /// `B R⁻¹`
    pub b_r_inv: DMatrix<f64>,
    /// `(A − BΦ)ᵀ`
    pub closed_loop_t: DMatrix<f64>,
    /// `q − Φᵀr`, the flow-free source of the `θ` equation
    pub theta_base: DVector<f64>,
    /// `Bᵀφ`
    pub bt_phi: DMatrix<f64>,
    /// `Bᵀψ`
    pub bt_psi: DMatrix<f64>,
}

impl FeedbackPoint {
    fn new(c: &CoefPoint, phi: DMatrix<f64>, psi: DMatrix<f64>) -> Self {
        let bt = c.b.transpose();
        let gain = &c.r_inv * (&bt * &phi + &c.s);
        let mean_gain = &c.r_inv * (&bt * &psi);
        let gain_t = gain.transpose();
        let mean_gain_t = mean_gain.transpose();
        let m = &c.q + &gain_t * &c.r * &gain - (&gain_t * &c.s) * 2.0;
        let n = &c.q_tilde + &mean_gain_t * &c.r * &gain - &mean_gain_t * &c.s;
        let g = &mean_gain_t * &c.r * &mean_gain;
        let closed_loop = &c.a - &c.b * &gain;
        let flow_drift = &closed_loop - &c.b * &mean_gain;
        let b_r_inv = &c.b * &c.r_inv;
        let closed_loop_t = closed_loop.transpose();
        let theta_base = &c.q_lin - &gain_t * &c.r_lin;
        let bt_phi = &bt * &phi;
        let bt_psi = &bt * &psi;
        let neg_gain = -&gain;
        Self {
            phi,
            psi,
            gain,
            neg_gain,
            mean_gain,
            m,
            n,
            g,
            closed_loop,
            flow_drift,
            b_r_inv,
            closed_loop_t,
            theta_base,
            bt_phi,
            bt_psi,
        }
    }

    /// `Θ = R⁻¹(Bᵀθ + r)`
    pub fn offset(&self, c: &CoefPoint, theta: &DVector<f64>) -> DVector<f64> {
        &c.r_inv * (c.b.transpose() * theta + &c.r_lin)
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    model: LqModel,
    grid: TimeGrid,
    coefs: SampledModel,
    report: ValidationReport,
    phi: Trajectory<DMatrix<f64>>,
    psi: Trajectory<DMatrix<f64>>,
    points: Vec<FeedbackPoint>,
    covariance: OnceLock<Trajectory<DMatrix<f64>>>,
}

impl Session {
    /// Validates `model` on `grid` and solves the feedback Riccati pair.
    pub fn new(model: LqModel, grid: TimeGrid) -> Result<Self> {
        let report = model.validate(&grid)?;
        if !report.passed() {
            return Err(Error::InvalidModel(report.to_string()));
        }
        let coefs = model.sample(&grid)?;
        let (phi, psi) = riccati::solve_feedback_riccati(&coefs, &model.h, &model.h_tilde)?;
        let mut points = Vec::with_capacity(2 * grid.steps() + 1);
        for i in 0..=grid.steps() {
            points.push(FeedbackPoint::new(
                coefs.node(i),
                phi.get(i).clone(),
                psi.get(i).clone(),
            ));
            if i < grid.steps() {
                let at = At::Mid(i);
                points.push(FeedbackPoint::new(coefs.at(at), phi.at(at), psi.at(at)));
            }
        }
        Ok(Self {
            model,
            grid,
            coefs,
            report,
            phi,
            psi,
            points,
            covariance: OnceLock::new(),
        })
    }

    pub fn model(&self) -> &LqModel {
        &self.model
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    pub fn coefs(&self) -> &SampledModel {
        &self.coefs
    }

    pub fn coef(&self, at: At) -> &CoefPoint {
        self.coefs.at(at)
    }

    pub fn feedback(&self, at: At) -> &FeedbackPoint {
        &self.points[at.slot()]
    }

    pub fn phi(&self) -> &Trajectory<DMatrix<f64>> {
        &self.phi
    }

    pub fn psi(&self) -> &Trajectory<DMatrix<f64>> {
        &self.psi
    }

    /// State covariance under the feedback gain `−Φ`, computed on first use.
    pub fn feedback_covariance(&self) -> Result<&Trajectory<DMatrix<f64>>> {
        if let Some(v) = self.covariance.get() {
            return Ok(v);
        }
        let v0 = self.model.initial.covariance();
        let v = crate::grid_ode::integrate_forward(&self.grid, v0, |at, v: &DMatrix<f64>| {
            let dv = &self.feedback(at).closed_loop * v;
            &dv + dv.transpose() + &self.coef(at).sigma_sigma_t
        })?;
        Ok(self.covariance.get_or_init(|| v))
    }

    /// Node trajectory of some feedback quantity.
    pub fn node_trajectory<S: crate::grid_ode::OdeState>(
        &self,
        f: impl Fn(&CoefPoint, &FeedbackPoint) -> S,
    ) -> Trajectory<S> {
        Trajectory::from_fn(self.grid, |i, _| f(self.coefs.node(i), &self.points[2 * i]))
    }

    pub fn ensure_grid<S>(&self, traj: &Trajectory<S>) -> Result<()> {
        self.grid.ensure_same(traj.grid())
    }
}
