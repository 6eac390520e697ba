//! Correlated flows of class 𝒢 driven by a finitely supported scenario law.
//!
//! A moderator draws scenario `s` with probability `w_s`, announces the
//! recommendation `λ = −(ΦX + Ψμ^s + R⁻¹δ^s)` and the flow `μ^s` solving
//! `μ̇ = (A − BΦ − BΨ)μ − BR⁻¹δ^s`, `μ_0 = ν₁`.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::abatement::LinearFlowLaw;
use crate::config::{value_to_matrix, Document};
use crate::error::{Error, Result};
use crate::grid_ode::{integrate_linear, slot_values, At, TimeGrid, Trajectory};
use crate::moments::{expected_payoff, propagate_mean, AffinePolicy, PayoffReport};
use crate::riccati::{solve_deviation, DeviationSolution};
use crate::session::Session;

const WEIGHT_TOL: f64 = 1e-12;

/// `δ` in one scenario: constant, or tabulated at the grid nodes with the
/// grid's cubic midpoint rule in between.
#[derive(Debug, Clone, PartialEq)]
pub enum DeltaPath {
    Constant(DVector<f64>),
    Table(Trajectory<DVector<f64>>),
}

impl DeltaPath {
    pub fn dim(&self) -> usize {
        match self {
            DeltaPath::Constant(v) => v.len(),
            DeltaPath::Table(t) => t.first().len(),
        }
    }

    pub fn node_value(&self, i: usize) -> DVector<f64> {
        match self {
            DeltaPath::Constant(v) => v.clone(),
            DeltaPath::Table(t) => t.get(i).clone(),
        }
    }

    pub fn value(&self, at: At) -> DVector<f64> {
        match (self, at) {
            (DeltaPath::Constant(v), _) => v.clone(),
            (DeltaPath::Table(t), at) => t.at(at),
        }
    }

    fn grid(&self) -> Option<&TimeGrid> {
        match self {
            DeltaPath::Constant(_) => None,
            DeltaPath::Table(t) => Some(t.grid()),
        }
    }
}

/// Finitely supported law of `δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioLaw {
    weights: Vec<f64>,
    deltas: Vec<DeltaPath>,
}

impl ScenarioLaw {
    /// Drops zero-weight scenarios; the remaining weights must sum to one.
    pub fn new(weights: Vec<f64>, deltas: Vec<DeltaPath>) -> Result<Self> {
        if weights.len() != deltas.len() {
            return Err(Error::InvalidLaw(format!(
                "{} weights for {} scenarios",
                weights.len(),
                deltas.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidLaw(format!("invalid weight {w}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidLaw(format!("weights sum to {sum}, not 1")));
        }
        let dropped = weights.iter().filter(|w| **w == 0.0).count();
        if dropped > 0 {
            warn!("dropping {dropped} zero-weight scenario(s)");
        }
        let (weights, deltas): (Vec<f64>, Vec<DeltaPath>) = weights
            .into_iter()
            .zip(deltas)
            .filter(|(w, _)| *w > 0.0)
            .unzip();
        if weights.is_empty() {
            return Err(Error::InvalidLaw("no scenario with positive weight".into()));
        }
        let k = deltas[0].dim();
        if deltas.iter().any(|d| d.dim() != k) {
            return Err(Error::InvalidLaw("scenarios have different delta dimensions".into()));
        }
        if deltas
            .iter()
            .any(|d| !d.node_value(0).iter().all(|v| v.is_finite()))
        {
            return Err(Error::InvalidLaw("non-finite delta".into()));
        }
        Ok(Self { weights, deltas })
    }

    /// Deterministic flow.
    pub fn degenerate(delta: DeltaPath) -> Result<Self> {
        Self::new(vec![1.0], vec![delta])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn deltas(&self) -> &[DeltaPath] {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `E[δ]` at an evaluation point.
    pub fn mean_delta(&self, at: At) -> DVector<f64> {
        let mut out = DVector::zeros(self.deltas[0].dim());
        for (w, d) in self.weights.iter().zip(&self.deltas) {
            out += d.value(at) * *w;
        }
        out
    }

    fn check(&self, session: &Session) -> Result<()> {
        let k = session.model().k;
        if self.deltas[0].dim() != k {
            return Err(Error::DimensionMismatch(format!(
                "delta has dimension {}, model has k = {k}",
                self.deltas[0].dim()
            )));
        }
        for d in &self.deltas {
            if let Some(g) = d.grid() {
                session.grid().ensure_same(g)?;
            }
        }
        Ok(())
    }

    /// Reads the `[law]` section. Supported forms:
    /// `z1`/`sigma2` (two-point linear abatement law), `z_support`
    /// (`δ = −z`), `delta_constant` (one row per scenario) and
    /// `delta_table` with `T` and `grid_steps` (one node table per scenario).
    pub fn from_document(doc: &Document, grid: &TimeGrid) -> Result<Self> {
        let sec = doc.section("law")?;
        sec.only(&[
            "weights",
            "z1",
            "sigma2",
            "z_support",
            "delta_constant",
            "delta_table",
            "T",
            "grid_steps",
        ])?;
        if sec.contains("z1") {
            let law = LinearFlowLaw::new(sec.f64("z1")?, sec.f64_or("sigma2", 0.0)?)
                .map_err(|e| sec.error("sigma2", e.to_string()))?;
            return law.to_scenario_law();
        }
        let weights = sec.f64_list("weights")?;
        let wrap = |key: &str, e: Error| match e {
            Error::InvalidLaw(m) => sec.error(key, m),
            other => other,
        };
        if sec.contains("z_support") {
            let zs = sec.f64_list("z_support")?;
            let deltas = zs
                .iter()
                .map(|z| DeltaPath::Constant(DVector::from_element(1, -z)))
                .collect();
            return Self::new(weights, deltas).map_err(|e| wrap("weights", e));
        }
        if sec.contains("delta_constant") {
            let m = sec.matrix("delta_constant")?;
            let deltas = m
                .row_iter()
                .map(|r| DeltaPath::Constant(r.transpose()))
                .collect();
            return Self::new(weights, deltas).map_err(|e| wrap("weights", e));
        }
        if sec.contains("delta_table") {
            let horizon = sec.f64("T")?;
            let steps = sec.usize("grid_steps")?;
            let law_grid = TimeGrid::new(horizon, steps).map_err(|e| sec.error("grid_steps", e.to_string()))?;
            grid.ensure_same(&law_grid)?;
            let raw = sec.raw("delta_table").expect("key present");
            let tables = raw
                .as_array()
                .ok_or_else(|| sec.error("delta_table", "expected one table per scenario"))?;
            let mut deltas = Vec::with_capacity(tables.len());
            for t in tables {
                let m: DMatrix<f64> =
                    value_to_matrix(t).map_err(|e| sec.error("delta_table", e))?;
                if m.nrows() != law_grid.len() {
                    return Err(sec.error(
                        "delta_table",
                        format!("table has {} rows, grid has {} nodes", m.nrows(), law_grid.len()),
                    ));
                }
                let values: Vec<DVector<f64>> = m.row_iter().map(|r| r.transpose()).collect();
                deltas.push(DeltaPath::Table(
                    Trajectory::from_values(law_grid, values).map_err(|e| sec.error("delta_table", e.to_string()))?,
                ));
            }
            return Self::new(weights, deltas).map_err(|e| wrap("weights", e));
        }
        Err(sec.error(
            "weights",
            "law needs one of z1, z_support, delta_constant, delta_table",
        ))
    }

    pub fn parse(source: &str, grid: &TimeGrid) -> Result<Self> {
        Self::from_document(&Document::parse(source)?, grid)
    }
}

/// A class-𝒢 correlated flow with its best deviation.
#[derive(Debug, Clone)]
pub struct CorrelatedFlow {
    pub law: ScenarioLaw,
    /// `μ^s` per scenario.
    pub flows: Vec<Trajectory<DVector<f64>>>,
    pub mean_flow: Trajectory<DVector<f64>>,
    pub mean_flow_dot: Trajectory<DVector<f64>>,
    /// Best deviation against `E[μ]`.
    pub deviation: DeviationSolution,
    /// `f(μ^s)`, the mean gap between the best deviation and `λ`.
    pub gaps: Vec<Trajectory<DVector<f64>>>,
    /// `λ` with one offset per scenario.
    pub recommendation: AffinePolicy,
}

pub fn build_flow(session: &Session, law: &ScenarioLaw) -> Result<CorrelatedFlow> {
    law.check(session)?;
    let grid = *session.grid();
    let nu1 = session.model().initial.mean.clone();
    let flows: Vec<Trajectory<DVector<f64>>> = law
        .deltas()
        .iter()
        .map(|delta| {
            let source = slot_values(&grid, |at| -(&session.feedback(at).b_r_inv * delta.value(at)));
            integrate_linear(&grid, nu1.clone(), false, 1.0, |at| &session.feedback(at).flow_drift, &source)
        })
        .collect::<Result<_>>()?;
    let weighted: Vec<(f64, &Trajectory<DVector<f64>>)> =
        law.weights().iter().copied().zip(flows.iter()).collect();
    let mean_flow = Trajectory::weighted_sum(&weighted)?;
    let mean_flow_dot = Trajectory::from_fn(grid, |i, _| {
        let fb = session.feedback(At::Node(i));
        &fb.flow_drift * mean_flow.get(i) - &fb.b_r_inv * law.mean_delta(At::Node(i))
    });
    let deviation = solve_deviation(session, &mean_flow, &mean_flow_dot)?;

    let gaps = flows
        .iter()
        .zip(law.deltas())
        .map(|(mu, delta)| {
            // B(Ψ(μ − E[μ]) + R⁻¹δ − Θ) at every node and midpoint
            let source = slot_values(&grid, |at| {
                let fb = session.feedback(at);
                let c = session.coef(at);
                let mut forcing = &c.r_inv * delta.value(at) - deviation.offset_at(at);
                forcing.gemv(1.0, &fb.mean_gain, &(mu.at(at) - mean_flow.at(at)), 1.0);
                &c.b * forcing
            });
            let zero = DVector::zeros(session.model().d);
            integrate_linear(&grid, zero, false, 1.0, |at| &session.feedback(at).closed_loop, &source)
        })
        .collect::<Result<_>>()?;

    let offsets = flows
        .iter()
        .zip(law.deltas())
        .map(|(mu, delta)| {
            Trajectory::from_fn(grid, |i, _| {
                let fb = session.feedback(At::Node(i));
                let c = session.coefs().node(i);
                -(&fb.mean_gain * mu.get(i) + &c.r_inv * delta.node_value(i))
            })
        })
        .collect();
    Ok(CorrelatedFlow {
        law: law.clone(),
        flows,
        mean_flow,
        mean_flow_dot,
        deviation,
        gaps,
        recommendation: AffinePolicy::feedback(offsets),
    })
}

impl CorrelatedFlow {
    /// Expected payoff of following the recommendation.
    pub fn payoff(&self, session: &Session) -> Result<PayoffReport> {
        expected_payoff(session, &self.recommendation, &self.flows, self.law.weights())
    }

    /// Expected payoff of the best deviation against the flow.
    pub fn deviation_payoff(&self, session: &Session) -> Result<PayoffReport> {
        expected_payoff(session, &self.deviation.policy(), &self.flows, self.law.weights())
    }

    /// `max_s sup_t |E[X^λ_t | s] − μ^s_t|` from the moment equations.
    pub fn consistency_residual(&self, session: &Session) -> Result<f64> {
        let means = (0..self.flows.len())
            .map(|s| propagate_mean(session, &self.recommendation, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.residual_of(&means))
    }

    /// Same residual from state means already propagated under `λ`.
    pub fn residual_of(&self, means: &[Trajectory<DVector<f64>>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (m, mu) in means.iter().zip(&self.flows) {
            for (a, b) in m.iter().zip(mu.iter()) {
                worst = worst.max((a - b).amax());
            }
        }
        worst
    }
}
