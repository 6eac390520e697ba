//! Emission abatement game.
//!
//! Payoff `E ∫ (aμ − (b/2)μ² − ½α² − (ε/2)(μ − X)²) dt` with `dX = α dt + dW`.
//! Correlated flows with linear means `μ_t = ν₁ + tZ` are characterized by
//! the first two moments of `Z`.

use nalgebra::{DMatrix, DVector};

use crate::config::Section;
use crate::error::{Error, Result};
use crate::flows::{DeltaPath, ScenarioLaw};
use crate::grid_ode::{integrate_backward, integrate_forward, simpson, TimeGrid, Trajectory};
use crate::lq_model::{Coef, InitialLaw, LqModel};

/// Relative tolerance of the closed-form verdicts.
pub const VERDICT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbatementParams {
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub horizon: f64,
}

impl AbatementParams {
    pub fn new(a: f64, b: f64, eps: f64, nu1: f64, nu2: f64, horizon: f64) -> Result<Self> {
        let p = Self {
            a,
            b,
            eps,
            nu1,
            nu2,
            horizon,
        };
        if !(eps > 0.0) {
            return Err(Error::InvalidModel(format!("eps must be positive, got {eps}")));
        }
        p.check_relaxed()?;
        Ok(p)
    }

    /// Allows `eps = 0`, for which the only equilibrium is the Nash one.
    pub fn relaxed(a: f64, b: f64, eps: f64, nu1: f64, nu2: f64, horizon: f64) -> Result<Self> {
        let p = Self {
            a,
            b,
            eps,
            nu1,
            nu2,
            horizon,
        };
        p.check_relaxed()?;
        Ok(p)
    }

    fn check_relaxed(&self) -> Result<()> {
        let finite = [self.a, self.b, self.eps, self.nu1, self.nu2, self.horizon]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidModel("non-finite abatement parameter".into()));
        }
        if self.a < 0.0 || self.b < 0.0 || self.eps < 0.0 {
            return Err(Error::InvalidModel("a, b and eps must be non-negative".into()));
        }
        if self.horizon <= 0.0 {
            return Err(Error::InvalidModel("T must be positive".into()));
        }
        if self.nu2 < self.nu1 * self.nu1 - 1e-14 {
            return Err(Error::InvalidModel("nu2 must be at least nu1^2".into()));
        }
        Ok(())
    }

    /// `a − bν₁`, the marginal benefit of abatement at the initial mean.
    pub fn net_benefit(&self) -> f64 {
        self.a - self.b * self.nu1
    }

    pub fn from_section(sec: &Section<'_>) -> Result<Self> {
        sec.only(&["a", "b", "eps", "nu1", "nu2", "T"])?;
        let nu1 = sec.f64("nu1")?;
        let p = Self::relaxed(
            sec.f64("a")?,
            sec.f64("b")?,
            sec.f64("eps")?,
            nu1,
            sec.f64_or("nu2", nu1 * nu1)?,
            sec.f64("T")?,
        );
        p.map_err(|e| sec.error("eps", e.to_string()))
    }
}

/// `A = 0, B = 1, σ = 1, L = a, Q̄ = b + ε, Q = ε, Q̃ = −ε, R = 1`, all
/// other coefficients zero.
pub fn map_to_lq(p: &AbatementParams) -> LqModel {
    let mut m = LqModel::zeros(1, 1, p.horizon);
    m.a = Coef::scalar(0.0);
    m.b = Coef::scalar(1.0);
    m.sigma = Coef::scalar(1.0);
    m.l = Coef::scalar(p.a);
    m.q_bar = Coef::scalar(p.b + p.eps);
    m.q = Coef::scalar(p.eps);
    m.q_tilde = Coef::scalar(-p.eps);
    m.r = Coef::scalar(1.0);
    let mean = DVector::from_element(1, p.nu1);
    let var = p.nu2 - p.nu1 * p.nu1;
    m.initial = if var > 0.0 {
        InitialLaw::gaussian(mean, DMatrix::from_element(1, 1, var))
    } else {
        InitialLaw::point_mass(mean)
    };
    m
}

/// Auxiliary functions of the linear class and the coefficients `c_M`, `c_V`.
#[derive(Debug, Clone)]
pub struct LinearClassCoefficients {
    pub phi: Trajectory<f64>,
    pub g: Trajectory<f64>,
    pub r: Trajectory<f64>,
    pub v: Trajectory<f64>,
    pub p: Trajectory<f64>,
    pub c_m: f64,
    pub c_v: f64,
}

impl LinearClassCoefficients {
    /// `−c_M / c_V`, the lower parabola coefficient.
    pub fn ratio(&self) -> f64 {
        -self.c_m / self.c_v
    }
}

/// Solves `φ̇ = φ² − ε` and `ġ = φg − φ` backward, then
/// `ṙ = −φr + 1 − g`, `v̇ = −φv + tφ + 1`, `ṗ = −φp + 1` forward.
pub fn linear_class_coefficients(
    params: &AbatementParams,
    grid: &TimeGrid,
) -> Result<LinearClassCoefficients> {
    let eps = params.eps;
    let back = integrate_backward(grid, (0.0, 0.0), |_, &(phi, g): &(f64, f64)| {
        (phi * phi - eps, phi * g - phi)
    })?;
    let (phi, g): (Vec<f64>, Vec<f64>) = back.into_values().into_iter().unzip();
    let phi = Trajectory::from_values(*grid, phi)?;
    let g = Trajectory::from_values(*grid, g)?;
    let fwd = integrate_forward(grid, (0.0, 0.0, 0.0), |at, &(r, v, p): &(f64, f64, f64)| {
        let f = phi.at(at);
        let gt = g.at(at);
        let t = at.time(grid);
        (-f * r + 1.0 - gt, -f * v + t * f + 1.0, -f * p + 1.0)
    })?;
    let mut r = Vec::with_capacity(grid.len());
    let mut v = Vec::with_capacity(grid.len());
    let mut p = Vec::with_capacity(grid.len());
    for (ri, vi, pi) in fwd.into_values() {
        r.push(ri);
        v.push(vi);
        p.push(pi);
    }
    let r = Trajectory::from_values(*grid, r)?;
    let v = Trajectory::from_values(*grid, v)?;
    let p = Trajectory::from_values(*grid, p)?;
    let horizon = grid.horizon();
    let cm_integrand = Trajectory::from_fn(*grid, |i, _| {
        let x = phi.get(i) * r.get(i) + g.get(i);
        x * x + eps * r.get(i) * r.get(i)
    });
    let cv_integrand = Trajectory::from_fn(*grid, |i, t| {
        let x = phi.get(i) * (v.get(i) - t);
        x * x + eps * v.get(i) * v.get(i)
    });
    Ok(LinearClassCoefficients {
        c_m: simpson(&cm_integrand) - horizon,
        c_v: simpson(&cv_integrand) - horizon,
        phi,
        g,
        r,
        v,
        p,
    })
}

/// Law of the slope `Z` through its mean and variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFlowLaw {
    pub z1: f64,
    pub sigma2: f64,
}

impl LinearFlowLaw {
    pub fn new(z1: f64, sigma2: f64) -> Result<Self> {
        if !(z1.is_finite() && sigma2.is_finite()) || sigma2 < 0.0 {
            return Err(Error::InvalidLaw(format!(
                "need finite z1 and sigma2 >= 0, got ({z1}, {sigma2})"
            )));
        }
        Ok(Self { z1, sigma2 })
    }

    pub fn z2(&self) -> f64 {
        self.z1 * self.z1 + self.sigma2
    }

    /// Two-point realization `Z ∈ {z₁ + σ, z₁ − σ}` with equal weights and
    /// `δ = −Z`.
    pub fn to_scenario_law(&self) -> Result<ScenarioLaw> {
        let s = self.sigma2.sqrt();
        ScenarioLaw::new(
            vec![0.5, 0.5],
            vec![
                DeltaPath::Constant(DVector::from_element(1, -(self.z1 + s))),
                DeltaPath::Constant(DVector::from_element(1, -(self.z1 - s))),
            ],
        )
    }
}

/// Closed-form verdict for a linear flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlVerdict {
    /// `z₁²c_M + σ²c_V`
    pub optimality_value: f64,
    pub is_cce: bool,
    /// Optimality value within ten tolerances of zero.
    pub boundary: bool,
    /// `Tz₁(a − bν₁) − (z₁² + σ²)(bT²/3 + 1)`
    pub outperformance_value: f64,
    pub outperforms_ne: bool,
    /// Payoff of the flow minus the Nash payoff.
    pub payoff_offset: f64,
}

/// `(T²/2)z₁(a − bν₁) − ((σ² + z₁²)/2)(bT³/3 + T)`
pub fn payoff_offset(p: &AbatementParams, law: &LinearFlowLaw) -> f64 {
    let t = p.horizon;
    0.5 * t * t * law.z1 * p.net_benefit() - 0.5 * law.z2() * (p.b * t * t * t / 3.0 + t)
}

pub fn gl_verdict(
    p: &AbatementParams,
    coeffs: &LinearClassCoefficients,
    law: &LinearFlowLaw,
) -> GlVerdict {
    let zm = law.z1 * law.z1 * coeffs.c_m;
    let zv = law.sigma2 * coeffs.c_v;
    let value = zm + zv;
    let tol = VERDICT_TOL * 1f64.max(zm.abs()).max(zv.abs());
    let t = p.horizon;
    let pos = t * law.z1 * p.net_benefit();
    let neg = law.z2() * (p.b * t * t / 3.0 + 1.0);
    let outperf = pos - neg;
    let otol = VERDICT_TOL * 1f64.max(pos.abs()).max(neg.abs());
    GlVerdict {
        optimality_value: value,
        is_cce: value >= -tol,
        boundary: value.abs() <= 10.0 * tol,
        outperformance_value: outperf,
        outperforms_ne: outperf >= -otol,
        payoff_offset: payoff_offset(p, law),
    }
}

/// `(z₁, σ²)` region of equilibria beating the Nash payoff, restricted to
/// `z₁ ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbatementRegion {
    /// `−c_M / c_V`
    pub lower_coef: f64,
    /// `3T(a − bν₁)/(bT² + 3)`, the upper parabola is `slope·z₁ − z₁²`
    pub upper_slope: f64,
    pub nonempty: bool,
    pub z1: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl AbatementRegion {
    pub fn lower_at(&self, z1: f64) -> f64 {
        self.lower_coef * z1 * z1
    }

    pub fn upper_at(&self, z1: f64) -> f64 {
        z1 * self.upper_slope - z1 * z1
    }

    /// Right end of the region, where the parabolas meet again.
    pub fn z1_max(&self) -> f64 {
        if self.nonempty {
            self.upper_slope / (1.0 + self.lower_coef)
        } else {
            0.0
        }
    }

    /// Closed-region membership with a relative tolerance.
    pub fn contains(&self, z1: f64, sigma2: f64) -> bool {
        if z1 < 0.0 {
            return false;
        }
        let lo = self.lower_at(z1);
        let hi = self.upper_at(z1);
        let tol = VERDICT_TOL * 1f64.max(lo.abs()).max(hi.abs());
        sigma2 >= lo - tol && sigma2 <= hi + tol
    }
}

pub fn outperformance_region(
    p: &AbatementParams,
    coeffs: &LinearClassCoefficients,
    samples: usize,
) -> AbatementRegion {
    let t = p.horizon;
    let upper_slope = 3.0 * t * p.net_benefit() / (p.b * t * t + 3.0);
    let admissible = p.eps * t * t >= 3.0 && coeffs.c_v > 0.0;
    let lower_coef = if admissible { coeffs.ratio() } else { f64::INFINITY };
    let nonempty = admissible && upper_slope > 0.0;
    let mut region = AbatementRegion {
        lower_coef,
        upper_slope,
        nonempty,
        z1: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
    };
    if nonempty && samples >= 2 {
        let zmax = region.z1_max();
        for j in 0..samples {
            let z = zmax * j as f64 / (samples - 1) as f64;
            region.z1.push(z);
            region.lower.push(region.lower_at(z));
            region.upper.push(region.upper_at(z).max(region.lower_at(z)));
        }
    } else {
        region.z1.push(0.0);
        region.lower.push(0.0);
        region.upper.push(0.0);
    }
    region
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaximalCce {
    pub z1: f64,
    pub sigma2: f64,
    pub payoff_offset: f64,
}

/// Payoff-maximizing linear equilibrium; `None` unless `εT² ≥ 3`.
pub fn maximal_payoff_cce(p: &AbatementParams, coeffs: &LinearClassCoefficients) -> Option<MaximalCce> {
    let t = p.horizon;
    if p.eps * t * t < 3.0 || coeffs.c_v <= 0.0 {
        return None;
    }
    let kappa = coeffs.ratio();
    let z1 = (t * p.net_benefit() / (2.0 * (1.0 + kappa) * (p.b * t * t / 3.0 + 1.0))).max(0.0);
    let sigma2 = kappa * z1 * z1;
    let law = LinearFlowLaw { z1, sigma2 };
    Some(MaximalCce {
        z1,
        sigma2,
        payoff_offset: payoff_offset(p, &law),
    })
}

/// Mean flow `ν₁ + t z₁` of a linear law on the grid.
pub fn linear_mean(p: &AbatementParams, law: &LinearFlowLaw, grid: &TimeGrid) -> Trajectory<f64> {
    Trajectory::from_fn(*grid, |_, t| p.nu1 + t * law.z1)
}

/// Time average of the mean state over `[0, T]`.
pub fn average_abatement(mean: &Trajectory<f64>) -> f64 {
    simpson(mean) / mean.grid().horizon()
}

/// `f_t(μ) = −Zp − (Z − z₁)(v − p) + z₁(p − r)` in scenario `Z`.
pub fn auxiliary_f(coeffs: &LinearClassCoefficients, z1: f64, z: f64, i: usize) -> f64 {
    let (p, v, r) = (coeffs.p.get(i), coeffs.v.get(i), coeffs.r.get(i));
    -z * p - (z - z1) * (v - p) + z1 * (p - r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fig1() -> AbatementParams {
        AbatementParams::new(2.0, 1.0, 1.0, 0.1, 0.01, 5.0).unwrap()
    }

    /// Nested-exponential integrals evaluated directly by the midpoint rule,
    /// with `φ` in closed form.
    fn double_quadrature(eps: f64, horizon: f64, n: usize) -> (f64, f64) {
        let h = horizon / n as f64;
        let se = eps.sqrt();
        let phi = |t: f64| se * (se * (horizon - t)).tanh();
        // Φ(t) = ∫_0^t φ = ln cosh(√ε T) − ln cosh(√ε (T − t))
        let lc = |x: f64| x.abs() + (-2.0 * x.abs()).exp().ln_1p() - std::f64::consts::LN_2;
        let big_phi = |t: f64| lc(se * horizon) - lc(se * (horizon - t));
        let mids: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) * h).collect();
        // g_t = ∫_t^T φ_s e^{−(Φ(s) − Φ(t))} ds
        let g_at = |t: f64| {
            let m = 400;
            let hh = (horizon - t) / m as f64;
            (0..m)
                .map(|j| {
                    let s = t + (j as f64 + 0.5) * hh;
                    phi(s) * (-(big_phi(s) - big_phi(t))).exp() * hh
                })
                .sum::<f64>()
        };
        let gs: Vec<f64> = mids.iter().map(|&t| g_at(t)).collect();
        let mut cm = 0.0;
        let mut cv = 0.0;
        for (k, &t) in mids.iter().enumerate() {
            // r_t = ∫_0^t (1 − g_s) e^{−(Φ(t) − Φ(s))} ds, v_t likewise
            let (mut r, mut v) = (0.0, 0.0);
            for (j, &s) in mids[..k].iter().enumerate() {
                let w = (-(big_phi(t) - big_phi(s))).exp() * h;
                r += (1.0 - gs[j]) * w;
                v += (s * phi(s) + 1.0) * w;
            }
            // the last partial cell [t − h/2, t]
            let w = 0.5 * h;
            r += (1.0 - gs[k]) * w;
            v += (t * phi(t) + 1.0) * w;
            let x = phi(t) * r + gs[k];
            cm += (x * x + eps * r * r) * h;
            let y = phi(t) * (v - t);
            cv += (y * y + eps * v * v) * h;
        }
        (cm - horizon, cv - horizon)
    }

    #[test]
    fn coefficients_match_double_quadrature() {
        let g = TimeGrid::new(5.0, 2000).unwrap();
        let c = linear_class_coefficients(&fig1(), &g).unwrap();
        let (cm, cv) = double_quadrature(1.0, 5.0, 4000);
        assert!((c.c_m - cm).abs() <= 1e-3 * cm.abs(), "{} vs {cm}", c.c_m);
        assert!((c.c_v - cv).abs() <= 1e-3 * cv.abs(), "{} vs {cv}", c.c_v);
    }

    #[test]
    fn coefficients_closed_forms() {
        for (eps, horizon) in [(1.0, 5.0), (0.1, 5.0), (0.5, 3.0)] {
            let p = AbatementParams::new(2.0, 1.0, eps, 0.1, 0.01, horizon).unwrap();
            let g = TimeGrid::new(horizon, 2000).unwrap();
            let c = linear_class_coefficients(&p, &g).unwrap();
            let se: f64 = eps.sqrt();
            let cm = -(se * horizon).tanh() / se;
            let cv = eps * horizon.powi(3) / 3.0 - horizon;
            assert_abs_diff_eq!(c.c_m, cm, epsilon = 1e-9 * (1.0 + cm.abs()));
            assert_abs_diff_eq!(c.c_v, cv, epsilon = 1e-9 * (1.0 + cv.abs()));
        }
    }

    #[test]
    fn boundary_conditions_and_signs() {
        let g = TimeGrid::new(5.0, 1000).unwrap();
        let c = linear_class_coefficients(&fig1(), &g).unwrap();
        assert_eq!(*c.g.last(), 0.0);
        assert_eq!(*c.r.first(), 0.0);
        assert_eq!(*c.v.first(), 0.0);
        assert_eq!(*c.p.first(), 0.0);
        assert!(c.c_m < 0.0 && c.c_v > 0.0);
        let low = AbatementParams::new(2.0, 1.0, 0.1, 0.1, 0.01, 5.0).unwrap();
        let c = linear_class_coefficients(&low, &g).unwrap();
        assert!(c.c_m < 0.0 && c.c_v <= 0.0);
    }

    #[test]
    fn parameter_map() {
        let m = map_to_lq(&fig1());
        assert_eq!(m.q_bar.eval(0.0)[(0, 0)], 2.0);
        assert_eq!(m.q_tilde.eval(0.0)[(0, 0)], -1.0);
        assert_eq!(m.q.eval(0.0)[(0, 0)], 1.0);
        let probe = AbatementParams::relaxed(2.0, 1.0, 0.0, 0.1, 0.01, 5.0).unwrap();
        assert!(AbatementParams::new(2.0, 1.0, 0.0, 0.1, 0.01, 5.0).is_err());
        let m = map_to_lq(&probe);
        assert_eq!(m.q.eval(0.0)[(0, 0)], 0.0);
        assert_eq!(m.q_tilde.eval(0.0)[(0, 0)], 0.0);
        assert_eq!(m.q_bar.eval(0.0)[(0, 0)], 1.0);
    }

    #[test]
    fn reference_verdicts() {
        let p = fig1();
        let g = TimeGrid::new(5.0, 2000).unwrap();
        let c = linear_class_coefficients(&p, &g).unwrap();
        let v = gl_verdict(&p, &c, &LinearFlowLaw::new(0.0, 0.0).unwrap());
        assert!(v.is_cce && v.boundary && v.outperforms_ne);
        assert_eq!(v.payoff_offset, 0.0);
        let v = gl_verdict(&p, &c, &LinearFlowLaw::new(0.6, 0.06).unwrap());
        assert!(v.is_cce && v.outperforms_ne && !v.boundary);
        assert_abs_diff_eq!(v.outperformance_value, 5.0 * 0.6 * 1.9 - 0.42 * (25.0 / 3.0 + 1.0), epsilon = 1e-12);
        let v = gl_verdict(&p, &c, &LinearFlowLaw::new(0.6, 5.0).unwrap());
        assert!(!v.outperforms_ne);
        let v = gl_verdict(&p, &c, &LinearFlowLaw::new(0.5, 0.0).unwrap());
        assert!(!v.is_cce);
        let low = AbatementParams::new(2.0, 1.0, 0.1, 0.1, 0.01, 5.0).unwrap();
        let cl = linear_class_coefficients(&low, &g).unwrap();
        assert!(!gl_verdict(&low, &cl, &LinearFlowLaw::new(0.6, 0.06).unwrap()).is_cce);
    }

    #[test]
    fn region_and_maximizer() {
        let p = fig1();
        let g = TimeGrid::new(5.0, 2000).unwrap();
        let c = linear_class_coefficients(&p, &g).unwrap();
        let region = outperformance_region(&p, &c, 400);
        assert!(region.nonempty);
        assert!(region.contains(0.6, 0.06));
        assert_eq!(region.z1.len(), 400);
        assert!(region.lower.iter().zip(&region.upper).all(|(l, u)| l <= u));
        let best = maximal_payoff_cce(&p, &c).unwrap();
        assert!(region.contains(best.z1, best.sigma2));

        let flat = AbatementParams::new(0.1, 1.0, 1.0, 0.1, 0.01, 5.0).unwrap();
        let r = outperformance_region(&flat, &c, 400);
        assert!(!r.nonempty);
        // tangent at the origin only
        assert_eq!(r.upper_at(0.0), r.lower_at(0.0));
        for z in [0.01, 0.1, 1.0] {
            assert!(r.upper_at(z) < r.lower_at(z));
        }
        let best = maximal_payoff_cce(&flat, &c).unwrap();
        assert_eq!((best.z1, best.payoff_offset), (0.0, 0.0));
    }

    #[test]
    fn two_point_law_has_declared_moments() {
        for (z1, s2) in [(0.6, 0.06), (0.0, 1.0), (-0.3, 0.0)] {
            let law = LinearFlowLaw::new(z1, s2).unwrap().to_scenario_law().unwrap();
            let zs: Vec<f64> = law.deltas().iter().map(|d| -d.node_value(0)[0]).collect();
            let w = law.weights();
            let mean: f64 = zs.iter().zip(w).map(|(z, w)| z * w).sum();
            let var: f64 = zs.iter().zip(w).map(|(z, w)| w * (z - mean).powi(2)).sum();
            assert!((mean - z1).abs() <= 1e-14);
            assert!((var - s2).abs() <= 1e-14);
        }
    }

    proptest! {
        #[test]
        fn offset_decreases_in_variance(z1 in -1.0f64..2.0, s in 0.0f64..2.0, ds in 1e-3f64..1.0) {
            let p = fig1();
            let a = payoff_offset(&p, &LinearFlowLaw { z1, sigma2: s });
            let b = payoff_offset(&p, &LinearFlowLaw { z1, sigma2: s + ds });
            prop_assert!(b < a);
        }
    }
}
