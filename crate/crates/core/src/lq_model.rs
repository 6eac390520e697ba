//! Linear-quadratic mean field game: coefficients, initial law, payoffs.
//!
//! State dynamics `dX = (A X + B a) dt + σ dW`, `X_0 ~ ν`. The representative
//! player maximizes `E[∫ f(t, X, μ, a) dt + g(X_T, μ_T)]` where `μ` is the
//! (possibly random) flow of population means.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::config::{value_to_matrix, Document, Section};
use crate::error::{Error, Result};
use crate::grid_ode::{At, TimeGrid};

const SYMMETRY_TOL: f64 = 1e-12;

/// A time-dependent coefficient: constant, or piecewise-linear through knots.
#[derive(Debug, Clone, PartialEq)]
pub enum Coef {
    Constant(DMatrix<f64>),
    PiecewiseLinear {
        knots: Vec<f64>,
        values: Vec<DMatrix<f64>>,
    },
}

impl Coef {
    pub fn scalar(v: f64) -> Self {
        Coef::Constant(DMatrix::from_element(1, 1, v))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Coef::Constant(DMatrix::zeros(rows, cols))
    }

    pub fn vector(v: DVector<f64>) -> Self {
        let n = v.len();
        Coef::Constant(DMatrix::from_column_slice(n, 1, v.as_slice()))
    }

    pub fn table(knots: Vec<f64>, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::InvalidModel(
                "a coefficient table needs at least two knots and one value per knot".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidModel("table knots must be strictly increasing".into()));
        }
        let shape = values[0].shape();
        if values.iter().any(|v| v.shape() != shape) {
            return Err(Error::InvalidModel("table values change shape".into()));
        }
        Ok(Coef::PiecewiseLinear { knots, values })
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Coef::Constant(m) => m.shape(),
            Coef::PiecewiseLinear { values, .. } => values[0].shape(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Coef::Constant(_))
    }

    /// Value at time `t`; tables are held constant outside their knot range.
    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        match self {
            Coef::Constant(m) => m.clone(),
            Coef::PiecewiseLinear { knots, values } => {
                let n = knots.len();
                if t <= knots[0] {
                    return values[0].clone();
                }
                if t >= knots[n - 1] {
                    return values[n - 1].clone();
                }
                let j = knots.partition_point(|&k| k <= t) - 1;
                let w = (t - knots[j]) / (knots[j + 1] - knots[j]);
                &values[j] * (1.0 - w) + &values[j + 1] * w
            }
        }
    }

    pub fn eval_vector(&self, t: f64) -> DVector<f64> {
        self.eval(t).column(0).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    PointMass,
    Gaussian,
}

/// Law of the initial state through its first two moments.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLaw {
    pub mean: DVector<f64>,
    pub second_moment: DMatrix<f64>,
    pub sampler: Sampler,
}

impl InitialLaw {
    pub fn point_mass(mean: DVector<f64>) -> Self {
        let second_moment = &mean * mean.transpose();
        Self {
            mean,
            second_moment,
            sampler: Sampler::PointMass,
        }
    }

    pub fn gaussian(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        let second_moment = &covariance + &mean * mean.transpose();
        Self {
            mean,
            second_moment,
            sampler: Sampler::Gaussian,
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.second_moment - &self.mean * self.mean.transpose()
    }
}

/// Coefficients of the LQ game. Vectors `l`, `q_lin`, `r_lin` are stored as
/// single-column coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LqModel {
    pub d: usize,
    pub k: usize,
    pub horizon: f64,
    pub a: Coef,
    pub b: Coef,
    pub sigma: Coef,
    pub q: Coef,
    pub q_bar: Coef,
    pub q_tilde: Coef,
    pub r: Coef,
    pub s: Coef,
    pub h: DMatrix<f64>,
    pub h_bar: DMatrix<f64>,
    pub h_tilde: DMatrix<f64>,
    pub l: Coef,
    pub q_lin: Coef,
    pub r_lin: Coef,
    pub initial: InitialLaw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Smallest eigenvalue of `Q_t` over the grid.
    pub d1: f64,
    /// Smallest eigenvalue of `R_t` over the grid.
    pub d2: f64,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "d1 = {:e}, d2 = {:e}", self.d1, self.d2)?;
        for c in &self.checks {
            let mark = if c.passed { "ok  " } else { "FAIL" };
            writeln!(f, "  [{mark}] {}: {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

impl LqModel {
    /// Model with every coefficient zero except `B = [I; 0]`, `σ = 0`,
    /// `R = I` and a point-mass initial law at the origin.
    pub fn zeros(d: usize, k: usize, horizon: f64) -> Self {
        Self {
            d,
            k,
            horizon,
            a: Coef::zeros(d, d),
            b: Coef::Constant(DMatrix::identity(d, k)),
            sigma: Coef::zeros(d, d),
            q: Coef::zeros(d, d),
            q_bar: Coef::zeros(d, d),
            q_tilde: Coef::zeros(d, d),
            r: Coef::Constant(DMatrix::identity(k, k)),
            s: Coef::zeros(k, d),
            h: DMatrix::zeros(d, d),
            h_bar: DMatrix::zeros(d, d),
            h_tilde: DMatrix::zeros(d, d),
            l: Coef::zeros(d, 1),
            q_lin: Coef::zeros(d, 1),
            r_lin: Coef::zeros(k, 1),
            initial: InitialLaw::point_mass(DVector::zeros(d)),
        }
    }

    /// Shape consistency; every other entry point assumes it.
    pub fn check_dims(&self) -> Result<()> {
        let (d, k) = (self.d, self.k);
        if d == 0 || k == 0 {
            return Err(Error::DimensionMismatch("d and k must be positive".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidModel(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        let coefs: [(&str, &Coef, (usize, usize)); 12] = [
            ("A", &self.a, (d, d)),
            ("B", &self.b, (d, k)),
            ("sigma", &self.sigma, (d, d)),
            ("Q", &self.q, (d, d)),
            ("Q_bar", &self.q_bar, (d, d)),
            ("Q_tilde", &self.q_tilde, (d, d)),
            ("R", &self.r, (k, k)),
            ("S", &self.s, (k, d)),
            ("L", &self.l, (d, 1)),
            ("q", &self.q_lin, (d, 1)),
            ("r", &self.r_lin, (k, 1)),
            ("H", &Coef::Constant(self.h.clone()), (d, d)),
        ];
        for (name, c, shape) in coefs {
            if c.shape() != shape {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {:?}, expected {shape:?}",
                    c.shape()
                )));
            }
        }
        for (name, m) in [("H_bar", &self.h_bar), ("H_tilde", &self.h_tilde)] {
            if m.shape() != (d, d) {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {:?}, expected {:?}",
                    m.shape(),
                    (d, d)
                )));
            }
        }
        if self.initial.mean.len() != d || self.initial.second_moment.shape() != (d, d) {
            return Err(Error::DimensionMismatch(
                "initial law moments do not match d".into(),
            ));
        }
        Ok(())
    }

    /// Checks the standing assumptions on the grid nodes and midpoints.
    pub fn validate(&self, grid: &TimeGrid) -> Result<ValidationReport> {
        self.check_dims()?;
        let mut times: Vec<f64> = grid.times().collect();
        times.extend((0..grid.steps()).map(|i| At::Mid(i).time(grid)));

        let mut checks = Vec::new();
        let mut worst_asym: f64 = 0.0;
        let mut d1 = f64::INFINITY;
        let mut d2 = f64::INFINITY;
        let mut s_norm: f64 = 0.0;
        let mut finite = true;
        for &t in &times {
            for c in [&self.q, &self.q_bar, &self.q_tilde, &self.r] {
                worst_asym = worst_asym.max(asymmetry(&c.eval(t)));
            }
            let q = self.q.eval(t);
            let r = self.r.eval(t);
            d1 = d1.min(min_eigenvalue(&q));
            d2 = d2.min(min_eigenvalue(&r));
            s_norm = s_norm.max(spectral_norm(&self.s.eval(t)));
            for c in [
                &self.a,
                &self.b,
                &self.sigma,
                &self.q,
                &self.q_bar,
                &self.q_tilde,
                &self.r,
                &self.s,
                &self.l,
                &self.q_lin,
                &self.r_lin,
            ] {
                finite &= c.eval(t).iter().all(|v| v.is_finite());
            }
        }
        for m in [&self.h, &self.h_bar, &self.h_tilde] {
            worst_asym = worst_asym.max(asymmetry(m));
        }
        checks.push(AssumptionCheck {
            name: "bounded coefficients",
            passed: finite,
            detail: if finite {
                "all coefficients finite".into()
            } else {
                "non-finite coefficient value".into()
            },
        });
        checks.push(AssumptionCheck {
            name: "symmetric Q, Q_bar, Q_tilde, R, H, H_bar, H_tilde",
            passed: worst_asym <= SYMMETRY_TOL,
            detail: format!("max asymmetry {worst_asym:e}"),
        });
        let h_min = [&self.h, &self.h_bar, &self.h_tilde]
            .iter()
            .map(|m| min_eigenvalue(m))
            .fold(f64::INFINITY, f64::min);
        checks.push(AssumptionCheck {
            name: "H, H_bar, H_tilde >= 0",
            passed: h_min >= -SYMMETRY_TOL,
            detail: format!("smallest eigenvalue {h_min:e}"),
        });
        checks.push(AssumptionCheck {
            name: "Q_t >= d1 I with d1 >= 0",
            passed: d1 >= -SYMMETRY_TOL,
            detail: format!("d1 = {d1:e}"),
        });
        checks.push(AssumptionCheck {
            name: "R_t >= d2 I with d2 > 0",
            passed: d2 > 0.0,
            detail: format!("d2 = {d2:e}"),
        });
        let d1 = d1.max(0.0);
        let (s_ok, s_detail) = if d1 > 0.0 {
            (
                s_norm * s_norm < d1 * d2,
                format!("sup |S|^2 = {:e} vs d1 d2 = {:e}", s_norm * s_norm, d1 * d2),
            )
        } else {
            (s_norm == 0.0, format!("d1 = 0 requires S = 0, sup |S| = {s_norm:e}"))
        };
        checks.push(AssumptionCheck {
            name: "cross term S",
            passed: s_ok,
            detail: s_detail,
        });
        let cov_min = min_eigenvalue(&self.initial.covariance());
        checks.push(AssumptionCheck {
            name: "initial covariance >= 0",
            passed: cov_min >= -1e-12,
            detail: format!("smallest eigenvalue {cov_min:e}"),
        });
        Ok(ValidationReport {
            d1,
            d2: d2.max(0.0),
            checks,
        })
    }

    /// Running payoff `f(t, x, m, a)`.
    pub fn running_payoff(&self, t: f64, x: &DVector<f64>, m: &DVector<f64>, a: &DVector<f64>) -> f64 {
        let l = self.l.eval_vector(t);
        let q_bar = self.q_bar.eval(t);
        l.dot(m) - 0.5 * m.dot(&(q_bar * m)) - self.cost_integrand(t, x, m, a)
    }

    /// Running cost of the deviating player: the part of `-f` that depends
    /// on the player's own state or action.
    pub fn cost_integrand(&self, t: f64, x: &DVector<f64>, m: &DVector<f64>, a: &DVector<f64>) -> f64 {
        let q = self.q.eval(t);
        let q_tilde = self.q_tilde.eval(t);
        let q_lin = self.q_lin.eval_vector(t);
        let r = self.r.eval(t);
        let s = self.s.eval(t);
        let r_lin = self.r_lin.eval_vector(t);
        0.5 * x.dot(&(q * x))
            + m.dot(&(q_tilde * x))
            + q_lin.dot(x)
            + 0.5 * a.dot(&(r * a))
            + a.dot(&(s * x))
            + r_lin.dot(a)
    }

    /// Terminal payoff `g(x, m)`.
    pub fn terminal_payoff(&self, x: &DVector<f64>, m: &DVector<f64>) -> f64 {
        -(0.5 * m.dot(&(&self.h_bar * m)) + 0.5 * x.dot(&(&self.h * x)) + m.dot(&(&self.h_tilde * x)))
    }

    pub fn sample(&self, grid: &TimeGrid) -> Result<SampledModel> {
        self.check_dims()?;
        if (grid.horizon() - self.horizon).abs() > 1e-12 * self.horizon.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "grid horizon {} differs from model horizon {}",
                grid.horizon(),
                self.horizon
            )));
        }
        let mut points = Vec::with_capacity(2 * grid.steps() + 1);
        for i in 0..=grid.steps() {
            points.push(self.point(grid.time(i))?);
            if i < grid.steps() {
                points.push(self.point(At::Mid(i).time(grid))?);
            }
        }
        Ok(SampledModel {
            grid: *grid,
            points,
        })
    }

    fn point(&self, t: f64) -> Result<CoefPoint> {
        let r = self.r.eval(t);
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidModel(format!("R is singular at t = {t}")))?;
        let sigma = self.sigma.eval(t);
        Ok(CoefPoint {
            a: self.a.eval(t),
            b: self.b.eval(t),
            sigma_sigma_t: &sigma * sigma.transpose(),
            sigma,
            q: self.q.eval(t),
            q_bar: self.q_bar.eval(t),
            q_tilde: self.q_tilde.eval(t),
            r,
            r_inv,
            s: self.s.eval(t),
            l: self.l.eval_vector(t),
            q_lin: self.q_lin.eval_vector(t),
            r_lin: self.r_lin.eval_vector(t),
        })
    }

    /// Reads the `[model]` and `[initial]` sections, or an `[abatement]`
    /// section through the abatement parameter map.
    pub fn from_document(doc: &Document) -> Result<Self> {
        if doc.has_section("abatement") {
            let params = crate::abatement::AbatementParams::from_section(&doc.section("abatement")?)?;
            return Ok(crate::abatement::map_to_lq(&params));
        }
        let sec = doc.section("model")?;
        sec.only(&[
            "T", "d", "k", "A", "B", "sigma", "Q", "Q_bar", "Q_tilde", "R", "S", "H", "H_bar",
            "H_tilde", "L", "q", "r",
        ])?;
        let d = sec.usize("d")?;
        let k = sec.usize("k")?;
        let horizon = sec.f64("T")?;
        let mut model = LqModel::zeros(d, k, horizon);
        let coef = |key: &str, target: &mut Coef, shape: (usize, usize)| -> Result<()> {
            if sec.contains(key) {
                let c = read_coef(&sec, key)?;
                let c = if shape.1 == 1 { as_column(c) } else { c };
                if c.shape() != shape {
                    return Err(sec.error(key, format!("expected shape {shape:?}, got {:?}", c.shape())));
                }
                *target = c;
            }
            Ok(())
        };
        coef("A", &mut model.a, (d, d))?;
        coef("B", &mut model.b, (d, k))?;
        coef("sigma", &mut model.sigma, (d, d))?;
        coef("Q", &mut model.q, (d, d))?;
        coef("Q_bar", &mut model.q_bar, (d, d))?;
        coef("Q_tilde", &mut model.q_tilde, (d, d))?;
        coef("R", &mut model.r, (k, k))?;
        coef("S", &mut model.s, (k, d))?;
        coef("L", &mut model.l, (d, 1))?;
        coef("q", &mut model.q_lin, (d, 1))?;
        coef("r", &mut model.r_lin, (k, 1))?;
        for (key, target) in [
            ("H", &mut model.h),
            ("H_bar", &mut model.h_bar),
            ("H_tilde", &mut model.h_tilde),
        ] {
            if sec.contains(key) {
                let m = sec.matrix(key)?;
                if m.shape() != (d, d) {
                    return Err(sec.error(key, format!("expected shape {:?}", (d, d))));
                }
                *target = m;
            }
        }
        if doc.has_section("initial") {
            model.initial = read_initial(&doc.section("initial")?, d)?;
        }
        model.check_dims()?;
        Ok(model)
    }

    pub fn parse(source: &str) -> Result<Self> {
        Self::from_document(&Document::parse(source)?)
    }
}

fn as_column(c: Coef) -> Coef {
    let fix = |m: DMatrix<f64>| {
        if m.nrows() == 1 && m.ncols() > 1 {
            m.transpose()
        } else {
            m
        }
    };
    match c {
        Coef::Constant(m) => Coef::Constant(fix(m)),
        Coef::PiecewiseLinear { knots, values } => Coef::PiecewiseLinear {
            knots,
            values: values.into_iter().map(fix).collect(),
        },
    }
}

/// A coefficient is a matrix literal, or an inline table
/// `{ t = [...], values = [...] }` of knots and matrices.
fn read_coef(sec: &Section<'_>, key: &str) -> Result<Coef> {
    match sec.raw(key) {
        Some(toml::Value::Table(tab)) => {
            let knots = match tab.get("t") {
                Some(toml::Value::Array(items)) => items
                    .iter()
                    .map(|v| crate::config::as_f64(v).ok_or_else(|| sec.error(key, "knots must be numbers")))
                    .collect::<Result<Vec<f64>>>()?,
                _ => return Err(sec.error(key, "table coefficient needs a list `t`")),
            };
            let values = match tab.get("values") {
                Some(toml::Value::Array(items)) => items
                    .iter()
                    .map(|v| value_to_matrix(v).map_err(|m| sec.error(key, m)))
                    .collect::<Result<Vec<_>>>()?,
                _ => return Err(sec.error(key, "table coefficient needs a list `values`")),
            };
            Coef::table(knots, values).map_err(|e| sec.error(key, e.to_string()))
        }
        Some(_) => Ok(Coef::Constant(sec.matrix(key)?)),
        None => Err(sec.error(key, "missing key")),
    }
}

fn read_initial(sec: &Section<'_>, d: usize) -> Result<InitialLaw> {
    sec.only(&["nu1", "nu2", "covariance", "sampler"])?;
    let mean = sec.vector("nu1")?;
    if mean.len() != d {
        return Err(sec.error("nu1", format!("expected {d} entries")));
    }
    let sampler = match sec.raw("sampler") {
        None => None,
        Some(_) => match sec.string("sampler")? {
            "point-mass" => Some(Sampler::PointMass),
            "gaussian" => Some(Sampler::Gaussian),
            other => return Err(sec.error("sampler", format!("unknown sampler `{other}`"))),
        },
    };
    let second_moment = if sec.contains("nu2") {
        sec.matrix("nu2")?
    } else if sec.contains("covariance") {
        sec.matrix("covariance")? + &mean * mean.transpose()
    } else {
        &mean * mean.transpose()
    };
    if second_moment.shape() != (d, d) {
        return Err(sec.error("nu2", format!("expected a {d}x{d} matrix")));
    }
    let law = InitialLaw {
        mean,
        second_moment,
        sampler: sampler.unwrap_or(Sampler::Gaussian),
    };
    let law = match (sampler, law.covariance().amax() == 0.0) {
        (None, true) => InitialLaw {
            sampler: Sampler::PointMass,
            ..law
        },
        _ => law,
    };
    if law.sampler == Sampler::PointMass && law.covariance().amax() > 1e-14 {
        return Err(sec.error("sampler", "point-mass law with nonzero covariance"));
    }
    Ok(law)
}

/// All coefficients at one grid node or midpoint.
#[derive(Debug, Clone)]
pub struct CoefPoint {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub sigma_sigma_t: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
    pub q_tilde: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub r_inv: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub l: DVector<f64>,
    pub q_lin: DVector<f64>,
    pub r_lin: DVector<f64>,
}

/// Coefficients evaluated once at every node and midpoint of a grid.
#[derive(Debug, Clone)]
pub struct SampledModel {
    grid: TimeGrid,
    points: Vec<CoefPoint>,
}

impl SampledModel {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn at(&self, at: At) -> &CoefPoint {
        match at {
            At::Node(i) => &self.points[2 * i],
            At::Mid(i) => &self.points[2 * i + 1],
        }
    }

    pub fn node(&self, i: usize) -> &CoefPoint {
        &self.points[2 * i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn abatement_like(eps: f64, a: f64, b: f64) -> LqModel {
        let mut m = LqModel::zeros(1, 1, 5.0);
        m.sigma = Coef::scalar(1.0);
        m.l = Coef::scalar(a);
        m.q_bar = Coef::scalar(b + eps);
        m.q = Coef::scalar(eps);
        m.q_tilde = Coef::scalar(-eps);
        m
    }

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn abatement_map_validates_with_unit_bounds() {
        let g = TimeGrid::new(5.0, 50).unwrap();
        let rep = abatement_like(1.0, 2.0, 1.0).validate(&g).unwrap();
        assert!(rep.passed(), "{rep}");
        assert_abs_diff_eq!(rep.d1, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rep.d2, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_r_fails() {
        let g = TimeGrid::new(5.0, 10).unwrap();
        let mut m = abatement_like(1.0, 2.0, 1.0);
        m.r = Coef::scalar(0.0);
        let rep = m.validate(&g).unwrap();
        assert!(!rep.passed());
        assert!(rep.failures().any(|c| c.name.starts_with("R_t")));
    }

    #[test]
    fn cross_term_needs_positive_d1() {
        let g = TimeGrid::new(5.0, 10).unwrap();
        let mut m = abatement_like(0.0, 2.0, 1.0);
        m.s = Coef::scalar(0.1);
        let rep = m.validate(&g).unwrap();
        assert!(rep.failures().any(|c| c.name == "cross term S"));
        let mut m = abatement_like(1.0, 2.0, 1.0);
        m.s = Coef::scalar(0.5);
        assert!(m.validate(&g).unwrap().passed());
        m.s = Coef::scalar(1.5);
        assert!(!m.validate(&g).unwrap().passed());
    }

    #[test]
    fn running_payoff_examples() {
        let m = abatement_like(1.0, 2.0, 1.0);
        // x = 0, m = 1, a = 1: 2 - 0.5 - 0.5 - 0.5
        assert_abs_diff_eq!(m.running_payoff(0.3, &v(0.0), &v(1.0), &v(1.0)), 0.5, epsilon = 1e-14);
        // x = m, a = 0 leaves the benefit term only
        let mu = 0.7;
        assert_abs_diff_eq!(
            m.running_payoff(1.0, &v(mu), &v(mu), &v(0.0)),
            2.0 * mu - 0.5 * mu * mu,
            epsilon = 1e-14
        );
        let z = LqModel::zeros(2, 1, 1.0);
        let zero = DVector::zeros(2);
        assert_eq!(z.running_payoff(0.0, &zero, &zero, &DVector::zeros(1)), 0.0);
        assert_eq!(z.terminal_payoff(&zero, &zero), 0.0);
    }

    #[test]
    fn tables_interpolate_linearly() {
        let c = Coef::table(
            vec![0.0, 1.0, 3.0],
            vec![
                DMatrix::from_element(1, 1, 0.0),
                DMatrix::from_element(1, 1, 2.0),
                DMatrix::from_element(1, 1, 0.0),
            ],
        )
        .unwrap();
        assert_eq!(c.eval(0.5)[(0, 0)], 1.0);
        assert_eq!(c.eval(2.0)[(0, 0)], 1.0);
        assert_eq!(c.eval(5.0)[(0, 0)], 0.0);
        assert!(Coef::table(vec![0.0, 0.0], vec![DMatrix::zeros(1, 1); 2]).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let src = r#"
[model]
T = 2.0
d = 2
k = 1
A = [[0, 1], [0, 0]]
B = [[0], [1]]
sigma = [[0.1, 0], [0, 0.2]]
Q = [[1, 0], [0, 1]]
R = 2
L = [1, 0]
Q_bar = { t = [0, 2], values = [[[1, 0], [0, 1]], [[2, 0], [0, 2]]] }

[initial]
nu1 = [0.5, 0]
covariance = [[0.1, 0], [0, 0.1]]
"#;
        let m = LqModel::parse(src).unwrap();
        assert_eq!((m.d, m.k), (2, 1));
        assert_eq!(m.b.eval(0.0)[(1, 0)], 1.0);
        assert_eq!(m.l.eval_vector(0.0)[0], 1.0);
        assert_eq!(m.q_bar.eval(1.0)[(0, 0)], 1.5);
        assert_eq!(m.initial.sampler, Sampler::Gaussian);
        assert_abs_diff_eq!(m.initial.covariance()[(0, 0)], 0.1, epsilon = 1e-15);
        let g = TimeGrid::new(2.0, 10).unwrap();
        assert!(m.validate(&g).unwrap().passed());
    }

    #[test]
    fn model_file_errors_point_at_keys() {
        let src = "[model]\nT = 1\nd = 1\nk = 1\n\nQ = [[1, 2]]\n";
        match LqModel::parse(src).unwrap_err() {
            Error::Parse { key, line, .. } => {
                assert_eq!(key, "model.Q");
                assert_eq!(line, 6);
            }
            e => panic!("unexpected {e}"),
        }
        let src = "[model]\nT = 1\nd = 1\nk = 1\nbogus = 3\n";
        assert!(matches!(LqModel::parse(src), Err(Error::Parse { line: 5, .. })));
    }

    proptest! {
        #[test]
        fn payoff_and_cost_split_the_integrand(
            x in -5.0f64..5.0, m in -5.0f64..5.0, a in -5.0f64..5.0, t in 0.0f64..5.0,
            eps in 0.0f64..3.0, ca in 0.0f64..3.0, cb in 0.0f64..3.0,
        ) {
            let model = abatement_like(eps, ca, cb);
            let f = model.running_payoff(t, &v(x), &v(m), &v(a));
            let c = model.cost_integrand(t, &v(x), &v(m), &v(a));
            let rhs = ca * m - 0.5 * (cb + eps) * m * m;
            prop_assert!((f + c - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn payoff_is_strictly_concave_in_the_action(
            x in -5.0f64..5.0, m in -5.0f64..5.0, a in -5.0f64..5.0, h in 0.01f64..2.0,
        ) {
            let model = abatement_like(1.0, 2.0, 1.0);
            let f = |u: f64| model.running_payoff(1.0, &v(x), &v(m), &v(u));
            // second difference equals -R h^2
            let d2 = f(a + h) - 2.0 * f(a) + f(a - h);
            prop_assert!(d2 < 0.0);
            prop_assert!((d2 + h * h).abs() <= 1e-9 * (1.0 + f(a).abs()));
        }
    }
}
