//! Fixed-step time-grid numerics.
//!
//! Every ODE in the crate is integrated with classical RK4 on a uniform grid
//! `t_i = i * T / N`. Backward systems (Riccati equations with terminal
//! conditions) are integrated from node `N` down to node `0`; forward systems
//! from node `0` up to node `N`. The right-hand side is evaluated at nodes and
//! at interval midpoints, identified by [`At`].
//!
//! Trajectories produced by one integration are often coefficients of the
//! next one. [`Trajectory::at`] reconstructs midpoint values with four-point
//! cubic interpolation so that chained integrations keep fourth order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Uniform grid on `[0, T]` with `N` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be positive".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Time of node `i`; node `N` is exactly `T`.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |i| self.time(i))
    }

    pub fn ensure_same(&self, other: &TimeGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: *self,
                found: *other,
            })
        }
    }
}

/// Evaluation point of a right-hand side: a grid node or the midpoint of
/// the interval `[t_i, t_{i+1}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum At {
    Node(usize),
    Mid(usize),
}

impl At {
    pub fn time(self, grid: &TimeGrid) -> f64 {
        match self {
            At::Node(i) => grid.time(i),
            At::Mid(i) => (i as f64 + 0.5) * grid.dt(),
        }
    }

    /// Position in the interleaved sequence node 0, mid 0, node 1, ...
    pub fn slot(self) -> usize {
        match self {
            At::Node(i) => 2 * i,
            At::Mid(i) => 2 * i + 1,
        }
    }

    /// Inverse of [`At::slot`].
    pub fn from_slot(k: usize) -> Self {
        if k.is_multiple_of(2) {
            At::Node(k / 2)
        } else {
            At::Mid(k / 2)
        }
    }
}

/// State space of a fixed-step integration.
pub trait OdeState: Clone {
    /// Shape used for dimension checks; `(rows, cols)` for matrices.
    fn shape(&self) -> Vec<usize>;

    /// `self + h * k`.
    fn add_scaled(&self, h: f64, k: &Self) -> Self;

    /// `sum_j w_j * x_j`; `terms` is never empty.
    fn lincomb(terms: &[(f64, &Self)]) -> Self;

    fn all_finite(&self) -> bool;

    fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }
}

impl OdeState for f64 {
    fn shape(&self) -> Vec<usize> {
        Vec::new()
    }

    fn add_scaled(&self, h: f64, k: &Self) -> Self {
        self + h * k
    }

    fn lincomb(terms: &[(f64, &Self)]) -> Self {
        terms.iter().map(|(w, x)| w * **x).sum()
    }

    fn all_finite(&self) -> bool {
        self.is_finite()
    }

    fn same_shape(&self, _: &Self) -> bool {
        true
    }
}

impl OdeState for DVector<f64> {
    fn same_shape(&self, other: &Self) -> bool {
        self.len() == other.len()
    }

    fn shape(&self) -> Vec<usize> {
        vec![self.len()]
    }

    fn add_scaled(&self, h: f64, k: &Self) -> Self {
        self + k * h
    }

    fn lincomb(terms: &[(f64, &Self)]) -> Self {
        let mut out = terms[0].1 * terms[0].0;
        for (w, x) in &terms[1..] {
            out.axpy(*w, x, 1.0);
        }
        out
    }

    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl OdeState for DMatrix<f64> {
    fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    fn shape(&self) -> Vec<usize> {
        vec![self.nrows(), self.ncols()]
    }

    fn add_scaled(&self, h: f64, k: &Self) -> Self {
        self + k * h
    }

    fn lincomb(terms: &[(f64, &Self)]) -> Self {
        let mut out = terms[0].1 * terms[0].0;
        for (w, x) in &terms[1..] {
            out.zip_apply(*x, |o, v| *o += w * v);
        }
        out
    }

    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl<A: OdeState, B: OdeState> OdeState for (A, B) {
    fn shape(&self) -> Vec<usize> {
        let mut s = self.0.shape();
        s.push(usize::MAX);
        s.extend(self.1.shape());
        s
    }

    fn add_scaled(&self, h: f64, k: &Self) -> Self {
        (self.0.add_scaled(h, &k.0), self.1.add_scaled(h, &k.1))
    }

    fn lincomb(terms: &[(f64, &Self)]) -> Self {
        let a: Vec<(f64, &A)> = terms.iter().map(|(w, x)| (*w, &x.0)).collect();
        let b: Vec<(f64, &B)> = terms.iter().map(|(w, x)| (*w, &x.1)).collect();
        (A::lincomb(&a), B::lincomb(&b))
    }

    fn all_finite(&self) -> bool {
        self.0.all_finite() && self.1.all_finite()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.0.same_shape(&other.0) && self.1.same_shape(&other.1)
    }
}

impl<A: OdeState, B: OdeState, C: OdeState> OdeState for (A, B, C) {
    fn shape(&self) -> Vec<usize> {
        let mut s = self.0.shape();
        s.push(usize::MAX);
        s.extend(self.1.shape());
        s.push(usize::MAX);
        s.extend(self.2.shape());
        s
    }

    fn add_scaled(&self, h: f64, k: &Self) -> Self {
        (
            self.0.add_scaled(h, &k.0),
            self.1.add_scaled(h, &k.1),
            self.2.add_scaled(h, &k.2),
        )
    }

    fn lincomb(terms: &[(f64, &Self)]) -> Self {
        let a: Vec<(f64, &A)> = terms.iter().map(|(w, x)| (*w, &x.0)).collect();
        let b: Vec<(f64, &B)> = terms.iter().map(|(w, x)| (*w, &x.1)).collect();
        let c: Vec<(f64, &C)> = terms.iter().map(|(w, x)| (*w, &x.2)).collect();
        (A::lincomb(&a), B::lincomb(&b), C::lincomb(&c))
    }

    fn all_finite(&self) -> bool {
        self.0.all_finite() && self.1.all_finite() && self.2.all_finite()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.0.same_shape(&other.0) && self.1.same_shape(&other.1) && self.2.same_shape(&other.2)
    }
}

/// Values of some quantity at every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    grid: TimeGrid,
    values: Vec<S>,
}

impl<S> Trajectory<S> {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn get(&self, i: usize) -> &S {
        &self.values[i]
    }

    pub fn first(&self) -> &S {
        &self.values[0]
    }

    pub fn last(&self) -> &S {
        &self.values[self.values.len() - 1]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, S> {
        self.values.iter()
    }

    pub fn map<T>(&self, f: impl FnMut(&S) -> T) -> Trajectory<T> {
        Trajectory {
            grid: self.grid,
            values: self.values.iter().map(f).collect(),
        }
    }

    /// Node-wise combination of two trajectories on the same grid.
    pub fn zip_map<U, T>(
        &self,
        other: &Trajectory<U>,
        mut f: impl FnMut(&S, &U) -> T,
    ) -> Result<Trajectory<T>> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Trajectory {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(a, b))
                .collect(),
        })
    }
}

impl<S: OdeState> Trajectory<S> {
    pub fn from_values(grid: TimeGrid, values: Vec<S>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "trajectory has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(node) = values.iter().position(|v| !v.all_finite()) {
            return Err(Error::NumericalBlowup { node });
        }
        let shape = values[0].shape();
        if values.iter().any(|v| v.shape() != shape) {
            return Err(Error::DimensionMismatch(
                "trajectory values change shape across nodes".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: S) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(usize, f64) -> S) -> Self {
        Self {
            grid,
            values: (0..grid.len()).map(|i| f(i, grid.time(i))).collect(),
        }
    }

    /// Value at a node, or four-point cubic interpolation at a midpoint
    /// (one-sided stencils on the first and last interval).
    pub fn at(&self, at: At) -> S {
        match at {
            At::Node(i) => self.values[i].clone(),
            At::Mid(i) => {
                let n = self.grid.steps;
                let y = &self.values;
                if n < 3 {
                    S::lincomb(&[(0.5, &y[i]), (0.5, &y[i + 1])])
                } else if i == 0 {
                    S::lincomb(&[
                        (5.0 / 16.0, &y[0]),
                        (15.0 / 16.0, &y[1]),
                        (-5.0 / 16.0, &y[2]),
                        (1.0 / 16.0, &y[3]),
                    ])
                } else if i == n - 1 {
                    S::lincomb(&[
                        (5.0 / 16.0, &y[n]),
                        (15.0 / 16.0, &y[n - 1]),
                        (-5.0 / 16.0, &y[n - 2]),
                        (1.0 / 16.0, &y[n - 3]),
                    ])
                } else {
                    S::lincomb(&[
                        (-1.0 / 16.0, &y[i - 1]),
                        (9.0 / 16.0, &y[i]),
                        (9.0 / 16.0, &y[i + 1]),
                        (-1.0 / 16.0, &y[i + 2]),
                    ])
                }
            }
        }
    }

    /// Weighted node-wise sum of trajectories sharing one grid.
    pub fn weighted_sum(terms: &[(f64, &Trajectory<S>)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::DimensionMismatch("empty weighted sum".into()))?;
        for (_, t) in terms {
            first.1.grid.ensure_same(&t.grid)?;
        }
        let values = (0..first.1.grid.len())
            .map(|i| {
                let parts: Vec<(f64, &S)> = terms.iter().map(|(w, t)| (*w, &t.values[i])).collect();
                S::lincomb(&parts)
            })
            .collect();
        Ok(Self {
            grid: first.1.grid,
            values,
        })
    }
}

fn check_stage<S: OdeState>(reference: &S, k: &S, node: usize) -> Result<()> {
    if !k.same_shape(reference) {
        return Err(Error::DimensionMismatch(format!(
            "right-hand side shape {:?} differs from state shape {:?} near node {node}",
            k.shape(),
            reference.shape()
        )));
    }
    if !k.all_finite() {
        return Err(Error::NumericalBlowup { node });
    }
    Ok(())
}

/// Classical RK4 from `initial` at node 0 to node `N`. `rhs(at, y)` is `dy/dt`.
pub fn integrate_forward<S, F>(grid: &TimeGrid, initial: S, mut rhs: F) -> Result<Trajectory<S>>
where
    S: OdeState,
    F: FnMut(At, &S) -> S,
{
    if !initial.all_finite() {
        return Err(Error::NumericalBlowup { node: 0 });
    }
    let shape = initial.clone();
    let h = grid.dt();
    let mut values = Vec::with_capacity(grid.len());
    values.push(initial);
    for i in 0..grid.steps {
        let y = &values[i];
        let k1 = rhs(At::Node(i), y);
        check_stage(&shape, &k1, i)?;
        let k2 = rhs(At::Mid(i), &y.add_scaled(0.5 * h, &k1));
        check_stage(&shape, &k2, i)?;
        let k3 = rhs(At::Mid(i), &y.add_scaled(0.5 * h, &k2));
        check_stage(&shape, &k3, i)?;
        let k4 = rhs(At::Node(i + 1), &y.add_scaled(h, &k3));
        check_stage(&shape, &k4, i + 1)?;
        let incr = S::lincomb(&[(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)]);
        let next = y.add_scaled(h / 6.0, &incr);
        if !next.all_finite() {
            return Err(Error::NumericalBlowup { node: i + 1 });
        }
        values.push(next);
    }
    Ok(Trajectory {
        grid: *grid,
        values,
    })
}

/// Classical RK4 from `terminal` at node `N` down to node 0. `rhs(at, y)` is
/// `dy/dt` (not its negation).
pub fn integrate_backward<S, F>(grid: &TimeGrid, terminal: S, mut rhs: F) -> Result<Trajectory<S>>
where
    S: OdeState,
    F: FnMut(At, &S) -> S,
{
    let n = grid.steps;
    if !terminal.all_finite() {
        return Err(Error::NumericalBlowup { node: n });
    }
    let shape = terminal.clone();
    let h = grid.dt();
    let mut rev = Vec::with_capacity(grid.len());
    rev.push(terminal);
    for i in (0..n).rev() {
        let y = rev.last().expect("non-empty");
        let k1 = rhs(At::Node(i + 1), y);
        check_stage(&shape, &k1, i + 1)?;
        let k2 = rhs(At::Mid(i), &y.add_scaled(-0.5 * h, &k1));
        check_stage(&shape, &k2, i)?;
        let k3 = rhs(At::Mid(i), &y.add_scaled(-0.5 * h, &k2));
        check_stage(&shape, &k3, i)?;
        let k4 = rhs(At::Node(i), &y.add_scaled(-h, &k3));
        check_stage(&shape, &k4, i)?;
        let incr = S::lincomb(&[(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)]);
        let prev = y.add_scaled(-h / 6.0, &incr);
        if !prev.all_finite() {
            return Err(Error::NumericalBlowup { node: i });
        }
        rev.push(prev);
    }
    rev.reverse();
    Ok(Trajectory {
        grid: *grid,
        values: rev,
    })
}

/// Source terms of a linear equation at every node and midpoint, in
/// [`At::slot`] order.
pub fn slot_values<S>(grid: &TimeGrid, f: impl FnMut(At) -> S) -> Vec<S> {
    (0..2 * grid.steps + 1).map(At::from_slot).map(f).collect()
}

/// One RK4 stage `k = αA y + s`.
fn linear_stage(k: &mut DVector<f64>, alpha: f64, a: &DMatrix<f64>, y: &DVector<f64>, s: &DVector<f64>) {
    k.copy_from(s);
    k.gemv(alpha, a, y, 1.0);
}

/// Classical RK4 for `ẏ = αA(t)y + s(t)` with `s` from [`slot_values`],
/// stepping forward (`backward = false`, `y` given at node 0) or backward
/// (`y` given at node `N`). Same arithmetic as the generic integrators
/// without per-stage allocation.
pub fn integrate_linear<'a>(
    grid: &TimeGrid,
    boundary: DVector<f64>,
    backward: bool,
    alpha: f64,
    matrix: impl Fn(At) -> &'a DMatrix<f64>,
    source: &[DVector<f64>],
) -> Result<Trajectory<DVector<f64>>> {
    let n = grid.steps;
    if source.len() != 2 * n + 1 || source.iter().any(|s| s.len() != boundary.len()) {
        return Err(Error::DimensionMismatch(format!(
            "linear source needs {} entries of length {}",
            2 * n + 1,
            boundary.len()
        )));
    }
    if !boundary.all_finite() {
        return Err(Error::NumericalBlowup { node: if backward { n } else { 0 } });
    }
    let h = if backward { -grid.dt() } else { grid.dt() };
    let d = boundary.len();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        DVector::zeros(d),
        DVector::zeros(d),
        DVector::zeros(d),
        DVector::zeros(d),
        DVector::zeros(d),
    );
    let mut values = Vec::with_capacity(grid.len());
    values.push(boundary);
    for step in 0..n {
        let (from, mid, to) = if backward {
            let i = n - 1 - step;
            (At::Node(i + 1), At::Mid(i), At::Node(i))
        } else {
            (At::Node(step), At::Mid(step), At::Node(step + 1))
        };
        let y = values.last().expect("non-empty");
        linear_stage(&mut k1, alpha, matrix(from), y, &source[from.slot()]);
        tmp.copy_from(y);
        tmp.axpy(0.5 * h, &k1, 1.0);
        linear_stage(&mut k2, alpha, matrix(mid), &tmp, &source[mid.slot()]);
        tmp.copy_from(y);
        tmp.axpy(0.5 * h, &k2, 1.0);
        linear_stage(&mut k3, alpha, matrix(mid), &tmp, &source[mid.slot()]);
        tmp.copy_from(y);
        tmp.axpy(h, &k3, 1.0);
        linear_stage(&mut k4, alpha, matrix(to), &tmp, &source[to.slot()]);
        let mut next = y.clone();
        next.axpy(h / 6.0, &k1, 1.0);
        next.axpy(h / 3.0, &k2, 1.0);
        next.axpy(h / 3.0, &k3, 1.0);
        next.axpy(h / 6.0, &k4, 1.0);
        if !next.all_finite() {
            let node = match to {
                At::Node(i) | At::Mid(i) => i,
            };
            return Err(Error::NumericalBlowup { node });
        }
        values.push(next);
    }
    if backward {
        values.reverse();
    }
    Ok(Trajectory {
        grid: *grid,
        values,
    })
}

/// Trapezoidal rule over the grid.
pub fn quadrature(f: &Trajectory<f64>) -> f64 {
    let v = &f.values;
    let n = v.len() - 1;
    let inner: f64 = v[1..n].iter().sum();
    f.grid.dt() * (0.5 * (v[0] + v[n]) + inner)
}

/// Node weights of the composite Simpson rule (Simpson 3/8 on the last three
/// intervals when `N` is odd, trapezoid when `N < 2`).
pub fn simpson_weights(grid: &TimeGrid) -> Vec<f64> {
    let n = grid.steps;
    let h = grid.dt();
    let mut w = vec![0.0; n + 1];
    if n == 1 {
        w[0] = 0.5 * h;
        w[1] = 0.5 * h;
        return w;
    }
    let even_end = if n.is_multiple_of(2) { n } else { n - 3 };
    let mut i = 0;
    while i + 2 <= even_end {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
        i += 2;
    }
    if n % 2 == 1 {
        let s = n - 3;
        w[s] += 3.0 * h / 8.0;
        w[s + 1] += 9.0 * h / 8.0;
        w[s + 2] += 9.0 * h / 8.0;
        w[s + 3] += 3.0 * h / 8.0;
    }
    w
}

/// Composite Simpson rule over the grid; fourth order for smooth integrands.
pub fn simpson(f: &Trajectory<f64>) -> f64 {
    simpson_weights(&f.grid)
        .iter()
        .zip(&f.values)
        .map(|(w, v)| w * v)
        .sum()
}
