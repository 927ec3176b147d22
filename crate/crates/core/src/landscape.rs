//! Objective contract and the built-in analytic landscapes.
//!
//! Every objective ships an analytic gradient. Hessians are analytic where the
//! landscape is globally C², otherwise they fall back to central differences
//! of the gradient.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// A differentiable scalar field on R^d.
///
/// Implementations must be pure: the same input yields bit-identical output.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
    /// Analytic Hessian, if the field provides one.
    fn hessian(&self, _x: &Vector) -> Option<Matrix> {
        None
    }
}

/// Shared, immutable handle to a scalar field plus a display name.
#[derive(Clone)]
pub struct Objective {
    name: String,
    field: Arc<dyn ScalarField>,
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Objective")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .finish()
    }
}

/// Central-difference step `max(1, |x|) * eps^(1/3)`.
pub fn fd_step(x: &Vector) -> f64 {
    x.norm().max(1.0) * f64::EPSILON.cbrt()
}

impl Objective {
    pub fn new(name: impl Into<String>, field: Arc<dyn ScalarField>) -> Self {
        Self {
            name: name.into(),
            field,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn has_analytic_hessian(&self) -> bool {
        self.field.hessian(&Vector::zeros(self.dim())).is_some()
    }

    /// Returns `c * f` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Objective {
        Objective {
            name: format!("{}*{}", c, self.name),
            field: Arc::new(Scaled {
                inner: self.field.clone(),
                c,
            }),
        }
    }

    pub fn check_point(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    /// Function value without boundary checks.
    #[inline]
    pub fn f(&self, x: &Vector) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        self.field.value(x)
    }

    /// Gradient without boundary checks.
    #[inline]
    pub fn grad(&self, x: &Vector) -> Vector {
        debug_assert_eq!(x.len(), self.dim());
        self.field.gradient(x)
    }

    /// Hessian without boundary checks: analytic when available, otherwise
    /// symmetrized central differences of the gradient.
    pub fn hess(&self, x: &Vector) -> Matrix {
        if let Some(h) = self.field.hessian(x) {
            return symmetrize(h);
        }
        let n = self.dim();
        let h = fd_step(x);
        let mut out = Matrix::zeros(n, n);
        let mut xp = x.clone();
        for j in 0..n {
            let orig = xp[j];
            xp[j] = orig + h;
            let gp = self.field.gradient(&xp);
            xp[j] = orig - h;
            let gm = self.field.gradient(&xp);
            xp[j] = orig;
            out.set_column(j, &((gp - gm) / (2.0 * h)));
        }
        symmetrize(out)
    }

    /// Hessian-vector product by central differences of the gradient along `v`.
    pub fn hvp(&self, x: &Vector, v: &Vector) -> Vector {
        let vn = v.norm();
        if vn == 0.0 {
            return Vector::zeros(self.dim());
        }
        let h = fd_step(x);
        let dir = v / vn;
        let gp = self.field.gradient(&(x + &dir * h));
        let gm = self.field.gradient(&(x - &dir * h));
        (gp - gm) * (vn / (2.0 * h))
    }

    pub fn evaluate(&self, x: &Vector) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.f(x))
    }

    pub fn gradient(&self, x: &Vector) -> Result<Vector> {
        self.check_point(x)?;
        Ok(self.grad(x))
    }

    pub fn hessian(&self, x: &Vector) -> Result<Matrix> {
        self.check_point(x)?;
        Ok(self.hess(x))
    }
}

pub(crate) fn symmetrize(m: Matrix) -> Matrix {
    let t = m.transpose();
    (m + t) * 0.5
}

struct Scaled {
    inner: Arc<dyn ScalarField>,
    c: f64,
}

impl ScalarField for Scaled {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &Vector) -> f64 {
        self.c * self.inner.value(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        self.inner.gradient(x) * self.c
    }
    fn hessian(&self, x: &Vector) -> Option<Matrix> {
        self.inner.hessian(x).map(|h| h * self.c)
    }
}

/// Built-in landscapes with their parameters, tagged by `name` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Builtin {
    /// Two-dimensional landscape with a curve of global minimizers and a
    /// smooth bump.
    Synthetic2d,
    /// `x^2 (x - 2)^2`.
    Quartic1d,
    /// `0.5 x^T A x + b^T x`, with `A` symmetric positive semidefinite.
    Quadratic {
        a: Vec<Vec<f64>>,
        #[serde(default)]
        b: Option<Vec<f64>>,
    },
    /// `(x^2 - a^2)^2`.
    DoubleWell1d {
        #[serde(default = "default_well_center")]
        a: f64,
    },
}

fn default_well_center() -> f64 {
    1.0
}

impl Builtin {
    pub fn quadratic_identity(dim: usize) -> Self {
        let a = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Builtin::Quadratic { a, b: None }
    }

    pub fn build(&self) -> Result<Objective> {
        match self {
            Builtin::Synthetic2d => Ok(Objective::new("synthetic2d", Arc::new(Synthetic2d))),
            Builtin::Quartic1d => Ok(Objective::new("quartic1d", Arc::new(Quartic1d))),
            Builtin::DoubleWell1d { a } => {
                if !a.is_finite() {
                    return Err(Error::InvalidParams("double_well1d: `a` must be finite".into()));
                }
                Ok(Objective::new("double_well1d", Arc::new(DoubleWell1d { a: *a })))
            }
            Builtin::Quadratic { a, b } => {
                let q = Quadratic::new(a, b.as_deref())?;
                Ok(Objective::new("quadratic", Arc::new(q)))
            }
        }
    }
}

/// Builds a built-in objective from its name and a JSON parameter record.
pub fn make_builtin(name: &str, params: &serde_json::Value) -> Result<Objective> {
    const KNOWN: [&str; 4] = ["synthetic2d", "quartic1d", "quadratic", "double_well1d"];
    if !KNOWN.contains(&name) {
        return Err(Error::UnknownObjective(name.to_string()));
    }
    let mut record = match params {
        serde_json::Value::Null => serde_json::Map::new(),
        serde_json::Value::Object(m) => m.clone(),
        other => {
            return Err(Error::InvalidParams(format!(
                "expected a parameter object, got {other}"
            )))
        }
    };
    record.insert("name".into(), serde_json::Value::String(name.into()));
    let spec: Builtin = serde_json::from_value(serde_json::Value::Object(record.clone()))
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    // unit variants accept stray keys under internal tagging
    let known = serde_json::to_value(&spec).map_err(|e| Error::InvalidParams(e.to_string()))?;
    if let Some(extra) = record.keys().find(|k| known.get(k.as_str()).is_none()) {
        return Err(Error::InvalidParams(format!("unknown parameter `{extra}` for {name}")));
    }
    spec.build()
}

/// Default evaluation box of `synthetic2d`.
pub const SYNTHETIC2D_BOX: [(f64, f64); 2] = [(-6.0, 6.0), (-6.0, 6.0)];

/// Half-length (in `y`) of the `synthetic2d` minimizer curve.
pub const SYNTHETIC2D_CURVE_HALF: f64 = 0.6;

pub struct Synthetic2d;

fn window_x(x: f64) -> (f64, f64) {
    if x <= -1.0 {
        (0.0, 0.0)
    } else if x < 0.0 {
        let a = PI * (x + 1.0);
        (0.5 * (1.0 - a.cos()), 0.5 * PI * a.sin())
    } else {
        (1.0, 0.0)
    }
}

fn window_y(y: f64) -> (f64, f64) {
    let ay = y.abs();
    if ay <= 0.6 {
        (1.0, 0.0)
    } else if ay < 5.6 {
        let a = PI * (ay - 0.6) / 5.0;
        (0.5 * (1.0 + a.cos()), -0.5 * a.sin() * (PI / 5.0) * y.signum())
    } else {
        (0.0, 0.0)
    }
}

impl ScalarField for Synthetic2d {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, p: &Vector) -> f64 {
        let (x, y) = (p[0], p[1]);
        let bump = (-(x * x + y * y) / 6.25).exp();
        let s = x + 1.55 * (y / 1.5).cos();
        let valley = (-s * s).exp();
        0.8 * bump * window_x(x).0 - valley * window_y(y).0 + 1.0
    }

    fn gradient(&self, p: &Vector) -> Vector {
        let (x, y) = (p[0], p[1]);
        let bump = (-(x * x + y * y) / 6.25).exp();
        let s = x + 1.55 * (y / 1.5).cos();
        let ds_dy = -1.55 / 1.5 * (y / 1.5).sin();
        let valley = (-s * s).exp();
        let (wx, dwx) = window_x(x);
        let (wy, dwy) = window_y(y);
        let gx = 0.8 * bump * (-2.0 * x / 6.25 * wx + dwx) + 2.0 * s * valley * wy;
        let gy = 0.8 * bump * (-2.0 * y / 6.25) * wx + 2.0 * s * ds_dy * valley * wy - valley * dwy;
        Vector::from_vec(vec![gx, gy])
    }
}

/// Point of the `synthetic2d` minimizer curve at parameter `t = y`.
pub fn synthetic2d_curve_point(t: f64) -> Vector {
    Vector::from_vec(vec![-1.55 * (t / 1.5).cos(), t])
}

/// Euclidean distance from `p` to the `synthetic2d` minimizer curve
/// `{x = -1.55 cos(y/1.5), |y| <= 0.6}`.
pub fn synthetic2d_curve_distance(p: &Vector) -> f64 {
    synthetic2d_curve_nearest(p).1
}

/// Parameter of the curve point nearest to `p`, and the distance to it.
pub fn synthetic2d_curve_nearest(p: &Vector) -> (f64, f64) {
    let half = SYNTHETIC2D_CURVE_HALF;
    let d = |t: f64| (synthetic2d_curve_point(t) - p).norm();
    // coarse scan then golden-section on the best bracket
    let n = 240;
    let step = 2.0 * half / n as f64;
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..=n {
        let di = d(-half + i as f64 * step);
        if di < best_d {
            best_d = di;
            best = i;
        }
    }
    let mut lo = (-half + (best as f64 - 1.0) * step).max(-half);
    let mut hi = (-half + (best as f64 + 1.0) * step).min(half);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if d(a) < d(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let t = 0.5 * (lo + hi);
    let t_grid = -half + best as f64 * step;
    if d(t) <= best_d {
        (t, d(t))
    } else {
        (t_grid, best_d)
    }
}

pub struct Quartic1d;

impl ScalarField for Quartic1d {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &Vector) -> f64 {
        let x = x[0];
        let t = x * (x - 2.0);
        t * t
    }
    fn gradient(&self, x: &Vector) -> Vector {
        let x = x[0];
        Vector::from_element(1, 4.0 * x * (x - 1.0) * (x - 2.0))
    }
    fn hessian(&self, x: &Vector) -> Option<Matrix> {
        let x = x[0];
        Some(Matrix::from_element(1, 1, 12.0 * x * x - 24.0 * x + 8.0))
    }
}

pub struct DoubleWell1d {
    a: f64,
}

impl ScalarField for DoubleWell1d {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &Vector) -> f64 {
        let t = x[0] * x[0] - self.a * self.a;
        t * t
    }
    fn gradient(&self, x: &Vector) -> Vector {
        let x = x[0];
        Vector::from_element(1, 4.0 * x * (x * x - self.a * self.a))
    }
    fn hessian(&self, x: &Vector) -> Option<Matrix> {
        let x = x[0];
        Some(Matrix::from_element(1, 1, 12.0 * x * x - 4.0 * self.a * self.a))
    }
}

pub struct Quadratic {
    a: Matrix,
    b: Vector,
}

impl Quadratic {
    pub fn new(rows: &[Vec<f64>], b: Option<&[f64]>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParams("quadratic: `a` must be a non-empty square matrix".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("quadratic: `a` has non-finite entries".into()));
        }
        let a = Matrix::from_fn(n, n, |i, j| rows[i][j]);
        let scale = a.amax().max(1.0);
        if (&a - a.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidParams("quadratic: `a` is not symmetric".into()));
        }
        let eig = SymmetricEigen::new(a.clone());
        if eig.eigenvalues.min() < -1e-10 * scale {
            return Err(Error::InvalidParams(
                "quadratic: `a` is not positive semidefinite".into(),
            ));
        }
        let b = match b {
            Some(b) if b.len() != n => {
                return Err(Error::InvalidParams("quadratic: `b` length differs from `a`".into()))
            }
            Some(b) => Vector::from_column_slice(b),
            None => Vector::zeros(n),
        };
        Ok(Self { a, b })
    }
}

impl ScalarField for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.a * x)) + self.b.dot(x)
    }
    fn gradient(&self, x: &Vector) -> Vector {
        &self.a * x + &self.b
    }
    fn hessian(&self, _x: &Vector) -> Option<Matrix> {
        Some(self.a.clone())
    }
}
