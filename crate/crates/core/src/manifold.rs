//! Tracing hallucinated minimizers along a curve of true minimizers.
//!
//! For a target `x` the preimage `y` solves `F(y) = y + rho u(y) - x = 0`.
//! Newton's method uses the Jacobian `I + rho J(y)`, where `J` is the
//! Jacobian of the normalized gradient.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::fmt_f64;
use crate::landscape::{Matrix, Objective, Vector};
use crate::sam;

pub const DEFAULT_NEWTON_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_NEWTON: usize = 50;
/// Smallest singular value of `I + rho J` below which the system is treated
/// as singular.
pub const SINGULAR_THRESHOLD: f64 = 1e-12;
/// Tolerance on `|x_h + rho u(x_h) - curve(t_0)|` at the start of a walk.
pub const START_TOLERANCE: f64 = 1e-6;
const MAX_REFINEMENTS: usize = 4;

fn residual(obj: &Objective, y: &Vector, x_target: &Vector, rho: f64) -> Result<Vector> {
    Ok(sam::perturbed_point(obj, y, rho)? - x_target)
}

/// Jacobian `I + rho J(y)` of the perturbation map.
pub fn perturbation_jacobian(obj: &Objective, y: &Vector, rho: f64) -> Result<Matrix> {
    let j = sam::ascent_jacobian(obj, y)?;
    Ok(Matrix::identity(y.len(), y.len()) + j * rho)
}

fn min_singular(m: &Matrix) -> f64 {
    m.singular_values().min()
}

/// Solves `y + rho u(y) = x_target` by Newton's method from `y0`.
pub fn newton_solve_preimage(
    obj: &Objective,
    x_target: &Vector,
    rho: f64,
    y0: &Vector,
    newton_tol: f64,
    max_newton: usize,
) -> Result<Vector> {
    newton_with_singular(obj, x_target, rho, y0, newton_tol, max_newton).map(|(y, _)| y)
}

fn newton_with_singular(
    obj: &Objective,
    x_target: &Vector,
    rho: f64,
    y0: &Vector,
    newton_tol: f64,
    max_newton: usize,
) -> Result<(Vector, f64)> {
    obj.check_point(x_target)?;
    obj.check_point(y0)?;
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParams("rho must be finite and non-negative".into()));
    }
    if !(newton_tol > 0.0) {
        return Err(Error::InvalidParams("newton_tol must be positive".into()));
    }
    let mut y = y0.clone();
    let mut r = residual(obj, &y, x_target, rho)?;
    for _ in 0..max_newton {
        let jac = perturbation_jacobian(obj, &y, rho)?;
        let svd = jac.svd(true, true);
        let smin = svd.singular_values.min();
        if smin < SINGULAR_THRESHOLD {
            return Err(Error::SingularJacobian(smin));
        }
        if r.norm() < newton_tol {
            return Ok((y, smin));
        }
        let step = svd
            .solve(&r, 0.0)
            .map_err(|e| Error::InvalidParams(e.to_string()))?;
        y -= step;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        r = residual(obj, &y, x_target, rho)?;
    }
    if r.norm() < newton_tol {
        let smin = min_singular(&perturbation_jacobian(obj, &y, rho)?);
        if smin < SINGULAR_THRESHOLD {
            return Err(Error::SingularJacobian(smin));
        }
        return Ok((y, smin));
    }
    Err(Error::NewtonNoConvergence {
        iters: max_newton,
        residual: r.norm(),
    })
}

/// Samples of a continuation walk. All sequences share one length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationResult {
    pub params: Vec<f64>,
    pub targets: Vec<Vec<f64>>,
    pub preimages: Vec<Vec<f64>>,
    /// `|grad f(y + rho u(y))|` at each preimage.
    pub residuals: Vec<f64>,
    /// `|y + rho u(y) - x|` at each preimage.
    pub round_trip: Vec<f64>,
    pub jacobian_min_singular: Vec<f64>,
    pub truncated: bool,
    pub stop_reason: Option<String>,
}

impl ContinuationResult {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn push(&mut self, obj: &Objective, t: f64, x: &Vector, y: &Vector, rho: f64, smin: f64) -> Result<()> {
        let shifted = sam::shifted_gradient(obj, y, rho)?;
        self.params.push(t);
        self.targets.push(x.as_slice().to_vec());
        self.preimages.push(y.as_slice().to_vec());
        self.residuals.push(shifted.norm());
        self.round_trip.push(residual(obj, y, x, rho)?.norm());
        self.jacobian_min_singular.push(smin);
        Ok(())
    }

    /// Writes `t,target...,preimage...,residual,min_singular`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.targets.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|i| format!("target_{i}")));
        header.extend((0..d).map(|i| format!("preimage_{i}")));
        header.push("residual".into());
        header.push("min_singular".into());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![fmt_f64(self.params[i])];
            row.extend(self.targets[i].iter().map(|&v| fmt_f64(v)));
            row.extend(self.preimages[i].iter().map(|&v| fmt_f64(v)));
            row.push(fmt_f64(self.residuals[i]));
            row.push(fmt_f64(self.jacobian_min_singular[i]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuationOptions {
    pub max_step: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            max_step: 0.25,
            newton_tol: DEFAULT_NEWTON_TOL,
            max_newton: DEFAULT_MAX_NEWTON,
        }
    }
}

/// Walks `curve(ts[0]), curve(ts[1]), ...`, warm-starting each Newton solve
/// from the previous preimage. A segment whose preimage fails to converge or
/// jumps farther than `max_step` is bisected in parameter, up to four times;
/// intermediate samples are kept. The walk stops at the first segment that
/// still fails and the result is marked truncated.
pub fn continue_manifold<C>(
    obj: &Objective,
    x_h: &Vector,
    rho: f64,
    curve: C,
    ts: &[f64],
    opts: &ContinuationOptions,
) -> Result<ContinuationResult>
where
    C: Fn(f64) -> Vector,
{
    if ts.is_empty() {
        return Err(Error::InvalidParams("curve needs at least one sample".into()));
    }
    if !(opts.max_step > 0.0) {
        return Err(Error::InvalidParams("max_step must be positive".into()));
    }
    obj.check_point(x_h)?;
    let x0 = curve(ts[0]);
    obj.check_point(&x0)?;
    let start_gap = residual(obj, x_h, &x0, rho)?.norm();
    if !(start_gap <= START_TOLERANCE) {
        return Err(Error::ContinuationStart(start_gap));
    }

    let mut out = ContinuationResult {
        params: Vec::new(),
        targets: Vec::new(),
        preimages: Vec::new(),
        residuals: Vec::new(),
        round_trip: Vec::new(),
        jacobian_min_singular: Vec::new(),
        truncated: false,
        stop_reason: None,
    };

    let (y0, s0) = match newton_with_singular(obj, &x0, rho, x_h, opts.newton_tol, opts.max_newton) {
        Ok(v) => v,
        Err(e) => {
            out.truncated = true;
            out.stop_reason = Some(e.to_string());
            return Ok(out);
        }
    };
    out.push(obj, ts[0], &x0, &y0, rho, s0)?;

    let mut t_prev = ts[0];
    let mut y_prev = y0;
    for &t in &ts[1..] {
        match walk_segment(obj, rho, &curve, t_prev, t, &y_prev, opts, 0, &mut out) {
            Ok(y) => {
                y_prev = y;
                t_prev = t;
            }
            Err(e) => {
                out.truncated = true;
                out.stop_reason = Some(e.to_string());
                break;
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn walk_segment<C>(
    obj: &Objective,
    rho: f64,
    curve: &C,
    t_from: f64,
    t_to: f64,
    y_from: &Vector,
    opts: &ContinuationOptions,
    depth: usize,
    out: &mut ContinuationResult,
) -> Result<Vector>
where
    C: Fn(f64) -> Vector,
{
    let x = curve(t_to);
    obj.check_point(&x)?;
    let attempt = newton_with_singular(obj, &x, rho, y_from, opts.newton_tol, opts.max_newton).and_then(|(y, s)| {
        let jump = (&y - y_from).norm();
        if jump > opts.max_step {
            Err(Error::InvalidParams(format!(
                "preimage jump {jump:e} exceeds max_step {}",
                opts.max_step
            )))
        } else {
            Ok((y, s))
        }
    });
    match attempt {
        Ok((y, s)) => {
            out.push(obj, t_to, &x, &y, rho, s)?;
            Ok(y)
        }
        Err(e) if depth >= MAX_REFINEMENTS => Err(e),
        Err(_) => {
            let mid = 0.5 * (t_from + t_to);
            let y_mid = walk_segment(obj, rho, curve, t_from, mid, y_from, opts, depth + 1, out)?;
            walk_segment(obj, rho, curve, mid, t_to, &y_mid, opts, depth + 1, out)
        }
    }
}
