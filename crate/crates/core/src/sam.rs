//! SAM objective, shifted and exact gradients, and the GD / SAM / switching
//! trajectory driver.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::fmt_f64;
use crate::landscape::{Matrix, Objective, Vector};

/// Gradient norm below which the normalized ascent direction is undefined.
pub const DEFAULT_GRAD_FLOOR: f64 = 1e-12;

/// Iterates with any coordinate beyond this magnitude count as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// Normalized ascent direction `u(x) = grad f(x) / |grad f(x)|`, or `None`
/// when the gradient norm is below `grad_floor`.
pub fn ascent_direction(obj: &Objective, x: &Vector, grad_floor: f64) -> Option<Vector> {
    let g = obj.grad(x);
    let n = g.norm();
    (n >= grad_floor && n.is_finite()).then(|| g / n)
}

fn direction_or_err(obj: &Objective, x: &Vector) -> Result<(Vector, f64)> {
    let g = obj.grad(x);
    let n = g.norm();
    if n < DEFAULT_GRAD_FLOOR || !n.is_finite() {
        return Err(Error::UndefinedAtCritical { grad_norm: n });
    }
    Ok((g / n, n))
}

/// Perturbed point `x + rho u(x)`.
pub fn perturbed_point(obj: &Objective, x: &Vector, rho: f64) -> Result<Vector> {
    obj.check_point(x)?;
    if rho == 0.0 {
        return Ok(x.clone());
    }
    let (u, _) = direction_or_err(obj, x)?;
    Ok(x + u * rho)
}

/// `f^SAM(x) = f(x + rho u(x))`.
pub fn sam_value(obj: &Objective, x: &Vector, rho: f64) -> Result<f64> {
    let xp = perturbed_point(obj, x, rho)?;
    Ok(obj.f(&xp))
}

/// The gradient SAM actually steps with: `grad f(x + rho u(x))`.
pub fn shifted_gradient(obj: &Objective, x: &Vector, rho: f64) -> Result<Vector> {
    let xp = perturbed_point(obj, x, rho)?;
    Ok(obj.grad(&xp))
}

/// Jacobian of `u`: `(I - u u^T) H / |grad f|`, with rows indexing the
/// components of `u`.
pub fn ascent_jacobian(obj: &Objective, x: &Vector) -> Result<Matrix> {
    obj.check_point(x)?;
    let (u, gn) = direction_or_err(obj, x)?;
    let h = obj.hess(x);
    Ok(jacobian_from_parts(&u, gn, &h))
}

pub(crate) fn jacobian_from_parts(u: &Vector, grad_norm: f64, h: &Matrix) -> Matrix {
    let n = u.len();
    let proj = Matrix::identity(n, n) - u * u.transpose();
    proj * h / grad_norm
}

/// Exact gradient of `f^SAM`: `(I + rho J_u)^T grad f(x + rho u(x))`.
pub fn sam_exact_gradient(obj: &Objective, x: &Vector, rho: f64) -> Result<Vector> {
    obj.check_point(x)?;
    let (u, gn) = direction_or_err(obj, x)?;
    let shifted = obj.grad(&(x + &u * rho));
    if rho == 0.0 {
        return Ok(shifted);
    }
    let j = jacobian_from_parts(&u, gn, &obj.hess(x));
    Ok(&shifted + j.tr_mul(&shifted) * rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Gd,
    Sam,
    /// Gradient descent for the first `switch_fraction` of the budget, then SAM.
    Switch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamConfig {
    pub rho: f64,
    pub eta: f64,
    pub mode: Mode,
    #[serde(default = "default_switch_fraction")]
    pub switch_fraction: f64,
    pub max_iters: usize,
    #[serde(default = "default_grad_floor")]
    pub grad_floor: f64,
    #[serde(default = "default_converge_tol")]
    pub converge_tol: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_switch_fraction() -> f64 {
    0.10
}
fn default_grad_floor() -> f64 {
    DEFAULT_GRAD_FLOOR
}
fn default_converge_tol() -> f64 {
    1e-9
}

impl SamConfig {
    pub fn new(mode: Mode, rho: f64, eta: f64, max_iters: usize) -> Self {
        Self {
            rho,
            eta,
            mode,
            switch_fraction: default_switch_fraction(),
            max_iters,
            grad_floor: DEFAULT_GRAD_FLOOR,
            converge_tol: default_converge_tol(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad("rho must be finite and >= 0");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be finite and > 0");
        }
        if !(self.switch_fraction > 0.0 && self.switch_fraction < 1.0) {
            return bad("switch_fraction must lie in (0, 1)");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.grad_floor > 0.0) {
            return bad("grad_floor must be > 0");
        }
        if !(self.converge_tol > 0.0) {
            return bad("converge_tol must be > 0");
        }
        Ok(())
    }

    /// Number of leading gradient-descent steps.
    pub fn gd_steps(&self) -> usize {
        match self.mode {
            Mode::Gd => self.max_iters,
            Mode::Sam => 0,
            Mode::Switch => (self.switch_fraction * self.max_iters as f64).ceil() as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    ConvergedShiftedGrad,
    ConvergedRawGrad,
    BudgetExhausted,
    GradFloorHit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub f: f64,
    pub grad_norm: f64,
    /// `NaN` where the ascent direction is degenerate.
    pub shifted_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    /// Iterates at the recorded steps; the last one is the terminal point.
    pub iterates: Vec<Vector>,
    pub terminal_point: Vector,
    pub terminal_status: TerminalStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TerminalSidecar {
    pub terminal_point: Vec<f64>,
    pub terminal_status: TerminalStatus,
    pub steps: usize,
}

impl Trajectory {
    pub fn last_record(&self) -> &StepRecord {
        self.records.last().expect("trajectory has at least one record")
    }

    /// Writes `k,f,grad_norm,shifted_grad_norm` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "k,f,grad_norm,shifted_grad_norm")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{}",
                r.k,
                fmt_f64(r.f),
                fmt_f64(r.grad_norm),
                fmt_f64(r.shifted_grad_norm)
            )?;
        }
        Ok(())
    }

    pub fn sidecar(&self) -> TerminalSidecar {
        TerminalSidecar {
            terminal_point: self.terminal_point.iter().copied().collect(),
            terminal_status: self.terminal_status,
            steps: self.last_record().k,
        }
    }
}

/// Runs the configured iteration from `x0`, recording every `record_every`
/// steps plus the terminal step.
pub fn run(obj: &Objective, cfg: &SamConfig, x0: &Vector, record_every: usize) -> Result<Trajectory> {
    run_with_momentum(obj, cfg, x0, record_every, 0.0)
}

/// As [`run`], with heavy-ball momentum applied to whichever gradient the
/// current phase steps with. `momentum = 0` reproduces [`run`] exactly.
pub fn run_with_momentum(
    obj: &Objective,
    cfg: &SamConfig,
    x0: &Vector,
    record_every: usize,
    momentum: f64,
) -> Result<Trajectory> {
    cfg.validate()?;
    obj.check_point(x0)?;
    if record_every == 0 {
        return Err(Error::InvalidParams("record_every must be positive".into()));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidParams("momentum must lie in [0, 1)".into()));
    }

    let gd_steps = cfg.gd_steps();
    let mut x = x0.clone();
    let mut velocity = Vector::zeros(x.len());
    let mut records = Vec::new();
    let mut iterates = Vec::new();

    let shifted_norm_at = |x: &Vector, g: &Vector, gn: f64| -> f64 {
        if gn < cfg.grad_floor {
            f64::NAN
        } else {
            obj.grad(&(x + g * (cfg.rho / gn))).norm()
        }
    };

    for k in 0..=cfg.max_iters {
        let g = obj.grad(&x);
        let gn = g.norm();
        let sam_phase = k >= gd_steps;

        let mut stop = None;
        let step_dir;
        let shifted_norm;
        if sam_phase {
            if gn < cfg.grad_floor {
                stop = Some(TerminalStatus::GradFloorHit);
                step_dir = None;
                shifted_norm = f64::NAN;
            } else {
                let s = obj.grad(&(&x + &g * (cfg.rho / gn)));
                shifted_norm = s.norm();
                if shifted_norm < cfg.converge_tol {
                    stop = Some(TerminalStatus::ConvergedShiftedGrad);
                } else if gn < cfg.converge_tol {
                    stop = Some(TerminalStatus::ConvergedRawGrad);
                }
                step_dir = Some(s);
            }
        } else {
            if gn < cfg.converge_tol {
                stop = Some(TerminalStatus::ConvergedRawGrad);
            }
            shifted_norm = f64::NAN;
            step_dir = Some(g.clone());
        }
        if stop.is_none() && k == cfg.max_iters {
            stop = Some(TerminalStatus::BudgetExhausted);
        }

        if stop.is_some() || k % record_every == 0 {
            let shifted = if sam_phase {
                shifted_norm
            } else {
                shifted_norm_at(&x, &g, gn)
            };
            records.push(StepRecord {
                k,
                f: obj.f(&x),
                grad_norm: gn,
                shifted_grad_norm: shifted,
            });
            iterates.push(x.clone());
        }
        if let Some(status) = stop {
            return Ok(Trajectory {
                records,
                iterates,
                terminal_point: x,
                terminal_status: status,
            });
        }

        let dir = step_dir.expect("non-terminal step has a direction");
        let last_finite = x.clone();
        if momentum > 0.0 {
            velocity = velocity * momentum + dir;
            x.axpy(-cfg.eta, &velocity, 1.0);
        } else {
            x.axpy(-cfg.eta, &dir, 1.0);
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(Error::Diverged {
                step: k + 1,
                last_finite,
            });
        }
    }
    unreachable!("loop always terminates at k == max_iters")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::Builtin;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn quartic() -> Objective {
        Builtin::Quartic1d.build().unwrap()
    }

    fn iso(dim: usize) -> Objective {
        Builtin::quadratic_identity(dim).build().unwrap()
    }

    const XH: f64 = 1.316_227_766_016_838; // 1 + sqrt(0.1)

    #[test]
    fn ascent_direction_examples() {
        let u = ascent_direction(&iso(2), &v(&[3.0, 4.0]), DEFAULT_GRAD_FLOOR).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-15 && (u[1] - 0.8).abs() < 1e-15);
        let u = ascent_direction(&quartic(), &v(&[1.5]), DEFAULT_GRAD_FLOOR).unwrap();
        assert_eq!(u[0], -1.0);
        assert!(ascent_direction(&quartic(), &v(&[0.0]), DEFAULT_GRAD_FLOOR).is_none());
    }

    #[test]
    fn sam_value_examples() {
        assert!((sam_value(&iso(2), &v(&[3.0, 4.0]), 1.0).unwrap() - 18.0).abs() < 1e-12);
        let q = quartic();
        let xh = 1.0 + 0.1f64.sqrt();
        assert!(sam_value(&q, &v(&[xh]), xh).unwrap().abs() < 1e-28);
        assert_eq!(sam_value(&q, &v(&[0.7]), 0.0).unwrap(), q.f(&v(&[0.7])));
        assert!(matches!(
            sam_value(&q, &v(&[0.0]), 1.0),
            Err(Error::UndefinedAtCritical { .. })
        ));
    }

    #[test]
    fn shifted_gradient_examples() {
        let s = shifted_gradient(&iso(2), &v(&[3.0, 4.0]), 1.0).unwrap();
        assert!((s[0] - 3.6).abs() < 1e-14 && (s[1] - 4.8).abs() < 1e-14);
        assert!((s.norm() - 6.0).abs() < 1e-14);
        let s = shifted_gradient(&quartic(), &v(&[XH]), XH).unwrap();
        assert!(s[0].abs() < 1e-12);
        let x = v(&[0.4]);
        assert_eq!(shifted_gradient(&quartic(), &x, 0.0).unwrap(), quartic().grad(&x));
    }

    #[test]
    fn exact_gradient_collinear_case_matches_shifted() {
        let x = v(&[3.0, 4.0]);
        let e = sam_exact_gradient(&iso(2), &x, 1.0).unwrap();
        let s = shifted_gradient(&iso(2), &x, 1.0).unwrap();
        assert!((e - s).norm() < 1e-14);
        let x = v(&[0.4]);
        assert_eq!(sam_exact_gradient(&quartic(), &x, 0.0).unwrap(), quartic().grad(&x));
    }

    #[test]
    fn ascent_jacobian_matches_finite_differences_of_u() {
        let obj = Builtin::Synthetic2d.build().unwrap();
        let x = v(&[0.7, -0.4]);
        let j = ascent_jacobian(&obj, &x).unwrap();
        let h = 1e-6;
        for col in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[col] += h;
            xm[col] -= h;
            let up = ascent_direction(&obj, &xp, DEFAULT_GRAD_FLOOR).unwrap();
            let um = ascent_direction(&obj, &xm, DEFAULT_GRAD_FLOOR).unwrap();
            let fd = (up - um) / (2.0 * h);
            for row in 0..2 {
                assert!((j[(row, col)] - fd[row]).abs() < 1e-6, "{row},{col}");
            }
        }
    }

    #[test]
    fn gd_on_quadratic_contracts() {
        let cfg = SamConfig::new(Mode::Gd, 0.0, 0.1, 100);
        let t = run(&iso(1), &cfg, &v(&[1.0]), 1).unwrap();
        assert_eq!(t.terminal_status, TerminalStatus::BudgetExhausted);
        assert!(t.terminal_point[0].abs() < 3e-5);
        assert!((t.terminal_point[0] - 0.9f64.powi(100)).abs() < 1e-15);
        assert_eq!(t.records.len(), 101);
    }

    #[test]
    fn sam_one_step_by_hand() {
        let cfg = SamConfig::new(Mode::Sam, 0.5, 0.1, 1);
        let t = run(&iso(1), &cfg, &v(&[1.0]), 1).unwrap();
        assert!((t.terminal_point[0] - 0.85).abs() < 1e-15);
        assert_eq!(t.terminal_point, *t.iterates.last().unwrap());
    }

    #[test]
    fn sam_converges_to_quartic_hallucinated_minimizer() {
        let mut cfg = SamConfig::new(Mode::Sam, XH, 1e-3, 1_000_000);
        cfg.converge_tol = 1e-12;
        let t = run(&quartic(), &cfg, &v(&[XH + 0.05]), 1000).unwrap();
        assert_eq!(t.terminal_status, TerminalStatus::ConvergedShiftedGrad);
        assert!((t.terminal_point[0] - XH).abs() < 1e-6);
    }

    #[test]
    fn grad_floor_stops_sam() {
        let cfg = SamConfig::new(Mode::Sam, 1.0, 0.1, 10);
        let t = run(&quartic(), &cfg, &v(&[0.0]), 1).unwrap();
        assert_eq!(t.terminal_status, TerminalStatus::GradFloorHit);
        assert_eq!(t.records.len(), 1);
    }

    #[test]
    fn switch_mode_uses_gd_first() {
        let mut cfg = SamConfig::new(Mode::Switch, 0.5, 0.1, 10);
        cfg.switch_fraction = 0.25;
        assert_eq!(cfg.gd_steps(), 3);
        // after 3 gd steps x = 0.9^3, then sam steps
        let t = run(&iso(1), &cfg, &v(&[1.0]), 1).unwrap();
        let mut x: f64 = 0.9f64.powi(3);
        for _ in 3..10 {
            x -= 0.1 * (x + 0.5 * x.signum());
        }
        assert!((t.terminal_point[0] - x).abs() < 1e-14);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = SamConfig::new(Mode::Gd, 0.0, 3.0, 1000);
        match run(&iso(1), &cfg, &v(&[1.0]), 1) {
            Err(Error::Diverged { step, last_finite }) => {
                assert!(step > 1);
                assert!(last_finite[0].abs() <= DIVERGENCE_BOUND);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SamConfig::new(Mode::Sam, -1.0, 0.1, 10);
        assert!(cfg.validate().is_err());
        cfg.rho = 1.0;
        cfg.switch_fraction = 1.0;
        assert!(cfg.validate().is_err());
        cfg.switch_fraction = 0.1;
        assert!(cfg.validate().is_ok());
        let parsed: SamConfig =
            serde_json::from_str(r#"{"rho":1.0,"eta":0.01,"mode":"switch","max_iters":5}"#).unwrap();
        assert_eq!(parsed.switch_fraction, 0.10);
        assert_eq!(parsed.converge_tol, 1e-9);
    }

    #[test]
    fn csv_header_and_rows() {
        let cfg = SamConfig::new(Mode::Gd, 0.0, 0.1, 3);
        let t = run(&iso(1), &cfg, &v(&[1.0]), 2).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines[0], "k,f,grad_norm,shifted_grad_norm");
        assert_eq!(lines.len(), 1 + 3); // k = 0, 2, 3
        assert!(lines[1].starts_with("0,0.5,1.0,"));
    }
}
