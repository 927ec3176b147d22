//! Classification of converged points and attractor diagnostics.
//!
//! A point is a *hallucinated minimizer* when SAM is stationary there
//! (`|grad f(x + rho u(x))|` below `sam_tol`), the raw gradient is clearly
//! nonzero, and `f^SAM` does not decrease on a sphere of probes around it.
//! Local minimality is tested by probing `f^SAM` directly rather than through a
//! Hessian of `f^SAM`, which is only C¹ in general.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::vector_serde;
use crate::landscape::{symmetrize, Matrix, Objective, Vector};
use crate::sam::{self, DEFAULT_GRAD_FLOOR};
use crate::sampling::{ball_offsets, sphere_offsets};

/// Largest dimension for which the attractor margin uses a dense Hessian.
pub const DENSE_MARGIN_MAX_DIM: usize = 64;

/// Probe increases down to `-PROBE_SLACK` still count as non-decreasing.
pub const PROBE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    TrueStationary,
    HallucinatedMinimizer,
    HallucinatedStationaryNonmin,
    NotStationary,
}

impl Classification {
    pub fn is_hallucinated(self) -> bool {
        matches!(
            self,
            Classification::HallucinatedMinimizer | Classification::HallucinatedStationaryNonmin
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMinEvidence {
    pub probe_count: usize,
    /// Minimum of `f^SAM(probe) - f^SAM(x)` over non-degenerate probes.
    pub min_probe_increase: f64,
    pub degenerate_probes: usize,
    /// More than half of the probes were degenerate.
    pub inconclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    #[serde(with = "vector_serde")]
    pub point: Vector,
    pub rho: f64,
    pub raw_grad_norm: f64,
    pub shifted_grad_norm: f64,
    pub classification: Classification,
    pub local_min_evidence: Option<LocalMinEvidence>,
    /// `gamma = 1 + rho * lambda_min(Sym(grad u))`, for stationary cases with a
    /// defined ascent direction.
    pub attractor_margin: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyOptions {
    pub sam_tol: f64,
    pub raw_thresh: f64,
    pub probe_radius: f64,
    pub probe_count: usize,
    pub seed: u64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            sam_tol: 1e-8,
            raw_thresh: 1e-4,
            probe_radius: 1e-3,
            probe_count: 32,
            seed: 0,
        }
    }
}

pub fn classify(obj: &Objective, x: &Vector, rho: f64, opts: &ClassifyOptions) -> Result<StationaryReport> {
    obj.check_point(x)?;
    let g = obj.grad(x);
    let raw = g.norm();
    let shifted = if raw >= DEFAULT_GRAD_FLOOR {
        obj.grad(&(x + &g * (rho / raw))).norm()
    } else {
        f64::NAN
    };
    let mut report = StationaryReport {
        point: x.clone(),
        rho,
        raw_grad_norm: raw,
        shifted_grad_norm: shifted,
        classification: Classification::TrueStationary,
        local_min_evidence: None,
        attractor_margin: None,
    };
    if raw < opts.raw_thresh {
        report.attractor_margin = attractor_margin_auto(obj, x, rho, opts.seed).ok();
        return Ok(report);
    }
    if !(shifted <= opts.sam_tol) {
        report.classification = Classification::NotStationary;
        return Ok(report);
    }

    let center = obj.f(&(x + &g * (rho / raw)));
    let mut min_increase = f64::INFINITY;
    let mut degenerate = 0;
    let offsets = sphere_offsets(x.len(), opts.probe_count, opts.probe_radius, opts.seed);
    for off in &offsets {
        let p = x + off;
        let gp = obj.grad(&p);
        let gpn = gp.norm();
        if gpn < DEFAULT_GRAD_FLOOR {
            degenerate += 1;
            continue;
        }
        let val = obj.f(&(&p + gp * (rho / gpn)));
        min_increase = min_increase.min(val - center);
    }
    let inconclusive = 2 * degenerate > offsets.len();
    report.classification = if !inconclusive && min_increase >= -PROBE_SLACK {
        Classification::HallucinatedMinimizer
    } else {
        Classification::HallucinatedStationaryNonmin
    };
    report.local_min_evidence = Some(LocalMinEvidence {
        probe_count: offsets.len(),
        min_probe_increase: min_increase,
        degenerate_probes: degenerate,
        inconclusive,
    });
    report.attractor_margin = attractor_margin_auto(obj, x, rho, opts.seed).ok();
    Ok(report)
}

/// `Sym(grad u)` from a dense Hessian.
pub fn sym_ascent_jacobian(obj: &Objective, x: &Vector) -> Result<Matrix> {
    Ok(symmetrize(sam::ascent_jacobian(obj, x)?))
}

fn lambda_min(m: Matrix) -> f64 {
    SymmetricEigen::new(m).eigenvalues.min()
}

fn spectral_norm_sym(m: Matrix) -> f64 {
    SymmetricEigen::new(m).eigenvalues.amax()
}

/// `gamma(x) = 1 + rho * lambda_min(Sym(grad u(x)))` with a dense Hessian.
pub fn attractor_margin(obj: &Objective, x: &Vector, rho: f64) -> Result<f64> {
    Ok(1.0 + rho * lambda_min(sym_ascent_jacobian(obj, x)?))
}

/// Matrix-free variant of [`attractor_margin`]: Lanczos with full
/// reorthogonalization on `Sym(grad u)`, using Hessian-vector products from
/// central differences of the gradient. Stops when the smallest Ritz value
/// changes by less than `1e-4` relative.
pub fn attractor_margin_matrix_free(
    obj: &Objective,
    x: &Vector,
    rho: f64,
    max_iters: usize,
    seed: u64,
) -> Result<f64> {
    obj.check_point(x)?;
    let g = obj.grad(x);
    let gn = g.norm();
    if gn < DEFAULT_GRAD_FLOOR {
        return Err(Error::UndefinedAtCritical { grad_norm: gn });
    }
    let u = g / gn;
    let project = |v: &Vector| v - &u * u.dot(v);
    // Sym(J) v with J = (I - uu^T) H / |g|
    let apply = |v: &Vector| -> Vector {
        let jv = project(&obj.hvp(x, v)) / gn;
        let jtv = obj.hvp(x, &project(v)) / gn;
        (jv + jtv) * 0.5
    };

    let n = x.len();
    let steps = max_iters.clamp(1, n);
    let mut basis: Vec<Vector> = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps);
    let mut q = sphere_offsets(n, 1, 1.0, seed).pop().expect("one start vector");
    let mut prev = f64::NAN;
    for k in 0..steps {
        let mut w = apply(&q);
        let a = q.dot(&w);
        w -= &q * a;
        if k > 0 {
            w -= &basis[k - 1] * betas[k - 1];
        }
        for b in basis.iter().chain(std::iter::once(&q)) {
            let c = b.dot(&w);
            w -= b * c;
        }
        alphas.push(a);
        basis.push(q.clone());
        let t = Matrix::from_fn(k + 1, k + 1, |i, j| {
            if i == j {
                alphas[i]
            } else if i + 1 == j || j + 1 == i {
                betas[i.min(j)]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let (imin, lam) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty tridiagonal");
        let b = w.norm();
        // Ritz residual |beta_k * e_k^T y|
        let ritz_residual = b * eig.eigenvectors[(k, imin)].abs();
        let scale = eig.eigenvalues.amax().max(1e-12);
        prev = lam;
        if ritz_residual < 1e-4 * scale || b < 1e-12 {
            break;
        }
        betas.push(b);
        q = w / b;
    }
    Ok(1.0 + rho * prev)
}

/// Dense margin for small dimensions, matrix-free otherwise.
pub fn attractor_margin_auto(obj: &Objective, x: &Vector, rho: f64, seed: u64) -> Result<f64> {
    if x.len() <= DENSE_MARGIN_MAX_DIM {
        attractor_margin(obj, x, rho)
    } else {
        attractor_margin_matrix_free(obj, x, rho, 60, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangeReport {
    pub rho: f64,
    /// `x_star - x_h - rho u(x_h)`.
    #[serde(with = "vector_serde")]
    pub residual: Vector,
    pub residual_norm: f64,
    /// `2 rho / |grad f(x_h)|`.
    pub lambda: f64,
    /// `<x_star - x_h, grad f(x_h)>`.
    pub alignment: f64,
}

/// Checks the Lagrange condition `2 (x_star - x_h) = lambda grad f(x_h)` with
/// `rho = |x_h - x_star|`.
pub fn lagrange_check(obj: &Objective, x_h: &Vector, x_star: &Vector) -> Result<LagrangeReport> {
    obj.check_point(x_h)?;
    obj.check_point(x_star)?;
    let g = obj.grad(x_h);
    let gn = g.norm();
    if gn < DEFAULT_GRAD_FLOOR {
        return Err(Error::UndefinedAtCritical { grad_norm: gn });
    }
    let d = x_star - x_h;
    let rho = d.norm();
    let residual = &d - &g * (rho / gn);
    Ok(LagrangeReport {
        rho,
        residual_norm: residual.norm(),
        residual,
        lambda: 2.0 * rho / gn,
        alignment: d.dot(&g),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSizeBoundReport {
    pub delta: f64,
    /// Max `|grad f|` over the ball of radius `delta + rho`.
    #[serde(rename = "M")]
    pub grad_bound: f64,
    /// Max spectral norm of the Hessian over the `delta` ball.
    #[serde(rename = "L")]
    pub hessian_bound: f64,
    /// Min attractor margin over the `delta` ball.
    pub gamma: f64,
    /// `min(delta / (2M), 2 gamma / L)`.
    pub eta_max: f64,
}

/// Estimates the neighborhood constants of the attractor step-size bound by
/// sampling and returns `eta_max = min(delta / (2M), 2 gamma / L)`.
pub fn step_size_bound(
    obj: &Objective,
    x_h: &Vector,
    rho: f64,
    delta: f64,
    sample_resolution: usize,
) -> Result<StepSizeBoundReport> {
    obj.check_point(x_h)?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParams("delta must be positive".into()));
    }
    if sample_resolution == 0 {
        return Err(Error::InvalidParams("sample_resolution must be positive".into()));
    }
    let dim = x_h.len();
    let grad_bound = ball_offsets(dim, sample_resolution, delta + rho, 0x5eed)
        .iter()
        .map(|o| obj.grad(&(x_h + o)).norm())
        .fold(0.0, f64::max);

    let mut hessian_bound: f64 = 0.0;
    let mut gamma = f64::INFINITY;
    for o in ball_offsets(dim, sample_resolution, delta, 0x5eed + 1) {
        let p = x_h + o;
        let gp = obj.grad(&p);
        let gpn = gp.norm();
        if gpn < DEFAULT_GRAD_FLOOR {
            return Err(Error::AttractorViolated { gamma: f64::NEG_INFINITY });
        }
        let h = obj.hess(&p);
        hessian_bound = hessian_bound.max(spectral_norm_sym(h.clone()));
        let j = sam::jacobian_from_parts(&(gp / gpn), gpn, &h);
        let g = 1.0 + rho * lambda_min(symmetrize(j));
        gamma = gamma.min(g);
        if g <= 0.0 {
            return Err(Error::AttractorViolated { gamma: g });
        }
    }
    let eta_max = (delta / (2.0 * grad_bound)).min(2.0 * gamma / hessian_bound);
    Ok(StepSizeBoundReport {
        delta,
        grad_bound,
        hessian_bound,
        gamma,
        eta_max,
    })
}
