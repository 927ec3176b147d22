//! Grid views of a two-dimensional landscape: `f`, `f^SAM`, the shifted
//! gradient field, and the refined minimizers of `f^SAM`.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector;
use crate::error::{Error, Result};
use crate::export::{fmt_f64, vector_serde};
use crate::landscape::{Objective, Vector};
use crate::sam::{self, DEFAULT_GRAD_FLOOR};

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Values on the tensor grid `xs x ys`, stored x-major (`i * ys.len() + j`).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub rho: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub f: Vec<f64>,
    /// `NaN` where the ascent direction is degenerate.
    pub fsam: Vec<f64>,
    /// Shifted gradient components; `NaN` where degenerate.
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl FieldGrid {
    pub fn point(&self, idx: usize) -> Vector {
        let ny = self.ys.len();
        Vector::from_vec(vec![self.xs[idx / ny], self.ys[idx % ny]])
    }

    fn write_scalar<W: Write>(&self, mut w: W, values: &[f64]) -> io::Result<()> {
        writeln!(w, "x,y,value")?;
        for (idx, v) in values.iter().enumerate() {
            let p = self.point(idx);
            writeln!(w, "{},{},{}", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(*v))?;
        }
        Ok(())
    }

    /// `x,y,value` rows of `f`.
    pub fn write_f_csv<W: Write>(&self, w: W) -> io::Result<()> {
        self.write_scalar(w, &self.f)
    }

    /// `x,y,value` rows of `f^SAM`.
    pub fn write_fsam_csv<W: Write>(&self, w: W) -> io::Result<()> {
        self.write_scalar(w, &self.fsam)
    }

    /// `x,y,gx,gy` rows of the shifted gradient.
    pub fn write_field_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,y,gx,gy")?;
        for idx in 0..self.f.len() {
            let p = self.point(idx);
            writeln!(
                w,
                "{},{},{},{}",
                fmt_f64(p[0]),
                fmt_f64(p[1]),
                fmt_f64(self.gx[idx]),
                fmt_f64(self.gy[idx])
            )?;
        }
        Ok(())
    }
}

/// Evaluates `f`, `f^SAM` and the shifted gradient on an `nx x ny` grid
/// spanning `bounds` (endpoints included).
pub fn sample_field(obj: &Objective, bounds: [(f64, f64); 2], nx: usize, ny: usize, rho: f64) -> Result<FieldGrid> {
    if obj.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: obj.dim(),
        });
    }
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidParams("grid needs at least one point per axis".into()));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParams("rho must be finite and non-negative".into()));
    }
    for &(lo, hi) in &bounds {
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidParams(format!("invalid box side [{lo}, {hi}]")));
        }
    }
    let xs = linspace(bounds[0].0, bounds[0].1, nx);
    let ys = linspace(bounds[1].0, bounds[1].1, ny);
    let cells: Vec<[f64; 4]> = (0..nx * ny)
        .into_par_iter()
        .map(|idx| {
            let p = Vector::from_vec(vec![xs[idx / ny], ys[idx % ny]]);
            let f = obj.f(&p);
            match sam::ascent_direction(obj, &p, DEFAULT_GRAD_FLOOR) {
                Some(u) => {
                    let shifted = &p + u * rho;
                    let g = obj.grad(&shifted);
                    [f, obj.f(&shifted), g[0], g[1]]
                }
                None => [f, f64::NAN, f64::NAN, f64::NAN],
            }
        })
        .collect();
    Ok(FieldGrid {
        rho,
        xs,
        ys,
        f: cells.iter().map(|c| c[0]).collect(),
        fsam: cells.iter().map(|c| c[1]).collect(),
        gx: cells.iter().map(|c| c[2]).collect(),
        gy: cells.iter().map(|c| c[3]).collect(),
    })
}

/// A minimizer of `f^SAM` found on the grid and polished by descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamMinimizer {
    #[serde(with = "vector_serde")]
    pub grid_point: Vector,
    #[serde(with = "vector_serde")]
    pub point: Vector,
    pub f: f64,
    pub fsam: f64,
    pub raw_grad_norm: f64,
    pub shifted_grad_norm: f64,
    /// Attractor margin at `point`; `NaN` where undefined.
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizerOptions {
    /// Cells with `f^SAM <= grid min + value_tol` are refined.
    pub value_tol: f64,
    pub refine_steps: usize,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        Self {
            value_tol: 1e-3,
            refine_steps: 50_000,
        }
    }
}

/// Grid cells within `value_tol` of the smallest `f^SAM` on the grid, each
/// refined by backtracking descent on `f^SAM` with its exact gradient.
pub fn sam_minimizers(obj: &Objective, grid: &FieldGrid, opts: &MinimizerOptions) -> Result<Vec<SamMinimizer>> {
    let best = grid
        .fsam
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Ok(Vec::new());
    }
    let seeds: Vec<usize> = (0..grid.fsam.len())
        .filter(|&i| grid.fsam[i] <= best + opts.value_tol)
        .collect();
    seeds
        .into_par_iter()
        .map(|idx| {
            let start = grid.point(idx);
            let point = descend_fsam(obj, &start, grid.rho, opts.refine_steps);
            summarize(obj, start, point, grid.rho)
        })
        .collect()
}

fn summarize(obj: &Objective, grid_point: Vector, point: Vector, rho: f64) -> Result<SamMinimizer> {
    let g = obj.grad(&point);
    let (fsam, shifted, gamma) = match sam::ascent_direction(obj, &point, DEFAULT_GRAD_FLOOR) {
        Some(u) => {
            let shifted = &point + u * rho;
            let gamma = detector::attractor_margin(obj, &point, rho).unwrap_or(f64::NAN);
            (obj.f(&shifted), obj.grad(&shifted).norm(), gamma)
        }
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    Ok(SamMinimizer {
        f: obj.f(&point),
        fsam,
        raw_grad_norm: g.norm(),
        shifted_grad_norm: shifted,
        gamma,
        grid_point,
        point,
    })
}

/// Armijo-backtracking descent on `f^SAM`; stops early where `f^SAM` is
/// undefined or no decrease can be found.
pub fn descend_fsam(obj: &Objective, start: &Vector, rho: f64, max_steps: usize) -> Vector {
    let mut x = start.clone();
    let Ok(mut value) = sam::sam_value(obj, &x, rho) else {
        return x;
    };
    let mut step = 1.0;
    for _ in 0..max_steps {
        let Ok(g) = sam::sam_exact_gradient(obj, &x, rho) else {
            break;
        };
        let gn2 = g.norm_squared();
        if gn2 == 0.0 || !gn2.is_finite() {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &x - &g * step;
            if let Ok(v) = sam::sam_value(obj, &trial, rho) {
                if v <= value - 1e-4 * step * gn2 {
                    x = trial;
                    value = v;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step *= 2.0;
    }
    x
}

/// Writes `x,y,f,fsam,raw_grad_norm,shifted_grad_norm,gamma` rows.
pub fn write_minimizers_csv<W: Write>(mut w: W, mins: &[SamMinimizer]) -> io::Result<()> {
    writeln!(w, "x,y,f,fsam,raw_grad_norm,shifted_grad_norm,gamma")?;
    for m in mins {
        let cols = [
            m.point[0],
            m.point[1],
            m.f,
            m.fsam,
            m.raw_grad_norm,
            m.shifted_grad_norm,
            m.gamma,
        ];
        let row: Vec<String> = cols.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
