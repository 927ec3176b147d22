//! Explicit construction of a hallucinated minimizer from a local maximizer
//! `x_bullet` and a minimizer `x_star`.
//!
//! The superlevel component `C = {f >= f(x_bullet) - eps}` around `x_bullet`
//! is extracted on a grid by flood fill. The point `x_h` of `C` farthest from
//! `x_star` lies on `{f = level}` and its gradient points at `x_star`, so with
//! `rho = |x_h - x_star|` the perturbed point `x_h + rho u(x_h)` is `x_star`
//! itself and `f^SAM(x_h) = f(x_star)`.

use std::collections::VecDeque;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{self, ClassifyOptions, LagrangeReport, StationaryReport};
use crate::error::{Error, Result};
use crate::export::{fmt_f64, vector_serde};
use crate::landscape::{Objective, Vector};
use crate::sam;

/// Largest dimension the grid construction supports.
pub const MAX_CONSTRUCTION_DIM: usize = 3;

const MAX_REFINE_ITERS: usize = 1000;

/// Axis-aligned grid of cells; cell centers sit at `lo + (i + 1/2) h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub bounds: Vec<(f64, f64)>,
    pub spacing: Vec<f64>,
    pub shape: Vec<usize>,
}

impl CellGrid {
    /// Grid over `bounds` with cells of (approximately) `resolution` per axis;
    /// the spacing is adjusted so that an integer number of cells fits.
    pub fn new(bounds: &[(f64, f64)], resolution: &[f64]) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != resolution.len() {
            return Err(Error::InvalidParams("box and resolution dimensions differ".into()));
        }
        let mut spacing = Vec::with_capacity(bounds.len());
        let mut shape = Vec::with_capacity(bounds.len());
        for (&(lo, hi), &r) in bounds.iter().zip(resolution) {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidParams(format!("invalid box side [{lo}, {hi}]")));
            }
            if !(r > 0.0) {
                return Err(Error::InvalidParams("resolution must be positive".into()));
            }
            let n = ((hi - lo) / r).round().max(1.0) as usize;
            shape.push(n);
            spacing.push((hi - lo) / n as f64);
        }
        Ok(Self {
            bounds: bounds.to_vec(),
            spacing,
            shape,
        })
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major multi-index of a linear index (first axis slowest), so
    /// linear order is lexicographic order.
    pub fn unravel(&self, mut lin: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = lin % self.shape[a];
            lin /= self.shape[a];
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn center(&self, idx: &[usize]) -> Vector {
        Vector::from_iterator(
            self.dim(),
            idx.iter()
                .enumerate()
                .map(|(a, &i)| self.bounds[a].0 + (i as f64 + 0.5) * self.spacing[a]),
        )
    }

    /// Cell containing `x`, clamped into the grid.
    pub fn locate(&self, x: &Vector) -> Vec<usize> {
        (0..self.dim())
            .map(|a| {
                let t = ((x[a] - self.bounds[a].0) / self.spacing[a]).floor();
                t.clamp(0.0, (self.shape[a] - 1) as f64) as usize
            })
            .collect()
    }

    pub fn on_boundary(&self, idx: &[usize]) -> bool {
        idx.iter().zip(&self.shape).any(|(&i, &n)| i == 0 || i + 1 == n)
    }

    /// Face neighbors of `idx` inside the grid.
    fn neighbors(&self, idx: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
        let idx = idx.to_vec();
        (0..self.dim()).flat_map(move |a| {
            let mut out = Vec::with_capacity(2);
            if idx[a] > 0 {
                let mut m = idx.clone();
                m[a] -= 1;
                out.push(m);
            }
            if idx[a] + 1 < self.shape[a] {
                let mut p = idx.clone();
                p[a] += 1;
                out.push(p);
            }
            out
        })
    }

    /// Cells within Chebyshev index distance `r` of `idx`.
    fn stencil(&self, idx: &[usize], r: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for (&i, &n) in idx.iter().zip(&self.shape) {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(n - 1);
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (lo..=hi).map(move |i| {
                        let mut p = prefix.clone();
                        p.push(i);
                        p
                    })
                })
                .collect();
        }
        out
    }

    /// `f` at every cell center, in linear order.
    pub fn evaluate(&self, obj: &Objective) -> Vec<f64> {
        (0..self.len())
            .into_par_iter()
            .map(|lin| obj.f(&self.center(&self.unravel(lin))))
            .collect()
    }
}

fn check_dim(obj: &Objective, grid: &CellGrid) -> Result<()> {
    if obj.dim() > MAX_CONSTRUCTION_DIM {
        return Err(Error::UnsupportedDimension(obj.dim()));
    }
    if grid.dim() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            got: grid.dim(),
        });
    }
    Ok(())
}

/// Grid argmax of `f`; ties go to the lexicographically smallest cell.
pub fn grid_argmax(obj: &Objective, grid: &CellGrid) -> Result<Vector> {
    check_dim(obj, grid)?;
    let values = grid.evaluate(obj);
    let best = argmax_first(&values);
    Ok(grid.center(&grid.unravel(best)))
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Connected component of `{f >= f(x_bullet) - epsilon}` containing `x_bullet`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMask {
    pub grid: CellGrid,
    /// Member cells in lexicographic order.
    pub cells: Vec<Vec<usize>>,
    /// `f` at the member cell centers.
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub level: f64,
}

impl ComponentMask {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Writes `i,j,...,f` rows, one per member cell.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        const AXES: [&str; 3] = ["i", "j", "k"];
        let header: Vec<&str> = AXES[..self.grid.dim()].to_vec();
        writeln!(w, "{},f", header.join(","))?;
        for (idx, v) in self.cells.iter().zip(&self.values) {
            let cols: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
            writeln!(w, "{},{}", cols.join(","), fmt_f64(*v))?;
        }
        Ok(())
    }
}

/// Flood fill (face connectivity) over cell centers with
/// `f >= f(x_bullet) - epsilon`, seeded at the cell containing `x_bullet`.
pub fn superlevel_component(
    obj: &Objective,
    grid: &CellGrid,
    x_bullet: &Vector,
    epsilon: f64,
) -> Result<ComponentMask> {
    check_dim(obj, grid)?;
    obj.check_point(x_bullet)?;
    let values = grid.evaluate(obj);
    superlevel_component_with_values(obj, grid, &values, x_bullet, epsilon)
}

fn superlevel_component_with_values(
    obj: &Objective,
    grid: &CellGrid,
    values: &[f64],
    x_bullet: &Vector,
    epsilon: f64,
) -> Result<ComponentMask> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParams("epsilon must be positive".into()));
    }
    let peak = obj.f(x_bullet);
    let seed_idx = grid.locate(x_bullet);
    let local_max = grid
        .stencil(&seed_idx, 2)
        .iter()
        .map(|c| values[grid.ravel(c)])
        .fold(f64::NEG_INFINITY, f64::max);
    if local_max > peak + 1e-12 * peak.abs().max(1.0) {
        return Err(Error::NotLocalMaximum(format!(
            "f(x_bullet) = {peak} but a nearby cell has f = {local_max}"
        )));
    }
    let level = peak - epsilon;

    let seed = if values[grid.ravel(&seed_idx)] >= level {
        seed_idx
    } else {
        grid.stencil(&seed_idx, 1)
            .into_iter()
            .filter(|c| values[grid.ravel(c)] >= level)
            .max_by(|a, b| values[grid.ravel(a)].total_cmp(&values[grid.ravel(b)]))
            .ok_or_else(|| {
                Error::NotLocalMaximum("no cell near x_bullet reaches the level; epsilon below grid resolution".into())
            })?
    };

    let mut member = vec![false; grid.len()];
    let mut queue = VecDeque::new();
    member[grid.ravel(&seed)] = true;
    queue.push_back(seed);
    while let Some(idx) = queue.pop_front() {
        if grid.on_boundary(&idx) {
            return Err(Error::ComponentEscapesBox);
        }
        for nb in grid.neighbors(&idx) {
            let lin = grid.ravel(&nb);
            if !member[lin] && values[lin] >= level {
                member[lin] = true;
                queue.push_back(nb);
            }
        }
    }

    let (cells, vals) = member
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(lin, _)| (grid.unravel(lin), values[lin]))
        .unzip();
    Ok(ComponentMask {
        grid: grid.clone(),
        cells,
        values: vals,
        epsilon,
        level,
    })
}

/// Inputs of [`construct_hallucinated`]. `x_bullet` defaults to the grid
/// argmax of `f` and `epsilon` to `0.25 (M - m)`, where `M = f(x_bullet)` and
/// `m` is the largest value on the grid boundary.
#[derive(Debug, Clone)]
pub struct ConstructionInput {
    pub x_star: Vector,
    pub x_bullet: Option<Vector>,
    pub epsilon: Option<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub resolution: Vec<f64>,
    pub refine: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionReport {
    #[serde(with = "vector_serde")]
    pub x_h: Vector,
    #[serde(with = "vector_serde")]
    pub x_star: Vector,
    #[serde(with = "vector_serde")]
    pub x_bullet: Vector,
    pub rho: f64,
    pub epsilon: f64,
    pub level: f64,
    /// `|f(x_h) - level|`.
    pub boundary_level_residual: f64,
    /// `|f^SAM(x_h) - f(x_star)|`.
    pub sam_value_gap: f64,
    /// `|x_h + rho u(x_h) - x_star|`.
    pub target_residual: f64,
    pub lagrange: LagrangeReport,
    pub refined: bool,
    pub refine_iterations: usize,
    pub component_cells: usize,
    pub classification: StationaryReport,
    pub notes: Vec<String>,
}

/// Realizes the farthest-point construction on a grid and verifies each
/// step: boundary level, Lagrange alignment, target identity and the final
/// classification of `x_h`.
pub fn construct_hallucinated(obj: &Objective, input: &ConstructionInput) -> Result<(ConstructionReport, ComponentMask)> {
    if obj.dim() > MAX_CONSTRUCTION_DIM {
        return Err(Error::UnsupportedDimension(obj.dim()));
    }
    obj.check_point(&input.x_star)?;
    let grid = CellGrid::new(&input.bounds, &input.resolution)?;
    check_dim(obj, &grid)?;
    let values = grid.evaluate(obj);
    let mut notes = Vec::new();

    let x_bullet = match &input.x_bullet {
        Some(x) => {
            obj.check_point(x)?;
            x.clone()
        }
        None => {
            let x = grid.center(&grid.unravel(argmax_first(&values)));
            notes.push(format!("x_bullet not given; using grid argmax {:?}", x.as_slice()));
            x
        }
    };
    let epsilon = match input.epsilon {
        Some(e) => e,
        None => {
            let boundary_max = (0..grid.len())
                .filter(|&lin| grid.on_boundary(&grid.unravel(lin)))
                .map(|lin| values[lin])
                .fold(f64::NEG_INFINITY, f64::max);
            let e = 0.25 * (obj.f(&x_bullet) - boundary_max);
            notes.push(format!("epsilon not given; using 0.25 (M - m) = {e}"));
            e
        }
    };

    let mask = superlevel_component_with_values(obj, &grid, &values, &x_bullet, epsilon)?;
    let x_grid = farthest_cell(&mask, &input.x_star);

    let (x_h, refined, iters) = if input.refine {
        match refine_on_level_set(obj, &x_grid, &input.x_star, mask.level, grid.spacing.iter().copied().fold(0.0, f64::max)) {
            Some((x, it)) => (x, true, it),
            None => {
                notes.push("refinement did not converge; reporting the grid solution".into());
                (x_grid, false, MAX_REFINE_ITERS)
            }
        }
    } else {
        (x_grid, false, 0)
    };

    let lagrange = detector::lagrange_check(obj, &x_h, &input.x_star)?;
    let rho = lagrange.rho;
    let shifted_point = sam::perturbed_point(obj, &x_h, rho)?;
    let classification = detector::classify(obj, &x_h, rho, &ClassifyOptions::default())?;
    let report = ConstructionReport {
        boundary_level_residual: (obj.f(&x_h) - mask.level).abs(),
        sam_value_gap: (obj.f(&shifted_point) - obj.f(&input.x_star)).abs(),
        target_residual: (&shifted_point - &input.x_star).norm(),
        x_h,
        x_star: input.x_star.clone(),
        x_bullet,
        rho,
        epsilon,
        level: mask.level,
        lagrange,
        refined,
        refine_iterations: iters,
        component_cells: mask.len(),
        classification,
        notes,
    };
    Ok((report, mask))
}

/// Center of the member cell farthest from `x_star` (first in lexicographic
/// order on ties).
pub fn farthest_cell(mask: &ComponentMask, x_star: &Vector) -> Vector {
    let mut best: Option<(f64, Vector)> = None;
    for idx in &mask.cells {
        let c = mask.grid.center(idx);
        let d = (&c - x_star).norm_squared();
        if best.as_ref().is_none_or(|(bd, _)| d > *bd) {
            best = Some((d, c));
        }
    }
    best.expect("component is non-empty").1
}

/// Moves `x` along `grad f(x)` onto `{f = level}` by bracketing and bisection.
pub fn project_to_level(obj: &Objective, x: &Vector, level: f64) -> Option<Vector> {
    let g = obj.grad(x);
    let gn = g.norm();
    if !(gn > 0.0) {
        return None;
    }
    let n = g / gn;
    let phi = |s: f64| obj.f(&(x + &n * s)) - level;
    let p0 = phi(0.0);
    if p0 == 0.0 {
        return Some(x.clone());
    }
    let scale = x.norm().max(1.0);
    let mut h = (p0.abs() / gn).max(1e-14 * scale);
    let dir = if p0 > 0.0 { -1.0 } else { 1.0 };
    let (mut a, mut b) = (0.0, 0.0);
    let mut bracketed = false;
    for _ in 0..80 {
        let s = dir * h;
        if phi(s).signum() != p0.signum() {
            if dir < 0.0 {
                a = s;
            } else {
                b = s;
            }
            bracketed = true;
            break;
        }
        h *= 2.0;
    }
    if !bracketed {
        return None;
    }
    // invariant: phi(a) <= 0 <= phi(b)
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        if phi(m) <= 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    let s = if phi(a).abs() <= phi(b).abs() { a } else { b };
    Some(x + n * s)
}

/// Projected ascent of `|x - x_star|^2` on `{f = level}`. Each alternation
/// steps along the tangential part of `x - x_star` and re-projects; steps are
/// accepted when the tangential residual shrinks. Returns `None` when it has
/// not stalled after the iteration cap.
fn refine_on_level_set(
    obj: &Objective,
    start: &Vector,
    x_star: &Vector,
    level: f64,
    spacing: f64,
) -> Option<(Vector, usize)> {
    let tangential = |x: &Vector| -> Vector {
        let g = obj.grad(x);
        let n = &g / g.norm();
        let d = x - x_star;
        &d - &n * n.dot(&d)
    };
    let mut x = project_to_level(obj, start, level)?;
    let mut t = tangential(&x);
    let mut tn = t.norm();
    let mut alpha = if tn > 0.0 { spacing / tn } else { 1.0 };
    let mut stalled = 0;
    for it in 1..=MAX_REFINE_ITERS {
        let dist = (&x - x_star).norm();
        if tn <= 1e-15 * dist.max(1.0) || stalled >= 40 {
            return Some((x, it));
        }
        let candidate = project_to_level(obj, &(&x + &t * alpha), level);
        match candidate {
            Some(c) => {
                let tc = tangential(&c);
                let tcn = tc.norm();
                if tcn < tn {
                    x = c;
                    t = tc;
                    tn = tcn;
                    alpha *= 1.5;
                    stalled = 0;
                } else {
                    alpha *= 0.5;
                    stalled += 1;
                }
            }
            None => {
                alpha *= 0.5;
                stalled += 1;
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Classification;
    use crate::landscape::Builtin;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn quartic() -> Objective {
        Builtin::Quartic1d.build().unwrap()
    }

    fn quartic_input(x_star: f64) -> ConstructionInput {
        ConstructionInput {
            x_star: v(&[x_star]),
            x_bullet: Some(v(&[1.0])),
            epsilon: Some(0.19),
            bounds: vec![(0.0, 2.0)],
            resolution: vec![1e-4],
            refine: true,
        }
    }

    #[test]
    fn grid_indexing_roundtrip() {
        let g = CellGrid::new(&[(0.0, 1.0), (-1.0, 1.0), (2.0, 3.0)], &[0.25, 0.5, 0.5]).unwrap();
        assert_eq!(g.shape, vec![4, 4, 2]);
        for lin in 0..g.len() {
            assert_eq!(g.ravel(&g.unravel(lin)), lin);
        }
        assert_eq!(g.locate(&g.center(&[2, 1, 0])), vec![2, 1, 0]);
    }

    #[test]
    fn quartic_component_matches_closed_form() {
        let grid = CellGrid::new(&[(0.0, 2.0)], &[1e-4]).unwrap();
        let mask = superlevel_component(&quartic(), &grid, &v(&[1.0]), 0.19).unwrap();
        // (1 - d^2)^2 = 0.81  =>  d = sqrt(0.1)
        let d = 0.1f64.sqrt();
        let lo = mask.grid.center(&mask.cells[0])[0];
        let hi = mask.grid.center(mask.cells.last().unwrap())[0];
        assert!((lo - (1.0 - d)).abs() <= 1e-4, "{lo}");
        assert!((hi - (1.0 + d)).abs() <= 1e-4, "{hi}");
        assert!(mask.values.iter().all(|&f| f >= mask.level));
        // contiguous
        for w in mask.cells.windows(2) {
            assert_eq!(w[1][0], w[0][0] + 1);
        }
    }

    #[test]
    fn large_epsilon_escapes_box() {
        let grid = CellGrid::new(&[(0.0, 2.0)], &[1e-3]).unwrap();
        assert!(matches!(
            superlevel_component(&quartic(), &grid, &v(&[1.0]), 1.5),
            Err(Error::ComponentEscapesBox)
        ));
    }

    #[test]
    fn tiny_epsilon_collapses() {
        // x_bullet = 1 sits on a cell face; f(1 +- 5e-4) = 1 - 5e-7 is above
        // the level, the next centers are not
        let grid = CellGrid::new(&[(0.0, 2.0)], &[1e-3]).unwrap();
        let mask = superlevel_component(&quartic(), &grid, &v(&[1.0]), 1e-6).unwrap();
        assert_eq!(mask.len(), 2);
        for c in &mask.cells {
            assert!((mask.grid.center(c)[0] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn non_maximum_seed_rejected() {
        let grid = CellGrid::new(&[(0.0, 2.0)], &[1e-3]).unwrap();
        assert!(matches!(
            superlevel_component(&quartic(), &grid, &v(&[1.3]), 0.1),
            Err(Error::NotLocalMaximum(_))
        ));
    }

    #[test]
    fn quartic_construction_toward_zero() {
        let (r, _) = construct_hallucinated(&quartic(), &quartic_input(0.0)).unwrap();
        let xh = 1.0 + 0.1f64.sqrt();
        assert!(r.refined);
        assert!((r.x_h[0] - xh).abs() < 1e-12);
        assert!((r.rho - xh).abs() < 1e-12);
        assert!(r.sam_value_gap < 1e-10);
        assert!(r.boundary_level_residual < 1e-12);
        assert!(r.lagrange.lambda > 0.0 && r.lagrange.alignment > 0.0);
        assert_eq!(r.classification.classification, Classification::HallucinatedMinimizer);
    }

    #[test]
    fn quartic_construction_mirror() {
        let (r, _) = construct_hallucinated(&quartic(), &quartic_input(2.0)).unwrap();
        let xh = 1.0 - 0.1f64.sqrt();
        assert!((r.x_h[0] - xh).abs() < 1e-12);
        assert!((r.rho - (1.0 + 0.1f64.sqrt())).abs() < 1e-12);
        assert!(r.target_residual < 1e-12);
        assert!(sam::ascent_direction(&quartic(), &r.x_h, 1e-12).unwrap()[0] == 1.0);
    }

    #[test]
    fn unrefined_uses_grid_cell() {
        let mut input = quartic_input(0.0);
        input.refine = false;
        let (r, _) = construct_hallucinated(&quartic(), &input).unwrap();
        assert!(!r.refined);
        assert!((r.x_h[0] - (1.0 + 0.1f64.sqrt())).abs() <= 1e-4);
    }

    #[test]
    fn defaults_fill_bullet_and_epsilon() {
        let input = ConstructionInput {
            x_bullet: None,
            epsilon: None,
            resolution: vec![1e-3],
            ..quartic_input(0.0)
        };
        let (r, _) = construct_hallucinated(&quartic(), &input).unwrap();
        assert_eq!(r.notes.len(), 2);
        assert!((r.x_bullet[0] - 1.0).abs() < 1e-3);
        // boundary cells sit at 5e-4 and 2 - 5e-4
        assert!(r.epsilon > 0.24 && r.epsilon < 0.25);
    }

    #[test]
    fn project_to_level_hits_level() {
        let obj = Builtin::Synthetic2d.build().unwrap();
        let p = project_to_level(&obj, &v(&[0.9, 0.1]), 1.7).unwrap();
        assert!((obj.f(&p) - 1.7).abs() < 1e-14);
    }

    #[test]
    fn csv_layout() {
        let grid = CellGrid::new(&[(0.0, 2.0)], &[0.1]).unwrap();
        let mask = superlevel_component(&quartic(), &grid, &v(&[1.0]), 0.19).unwrap();
        let mut buf = Vec::new();
        mask.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next(), Some("i,f"));
        assert_eq!(s.lines().count(), mask.len() + 1);
    }

    #[test]
    fn too_many_dimensions() {
        let obj = Builtin::quadratic_identity(4).build().unwrap();
        let input = ConstructionInput {
            x_star: Vector::zeros(4),
            x_bullet: None,
            epsilon: None,
            bounds: vec![(-1.0, 1.0); 4],
            resolution: vec![0.5; 4],
            refine: false,
        };
        assert!(matches!(
            construct_hallucinated(&obj, &input),
            Err(Error::UnsupportedDimension(4))
        ));
    }
}
