//! Two-layer tanh classifier with mean softmax cross-entropy, exposed as an
//! [`Objective`] over its flattened parameters, and plane slices of any
//! objective around a point.
//!
//! Parameter layout: `W1` (hidden x input, row-major), `b1`, `W2`
//! (classes x hidden, row-major), `b2`.

use std::f64::consts::TAU;
use std::io::{self, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::{fmt_f64, vector_serde};
use crate::landscape::{Matrix, Objective, ScalarField, Vector};
use crate::sam::{self, DEFAULT_GRAD_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub class_count: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_init_scale() -> f64 {
    0.5
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, class_count: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            class_count,
            init_scale: default_init_scale(),
            seed: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.hidden_dim * (self.input_dim + 1) + self.class_count * (self.hidden_dim + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.class_count == 0 {
            return Err(Error::InvalidParams("network dimensions must be positive".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidParams("init_scale must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn offsets(&self) -> Offsets {
        let w1 = 0;
        let b1 = self.hidden_dim * self.input_dim;
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.class_count * self.hidden_dim;
        Offsets { w1, b1, w2, b2 }
    }
}

#[derive(Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Seeded uniform weights in `[-init_scale, init_scale]`; biases start at zero.
pub fn init_params(spec: &MlpSpec) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let off = spec.offsets();
    let mut theta = Vector::zeros(spec.param_count());
    let s = spec.init_scale;
    for i in (off.w1..off.b1).chain(off.w2..off.b2) {
        theta[i] = s * (2.0 * rng.random::<f64>() - 1.0);
    }
    theta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Isotropic blobs with means on the circle of radius 2.
    Gaussians,
    /// Concentric rings of radius `1 + class`.
    Rings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    /// `N x input_dim`.
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub name: String,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }
}

/// Seeded two-dimensional classification data, `n_per_class` samples per
/// class, ordered by class.
pub fn make_dataset(
    kind: DatasetKind,
    n_per_class: usize,
    class_count: usize,
    noise: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_per_class == 0 || class_count == 0 {
        return Err(Error::InvalidParams("dataset counts must be positive".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidParams("noise must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_per_class * class_count;
    let mut inputs = Matrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for c in 0..class_count {
        for k in 0..n_per_class {
            let row = c * n_per_class + k;
            let (cx, cy) = match kind {
                DatasetKind::Gaussians => {
                    let a = TAU * c as f64 / class_count as f64;
                    (2.0 * a.cos(), 2.0 * a.sin())
                }
                DatasetKind::Rings => {
                    let a = TAU * rng.random::<f64>();
                    let r = 1.0 + c as f64;
                    (r * a.cos(), r * a.sin())
                }
            };
            let ex: f64 = rng.sample(StandardNormal);
            let ey: f64 = rng.sample(StandardNormal);
            inputs[(row, 0)] = cx + noise * ex;
            inputs[(row, 1)] = cy + noise * ey;
            labels.push(c);
        }
    }
    let name = match kind {
        DatasetKind::Gaussians => "gaussians",
        DatasetKind::Rings => "rings",
    };
    Ok(LabeledDataset {
        inputs,
        labels,
        name: name.to_string(),
        seed,
    })
}

struct MlpField {
    spec: MlpSpec,
    /// Row-major copy of the inputs.
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl MlpField {
    /// Mean cross-entropy and, when `grad` is given, its gradient. Samples
    /// are reduced in order.
    fn loss(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let (d, h, c) = (self.spec.input_dim, self.spec.hidden_dim, self.spec.class_count);
        let off = self.spec.offsets();
        let n = self.labels.len();
        let inv_n = 1.0 / n as f64;
        let mut hidden = vec![0.0; h];
        let mut logits = vec![0.0; c];
        let mut total = 0.0;
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        for (s, &label) in self.labels.iter().enumerate() {
            let x = &self.inputs[s * d..(s + 1) * d];
            for j in 0..h {
                let w = &theta[off.w1 + j * d..off.w1 + (j + 1) * d];
                let a = theta[off.b1 + j] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                hidden[j] = a.tanh();
            }
            for k in 0..c {
                let w = &theta[off.w2 + k * h..off.w2 + (k + 1) * h];
                logits[k] = theta[off.b2 + k] + w.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
            }
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
            total += m + z.ln() - logits[label];

            let Some(g) = grad.as_deref_mut() else { continue };
            // logits now hold dL/dlogits for this sample
            for l in logits.iter_mut() {
                *l = (*l - m).exp() / z;
            }
            logits[label] -= 1.0;
            for k in 0..c {
                let dz = logits[k] * inv_n;
                g[off.b2 + k] += dz;
                for j in 0..h {
                    g[off.w2 + k * h + j] += dz * hidden[j];
                }
            }
            for j in 0..h {
                let back: f64 = (0..c).map(|k| theta[off.w2 + k * h + j] * logits[k]).sum();
                let da = back * (1.0 - hidden[j] * hidden[j]) * inv_n;
                g[off.b1 + j] += da;
                for i in 0..d {
                    g[off.w1 + j * d + i] += da * x[i];
                }
            }
        }
        total * inv_n
    }
}

impl ScalarField for MlpField {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn value(&self, x: &Vector) -> f64 {
        self.loss(x.as_slice(), None)
    }

    fn gradient(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(x.len());
        self.loss(x.as_slice(), Some(g.as_mut_slice()));
        g
    }
}

/// The mean cross-entropy of the network `spec` on `data`, as a function of
/// the flattened parameters.
pub fn as_objective(spec: &MlpSpec, data: &LabeledDataset) -> Result<Objective> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParams("dataset is empty".into()));
    }
    if data.input_dim() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            got: data.input_dim(),
        });
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= spec.class_count) {
        return Err(Error::InvalidParams(format!("label {bad} out of range")));
    }
    let inputs = (0..data.len())
        .flat_map(|r| (0..data.input_dim()).map(move |c| (r, c)))
        .map(|(r, c)| data.inputs[(r, c)])
        .collect();
    let field = MlpField {
        spec: *spec,
        inputs,
        labels: data.labels.clone(),
    };
    Ok(Objective::new(format!("mlp_{}", data.name), Arc::new(field)))
}

/// Softmax class probabilities of the network at `theta` for one input.
pub fn class_probabilities(spec: &MlpSpec, theta: &Vector, input: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    if theta.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            expected: spec.param_count(),
            got: theta.len(),
        });
    }
    if input.len() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            got: input.len(),
        });
    }
    let (d, h) = (spec.input_dim, spec.hidden_dim);
    let off = spec.offsets();
    let hidden: Vec<f64> = (0..h)
        .map(|j| {
            let a: f64 = (0..d).map(|i| theta[off.w1 + j * d + i] * input[i]).sum();
            (a + theta[off.b1 + j]).tanh()
        })
        .collect();
    let logits: Vec<f64> = (0..spec.class_count)
        .map(|k| theta[off.b2 + k] + (0..h).map(|j| theta[off.w2 + k * h + j] * hidden[j]).sum::<f64>())
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// Fraction of samples whose most probable class is the label.
pub fn accuracy(spec: &MlpSpec, theta: &Vector, data: &LabeledDataset) -> Result<f64> {
    let mut hits = 0;
    for r in 0..data.len() {
        let row: Vec<f64> = data.inputs.row(r).iter().copied().collect();
        let p = class_probabilities(spec, theta, &row)?;
        let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
        hits += usize::from(best == data.labels[r]);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// `f` and `f^SAM` on the plane `center + alpha dir_u + beta dir_v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    #[serde(with = "vector_serde")]
    pub center: Vector,
    #[serde(with = "vector_serde")]
    pub dir_u: Vector,
    #[serde(with = "vector_serde")]
    pub dir_v: Vector,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `|alphas| x |betas|`.
    pub values_f: Matrix,
    /// As `values_f`; `NaN` where the ascent direction is degenerate.
    pub values_fsam: Matrix,
}

impl SurfaceGrid {
    /// Writes `alpha,beta,f,fsam` rows, alpha-major.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "alpha,beta,f,fsam")?;
        for (i, &a) in self.alphas.iter().enumerate() {
            for (j, &b) in self.betas.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    fmt_f64(a),
                    fmt_f64(b),
                    fmt_f64(self.values_f[(i, j)]),
                    fmt_f64(self.values_fsam[(i, j)])
                )?;
            }
        }
        Ok(())
    }
}

/// Evaluates `f` and `f^SAM` over `alphas x betas`. `dir_v` is made
/// orthogonal to `dir_u` and rescaled to its norm; if it is parallel to
/// `dir_u` (always the case in one dimension) the plane degenerates to a
/// line and `dir_v` is zero.
pub fn plane_slice(
    obj: &Objective,
    center: &Vector,
    dir_u: &Vector,
    dir_v: &Vector,
    alphas: &[f64],
    betas: &[f64],
    rho: f64,
) -> Result<SurfaceGrid> {
    obj.check_point(center)?;
    obj.check_point(dir_u)?;
    obj.check_point(dir_v)?;
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParams("rho must be finite and non-negative".into()));
    }
    let un = dir_u.norm();
    if un == 0.0 || dir_v.norm() == 0.0 {
        return Err(Error::InvalidParams("slice directions must be non-zero".into()));
    }
    let ortho = dir_v - dir_u * (dir_u.dot(dir_v) / (un * un));
    let on = ortho.norm();
    let dir_v = if on <= 1e-12 * dir_v.norm() {
        Vector::zeros(dir_v.len())
    } else {
        ortho * (un / on)
    };

    let (na, nb) = (alphas.len(), betas.len());
    let cells: Vec<(f64, f64)> = (0..na * nb)
        .into_par_iter()
        .map(|idx| {
            let x = center + dir_u * alphas[idx / nb] + &dir_v * betas[idx % nb];
            let f = obj.f(&x);
            let fsam = match sam::ascent_direction(obj, &x, DEFAULT_GRAD_FLOOR) {
                Some(u) => obj.f(&(&x + u * rho)),
                None => f64::NAN,
            };
            (f, fsam)
        })
        .collect();
    let values_f = Matrix::from_fn(na, nb, |i, j| cells[i * nb + j].0);
    let values_fsam = Matrix::from_fn(na, nb, |i, j| cells[i * nb + j].1);
    Ok(SurfaceGrid {
        center: center.clone(),
        dir_u: dir_u.clone(),
        dir_v,
        alphas: alphas.to_vec(),
        betas: betas.to_vec(),
        values_f,
        values_fsam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::Builtin;

    fn small() -> (MlpSpec, LabeledDataset) {
        let spec = MlpSpec::new(2, 16, 2);
        let data = make_dataset(DatasetKind::Gaussians, 100, 2, 0.3, 7).unwrap();
        (spec, data)
    }

    #[test]
    fn dataset_shape_and_balance() {
        let (_, data) = small();
        assert_eq!(data.len(), 200);
        assert_eq!(data.labels.iter().filter(|&&l| l == 0).count(), 100);
        assert_eq!(data, make_dataset(DatasetKind::Gaussians, 100, 2, 0.3, 7).unwrap());
    }

    #[test]
    fn zero_noise_collapses_to_means() {
        let data = make_dataset(DatasetKind::Gaussians, 5, 3, 0.0, 1).unwrap();
        for r in 0..data.len() {
            let a = TAU * data.labels[r] as f64 / 3.0;
            assert_eq!(data.inputs[(r, 0)], 2.0 * a.cos());
            assert_eq!(data.inputs[(r, 1)], 2.0 * a.sin());
        }
    }

    #[test]
    fn rings_radii() {
        let data = make_dataset(DatasetKind::Rings, 20, 3, 0.0, 4).unwrap();
        for r in 0..data.len() {
            let rad = data.inputs.row(r).norm();
            assert!((rad - (1.0 + data.labels[r] as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_dataset_counts() {
        assert!(make_dataset(DatasetKind::Gaussians, 0, 2, 0.1, 0).is_err());
        assert!(make_dataset(DatasetKind::Rings, 3, 0, 0.1, 0).is_err());
    }

    #[test]
    fn zero_params_give_uniform_loss() {
        let (spec, data) = small();
        let obj = as_objective(&spec, &data).unwrap();
        let zero = Vector::zeros(spec.param_count());
        assert!((obj.f(&zero) - 2f64.ln()).abs() < 1e-13);

        let spec10 = MlpSpec::new(2, 16, 10);
        let data10 = make_dataset(DatasetKind::Gaussians, 3, 10, 0.3, 1).unwrap();
        let obj10 = as_objective(&spec10, &data10).unwrap();
        assert!((obj10.f(&Vector::zeros(spec10.param_count())) - 10f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn param_count_and_init() {
        let (mut spec, _) = small();
        assert_eq!(spec.param_count(), 82);
        let a = init_params(&spec);
        assert_eq!(a.len(), 82);
        assert_eq!(a, init_params(&spec));
        let off = spec.offsets();
        assert!(a.rows(off.b1, 16).iter().all(|&v| v == 0.0));
        assert!(a.iter().all(|v| v.abs() <= spec.init_scale));
        spec.init_scale = 0.0;
        assert_eq!(init_params(&spec), Vector::zeros(82));
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let (spec, data) = small();
        let obj = as_objective(&spec, &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let theta = init_params(&MlpSpec {
                init_scale: 1.0,
                seed: 100 + trial,
                ..spec
            }) + Vector::from_fn(82, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
            let g = obj.grad(&theta);
            for _ in 0..20 {
                let i = rng.random_range(0..82);
                let h = 1e-5;
                let mut p = theta.clone();
                p[i] += h;
                let mut m = theta.clone();
                m[i] -= h;
                let fd = (obj.f(&p) - obj.f(&m)) / (2.0 * h);
                let scale = g[i].abs().max(1e-6);
                assert!((fd - g[i]).abs() / scale < 1e-5, "coord {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let (_, data) = small();
        assert!(matches!(
            as_objective(&MlpSpec::new(3, 4, 2), &data),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(as_objective(&MlpSpec::new(2, 4, 1), &data).is_err());
    }

    #[test]
    fn slice_center_and_zero_rho() {
        let obj = Builtin::Synthetic2d.build().unwrap();
        let c = Vector::from_vec(vec![0.3, -0.2]);
        let u = Vector::from_vec(vec![1.0, 0.0]);
        let v = Vector::from_vec(vec![1.0, 2.0]);
        let grid = plane_slice(&obj, &c, &u, &v, &[-0.5, 0.0, 0.5], &[-1.0, 0.0, 1.0], 0.0).unwrap();
        assert_eq!(grid.values_f[(1, 1)], obj.f(&c));
        assert!(grid.dir_u.dot(&grid.dir_v).abs() < 1e-10);
        assert!((grid.dir_u.norm() - grid.dir_v.norm()).abs() < 1e-10);
        for (a, b) in grid.values_f.iter().zip(grid.values_fsam.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn slice_rejects_zero_direction() {
        let obj = Builtin::Synthetic2d.build().unwrap();
        let c = Vector::zeros(2);
        let r = plane_slice(&obj, &c, &Vector::zeros(2), &Vector::from_vec(vec![0.0, 1.0]), &[0.0], &[0.0], 1.0);
        assert!(r.is_err());
    }

    #[test]
    fn quartic_line_section() {
        // x(alpha) = x_h + alpha rho u(x_h): alpha = 1 lands on the shifted point
        let obj = Builtin::Quartic1d.build().unwrap();
        let rho = 1.0 + 0.1f64.sqrt();
        let xh = Vector::from_vec(vec![rho]);
        let u = sam::ascent_direction(&obj, &xh, DEFAULT_GRAD_FLOOR).unwrap() * rho;
        let grid = plane_slice(&obj, &xh, &u, &Vector::from_vec(vec![1.0]), &[0.0, 1.0], &[0.0, 1.0], rho).unwrap();
        assert_eq!(grid.dir_v[0], 0.0);
        assert!((grid.values_f[(1, 0)] - sam::sam_value(&obj, &xh, rho).unwrap()).abs() < 1e-12);
        assert!(grid.values_f[(1, 0)].abs() < 1e-12);
        assert_eq!(grid.values_f[(0, 0)], grid.values_f[(0, 1)]);
    }

    #[test]
    fn slice_csv_rows() {
        let obj = Builtin::Synthetic2d.build().unwrap();
        let grid = plane_slice(
            &obj,
            &Vector::zeros(2),
            &Vector::from_vec(vec![1.0, 0.0]),
            &Vector::from_vec(vec![0.0, 1.0]),
            &[0.0, 1.0],
            &[0.0, 1.0, 2.0],
            0.5,
        )
        .unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next(), Some("alpha,beta,f,fsam"));
        assert_eq!(s.lines().count(), 7);
    }
}
