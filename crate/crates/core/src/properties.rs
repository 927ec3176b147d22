//! Property tests over the public API.

use proptest::prelude::*;

use crate::constructor::{construct_hallucinated, superlevel_component, CellGrid, ConstructionInput};
use crate::detector::attractor_margin;
use crate::manifold::{newton_solve_preimage, perturbation_jacobian};
use crate::mlp::{as_objective, class_probabilities, init_params, make_dataset, DatasetKind, MlpSpec};
use crate::sam::{self, run};
use crate::{Builtin, Matrix, Mode, Objective, SamConfig, Vector};

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn quartic() -> Objective {
    Builtin::Quartic1d.build().unwrap()
}

fn quartic_curvature(x: f64) -> f64 {
    12.0 * x * x - 24.0 * x + 8.0
}

fn central_diff(g: impl Fn(&Vector) -> f64, x: &Vector, h: f64) -> Vector {
    Vector::from_fn(x.len(), |i, _| {
        let mut a = x.clone();
        a[i] += h;
        let mut b = x.clone();
        b[i] -= h;
        (g(&a) - g(&b)) / (2.0 * h)
    })
}

fn away_from_splices(x: f64, y: f64) -> bool {
    [-1.0, 0.0].iter().all(|s| (x - s).abs() > 1e-2) && [0.6, 5.6].iter().all(|s| (y.abs() - s).abs() > 1e-2)
}

/// Random positive semidefinite `B^T B` with entries from `entries`.
fn psd(dim: usize, entries: &[f64]) -> Matrix {
    let b = Matrix::from_fn(dim, dim, |i, j| entries[i * dim + j]);
    b.transpose() * b
}

fn quadratic(a: &Matrix) -> Objective {
    let rows = (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect();
    Builtin::Quadratic { a: rows, b: None }.build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn synthetic_gradient_matches_differences(x in -6.0..6.0f64, y in -6.0..6.0f64) {
        prop_assume!(away_from_splices(x, y));
        let obj = Builtin::Synthetic2d.build().unwrap();
        let p = v(&[x, y]);
        let fd = central_diff(|q| obj.f(q), &p, 1e-6);
        prop_assert!((obj.grad(&p) - fd).norm() < 1e-7);
    }

    #[test]
    fn one_dimensional_gradients_match_differences(x in -3.0..3.0f64, a in 0.2..2.0f64) {
        for obj in [quartic(), Builtin::DoubleWell1d { a }.build().unwrap()] {
            let p = v(&[x]);
            let fd = central_diff(|q| obj.f(q), &p, 1e-6);
            let scale = obj.grad(&p).norm().max(1.0);
            prop_assert!((obj.grad(&p) - fd).norm() < 1e-6 * scale);
        }
    }

    #[test]
    fn ascent_direction_is_scale_invariant(x in -6.0..6.0f64, y in -6.0..6.0f64, c in 0.01..100.0f64, rho in 0.1..3.0f64) {
        let obj = Builtin::Synthetic2d.build().unwrap();
        let p = v(&[x, y]);
        prop_assume!(obj.grad(&p).norm() > 1e-6);
        let a = sam::perturbed_point(&obj, &p, rho).unwrap();
        let b = sam::perturbed_point(&obj.scaled(c), &p, rho).unwrap();
        prop_assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn convex_perturbed_value_bounds_below(
        entries in prop::collection::vec(-1.0..1.0f64, 9),
        x in prop::collection::vec(-3.0..3.0f64, 3),
        rho in 0.0..3.0f64,
    ) {
        let obj = quadratic(&psd(3, &entries));
        let p = v(&x);
        let g = obj.grad(&p);
        prop_assume!(g.norm() > 1e-6);
        let fsam = sam::sam_value(&obj, &p, rho).unwrap();
        prop_assert!(fsam >= obj.f(&p) + rho * g.norm() - 1e-10);
    }

    #[test]
    fn convex_shifted_gradient_never_vanishes(
        entries in prop::collection::vec(-1.0..1.0f64, 9),
        x in prop::collection::vec(-3.0..3.0f64, 3),
        rho in 0.0..3.0f64,
    ) {
        let obj = quadratic(&psd(3, &entries));
        let p = v(&x);
        let g = obj.grad(&p);
        prop_assume!(g.norm() > 1e-6);
        let u = sam::ascent_direction(&obj, &p, 0.0).unwrap();
        let s = sam::shifted_gradient(&obj, &p, rho).unwrap();
        prop_assert!(u.dot(&s) >= g.norm() * (1.0 - 1e-12));
    }

    #[test]
    fn exact_gradient_matches_differences_on_quartic(x in -1.0..3.0f64, rho in 0.05..2.0f64) {
        let obj = quartic();
        let p = v(&[x]);
        prop_assume!(obj.grad(&p).norm() > 1e-2);
        let fd = central_diff(|q| sam::sam_value(&obj, q, rho).unwrap(), &p, 1e-6);
        let exact = sam::sam_exact_gradient(&obj, &p, rho).unwrap();
        prop_assert!((&exact - &fd).norm() < 1e-5 * fd.norm().max(1.0));
    }

    #[test]
    fn exact_gradient_matches_differences_in_plane(x in -6.0..6.0f64, y in -6.0..6.0f64, rho in 0.1..3.0f64) {
        let obj = Builtin::Synthetic2d.build().unwrap();
        let p = v(&[x, y]);
        prop_assume!(away_from_splices(x, y) && obj.grad(&p).norm() > 1e-2);
        let xp = sam::perturbed_point(&obj, &p, rho).unwrap();
        prop_assume!(away_from_splices(xp[0], xp[1]) && obj.grad(&xp).norm() > 1e-2);
        let fd = central_diff(|q| sam::sam_value(&obj, q, rho).unwrap(), &p, 1e-6);
        let exact = sam::sam_exact_gradient(&obj, &p, rho).unwrap();
        prop_assert!((&exact - &fd).norm() < 1e-5 * fd.norm(), "{exact} vs {fd}");
    }

    #[test]
    fn perturbation_is_lipschitz_away_from_stationary(
        x in 1.1..1.9f64,
        y in 1.1..1.9f64,
        rho in 0.1..2.0f64,
    ) {
        let obj = quartic();
        let l = (0..=800)
            .map(|i| quartic_curvature(1.1 + 0.8 * i as f64 / 800.0).abs())
            .fold(0.0, f64::max);
        let (px, py) = (v(&[x]), v(&[y]));
        let a = sam::perturbed_point(&obj, &px, rho).unwrap();
        let b = sam::perturbed_point(&obj, &py, rho).unwrap();
        let bound = (1.0 + 2.0 * rho * l / obj.grad(&px).norm()) * (x - y).abs();
        prop_assert!((a - b).norm() <= bound + 1e-12);
    }

    #[test]
    fn sam_descends_near_attractor(offset in -0.05..0.05f64) {
        let obj = quartic();
        let rho = 1.0 + 0.1f64.sqrt();
        let eta = 1e-3;
        let gamma = attractor_margin(&obj, &v(&[rho]), rho).unwrap();
        let l = quartic_curvature(-0.06);
        let cfg = SamConfig::new(Mode::Sam, rho, eta, 500);
        let t = run(&obj, &cfg, &v(&[rho + offset]), 1).unwrap();
        for w in t.iterates.windows(2) {
            let s = sam::shifted_gradient(&obj, &w[0], rho).unwrap().norm();
            let before = sam::sam_value(&obj, &w[0], rho).unwrap();
            let after = sam::sam_value(&obj, &w[1], rho).unwrap();
            prop_assert!(after <= before - eta * (gamma - l * eta / 2.0) * s * s + 1e-12);
        }
    }

    #[test]
    fn preimage_round_trips(x in -4.0..4.0f64, y in -4.0..4.0f64, rho in 0.1..2.0f64, nudge in -1e-3..1e-3f64) {
        let obj = Builtin::Synthetic2d.build().unwrap();
        let p = v(&[x, y]);
        prop_assume!(away_from_splices(x, y) && obj.grad(&p).norm() > 1e-2);
        let jac = perturbation_jacobian(&obj, &p, rho).unwrap();
        prop_assume!(jac.singular_values().min() > 1e-2);
        let target = sam::perturbed_point(&obj, &p, rho).unwrap();
        let start = &p + v(&[nudge, -nudge]);
        let q = newton_solve_preimage(&obj, &target, rho, &start, 1e-12, 50);
        prop_assert!(q.is_ok(), "{q:?}");
        let back = sam::perturbed_point(&obj, &q.unwrap(), rho).unwrap();
        prop_assert!((back - target).norm() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_is_a_distribution_and_loss_is_cross_entropy(
        seed in 0u64..1000,
        hidden in 1usize..12,
        classes in 2usize..5,
        scale in 0.1..3.0f64,
    ) {
        let spec = MlpSpec { init_scale: scale, seed, ..MlpSpec::new(2, hidden, classes) };
        let data = make_dataset(DatasetKind::Gaussians, 3, classes, 0.5, seed).unwrap();
        let obj = as_objective(&spec, &data).unwrap();
        let theta = init_params(&spec);
        let mut loss = 0.0;
        for r in 0..data.len() {
            let input = [data.inputs[(r, 0)], data.inputs[(r, 1)]];
            let p = class_probabilities(&spec, &theta, &input).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&q| (0.0..=1.0).contains(&q)));
            loss -= p[data.labels[r]].ln();
        }
        loss /= data.len() as f64;
        let f = obj.f(&theta);
        prop_assert!(f >= 0.0);
        prop_assert!((f - loss).abs() < 1e-10 * loss.max(1.0));
    }

    #[test]
    fn quartic_construction_invariants(epsilon in 0.05..0.9f64) {
        let res = 1e-3;
        let input = ConstructionInput {
            x_star: v(&[0.0]),
            x_bullet: Some(v(&[1.0])),
            epsilon: Some(epsilon),
            bounds: vec![(0.0, 2.0)],
            resolution: vec![res],
            refine: true,
        };
        let (r, _) = construct_hallucinated(&quartic(), &input).unwrap();
        prop_assert!(r.lagrange.alignment > 0.0);
        prop_assert!(r.rho >= 1.0 - res);
        prop_assert!(r.boundary_level_residual < 1e-9);
        // the level set point solves x^2 (x - 2)^2 = 1 - epsilon on (1, 2)
        let closed = 1.0 + (1.0 - (1.0 - epsilon).sqrt()).sqrt();
        prop_assert!((r.x_h[0] - closed).abs() < 1e-8);
    }

    #[test]
    fn component_is_consistent_under_refinement(epsilon in 0.05..0.9f64) {
        let obj = quartic();
        let count = |res: f64| {
            let grid = CellGrid::new(&[(0.0, 2.0)], &[res]).unwrap();
            superlevel_component(&obj, &grid, &v(&[1.0]), epsilon).unwrap().len()
        };
        let (coarse, fine) = (count(1e-3), count(5e-4));
        prop_assert!(fine.abs_diff(2 * coarse) <= 2, "{coarse} -> {fine}");
    }
}

#[test]
fn synthetic_construction_from_curve_point() {
    let obj = Builtin::Synthetic2d.build().unwrap();
    let input = ConstructionInput {
        x_star: v(&[-1.55, 0.0]),
        x_bullet: None,
        epsilon: Some(0.05),
        bounds: vec![(-3.0, 3.0), (-3.0, 3.0)],
        resolution: vec![0.01, 0.01],
        refine: true,
    };
    let (r, mask) = construct_hallucinated(&obj, &input).unwrap();
    assert!(r.boundary_level_residual < 1e-6, "{}", r.boundary_level_residual);
    assert!(r.classification.classification.is_hallucinated(), "{:?}", r.classification);
    // the maximizer sits on the symmetry axis, right of the origin
    let axis_max = (0..=10_000)
        .map(|i| i as f64 * 1e-4)
        .max_by(|a, b| obj.f(&v(&[*a, 0.0])).total_cmp(&obj.f(&v(&[*b, 0.0]))))
        .unwrap();
    assert!((&r.x_bullet - v(&[axis_max, 0.0])).norm() < 0.01, "{} vs {axis_max}", r.x_bullet);
    assert!(!mask.is_empty());
}
