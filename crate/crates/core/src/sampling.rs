//! Seeded point sets on spheres and balls used by probes and neighborhood
//! bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::landscape::Vector;

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    loop {
        let v = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Quasi-uniform offsets on the sphere of radius `radius`: both signs in 1D,
/// equally spaced angles with a seeded phase in 2D, normalized Gaussians
/// otherwise.
pub(crate) fn sphere_offsets(dim: usize, count: usize, radius: f64, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match dim {
        1 => (0..count.max(2))
            .map(|i| Vector::from_element(1, if i % 2 == 0 { radius } else { -radius }))
            .collect(),
        2 => {
            let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            (0..count)
                .map(|i| {
                    let a = phase + std::f64::consts::TAU * i as f64 / count as f64;
                    Vector::from_vec(vec![radius * a.cos(), radius * a.sin()])
                })
                .collect()
        }
        _ => (0..count)
            .map(|_| unit_gaussian(&mut rng, dim) * radius)
            .collect(),
    }
}

/// Offsets filling the closed ball of radius `radius` with about `count`
/// points: a uniform grid for `dim <= 2` (always including the center and the
/// extreme points of each axis, plus a ring on the boundary circle in 2D),
/// otherwise the center, seeded points on the boundary sphere and seeded
/// uniform samples inside.
pub(crate) fn ball_offsets(dim: usize, count: usize, radius: f64, seed: u64) -> Vec<Vector> {
    let count = count.max(3);
    match dim {
        1 => {
            let n = count | 1; // odd so the center is included
            (0..n)
                .map(|i| Vector::from_element(1, -radius + 2.0 * radius * i as f64 / (n - 1) as f64))
                .collect()
        }
        2 => {
            // grid in the bounding square; about pi/4 of it lands in the disk
            let per_axis = ((count as f64 * 4.0 / std::f64::consts::PI).sqrt().ceil() as usize) | 1;
            let h = 2.0 * radius / (per_axis - 1) as f64;
            let mut out = Vec::new();
            for i in 0..per_axis {
                for j in 0..per_axis {
                    let p = Vector::from_vec(vec![-radius + i as f64 * h, -radius + j as f64 * h]);
                    if p.norm() <= radius * (1.0 + 1e-12) {
                        out.push(p);
                    }
                }
            }
            out.extend(sphere_offsets(2, 4 * per_axis, radius, seed));
            out
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = vec![Vector::zeros(dim)];
            for i in 1..count {
                if i % 2 == 1 {
                    out.push(unit_gaussian(&mut rng, dim) * radius);
                    continue;
                }
                let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
                out.push(unit_gaussian(&mut rng, dim) * r);
            }
            out
        }
    }
}
