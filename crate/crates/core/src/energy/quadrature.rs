use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Direction/weight pairs for integrals over `S^{n-1}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereQuadrature {
    pub dim: usize,
    pub directions: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl SphereQuadrature {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&[f64; 3]) -> f64) -> f64 {
        self.directions.iter().zip(&self.weights).map(|(xi, w)| w * f(xi)).sum()
    }
}

/// Smallest admissible direction count.
pub fn min_directions(n: usize) -> usize {
    if n == 2 {
        4
    } else {
        16
    }
}

/// `n = 2`: `M` equispaced angles starting at 0, weight `2π/M`.
/// `n = 3`: `M/2` Fibonacci-lattice points plus their antipodes, weight `4π/M`.
pub fn make_quadrature(n: usize, m: usize) -> Result<SphereQuadrature> {
    if m % 2 == 1 || m < min_directions(n) {
        return Err(Error::InvalidArgument(format!(
            "direction count must be even and at least {}, got {m}",
            min_directions(n)
        )));
    }
    match n {
        2 => {
            let directions = (0..m)
                .map(|j| {
                    let t = 2.0 * PI * j as f64 / m as f64;
                    [t.cos(), t.sin(), 0.0]
                })
                .collect();
            Ok(SphereQuadrature { dim: 2, directions, weights: vec![2.0 * PI / m as f64; m] })
        }
        3 => {
            let half = m / 2;
            let golden = PI * (3.0 - 5f64.sqrt());
            let mut directions: Vec<[f64; 3]> = (0..half)
                .map(|k| {
                    let z = 1.0 - (2 * k + 1) as f64 / half as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * k as f64;
                    [r * phi.cos(), r * phi.sin(), z]
                })
                .collect();
            let antipodes: Vec<[f64; 3]> = directions.iter().map(|p| [-p[0], -p[1], -p[2]]).collect();
            directions.extend(antipodes);
            Ok(SphereQuadrature { dim: 3, directions, weights: vec![4.0 * PI / m as f64; m] })
        }
        _ => Err(Error::InvalidArgument(format!("quadrature supports n = 2, 3; got {n}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_axis_directions() {
        let q = make_quadrature(2, 4).unwrap();
        let expected = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (d, e) in q.directions.iter().zip(expected) {
            assert!((d[0] - e[0]).abs() < 1e-15 && (d[1] - e[1]).abs() < 1e-15);
        }
        assert!(q.weights.iter().all(|w| *w == PI / 2.0));
    }

    #[test]
    fn weights_sum_to_sphere_area() {
        for (n, area) in [(2, 2.0 * PI), (3, 4.0 * PI)] {
            for m in [16, 64, 512, 2048] {
                let q = make_quadrature(n, m).unwrap();
                assert!((q.integrate(|_| 1.0) - area).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn odd_functions_integrate_to_zero() {
        for n in [2, 3] {
            let q = make_quadrature(n, 512).unwrap();
            let odd = q.integrate(|x| x[0] + x[1] * x[1] * x[1] + 2.0 * x[2]);
            assert!(odd.abs() < 1e-10);
            for d in &q.directions {
                assert!((d.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn abs_cosine_integral() {
        let q = make_quadrature(2, 512).unwrap();
        assert!((q.integrate(|x| x[0].abs()) - 4.0).abs() < 1e-4);
        // ∫_{S²} |ξ₁| = 2π
        let q3 = make_quadrature(3, 8192).unwrap();
        assert!((q3.integrate(|x| x[0].abs()) / (2.0 * PI) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_counts() {
        assert!(make_quadrature(2, 15).is_err());
        assert!(make_quadrature(2, 2).is_err());
        assert!(make_quadrature(3, 8).is_err());
        assert!(make_quadrature(4, 64).is_err());
    }
}
