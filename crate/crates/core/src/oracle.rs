//! Closed-form reference bodies, evaluated without any grid.
//!
//! For the indicator of a body `K`, `Ψ_ξ = ∫_{∂K} |ν·ξ| dH^{n-1}`. Polygons
//! and boxes sum over their flat faces. Ellipsoids `K = c + A(B)` use
//!
//! ```text
//! Ψ_ξ = 2 ω_{n-1} |det A| |A^{-1} ξ|
//! ```
//!
//! which follows from the change of variables `x = Ay`. That formula is only
//! trusted after [`EllipsoidBody::self_check`] has matched it against a
//! direct quadrature of the parametrized boundary.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::energy::{energy_from_psi, EnergyConstants, SphereQuadrature};
use crate::error::{Error, Result};
use crate::grid::{matrix_from_rows, polygon_signed_area};

/// Minimum quadrature size for oracle energies.
pub fn dense_directions(n: usize) -> usize {
    if n == 2 {
        4096
    } else {
        8192
    }
}

/// Relative agreement required between the closed-form ellipsoid `Ψ` and the
/// boundary quadrature.
pub const SELF_CHECK_TOL_2D: f64 = 1e-6;
pub const SELF_CHECK_TOL_3D: f64 = 1e-5;
/// Relative agreement required between the quadrature energy of an
/// ellipsoid and `nω_n^{1/n} (ω_n |det A|)^{(n-1)/n}`.
pub const ELLIPSOID_ENERGY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolygonBody {
    /// Counterclockwise vertices.
    pub vertices: Vec<[f64; 2]>,
    pub edge_lengths: Vec<f64>,
    pub normals: Vec<[f64; 2]>,
}

impl PolygonBody {
    /// Clockwise input is reversed; self-intersecting or degenerate
    /// polygons are rejected.
    pub fn new(mut vertices: Vec<[f64; 2]>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidShape("polygon needs at least 3 vertices".into()));
        }
        let area = polygon_signed_area(&vertices);
        if !(area.abs() > 0.0) {
            return Err(Error::InvalidShape("polygon has zero area".into()));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if !adjacent && segments_cross(vertices[i], vertices[(i + 1) % n], vertices[j], vertices[(j + 1) % n]) {
                    return Err(Error::InvalidShape("polygon is not simple".into()));
                }
            }
        }
        let mut edge_lengths = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            let e = [b[0] - a[0], b[1] - a[1]];
            let len = (e[0] * e[0] + e[1] * e[1]).sqrt();
            if len == 0.0 {
                return Err(Error::InvalidShape("polygon has a repeated vertex".into()));
            }
            edge_lengths.push(len);
            normals.push([e[1] / len, -e[0] / len]);
        }
        Ok(Self { vertices, edge_lengths, normals })
    }

    pub fn unit_square() -> Self {
        Self::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).expect("valid square")
    }

    pub fn area(&self) -> f64 {
        polygon_signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        self.edge_lengths.iter().sum()
    }
}

fn segments_cross(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

/// Axis-aligned box in any dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxBody {
    pub extents: Vec<f64>,
}

impl BoxBody {
    pub fn new(extents: Vec<f64>) -> Result<Self> {
        if extents.len() < 2 || extents.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidShape("box extents must be positive, n >= 2".into()));
        }
        Ok(Self { extents })
    }

    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipsoidBody {
    pub dim: usize,
    /// Rows of `A`.
    pub matrix: Vec<Vec<f64>>,
    pub center: Vec<f64>,
}

impl EllipsoidBody {
    pub fn new(matrix: Vec<Vec<f64>>, center: Vec<f64>) -> Result<Self> {
        let dim = center.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidShape(format!("ellipsoid dimension must be 2 or 3, got {dim}")));
        }
        let a = matrix_from_rows(&matrix, dim)?;
        let det = a.determinant();
        if !(det.abs() > 1e-14) {
            return Err(Error::InvalidShape("ellipsoid matrix is singular".into()));
        }
        Ok(Self { dim, matrix, center })
    }

    pub fn ball(dim: usize) -> Self {
        let matrix = (0..dim).map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self { dim, matrix, center: vec![0.0; dim] }
    }

    fn a(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.matrix[i][j])
    }

    pub fn determinant(&self) -> f64 {
        self.a().determinant()
    }

    pub fn volume(&self) -> f64 {
        crate::energy::unit_ball_volume(self.dim) * self.determinant().abs()
    }

    /// `nω_n^{1/n} (ω_n |det A|)^{(n-1)/n}`: the equality case of the sharp
    /// affine Sobolev inequality.
    pub fn closed_form_energy(&self) -> f64 {
        let n = self.dim as f64;
        let omega = crate::energy::unit_ball_volume(self.dim);
        n * omega.powf(1.0 / n) * (omega * self.determinant().abs()).powf((n - 1.0) / n)
    }

    /// `Ψ_ξ` by direct quadrature over the parametrized boundary
    /// `x = c + A p`, `p ∈ S^{n-1}`, using the unnormalized surface normal
    /// of the parametrization (rotated tangent in 2D, `x_θ × x_φ` in 3D).
    pub fn psi_by_boundary_quadrature(&self, xi: &[f64], resolution: usize) -> f64 {
        let a = self.a();
        match self.dim {
            2 => {
                let m = resolution.max(16);
                let dphi = 2.0 * PI / m as f64;
                (0..m)
                    .map(|k| {
                        let phi = (k as f64 + 0.5) * dphi;
                        let (s, c) = phi.sin_cos();
                        let t0 = a[(0, 0)] * -s + a[(0, 1)] * c;
                        let t1 = a[(1, 0)] * -s + a[(1, 1)] * c;
                        (t1 * xi[0] - t0 * xi[1]).abs() * dphi
                    })
                    .sum::<f64>()
            }
            _ => {
                let nt = resolution.max(16);
                let np = 2 * nt;
                let (dt, dp) = (PI / nt as f64, 2.0 * PI / np as f64);
                let mut acc = 0.0;
                for i in 0..nt {
                    let theta = (i as f64 + 0.5) * dt;
                    let (st, ct) = theta.sin_cos();
                    for j in 0..np {
                        let phi = (j as f64 + 0.5) * dp;
                        let (sp, cp) = phi.sin_cos();
                        let p_t = [ct * cp, ct * sp, -st];
                        let p_p = [-st * sp, st * cp, 0.0];
                        let x_t = mat_vec3(&a, &p_t);
                        let x_p = mat_vec3(&a, &p_p);
                        let nrm = [
                            x_t[1] * x_p[2] - x_t[2] * x_p[1],
                            x_t[2] * x_p[0] - x_t[0] * x_p[2],
                            x_t[0] * x_p[1] - x_t[1] * x_p[0],
                        ];
                        acc += (nrm[0] * xi[0] + nrm[1] * xi[1] + nrm[2] * xi[2]).abs();
                    }
                }
                acc * dt * dp
            }
        }
    }

    /// Largest relative gap between the closed form and the boundary
    /// quadrature over `directions`.
    pub fn self_check(&self, directions: &[[f64; 3]]) -> f64 {
        let resolution = if self.dim == 2 { 200_000 } else { 600 };
        directions
            .iter()
            .map(|xi| {
                let closed = psi_ellipsoid(self, &xi[..self.dim]);
                let direct = self.psi_by_boundary_quadrature(&xi[..self.dim], resolution);
                (closed - direct).abs() / closed
            })
            .fold(0.0, f64::max)
    }

    pub fn self_check_tolerance(&self) -> f64 {
        if self.dim == 2 {
            SELF_CHECK_TOL_2D
        } else {
            SELF_CHECK_TOL_3D
        }
    }
}

fn mat_vec3(a: &DMatrix<f64>, p: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..3).map(|j| a[(i, j)] * p[j]).sum();
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "body", rename_all = "lowercase")]
pub enum Body {
    Polygon(PolygonBody),
    Box(BoxBody),
    Ellipsoid(EllipsoidBody),
}

impl Body {
    pub fn dim(&self) -> usize {
        match self {
            Body::Polygon(_) => 2,
            Body::Box(b) => b.extents.len(),
            Body::Ellipsoid(e) => e.dim,
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Body::Polygon(p) => p.area(),
            Body::Box(b) => b.volume(),
            Body::Ellipsoid(e) => e.volume(),
        }
    }

    pub fn psi(&self, xi: &[f64]) -> f64 {
        match self {
            Body::Polygon(p) => psi_polygon(p, xi),
            Body::Box(b) => psi_box(b, xi),
            Body::Ellipsoid(e) => psi_ellipsoid(e, xi),
        }
    }
}

/// `Σ_e len_e |ν_e·ξ|`.
pub fn psi_polygon(body: &PolygonBody, xi: &[f64]) -> f64 {
    body.edge_lengths
        .iter()
        .zip(&body.normals)
        .map(|(l, n)| l * (n[0] * xi[0] + n[1] * xi[1]).abs())
        .sum()
}

/// `2 Σ_d |ξ_d| Π_{k≠d} extent_k`.
pub fn psi_box(body: &BoxBody, xi: &[f64]) -> f64 {
    let vol = body.volume();
    2.0 * body.extents.iter().zip(xi).map(|(e, x)| x.abs() * vol / e).sum::<f64>()
}

/// `2 ω_{n-1} |det A| |A^{-1} ξ|`.
pub fn psi_ellipsoid(body: &EllipsoidBody, xi: &[f64]) -> f64 {
    let a = body.a();
    let det = a.determinant();
    let inv = a.try_inverse().expect("validated ellipsoid");
    let n = body.dim;
    let w2: f64 = (0..n)
        .map(|i| (0..n).map(|j| inv[(i, j)] * xi[j]).sum::<f64>().powi(2))
        .sum();
    2.0 * crate::energy::unit_ball_volume(n - 1) * det.abs() * w2.sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleEnergy {
    pub value: f64,
    pub psi: Vec<f64>,
    /// Closed-form equality-case value, ellipsoids only.
    pub closed_form: Option<f64>,
    /// Worst closed-form vs boundary-quadrature gap, ellipsoids only.
    pub self_check_gap: Option<f64>,
}

/// Energy of the indicator of `body` from oracle `Ψ` samples on a dense
/// quadrature. Ellipsoids must pass the boundary-quadrature self-check and
/// agree with the closed-form equality value.
pub fn energy_body(
    body: &Body,
    constants: &EnergyConstants,
    quadrature: &SphereQuadrature,
) -> Result<OracleEnergy> {
    let n = body.dim();
    if quadrature.dim != n || constants.dim != n {
        return Err(Error::InvalidArgument("dimension mismatch between body and quadrature".into()));
    }
    if quadrature.len() < dense_directions(n) {
        return Err(Error::InvalidArgument(format!(
            "oracle energies need at least {} directions, got {}",
            dense_directions(n),
            quadrature.len()
        )));
    }
    let mut self_check_gap = None;
    let mut closed_form = None;
    if let Body::Ellipsoid(e) = body {
        let probes: Vec<[f64; 3]> = quadrature
            .directions
            .iter()
            .step_by((quadrature.len() / 7).max(1))
            .copied()
            .collect();
        let gap = e.self_check(&probes);
        if gap > e.self_check_tolerance() {
            return Err(Error::OracleInconsistent(format!(
                "ellipsoid Ψ closed form differs from boundary quadrature by {gap:e}"
            )));
        }
        self_check_gap = Some(gap);
        closed_form = Some(e.closed_form_energy());
    }
    let psi: Vec<f64> = quadrature.directions.iter().map(|xi| body.psi(&xi[..n])).collect();
    let value = energy_from_psi(&psi, quadrature, constants)?.value;
    if let Some(cf) = closed_form {
        if (value / cf - 1.0).abs() > ELLIPSOID_ENERGY_TOL {
            return Err(Error::OracleInconsistent(format!(
                "ellipsoid energy {value} differs from closed form {cf}"
            )));
        }
    }
    Ok(OracleEnergy { value, psi, closed_form, self_check_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{constants, make_quadrature};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_psi_values() {
        let sq = PolygonBody::unit_square();
        assert_eq!(psi_polygon(&sq, &[1.0, 0.0]), 2.0);
        let r = 0.5f64.sqrt();
        assert!((psi_polygon(&sq, &[r, r]) - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        for k in 0..50 {
            let t = 0.13 * k as f64;
            let xi = [t.cos(), t.sin()];
            let expected = 2.0 * (t.cos().abs() + t.sin().abs());
            assert!((psi_polygon(&sq, &xi) - expected).abs() < 1e-14);
            assert_eq!(psi_polygon(&sq, &xi), psi_polygon(&sq, &[-xi[0], -xi[1]]));
        }
        let b = BoxBody::new(vec![1.0, 1.0]).unwrap();
        assert!((psi_box(&b, &[0.6, 0.8]) - psi_polygon(&sq, &[0.6, 0.8])).abs() < 1e-14);
    }

    #[test]
    fn polygon_validation() {
        assert!(PolygonBody::new(vec![[0.0, 0.0], [1.0, 0.0]]).is_err());
        assert!(PolygonBody::new(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).is_err());
        // bow tie
        assert!(PolygonBody::new(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]).is_err());
        // clockwise input is reoriented
        let cw = PolygonBody::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(cw.area() > 0.0);
        assert_eq!(cw.perimeter(), 4.0);
    }

    #[test]
    fn ellipsoid_psi_values() {
        let disk = EllipsoidBody::ball(2);
        for t in [0.0, 0.4, 2.0] {
            assert!((psi_ellipsoid(&disk, &[f64::cos(t), f64::sin(t)]) - 4.0).abs() < 1e-14);
        }
        let e = EllipsoidBody::new(vec![vec![2.0, 0.0], vec![0.0, 0.5]], vec![0.0, 0.0]).unwrap();
        assert!((psi_ellipsoid(&e, &[1.0, 0.0]) - 2.0).abs() < 1e-14);
        let ball = EllipsoidBody::ball(3);
        assert!((psi_ellipsoid(&ball, &[0.0, 0.6, 0.8]) - 2.0 * PI).abs() < 1e-14);
        assert!(EllipsoidBody::new(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn closed_form_matches_boundary_quadrature_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m: Vec<Vec<f64>> =
                (0..2).map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let Ok(e) = EllipsoidBody::new(m, vec![0.0, 0.0]) else { continue };
            if e.determinant().abs() < 0.05 {
                continue;
            }
            let t: f64 = rng.random_range(0.0..6.3);
            let gap = e.self_check(&[[t.cos(), t.sin(), 0.0]]);
            assert!(gap < SELF_CHECK_TOL_2D, "gap {gap:e}");
        }
    }

    #[test]
    fn closed_form_matches_boundary_quadrature_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..4 {
            let m: Vec<Vec<f64>> =
                (0..3).map(|_| (0..3).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
            let e = EllipsoidBody::new(m, vec![0.0; 3]).unwrap();
            let v: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.3];
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let gap = e.self_check(&[v.map(|x| x / nv)]);
            assert!(gap < SELF_CHECK_TOL_3D, "gap {gap:e}");
        }
    }

    #[test]
    fn body_energies() {
        let c2 = constants(2).unwrap();
        let q2 = make_quadrature(2, 4096).unwrap();
        let sq = energy_body(&Body::Polygon(PolygonBody::unit_square()), &c2, &q2).unwrap();
        assert!((sq.value / c2.alpha - 1.0).abs() < 1e-5);
        let disk = energy_body(&Body::Ellipsoid(EllipsoidBody::ball(2)), &c2, &q2).unwrap();
        assert!((disk.value - 2.0 * PI).abs() < 1e-10);
        let e = EllipsoidBody::new(vec![vec![2.0, 0.3], vec![0.0, 0.5]], vec![1.0, 0.0]).unwrap();
        let ell = energy_body(&Body::Ellipsoid(e), &c2, &q2).unwrap();
        assert!((ell.value / (2.0 * PI) - 1.0).abs() < 1e-4);
        // strict comparison with the perimeter off ellipsoids
        assert!(sq.value < 4.0);
        // too few directions
        let coarse = make_quadrature(2, 512).unwrap();
        assert!(energy_body(&Body::Polygon(PolygonBody::unit_square()), &c2, &coarse).is_err());
    }

    #[test]
    fn three_dimensional_bodies() {
        let c3 = constants(3).unwrap();
        let q3 = make_quadrature(3, 8192).unwrap();
        let ball = energy_body(&Body::Ellipsoid(EllipsoidBody::ball(3)), &c3, &q3).unwrap();
        assert!((ball.value / (4.0 * PI) - 1.0).abs() < 1e-4);
        let cube = energy_body(&Body::Box(BoxBody::new(vec![1.0; 3]).unwrap()), &c3, &q3).unwrap();
        // sharp affine Sobolev: E >= 3 ω_3^{1/3} |K|^{2/3}
        assert!(cube.value >= c3.sharp_sobolev);
        // and the comparison with the surface area
        assert!(cube.value < 6.0);
    }
}
