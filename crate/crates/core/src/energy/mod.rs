//! Affine energies
//!
//! ```text
//! E = α_n ( ∫_{S^{n-1}} Ψ_ξ^{-n} dξ )^{-1/n},   Ψ_ξ = Σ_i |v_i · ξ|
//! ```
//!
//! evaluated from variation atoms on a fixed sphere quadrature. Three atom
//! subsets give the interior energy `E_Ω(u)`, the boundary energy
//! `E_∂Ω(ũ)` and the energy `E(ū)` of the zero extension.
//!
//! A field whose variation has no mass in some direction has energy exactly
//! zero. Two detectors report that case: the covariance rank test
//! (`λ_min(M)/tr M < 1e-12`, independent of the quadrature) and the
//! min/max ratio of the sampled `Ψ`.

mod constants;
mod quadrature;

pub use constants::{constants, ln_gamma_half, unit_ball_volume, EnergyConstants};
pub use quadrature::{make_quadrature, min_directions, SphereQuadrature};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DomainMask, GridFunction, TraceData};
use crate::variation::{
    boundary_atoms, compute_atoms, covariance, total_variation, AtomSource, Backend,
    VariationAtoms,
};

/// Relative min/max threshold on the sampled `Ψ` below which the energy is 0.
pub const DEGENERACY_EPS: f64 = 1e-8;
/// Threshold on `λ_min(M) / tr M` for the covariance rank test.
pub const RANK_EPS: f64 = 1e-12;
/// `Ψ` values below this take the degenerate path.
pub const PSI_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub value: f64,
    pub psi: Vec<f64>,
    pub psi_min: f64,
    pub psi_max: f64,
    pub degenerate: bool,
    /// Ascending eigenvalues of the variation covariance (empty when the
    /// energy was computed from bare `Ψ` samples).
    pub covariance_eigenvalues: Vec<f64>,
    pub total_variation: Option<f64>,
    pub backend: Option<Backend>,
    pub source: Option<AtomSource>,
    pub quadrature_size: usize,
    pub dim: usize,
}

impl EnergyBreakdown {
    /// `λ_min / tr` of the covariance, if available.
    pub fn eigen_ratio(&self) -> Option<f64> {
        let tr: f64 = self.covariance_eigenvalues.iter().sum();
        let first = *self.covariance_eigenvalues.first()?;
        Some(if tr > 0.0 { (first / tr).max(0.0) } else { 0.0 })
    }
}

/// `α_n (Σ_j w_j Ψ_j^{-n})^{-1/n}`, or 0 with the degenerate flag when the
/// samples vanish somewhere (relative to `DEGENERACY_EPS`). The power is
/// taken on `Ψ_min/Ψ_j ∈ (0, 1]`, which cannot overflow.
pub fn energy_from_psi(
    psi: &[f64],
    quadrature: &SphereQuadrature,
    constants: &EnergyConstants,
) -> Result<EnergyBreakdown> {
    if psi.len() != quadrature.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples for a quadrature of {} directions",
            psi.len(),
            quadrature.len()
        )));
    }
    if let Some(bad) = psi.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument(format!("Ψ samples must be finite and >= 0, got {bad}")));
    }
    let psi_min = psi.iter().copied().fold(f64::INFINITY, f64::min);
    let psi_max = psi.iter().copied().fold(0.0, f64::max);
    let degenerate =
        psi.is_empty() || psi_max == 0.0 || psi_min <= DEGENERACY_EPS * psi_max || psi_min < PSI_FLOOR;
    let value = if degenerate {
        0.0
    } else {
        let n = constants.dim as f64;
        let sum: f64 = psi
            .iter()
            .zip(&quadrature.weights)
            .map(|(p, w)| w * (psi_min / p).powf(n))
            .sum();
        constants.alpha * psi_min * sum.powf(-1.0 / n)
    };
    Ok(EnergyBreakdown {
        value,
        psi: psi.to_vec(),
        psi_min,
        psi_max,
        degenerate,
        covariance_eigenvalues: Vec::new(),
        total_variation: None,
        backend: None,
        source: None,
        quadrature_size: quadrature.len(),
        dim: constants.dim,
    })
}

/// Energy of an arbitrary atom set, with the covariance cross-check.
pub fn energy_of_atoms(atoms: &VariationAtoms, quadrature: &SphereQuadrature) -> Result<EnergyBreakdown> {
    if atoms.dim != quadrature.dim {
        return Err(Error::InvalidArgument(format!(
            "{}-dimensional atoms with a {}-dimensional quadrature",
            atoms.dim, quadrature.dim
        )));
    }
    let c = constants(atoms.dim)?;
    let psi = atoms.psi_many(&quadrature.directions);
    let mut out = energy_from_psi(&psi, quadrature, &c)?;
    let cov = covariance(atoms);
    if cov.eigen_ratio() < RANK_EPS {
        out.degenerate = true;
        out.value = 0.0;
    }
    out.covariance_eigenvalues = cov.eigenvalues();
    out.total_variation = Some(total_variation(atoms));
    out.backend = Some(atoms.backend);
    out.source = Some(atoms.source);
    Ok(out)
}

/// `E_Ω(u)`: interior atoms only.
pub fn affine_energy_interior(
    u: &GridFunction,
    mask: &DomainMask,
    backend: Backend,
    quadrature: &SphereQuadrature,
) -> Result<EnergyBreakdown> {
    energy_of_atoms(&compute_atoms(u, mask, backend, false)?, quadrature)
}

/// `E_∂Ω(ũ)`: boundary atoms `-ũ ν` only.
pub fn affine_energy_boundary(trace: &TraceData, quadrature: &SphereQuadrature) -> Result<EnergyBreakdown> {
    energy_of_atoms(&boundary_atoms(trace), quadrature)
}

/// `E(ū)`: interior plus boundary atoms.
pub fn affine_energy_extended(
    u: &GridFunction,
    mask: &DomainMask,
    backend: Backend,
    quadrature: &SphereQuadrature,
) -> Result<EnergyBreakdown> {
    energy_of_atoms(&compute_atoms(u, mask, backend, true)?, quadrature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{extract_trace, make_mask, GridSpec, Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn constant_psi_is_the_disk_value() {
        let q = make_quadrature(2, 512).unwrap();
        let c = constants(2).unwrap();
        let e = energy_from_psi(&vec![4.0; 512], &q, &c).unwrap();
        assert!((e.value - 2.0 * PI).abs() < 1e-12);
        assert!(!e.degenerate);
        let e3 = energy_from_psi(&vec![2.0; 512], &make_quadrature(3, 512).unwrap(), &constants(3).unwrap())
            .unwrap();
        // α_3 (4π)^{-1/3} · 2
        let c3 = constants(3).unwrap();
        assert!((e3.value - c3.alpha * (4.0 * PI).powf(-1.0 / 3.0) * 2.0).abs() < 1e-12);
    }

    #[test]
    fn a_zero_sample_is_degenerate() {
        let q = make_quadrature(2, 64).unwrap();
        let c = constants(2).unwrap();
        let mut psi = vec![1.0; 64];
        psi[17] = 0.0;
        let e = energy_from_psi(&psi, &q, &c).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.value, 0.0);
        psi[17] = -1.0;
        assert!(energy_from_psi(&psi, &q, &c).is_err());
    }

    #[test]
    fn square_samples_give_alpha() {
        let q = make_quadrature(2, 512).unwrap();
        let c = constants(2).unwrap();
        let psi: Vec<f64> =
            q.directions.iter().map(|x| 2.0 * (x[0].abs() + x[1].abs())).collect();
        let e = energy_from_psi(&psi, &q, &c).unwrap();
        assert!((e.value / c.alpha - 1.0).abs() < 1e-4);
    }

    #[test]
    fn energy_is_monotone_in_each_sample() {
        let q = make_quadrature(2, 64).unwrap();
        let c = constants(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let psi: Vec<f64> = (0..64).map(|_| rng.random_range(0.5..2.0)).collect();
            let base = energy_from_psi(&psi, &q, &c).unwrap().value;
            let mut up = psi.clone();
            let j = rng.random_range(0..64);
            up[j] += rng.random_range(0.0..1.0);
            assert!(energy_from_psi(&up, &q, &c).unwrap().value >= base);
        }
    }

    #[test]
    fn square_indicator_extended_equals_boundary() {
        let shape = Shape::unit_square();
        let mask = make_mask(&GridSpec::around(&shape, 64).unwrap(), &shape).unwrap();
        let ones = GridFunction::from_fn(mask.spec(), |_| 1.0);
        let q = make_quadrature(2, 512).unwrap();
        let ext = affine_energy_extended(&ones, &mask, Backend::FaceAtoms, &q).unwrap();
        let bdry = affine_energy_boundary(&extract_trace(&ones, &mask).unwrap(), &q).unwrap();
        let interior = affine_energy_interior(&ones, &mask, Backend::FaceAtoms, &q).unwrap();
        assert_eq!(ext.value, bdry.value);
        assert!((ext.value / constants(2).unwrap().alpha - 1.0).abs() < 1e-4);
        assert!(interior.degenerate && interior.value == 0.0);
    }

    #[test]
    fn one_dimensional_field_is_degenerate() {
        let shape = Shape::unit_square();
        let mask = make_mask(&GridSpec::around(&shape, 128).unwrap(), &shape).unwrap();
        let u = GridFunction::from_fn(mask.spec(), |x| (PI * x[0]).sin());
        let q = make_quadrature(2, 512).unwrap();
        for backend in [Backend::FaceAtoms, Backend::CellGradient] {
            let e = affine_energy_interior(&u, &mask, backend, &q).unwrap();
            assert!(e.degenerate);
            assert_eq!(e.value, 0.0);
            assert!(e.eigen_ratio().unwrap() < RANK_EPS);
        }
        // x + y only varies along (1, 1): degenerate for the consistent
        // backend, rank 2 for the axis-aligned face atoms
        let v = GridFunction::from_fn(mask.spec(), |x| x[0] + x[1]);
        assert!(affine_energy_interior(&v, &mask, Backend::CellGradient, &q).unwrap().degenerate);
        let e = affine_energy_interior(&v, &mask, Backend::FaceAtoms, &q).unwrap();
        assert!(!e.degenerate && e.value > 0.0);
        let w = GridFunction::from_fn(mask.spec(), |x| x[0] * x[0] + x[1] * x[1]);
        let e = affine_energy_interior(&w, &mask, Backend::CellGradient, &q).unwrap();
        assert!(!e.degenerate && e.value > 0.0);
    }

    #[test]
    fn energy_is_absolutely_homogeneous() {
        let shape = Shape::unit_disk();
        let mask = make_mask(&GridSpec::around(&shape, 64).unwrap(), &shape).unwrap();
        let u = GridFunction::from_fn(mask.spec(), |x| 1.0 + x[0] - x[1] * x[1]);
        let q = make_quadrature(2, 128).unwrap();
        let e = affine_energy_extended(&u, &mask, Backend::CellGradient, &q).unwrap().value;
        for c in [-3.0, 0.5, 7.0] {
            let ec = affine_energy_extended(&u.scaled(c), &mask, Backend::CellGradient, &q).unwrap().value;
            assert!((ec - c.abs() * e).abs() < 1e-10 * ec);
        }
    }

    #[test]
    fn ball_energy_in_three_dimensions() {
        let shape = Shape::Ball { center: vec![0.0; 3], radius: 1.0 };
        let mask = make_mask(&GridSpec::around(&shape, 64).unwrap(), &shape).unwrap();
        let ones = GridFunction::from_fn(mask.spec(), |_| 1.0);
        let q = make_quadrature(3, 2048).unwrap();
        let e = affine_energy_extended(&ones, &mask, Backend::FaceAtoms, &q).unwrap();
        // E(χ_B) = nω_n^{1/n} ω_n^{(n-1)/n} = 3 ω_3 = 4π
        assert!((e.value / (4.0 * PI) - 1.0).abs() < 0.03, "{}", e.value);
    }
}
