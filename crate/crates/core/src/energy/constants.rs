use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form constants of the affine energy in dimension `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyConstants {
    pub dim: usize,
    /// `ω_k` for `k = 0..=n`.
    pub omega: Vec<f64>,
    /// `α_n = (2ω_{n-1})^{-1} (nω_n)^{1+1/n}`.
    pub alpha: f64,
    /// `nω_n^{1/n}`, the sharp Sobolev constant.
    pub sharp_sobolev: f64,
    /// `d_0 = π/4 · Γ((n+1)/2) · Γ(n+1)^{1/n} · Γ(n/2+1)^{-1/n-1}`.
    pub d0: f64,
    /// `nω_n = H^{n-1}(S^{n-1})`.
    pub sphere_area: f64,
}

/// Volume of the unit ball in `R^k` via `ω_k = 2π/k · ω_{k-2}`.
pub fn unit_ball_volume(k: usize) -> f64 {
    match k {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / k as f64 * unit_ball_volume(k - 2),
    }
}

/// `ln Γ(m/2)` for a positive integer `m`, from `Γ(1/2) = √π`, `Γ(1) = 1`
/// and `Γ(x + 1) = xΓ(x)`.
pub fn ln_gamma_half(m: usize) -> f64 {
    assert!(m >= 1, "Γ(0) is undefined");
    let mut acc = if m % 2 == 1 { 0.5 * PI.ln() } else { 0.0 };
    let mut x = if m % 2 == 1 { 0.5 } else { 1.0 };
    while 2.0 * x < m as f64 {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

pub fn constants(n: usize) -> Result<EnergyConstants> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("dimension must be at least 2, got {n}")));
    }
    let omega: Vec<f64> = (0..=n).map(unit_ball_volume).collect();
    let nf = n as f64;
    let sphere_area = nf * omega[n];
    let alpha = sphere_area.powf(1.0 + 1.0 / nf) / (2.0 * omega[n - 1]);
    let sharp_sobolev = nf * omega[n].powf(1.0 / nf);
    let ln_d0 = (PI / 4.0).ln()
        + ln_gamma_half(n + 1)
        + ln_gamma_half(2 * n + 2) / nf
        - (1.0 / nf + 1.0) * ln_gamma_half(n + 2);
    Ok(EnergyConstants { dim: n, omega, alpha, sharp_sobolev, d0: ln_d0.exp(), sphere_area })
}
