//! Weighted functionals, constraint sets and truncation.
//!
//! ```text
//! Φ(u)   = |Du|(Ω) + ∫_Ω a|u| + ∫_∂Ω b|ũ|
//! Φ_A(u) = E(ū)    + ∫_Ω a|u| + ∫_∂Ω b|ũ|
//! ```
//!
//! The constraint sets are `X = {‖u‖_q = 1}` and `Y = X ∩ {m_r(u) = 0}`,
//! where `m_r(u)` solves `∫ |u - m|^{r-1} (u - m) = 0`. With `zero_trace`
//! the outermost inside layer is pinned to zero, which is the discrete form
//! of `BV_0`.

use serde::{Deserialize, Serialize};

use crate::energy::{affine_energy_extended, SphereQuadrature};
use crate::error::{Error, Result};
use crate::grid::{DomainMask, GridFunction};
use crate::variation::{compute_atoms, total_variation, Backend};

/// Residual target for both constraints after projection.
pub const PROJECTION_TOL: f64 = 1e-8;
/// Maximum shift/renormalize rounds before a projection is flagged.
pub const PROJECTION_MAX_ROUNDS: usize = 100;

/// Potential weights: `a` per grid cell (read on inside cells only) and `b`
/// per boundary face, in the mask's face order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Weights {
    /// `a ≡ 0`, `b ≡ 0`.
    pub fn zero(mask: &DomainMask) -> Self {
        Self { a: vec![0.0; mask.spec().len()], b: vec![0.0; mask.faces().len()] }
    }

    /// Constant weights. Negative `b` is rejected.
    pub fn constant(mask: &DomainMask, a: f64, b: f64) -> Result<Self> {
        Self::new(mask, vec![a; mask.spec().len()], vec![b; mask.faces().len()], false)
    }

    /// General weights. `b ≥ 0` is enforced unless `allow_negative_b` is set.
    pub fn new(mask: &DomainMask, a: Vec<f64>, b: Vec<f64>, allow_negative_b: bool) -> Result<Self> {
        if a.len() != mask.spec().len() {
            return Err(Error::GridMismatch(format!(
                "weight a has {} values for a grid of {} cells",
                a.len(),
                mask.spec().len()
            )));
        }
        if b.len() != mask.faces().len() {
            return Err(Error::GridMismatch(format!(
                "weight b has {} values for {} boundary faces",
                b.len(),
                mask.faces().len()
            )));
        }
        if a.iter().chain(&b).any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite".into()));
        }
        if !allow_negative_b {
            if let Some(w) = b.iter().find(|w| **w < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "boundary weight b must be >= 0, got {w} (pass allow_negative_b to override)"
                )));
            }
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    fn check(&self, mask: &DomainMask) -> Result<()> {
        if self.a.len() != mask.spec().len() || self.b.len() != mask.faces().len() {
            return Err(Error::GridMismatch("weights were built for a different mask".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// `‖u‖_q = 1`.
    X,
    /// `‖u‖_q = 1` and `m_r(u) = 0`.
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub q: f64,
    pub kind: ConstraintKind,
    /// Orthogonality exponent, used by `Y` only.
    pub r: f64,
    pub zero_trace: bool,
}

impl ConstraintSpec {
    pub fn x(q: f64) -> Self {
        Self { q, kind: ConstraintKind::X, r: 1.0, zero_trace: false }
    }

    pub fn y(q: f64, r: f64) -> Self {
        Self { q, kind: ConstraintKind::Y, r, zero_trace: false }
    }

    pub fn with_zero_trace(mut self, zero_trace: bool) -> Self {
        self.zero_trace = zero_trace;
        self
    }

    /// Largest admissible exponent `n/(n-1)`.
    pub fn critical_exponent(dim: usize) -> f64 {
        dim as f64 / (dim as f64 - 1.0)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let top = Self::critical_exponent(dim);
        let ok = |e: f64| (1.0..=top + 1e-12).contains(&e);
        if !ok(self.q) {
            return Err(Error::InvalidArgument(format!("q must lie in [1, {top}], got {}", self.q)));
        }
        if self.kind == ConstraintKind::Y && !ok(self.r) {
            return Err(Error::InvalidArgument(format!("r must lie in [1, {top}], got {}", self.r)));
        }
        Ok(())
    }

    /// `q = n/(n-1)`, where attainment needs the threshold condition.
    pub fn is_critical(&self, dim: usize) -> bool {
        (self.q - Self::critical_exponent(dim)).abs() < 1e-12
    }
}

/// `T_h u = clamp(u, -h, h)` and `R_h u = u - T_h u`.
#[derive(Debug, Clone)]
pub struct TruncationPair {
    pub level: f64,
    pub truncated: GridFunction,
    pub remainder: GridFunction,
}

/// `(∫_Ω a|u|, ∫_∂Ω b|ũ|)`; the boundary measure follows the mask's mode.
pub fn weight_terms(u: &GridFunction, mask: &DomainMask, weights: &Weights) -> Result<(f64, f64)> {
    weights.check(mask)?;
    let v = u.values();
    if v.len() != mask.spec().len() {
        return Err(Error::GridMismatch("field does not live on the mask grid".into()));
    }
    let vol = mask.spec().cell_volume();
    let a_term: f64 = (0..v.len())
        .filter(|&c| mask.is_inside(c))
        .map(|c| weights.a[c] * v[c].abs())
        .sum::<f64>()
        * vol;
    let b_term = mask
        .faces()
        .iter()
        .enumerate()
        .map(|(k, f)| weights.b[k] * v[f.cell].abs() * mask.face_measure(k).1)
        .sum();
    Ok((a_term, b_term))
}

/// `Φ(u)` with the interior total variation under `backend`.
pub fn phi_classical(u: &GridFunction, mask: &DomainMask, weights: &Weights, backend: Backend) -> Result<f64> {
    let tv = total_variation(&compute_atoms(u, mask, backend, false)?);
    let (a_term, b_term) = weight_terms(u, mask, weights)?;
    Ok(tv + a_term + b_term)
}

/// `Φ_A(u)`.
pub fn phi_affine(
    u: &GridFunction,
    mask: &DomainMask,
    weights: &Weights,
    backend: Backend,
    quadrature: &SphereQuadrature,
) -> Result<f64> {
    let e = affine_energy_extended(u, mask, backend, quadrature)?.value;
    let (a_term, b_term) = weight_terms(u, mask, weights)?;
    Ok(e + a_term + b_term)
}

#[inline]
fn signed_power(t: f64, r: f64) -> f64 {
    if r == 1.0 {
        t
    } else {
        t.abs().powf(r - 1.0) * t
    }
}

#[inline]
fn abs_power(t: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if p == 1.0 {
        t.abs()
    } else {
        t.abs().powf(p)
    }
}

/// `(G(m), Σ|u - m|^{r-1})` over `values`, without the cell volume.
fn m_r_balance(values: &[f64], r: f64, m: f64) -> (f64, f64) {
    values.iter().fold((0.0, 0.0), |(g, s), &u| {
        let t = u - m;
        (g + signed_power(t, r), s + abs_power(t, r - 1.0))
    })
}

/// Root of `G(m) = Σ |u_c - m|^{r-1} (u_c - m)` over `values`.
fn m_r_of(values: &[f64], r: f64) -> Result<f64> {
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("exponent r must be >= 1, got {r}")));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("m_r of an empty set of cells".into()));
    }
    let n = values.len() as f64;
    if r == 1.0 {
        // G is linear and its root is the mean; a compensated second pass
        // removes the rounding of the first.
        let mean = values.iter().sum::<f64>() / n;
        let fix = values.iter().map(|u| u - mean).sum::<f64>() / n;
        return Ok(mean + fix);
    }
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(lo);
    }
    // G(lo) >= 0 >= G(hi) and G is strictly decreasing in between.
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (g, _) = m_r_balance(values, r, mid);
        if g > 0.0 {
            lo = mid;
        } else if g < 0.0 {
            hi = mid;
        } else {
            return Ok(mid);
        }
    }
    let g_lo = m_r_balance(values, r, lo).0.abs();
    let g_hi = m_r_balance(values, r, hi).0.abs();
    Ok(if g_lo <= g_hi { lo } else { hi })
}

fn inside_values(u: &GridFunction, mask: &DomainMask) -> Result<Vec<f64>> {
    if u.spec() != mask.spec() {
        return Err(Error::GridMismatch("field does not live on the mask grid".into()));
    }
    Ok(u.values().iter().zip(mask.inside()).filter(|(_, &i)| i).map(|(&v, _)| v).collect())
}

/// `m_r(u)` over the inside cells, by bisection on `[min u, max u]`
/// (`r = 1` returns the mean).
pub fn m_r_solve(u: &GridFunction, mask: &DomainMask, r: f64) -> Result<f64> {
    m_r_of(&inside_values(u, mask)?, r)
}

/// `(G(m), Σ|u - m|^{r-1} h^n)` over the inside cells. The second entry is
/// the natural scale for judging `|G(m)|`.
pub fn m_r_residual(u: &GridFunction, mask: &DomainMask, r: f64, m: f64) -> Result<(f64, f64)> {
    let vol = mask.spec().cell_volume();
    let (g, s) = m_r_balance(&inside_values(u, mask)?, r, m);
    Ok((g * vol, s * vol))
}

/// Outcome of [`project_constraint`].
#[derive(Debug, Clone)]
pub struct Projection {
    pub field: GridFunction,
    pub rounds: usize,
    pub converged: bool,
    /// `|‖u‖_q - 1|`.
    pub norm_residual: f64,
    /// `|∫|u|^{r-1}u| / ∫|u|^{r-1}` for `Y`, zero for `X`.
    pub orthogonality_residual: f64,
}

/// Cells the projection may change: inside cells, minus the outermost layer
/// when the trace is pinned.
pub fn free_cells(mask: &DomainMask, zero_trace: bool) -> Vec<bool> {
    let mut free = mask.inside().to_vec();
    if zero_trace {
        for (f, l) in free.iter_mut().zip(mask.boundary_layer()) {
            *f &= !l;
        }
    }
    free
}

fn constraint_residuals(values: &[f64], free: &[bool], spec: &ConstraintSpec, vol: f64) -> (f64, f64) {
    let mut norm = 0.0;
    let mut g = 0.0;
    let mut s = 0.0;
    for (&v, _) in values.iter().zip(free).filter(|(_, &f)| f) {
        norm += abs_power(v, spec.q);
        if spec.kind == ConstraintKind::Y {
            g += signed_power(v, spec.r);
            s += abs_power(v, spec.r - 1.0);
        }
    }
    let norm_res = ((norm * vol).powf(1.0 / spec.q) - 1.0).abs();
    let orth_res = if spec.kind == ConstraintKind::Y && s > 0.0 { (g / s).abs() } else { 0.0 };
    (norm_res, orth_res)
}

/// Map `u` onto the constraint set: zero the pinned layer, then for `Y`
/// subtract `m_r` of the free cells, then normalize in `L^q`; repeated until
/// both residuals are below [`PROJECTION_TOL`]. Running out of rounds is
/// reported through `converged`, not hidden.
pub fn project_constraint(u: &GridFunction, mask: &DomainMask, spec: &ConstraintSpec) -> Result<Projection> {
    spec.validate(mask.spec().dim())?;
    if u.spec() != mask.spec() {
        return Err(Error::GridMismatch("field does not live on the mask grid".into()));
    }
    let free = free_cells(mask, spec.zero_trace);
    let vol = mask.spec().cell_volume();
    let mut values: Vec<f64> =
        u.values().iter().zip(&free).map(|(&v, &f)| if f { v } else { 0.0 }).collect();
    let mut rounds = 0;
    let mut residuals = (f64::INFINITY, f64::INFINITY);
    while rounds < PROJECTION_MAX_ROUNDS {
        rounds += 1;
        if spec.kind == ConstraintKind::Y {
            let sub: Vec<f64> = values.iter().zip(&free).filter(|(_, &f)| f).map(|(&v, _)| v).collect();
            let shift = m_r_of(&sub, spec.r)?;
            for (v, _) in values.iter_mut().zip(&free).filter(|(_, &f)| f) {
                *v -= shift;
            }
        }
        let norm: f64 = values.iter().zip(&free).filter(|(_, &f)| f).map(|(&v, _)| abs_power(v, spec.q)).sum();
        let norm = (norm * vol).powf(1.0 / spec.q);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument(
                "cannot project a field that vanishes on the free cells".into(),
            ));
        }
        for v in values.iter_mut() {
            *v /= norm;
        }
        residuals = constraint_residuals(&values, &free, spec, vol);
        if residuals.0 < PROJECTION_TOL && residuals.1 < PROJECTION_TOL {
            break;
        }
    }
    let converged = residuals.0 < PROJECTION_TOL && residuals.1 < PROJECTION_TOL;
    Ok(Projection {
        field: GridFunction::new(u.spec().clone(), values)?,
        rounds,
        converged,
        norm_residual: residuals.0,
        orthogonality_residual: residuals.1,
    })
}

/// Both residuals of `u` against `spec`, without modifying it.
pub fn constraint_residual(u: &GridFunction, mask: &DomainMask, spec: &ConstraintSpec) -> Result<(f64, f64)> {
    if u.spec() != mask.spec() {
        return Err(Error::GridMismatch("field does not live on the mask grid".into()));
    }
    let free = free_cells(mask, spec.zero_trace);
    Ok(constraint_residuals(u.values(), &free, spec, mask.spec().cell_volume()))
}

/// Split `s` into `clamp(s, -h, h)` and a remainder that adds back to `s`
/// exactly in floating point.
fn split(s: f64, h: f64) -> (f64, f64) {
    let mut t = s.clamp(-h, h);
    if t == s {
        return (t, 0.0);
    }
    // `s - t` can round when |s| > 2h. Nudge the remainder until `t + r == s`.
    // When the rounding of `t + r` ties around `s` no remainder works, and
    // `t` moves one ulp toward zero instead (keeping `|t| <= h`).
    for _ in 0..8 {
        let mut r = s - t;
        for _ in 0..8 {
            let sum = t + r;
            if sum == s {
                return (t, r);
            }
            r = if sum < s { r.next_up() } else { r.next_down() };
        }
        t = if t > 0.0 { t.next_down() } else { t.next_up() };
    }
    unreachable!("no exact split of {s} at level {h}")
}

pub fn truncate(u: &GridFunction, h: f64) -> Result<TruncationPair> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("truncation level must be > 0, got {h}")));
    }
    let (t, r): (Vec<f64>, Vec<f64>) = u.values().iter().map(|&s| split(s, h)).unzip();
    Ok(TruncationPair {
        level: h,
        truncated: GridFunction::new(u.spec().clone(), t)?,
        remainder: GridFunction::new(u.spec().clone(), r)?,
    })
}
