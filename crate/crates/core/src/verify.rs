//! Inequality and identity harness.
//!
//! Every check evaluates one inequality over a generated corpus and reduces
//! it to a single number, the worst defect. A defect is normalized so that
//! the check passes iff `worst_margin <= tolerance`; negative values mean the
//! inequality holds with room to spare. Corpora are drawn from per-item RNG
//! streams, so a report depends only on the configuration and seed.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{
    affine_energy_extended, affine_energy_interior, constants, energy_of_atoms, make_quadrature,
    min_directions, SphereQuadrature,
};
use crate::error::{Error, Result};
use crate::functionals::truncate;
use crate::grid::{extract_trace, lq_norm, make_mask, resample_affine, DomainMask, GridFunction, GridSpec, Shape};
use crate::sln::{random_sl_map, sl_n_minimize_tv, SlnConfig};
use crate::variation::{compute_atoms, total_variation, Backend};

/// Names accepted by `--suite`.
pub const SUITES: [&str; 6] =
    ["sobolev_zhang", "comparisons", "superadditivity", "affine_invariance", "wirtinger_gap", "huang_li"];

const SOBOLEV_TOL: f64 = 0.03;
/// Upper end of the near-equality window for ellipsoid indicators.
const SOBOLEV_UPPER: f64 = 0.05;
const COMPARISON_TOL: f64 = 1e-3;
const EXACT_TOL: f64 = 1e-12;
const SUPERADDITIVITY_TOL: f64 = 1e-3;
const ATOM_INVARIANCE_TOL: f64 = 1e-3;
const RESAMPLE_INVARIANCE_TOL: f64 = 0.02;
const HUANG_LI_TOL: f64 = 1e-2;
/// Required gain of the SL(n) normalization on the anisotropic Gaussian.
const NORMALIZATION_GAIN: f64 = 0.9;
/// Upper limit on random fields used by the SL(n) search (it is the most
/// expensive check per field).
const HUANG_LI_MAX_FIELDS: usize = 20;
/// Quantiles of `|u|` used as truncation levels.
const TRUNCATION_QUANTILES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// `all` or one of [`SUITES`].
    pub suite: String,
    pub grid: usize,
    pub dirs: usize,
    pub seed: u64,
    /// Random fields per check.
    pub corpus_size: usize,
    /// Replaces every tolerance (a harness self-test knob).
    pub tolerance_override: Option<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { suite: "all".into(), grid: 256, dirs: 512, seed: 42, corpus_size: 100, tolerance_override: None }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.suite != "all" && !SUITES.contains(&self.suite.as_str()) {
            return Err(Error::Config(format!(
                "unknown suite '{}' (expected all, {})",
                self.suite,
                SUITES.join(", ")
            )));
        }
        if self.grid < 32 {
            return Err(Error::Config(format!("grid must be at least 32 cells per axis, got {}", self.grid)));
        }
        if self.dirs < min_directions(2) {
            return Err(Error::Config(format!("dirs must be at least {}, got {}", min_directions(2), self.dirs)));
        }
        if let Some(t) = self.tolerance_override {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("tolerance override must be >= 0, got {t}")));
            }
        }
        Ok(())
    }

    fn enabled(&self, suite: &str) -> bool {
        self.suite == "all" || self.suite == suite
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    /// The inequality or identity being exercised.
    pub anchor: String,
    pub corpus: String,
    pub count: usize,
    /// Largest normalized defect over the corpus (`-inf` when empty).
    pub worst_margin: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// The corpus was empty and the check passed vacuously.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub seed: u64,
    pub records: Vec<CheckRecord>,
    pub passed: bool,
    pub empty: bool,
    pub elapsed_seconds: f64,
}

impl VerifyReport {
    /// Process exit status: 0 when every check passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

fn record(
    config: &VerifyConfig,
    name: &str,
    anchor: &str,
    corpus: String,
    defects: &[f64],
    tolerance: f64,
) -> CheckRecord {
    let tolerance = config.tolerance_override.unwrap_or(tolerance);
    let worst = defects.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let empty = defects.is_empty();
    let passed = empty || (worst.is_finite() && worst <= tolerance) || worst == f64::NEG_INFINITY;
    CheckRecord {
        name: name.into(),
        anchor: anchor.into(),
        corpus,
        count: defects.len(),
        // JSON has no infinities; an empty corpus reports 0.
        worst_margin: if empty { 0.0 } else { worst },
        tolerance,
        passed,
        empty,
    }
}

/// Independent RNG stream for item `k` of check `check`.
fn item_rng(seed: u64, check: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((check << 32) | k as u64);
    rng
}

fn inside_box(mask: &DomainMask) -> ([f64; 2], [f64; 2]) {
    let spec = mask.spec();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for idx in (0..spec.len()).filter(|&i| mask.is_inside(i)) {
        let x = spec.cell_center(idx);
        for d in 0..2 {
            lo[d] = lo[d].min(x[d]);
            hi[d] = hi[d].max(x[d]);
        }
    }
    (lo, hi)
}

/// Sum of 1 to 4 Gaussian bumps placed in the domain. With `general` the
/// amplitudes take both signs and an affine term is added, so the trace does
/// not vanish.
fn random_bumps(mask: &DomainMask, rng: &mut ChaCha8Rng, general: bool) -> GridFunction {
    let (lo, hi) = inside_box(mask);
    let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let count = rng.random_range(1..=4);
    let bumps: Vec<([f64; 2], f64, f64)> = (0..count)
        .map(|_| {
            let c = [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
            let width = scale * rng.random_range(0.08..0.25);
            let mut amp = rng.random_range(0.3..1.0);
            if general && rng.random_bool(0.5) {
                amp = -amp;
            }
            (c, width, amp)
        })
        .collect();
    let (offset, slope) = if general {
        (rng.random_range(-0.5..0.5), [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
    } else {
        (0.0, [0.0, 0.0])
    };
    GridFunction::from_fn_masked(mask, |x| {
        let mut v = offset + slope[0] * (x[0] - lo[0]) / scale + slope[1] * (x[1] - lo[1]) / scale;
        for (c, w, a) in &bumps {
            let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
            v += a * (-r2 / (2.0 * w * w)).exp();
        }
        v
    })
}

/// Smooth bump `(1 - |B^{-1}x|²)³` on a random elliptical footprint
/// `B(unit disk)` with semi-axes in `[reach/2, reach]`.
struct EllipticBump {
    footprint: DMatrix<f64>,
    inverse: DMatrix<f64>,
    amplitude: f64,
}

impl EllipticBump {
    fn random(rng: &mut ChaCha8Rng, reach: f64) -> Self {
        let theta = rng.random_range(0.0..PI);
        let axes = DMatrix::from_diagonal(&DVector::from_vec(vec![
            reach * rng.random_range(0.5..1.0),
            reach * rng.random_range(0.5..1.0),
        ]));
        let (s, c) = theta.sin_cos();
        let rotation = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let footprint = rotation * axes;
        let inverse = footprint.clone().try_inverse().expect("nonzero semi-axes");
        Self { footprint, inverse, amplitude: rng.random_range(0.5..1.5) }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let m = &self.inverse;
        let p = m[(0, 0)] * x[0] + m[(0, 1)] * x[1];
        let q = m[(1, 0)] * x[0] + m[(1, 1)] * x[1];
        let r2 = p * p + q * q;
        if r2 < 1.0 {
            self.amplitude * (1.0 - r2).powi(3)
        } else {
            0.0
        }
    }

    /// Half-width along each axis of the support of `u∘T`, where `u∘T` is
    /// supported on `T⁻¹B(unit disk)`.
    fn half_widths(&self, t_inverse: &DMatrix<f64>) -> [f64; 2] {
        let f = t_inverse * &self.footprint;
        [f.row(0).norm(), f.row(1).norm()]
    }
}

/// Cells of padding kept around a support for the resampling stencil.
const SUPPORT_PADDING_CELLS: f64 = 4.0;

/// Shared grids and quadrature for one run.
struct Setup {
    quad: SphereQuadrature,
    square: DomainMask,
    disk: DomainMask,
    ellipse: DomainMask,
}

impl Setup {
    fn new(config: &VerifyConfig) -> Result<Self> {
        let mask_for = |shape: Shape| -> Result<DomainMask> {
            make_mask(&GridSpec::around(&shape, config.grid)?, &shape)
        };
        Ok(Self {
            quad: make_quadrature(2, config.dirs)?,
            square: mask_for(Shape::unit_square())?,
            disk: mask_for(Shape::unit_disk())?,
            ellipse: mask_for(Shape::Ellipsoid {
                center: vec![0.0, 0.0],
                matrix: vec![vec![2.0, 0.0], vec![0.0, 0.5]],
            })?,
        })
    }
}

fn indicator(mask: &DomainMask) -> GridFunction {
    GridFunction::from_fn_masked(mask, |_| 1.0)
}

/// `E(ū) / (n ω_n^{1/n} ‖ū‖_{n/(n-1)})` in 2D.
fn sobolev_ratio(u: &GridFunction, mask: &DomainMask, backend: Backend, quad: &SphereQuadrature) -> Result<f64> {
    let e = affine_energy_extended(u, mask, backend, quad)?.value;
    let sharp = constants(2)?.sharp_sobolev;
    Ok(e / (sharp * lq_norm(u, mask, 2.0)?))
}

fn check_sobolev_zhang(config: &VerifyConfig, setup: &Setup) -> Result<Vec<CheckRecord>> {
    let n = config.corpus_size;
    let mut defects = Vec::new();
    if n > 0 {
        // ellipse indicators: inside [1 - tol, 1 + upper], scaled onto one tolerance
        for mask in [&setup.disk, &setup.ellipse] {
            let ratio = sobolev_ratio(&indicator(mask), mask, Backend::CellGradient, &setup.quad)?;
            defects.push((1.0 - ratio).max((ratio - 1.0) * SOBOLEV_TOL / SOBOLEV_UPPER));
        }
    }
    let bumps: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let u = random_bumps(&setup.square, &mut item_rng(config.seed, 1, k), false);
            Ok(1.0 - sobolev_ratio(&u, &setup.square, Backend::CellGradient, &setup.quad)?)
        })
        .collect();
    for d in bumps {
        defects.push(d?);
    }
    Ok(vec![record(
        config,
        "sobolev_zhang",
        "n ω_n^{1/n} ‖u‖_{n/(n-1)} ≤ E(u), equality at ellipsoid indicators",
        format!("disk and det-1 ellipse indicators, {n} positive Gaussian bump fields on the unit square"),
        &defects,
        SOBOLEV_TOL,
    )])
}

fn check_comparisons(config: &VerifyConfig, setup: &Setup) -> Result<Vec<CheckRecord>> {
    let n = config.corpus_size;
    let quad = &setup.quad;
    let backend = Backend::CellGradient;

    // (C1) E(ū) ≤ |Du|(Ω) + ‖ũ‖_{L¹(∂Ω)}
    let c1: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mask = &setup.square;
            let u = if k == 0 { indicator(mask) } else { random_bumps(mask, &mut item_rng(config.seed, 2, k), true) };
            let e = affine_energy_extended(&u, mask, backend, quad)?.value;
            let tv = total_variation(&compute_atoms(&u, mask, backend, false)?);
            let trace = extract_trace(&u, mask)?.l1_norm();
            Ok((e - tv - trace) / (tv + trace))
        })
        .collect();

    // (C2) E(ū) = E_Ω(u) when the trace vanishes
    let c2: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mask = &setup.square;
            let mut u = random_bumps(mask, &mut item_rng(config.seed, 3, k), true);
            let layer = mask.boundary_layer();
            for (v, l) in u.values_mut().iter_mut().zip(layer) {
                if l {
                    *v = 0.0;
                }
            }
            let ext = affine_energy_extended(&u, mask, backend, quad)?.value;
            let int = affine_energy_interior(&u, mask, backend, quad)?.value;
            Ok((ext - int).abs() / ext.abs().max(f64::MIN_POSITIVE))
        })
        .collect();

    // (C3) E(ū) ≥ E_Ω(u) + E_∂Ω(ũ) on the disk, and E(ū) ≤ |Dū|(ℝⁿ)
    let disk: Vec<Result<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mask = &setup.disk;
            let u = random_bumps(mask, &mut item_rng(config.seed, 4, k), true);
            let ext_atoms = compute_atoms(&u, mask, backend, true)?;
            let ext = energy_of_atoms(&ext_atoms, quad)?.value;
            let int = affine_energy_interior(&u, mask, backend, quad)?.value;
            let bdy = crate::energy::affine_energy_boundary(&extract_trace(&u, mask)?, quad)?.value;
            let tv = total_variation(&ext_atoms);
            Ok(((int + bdy - ext) / ext, (ext - tv) / tv))
        })
        .collect();

    let collect = |v: Vec<Result<f64>>| v.into_iter().collect::<Result<Vec<f64>>>();
    let c1 = collect(c1)?;
    let c2 = collect(c2)?;
    let disk = disk.into_iter().collect::<Result<Vec<(f64, f64)>>>()?;
    let c3: Vec<f64> = disk.iter().map(|d| d.0).collect();
    let comp1: Vec<f64> = disk.iter().map(|d| d.1).collect();
    Ok(vec![
        record(
            config,
            "comparison_c1",
            "E(ū) ≤ |Du|(Ω) + ‖ũ‖_{L¹(∂Ω)}",
            format!("unit-square indicator and {} signed bump fields with affine trend", n.saturating_sub(1)),
            &c1,
            COMPARISON_TOL,
        ),
        record(
            config,
            "comparison_c2",
            "E(ū) = E_Ω(u) for zero-trace u",
            format!("{n} bump fields on the unit square with the boundary layer set to 0"),
            &c2,
            EXACT_TOL,
        ),
        record(
            config,
            "comparison_c3",
            "E(ū) ≥ E_Ω(u) + E_∂Ω(ũ) on a non-flat boundary",
            format!("{n} signed bump fields on the unit disk"),
            &c3,
            COMPARISON_TOL,
        ),
        record(
            config,
            "comparison_comp1",
            "E(u) ≤ |Du|(ℝⁿ)",
            format!("zero extensions of {n} signed bump fields on the unit disk"),
            &comp1,
            COMPARISON_TOL,
        ),
    ])
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

fn check_superadditivity(config: &VerifyConfig, setup: &Setup) -> Result<Vec<CheckRecord>> {
    let n = config.corpus_size;
    let mask = &setup.square;
    let quad = &setup.quad;
    // Face atoms split exactly under truncation: T_h and R_h are
    // nondecreasing, so every jump of u is the sum of same-sign jumps.
    let backend = Backend::FaceAtoms;
    let energy = |u: &GridFunction| -> Result<f64> { Ok(affine_energy_extended(u, mask, backend, quad)?.value) };
    let per_field: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let u = if k == 0 {
                GridFunction::from_fn_masked(mask, |x| if x[0] < 0.5 { 1.0 } else { 3.0 })
            } else {
                random_bumps(mask, &mut item_rng(config.seed, 5, k), true)
            };
            let e = energy(&u)?;
            let mut mags: Vec<f64> =
                u.values().iter().zip(mask.inside()).filter(|(_, &i)| i).map(|(v, _)| v.abs()).collect();
            mags.sort_by(f64::total_cmp);
            let levels: Vec<f64> = if k == 0 {
                vec![2.0, 0.5, 1.0, 2.5, 3.0]
            } else {
                TRUNCATION_QUANTILES.iter().map(|&p| quantile(&mags, p).max(1e-12)).collect()
            };
            levels
                .into_iter()
                .map(|h| {
                    let pair = truncate(&u, h)?;
                    Ok((energy(&pair.truncated)? + energy(&pair.remainder)? - e) / e)
                })
                .collect()
        })
        .collect();
    let mut defects = Vec::new();
    for d in per_field {
        defects.extend(d?);
    }
    Ok(vec![record(
        config,
        "superadditivity",
        "E(u) ≥ E(T_h u) + E(R_h u), T_h = clamp(·, -h, h), R_h = id - T_h",
        format!("{n} fields on the unit square (two-level 1/3 field and signed bumps) × 5 truncation levels"),
        &defects,
        SUPERADDITIVITY_TOL,
    )])
}

fn check_affine_invariance(config: &VerifyConfig, setup: &Setup) -> Result<Vec<CheckRecord>> {
    let maps = config.corpus_size.div_ceil(2);
    let quad = &setup.quad;
    let backend = Backend::CellGradient;
    let rows: Vec<Result<(f64, f64)>> = (0..maps)
        .into_par_iter()
        .map(|k| {
            let mut rng = item_rng(config.seed, 6, k);
            let bump = EllipticBump::random(&mut rng, 1.0);
            let t = random_sl_map(2, rng.random_range(0.0..1.0), &mut rng);
            let t_inverse = t.matrix().clone().try_inverse().expect("det 1 matrix is invertible");
            // the grid just covers both supports, so the narrowest one stays resolved
            let reach = bump
                .half_widths(&DMatrix::identity(2, 2))
                .into_iter()
                .chain(bump.half_widths(&t_inverse))
                .fold(0.0, f64::max);
            let extent = 2.0 * reach / (1.0 - 2.0 * SUPPORT_PADDING_CELLS / config.grid as f64);
            let mask = DomainMask::full(&GridSpec::cube(2, config.grid, &[0.0, 0.0], extent)?);
            let u = GridFunction::from_fn(mask.spec(), |x| bump.value(x));
            let atoms = compute_atoms(&u, &mask, backend, true)?;
            let e = energy_of_atoms(&atoms, quad)?.value;
            let e_atoms = energy_of_atoms(&atoms.transformed(t.matrix()), quad)?.value;
            let moved = resample_affine(&u, &t)?;
            let e_resampled = affine_energy_extended(&moved, &mask, backend, quad)?.value;
            Ok(((e_atoms - e).abs() / e, (e_resampled - e).abs() / e))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let atom: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let resample: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let anchor = "E(u∘T) = E(u) for T ∈ SL(n)";
    Ok(vec![
        record(
            config,
            "affine_invariance_atoms",
            anchor,
            format!("{maps} mollified compact bumps, T = exp(A), A traceless, ‖A‖_F ≤ 1, atoms mapped by Tᵀ"),
            &atom,
            ATOM_INVARIANCE_TOL,
        ),
        record(
            config,
            "affine_invariance_resample",
            anchor,
            format!("{maps} mollified compact bumps, T = exp(A), A traceless, ‖A‖_F ≤ 1, field resampled"),
            &resample,
            RESAMPLE_INVARIANCE_TOL,
        ),
    ])
}

/// `∫₀¹ |sin(πx) - 2/π| dx` in closed form: with `c = 2/π` and
/// `a = asin(c)/π`, the positive and negative parts are equal and the
/// positive part is `2√(1-c²)/π - c(1-2a)`.
pub fn sine_deviation_l1() -> f64 {
    let c = 2.0 / PI;
    let a = c.asin() / PI;
    2.0 * (2.0 * (1.0 - c * c).sqrt() / PI - c * (1.0 - 2.0 * a))
}

fn check_wirtinger_gap(config: &VerifyConfig, setup: &Setup) -> Result<Vec<CheckRecord>> {
    if config.corpus_size == 0 {
        return Ok(vec![wirtinger_record(config, &[])]);
    }
    let mask = &setup.square;
    let quad = &setup.quad;
    let oracle = sine_deviation_l1();
    let mut defects = Vec::new();
    for axis in 0..2 {
        let u = GridFunction::from_fn_masked(mask, |x| (PI * x[axis]).sin());
        let e = affine_energy_interior(&u, mask, Backend::CellGradient, quad)?;
        let tv = e.total_variation.unwrap_or(0.0);
        let mean = crate::functionals::m_r_solve(&u, mask, 1.0)?;
        let centered = GridFunction::from_fn_masked(mask, |x| (PI * x[axis]).sin() - mean);
        let gap = lq_norm(&centered, mask, 1.0)?;
        let not_flagged = if e.degenerate { 0.0 } else { 1.0 };
        defects.push(
            [
                e.value / tv.max(f64::MIN_POSITIVE),
                e.eigen_ratio().unwrap_or(1.0) - 1e-12,
                (gap / oracle - 1.0).abs() - 0.01,
                0.25 - gap,
                not_flagged,
            ]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max),
        );
    }
    // negative controls
    let ramp = GridFunction::from_fn_masked(mask, |x| x[0] + x[1]);
    let faces = affine_energy_interior(&ramp, mask, Backend::FaceAtoms, quad)?;
    defects.push(if faces.degenerate { 1.0 } else { 1e-6 - faces.eigen_ratio().unwrap_or(0.0) });
    let grads = affine_energy_interior(&ramp, mask, Backend::CellGradient, quad)?;
    defects.push(if grads.degenerate { grads.value } else { 1.0 });
    let bowl = GridFunction::from_fn_masked(mask, |x| x[0] * x[0] + x[1] * x[1]);
    let bowl_e = affine_energy_interior(&bowl, mask, Backend::CellGradient, quad)?;
    defects.push(if bowl_e.degenerate { 1.0 } else { 1e-6 - bowl_e.eigen_ratio().unwrap_or(0.0) });
    Ok(vec![wirtinger_record(config, &defects)])
}

fn wirtinger_record(config: &VerifyConfig, defects: &[f64]) -> CheckRecord {
    record(
        config,
        "wirtinger_gap",
        "no A > 0 with A‖u - u_Ω‖_q ≤ E_Ω(u): degenerate u has E_Ω(u) = 0",
        "sin(πx), sin(πy) on the unit square; controls x+y (face atoms, cell gradient) and x²+y²".into(),
        defects,
        0.0,
    )
}

fn check_huang_li(config: &VerifyConfig, setup: &Setup) -> Result<Vec<CheckRecord>> {
    let n = config.corpus_size.min(HUANG_LI_MAX_FIELDS);
    let quad = &setup.quad;
    let d0 = constants(2)?.d0;
    let sln = SlnConfig { seed: config.seed, ..SlnConfig::default() };
    let backend = Backend::CellGradient;
    let huang_li = |u: &GridFunction, mask: &DomainMask| -> Result<(f64, f64, f64)> {
        let atoms = compute_atoms(u, mask, backend, true)?;
        let e = energy_of_atoms(&atoms, quad)?.value;
        let (_, res) = sl_n_minimize_tv(&atoms, &sln)?;
        Ok(((d0 * res.objective - e) / e, res.objective, res.objective_identity))
    };
    let mut defects = Vec::new();
    let mut gains = Vec::new();
    if config.corpus_size > 0 {
        defects.push(huang_li(&indicator(&setup.disk), &setup.disk)?.0);
        // exp(-(4x² + y²/4)) on a grid wide enough for its tails
        let wide = DomainMask::full(&GridSpec::cube(2, config.grid, &[0.0, 0.0], 20.0)?);
        let gauss = GridFunction::from_fn(wide.spec(), |x| (-(4.0 * x[0] * x[0] + 0.25 * x[1] * x[1])).exp());
        let (d, best, identity) = huang_li(&gauss, &wide)?;
        defects.push(d);
        gains.push(best / identity - NORMALIZATION_GAIN);
    }
    let fields: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let u = random_bumps(&setup.square, &mut item_rng(config.seed, 7, k), true);
            Ok(huang_li(&u, &setup.square)?.0)
        })
        .collect();
    for d in fields {
        defects.push(d?);
    }
    Ok(vec![
        record(
            config,
            "huang_li",
            "d_0 min_{T ∈ SL(n)} |D(u∘T)|(ℝⁿ) ≤ E(u)",
            format!("disk indicator, anisotropic Gaussian, {n} signed bump fields on the unit square"),
            &defects,
            HUANG_LI_TOL,
        ),
        record(
            config,
            "huang_li_normalization",
            "min_T |D(u∘T)| < 0.9 |Du| for exp(-(4x² + y²/4))",
            "anisotropic Gaussian on [-10, 10]²".into(),
            &gains,
            0.0,
        ),
    ])
}

/// Run every enabled check.
pub fn run_suite(config: &VerifyConfig) -> Result<VerifyReport> {
    config.validate()?;
    let start = Instant::now();
    let setup = Setup::new(config)?;
    let mut records = Vec::new();
    type Check = fn(&VerifyConfig, &Setup) -> Result<Vec<CheckRecord>>;
    let checks: [(&str, Check); 6] = [
        ("sobolev_zhang", check_sobolev_zhang),
        ("comparisons", check_comparisons),
        ("superadditivity", check_superadditivity),
        ("affine_invariance", check_affine_invariance),
        ("wirtinger_gap", check_wirtinger_gap),
        ("huang_li", check_huang_li),
    ];
    for (name, check) in checks {
        if config.enabled(name) {
            records.extend(check(config, &setup)?);
        }
    }
    let passed = records.iter().all(|r| r.passed);
    let empty = records.iter().all(|r| r.empty);
    Ok(VerifyReport {
        config: config.clone(),
        seed: config.seed,
        records,
        passed,
        empty,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}
