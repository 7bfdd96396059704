//! Least energy levels by smoothed projected descent.
//!
//! The levels are `inf Φ_A` over the constraint sets of [`functionals`]:
//!
//! | level | set | trace |
//! |-------|-----|-------|
//! | `cA`  | X   | free  |
//! | `dA`  | Y   | free  |
//! | `cA0` | X   | zero  |
//! | `dA0` | Y   | zero  |
//!
//! Inside `Ψ_ξ` (on each atom density `g·ξ`) and in the weight terms, `|t|`
//! is replaced by `√(t² + δ²) - δ`, which is smooth, never exceeds `|t|` and
//! vanishes at `t = 0`, so flat regions add nothing to `Ψ`.
//! Each start descends with Barzilai–Borwein steps, monotone backtracking and
//! projection onto the constraint set, halving the smoothing whenever the
//! smoothed objective stalls. The reported level is always the exact,
//! unsmoothed `Φ_A` of a feasible field, so it never exceeds the value of any
//! initial guess.
//!
//! [`functionals`]: crate::functionals

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{constants, EnergyConstants, SphereQuadrature, DEGENERACY_EPS};
use crate::error::{Error, Result};
use crate::functionals::{
    constraint_residual, free_cells, phi_affine, project_constraint, ConstraintKind, ConstraintSpec,
    Weights,
};
use crate::grid::{mollify, DomainMask, GridFunction};
use crate::variation::{boundary_stencil, interior_stencil, AtomStencil, Backend};

pub use crate::sln::{sl_n_minimize_tv, AffineMap, SlnConfig, SlnResult};

/// Atoms per parallel work item; fixed so reductions do not depend on the
/// thread count.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "cA")]
    CA,
    #[serde(rename = "dA")]
    DA,
    #[serde(rename = "cA0")]
    CA0,
    #[serde(rename = "dA0")]
    DA0,
}

impl Level {
    pub fn constraint(self, q: f64, r: f64) -> ConstraintSpec {
        match self {
            Level::CA => ConstraintSpec::x(q),
            Level::DA => ConstraintSpec::y(q, r),
            Level::CA0 => ConstraintSpec::x(q).with_zero_trace(true),
            Level::DA0 => ConstraintSpec::y(q, r).with_zero_trace(true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::CA => "cA",
            Level::DA => "dA",
            Level::CA0 => "cA0",
            Level::DA0 => "dA0",
        }
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cA" => Ok(Level::CA),
            "dA" => Ok(Level::DA),
            "cA0" => Ok(Level::CA0),
            "dA0" => Ok(Level::DA0),
            _ => Err(Error::InvalidArgument(format!("unknown level '{s}' (expected cA, dA, cA0 or dA0)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimizeConfig {
    pub backend: Backend,
    /// Total descent iterations per start.
    pub max_iters: usize,
    /// Iterations after which the smoothing is reduced even without a stall.
    pub max_iters_per_delta: usize,
    /// First trial step; `None` picks `0.1 max|u| / max|∇|`.
    pub initial_step: Option<f64>,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
    /// Initial smoothing as a fraction of the data range.
    pub delta_factor: f64,
    pub delta_min: f64,
    /// A stall is a relative decrease below `stall_tolerance` over
    /// `stall_window` iterations.
    pub stall_window: usize,
    pub stall_tolerance: f64,
    /// Convergence at the smallest smoothing: relative decrease below
    /// `level_tolerance` over `level_window` iterations.
    pub level_window: usize,
    pub level_tolerance: f64,
    pub starts: usize,
    pub seed: u64,
    /// Run starts one after another instead of concurrently.
    pub deterministic: bool,
    /// Additional initial guesses (for example the extremal of a smaller
    /// constraint set).
    #[serde(skip)]
    pub extra_starts: Vec<GridFunction>,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self {
            backend: Backend::CellGradient,
            max_iters: 1000,
            max_iters_per_delta: 50,
            initial_step: None,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 40,
            delta_factor: 0.1,
            delta_min: 1e-6,
            stall_window: 50,
            stall_tolerance: 1e-6,
            level_window: 100,
            level_tolerance: 1e-6,
            starts: 4,
            seed: 42,
            deterministic: false,
            extra_starts: Vec::new(),
        }
    }
}

impl MinimizeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("shrink", self.shrink),
            ("sufficient_decrease", self.sufficient_decrease),
            ("delta_factor", self.delta_factor),
            ("delta_min", self.delta_min),
            ("stall_tolerance", self.stall_tolerance),
            ("level_tolerance", self.level_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.shrink >= 1.0 {
            return Err(Error::InvalidArgument(format!("shrink must lie in (0, 1), got {}", self.shrink)));
        }
        if let Some(s) = self.initial_step {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument(format!("initial step must be > 0, got {s}")));
            }
        }
        if self.starts == 0 && self.extra_starts.is_empty() {
            return Err(Error::InvalidArgument("at least one start is required".into()));
        }
        if self.stall_window == 0 || self.level_window == 0 || self.max_iters_per_delta == 0 {
            return Err(Error::InvalidArgument("iteration windows must be positive".into()));
        }
        Ok(())
    }
}

/// Position of a level relative to `n ω_n^{1/n}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalReport {
    pub level: f64,
    pub threshold: f64,
    /// `level - threshold`.
    pub margin: f64,
    /// `0 < level < threshold`.
    pub critical_flag: bool,
}

pub fn check_critical_threshold(level: f64, constants: &EnergyConstants) -> CriticalReport {
    let threshold = constants.sharp_sobolev;
    CriticalReport {
        level,
        threshold,
        margin: level - threshold,
        critical_flag: level > 0.0 && level < threshold,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StartRecord {
    pub label: String,
    /// `Φ_A` of the projected initial guess.
    pub initial_level: f64,
    /// Best `Φ_A` reached by this start.
    pub final_level: f64,
    pub iterations: usize,
    /// Smoothed objective after every accepted step.
    pub history: Vec<f64>,
    /// `(history index, new smoothing)` at each reduction. The history entry
    /// at that index is the first one under the new smoothing and may sit
    /// above its predecessor.
    pub delta_changes: Vec<(usize, f64)>,
    /// Exact `Φ_A` at the end of each smoothing stage.
    pub checkpoints: Vec<f64>,
    pub converged: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimizeResult {
    pub level: f64,
    #[serde(skip)]
    pub extremal: GridFunction,
    pub constraint: ConstraintSpec,
    pub norm_residual: f64,
    pub orthogonality_residual: f64,
    pub best_start: usize,
    pub starts: Vec<StartRecord>,
    pub critical: CriticalReport,
    /// Set for `q = n/(n-1)`, where concentration can defeat attainment.
    pub advisory: bool,
    /// Twice the `|u|`-weighted RMS radius of the extremal.
    pub support_width: f64,
    pub backend: Backend,
    pub quadrature_size: usize,
    pub grid_shape: Vec<usize>,
    pub spacing: f64,
}

/// Smoothed `Φ_A` with cached stencils.
pub struct SmoothedProblem<'a> {
    mask: &'a DomainMask,
    weights: &'a Weights,
    quadrature: &'a SphereQuadrature,
    constants: EnergyConstants,
    stencils: [AtomStencil; 2],
    free: Vec<bool>,
}

/// Result of evaluating the smoothed objective.
#[derive(Debug, Clone)]
pub struct SmoothedValue {
    pub value: f64,
    pub energy: f64,
    pub a_term: f64,
    pub b_term: f64,
    /// The unsmoothed `Ψ` vanishes in some direction; the energy part and
    /// its gradient are then reported as zero.
    pub degenerate: bool,
}

struct EvalState {
    value: SmoothedValue,
    /// Nonzero atoms as `(stencil, index, vector, smoothing)`.
    atoms: Vec<(usize, usize, [f64; 3], f64)>,
    /// `∂E/∂Ψ_j`.
    outer: Vec<f64>,
    delta: f64,
}

impl<'a> SmoothedProblem<'a> {
    pub fn new(
        mask: &'a DomainMask,
        weights: &'a Weights,
        quadrature: &'a SphereQuadrature,
        backend: Backend,
        zero_trace: bool,
    ) -> Result<Self> {
        let dim = mask.spec().dim();
        if quadrature.dim != dim {
            return Err(Error::InvalidArgument(format!(
                "{}-dimensional quadrature on a {dim}-dimensional grid",
                quadrature.dim
            )));
        }
        if weights.a().len() != mask.spec().len() || weights.b().len() != mask.faces().len() {
            return Err(Error::GridMismatch("weights were built for a different mask".into()));
        }
        Ok(Self {
            mask,
            weights,
            quadrature,
            constants: constants(dim)?,
            stencils: [interior_stencil(mask, backend), boundary_stencil(mask)],
            free: free_cells(mask, zero_trace),
        })
    }

    fn state(&self, values: &[f64], delta: f64) -> EvalState {
        let m = self.quadrature.len();
        let dirs = &self.quadrature.directions;
        let mut atoms = Vec::new();
        for (s, st) in self.stencils.iter().enumerate() {
            for i in 0..st.len() {
                let g = st.density(i, values);
                let mu = st.measure[i];
                let v = [mu * g[0], mu * g[1], mu * g[2]];
                if v != [0.0; 3] {
                    atoms.push((s, i, v, delta * mu));
                }
            }
        }
        let partials: Vec<(Vec<f64>, Vec<f64>)> = atoms
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut smooth = vec![0.0; m];
                let mut raw = vec![0.0; m];
                for (_, _, v, eps) in chunk {
                    let eps2 = eps * eps;
                    for (j, d) in dirs.iter().enumerate() {
                        let t = v[0] * d[0] + v[1] * d[1] + v[2] * d[2];
                        smooth[j] += (t * t + eps2).sqrt() - eps;
                        raw[j] += t.abs();
                    }
                }
                (smooth, raw)
            })
            .collect();
        let mut psi = vec![0.0; m];
        let mut raw = vec![0.0; m];
        for (s, r) in &partials {
            for j in 0..m {
                psi[j] += s[j];
                raw[j] += r[j];
            }
        }

        let raw_min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let raw_max = raw.iter().copied().fold(0.0, f64::max);
        let degenerate = raw_max == 0.0 || raw_min <= DEGENERACY_EPS * raw_max;
        let n = self.constants.dim as i32;
        let (energy, outer) = if degenerate {
            (0.0, vec![0.0; m])
        } else {
            // Powers are taken of ρ_j = Ψ_min/Ψ_j ∈ (0, 1].
            let psi_min = psi.iter().copied().fold(f64::INFINITY, f64::min);
            let w = &self.quadrature.weights;
            let rho: Vec<f64> = psi.iter().map(|p| psi_min / p).collect();
            let s: f64 = rho.iter().zip(w).map(|(r, w)| w * r.powi(n)).sum();
            let alpha = self.constants.alpha;
            let energy = alpha * psi_min * s.powf(-1.0 / n as f64);
            let scale = alpha * s.powf(-1.0 / n as f64 - 1.0);
            let outer = rho.iter().zip(w).map(|(r, w)| scale * w * r.powi(n + 1)).collect();
            (energy, outer)
        };

        let vol = self.mask.spec().cell_volume();
        let d2 = delta * delta;
        let a = self.weights.a();
        let a_term: f64 = (0..values.len())
            .filter(|&c| self.mask.is_inside(c) && a[c] != 0.0)
            .map(|c| a[c] * ((values[c] * values[c] + d2).sqrt() - delta))
            .sum::<f64>()
            * vol;
        let b = self.weights.b();
        let b_term: f64 = self
            .mask
            .faces()
            .iter()
            .enumerate()
            .filter(|(k, _)| b[*k] != 0.0)
            .map(|(k, f)| {
                let u = values[f.cell];
                b[k] * ((u * u + d2).sqrt() - delta) * self.mask.face_measure(k).1
            })
            .sum();
        EvalState {
            value: SmoothedValue { value: energy + a_term + b_term, energy, a_term, b_term, degenerate },
            atoms,
            outer,
            delta,
        }
    }

    fn gradient_of(&self, values: &[f64], state: &EvalState) -> Vec<f64> {
        let mut grad = vec![0.0; values.len()];
        if !state.value.degenerate {
            let dirs = &self.quadrature.directions;
            let outer = &state.outer;
            // Covector of E with respect to each atom vector.
            let covectors: Vec<[f64; 3]> = state
                .atoms
                .par_iter()
                .with_min_len(CHUNK)
                .map(|(s, i, v, eps)| {
                    let eps2 = eps * eps;
                    let mut w = [0.0; 3];
                    for (j, d) in dirs.iter().enumerate() {
                        let t = v[0] * d[0] + v[1] * d[1] + v[2] * d[2];
                        let c = outer[j] * t / (t * t + eps2).sqrt();
                        w[0] += c * d[0];
                        w[1] += c * d[1];
                        w[2] += c * d[2];
                    }
                    let mu = self.stencils[*s].measure[*i];
                    [mu * w[0], mu * w[1], mu * w[2]]
                })
                .collect();
            for (s, st) in self.stencils.iter().enumerate() {
                let mut per_atom = vec![[0.0; 3]; st.len()];
                for ((sid, i, _, _), w) in state.atoms.iter().zip(&covectors) {
                    if *sid == s {
                        per_atom[*i] = *w;
                    }
                }
                st.adjoint_add(&per_atom, &mut grad);
            }
        }
        let vol = self.mask.spec().cell_volume();
        let d2 = state.delta * state.delta;
        let a = self.weights.a();
        for c in 0..values.len() {
            if self.mask.is_inside(c) && a[c] != 0.0 {
                grad[c] += a[c] * vol * values[c] / (values[c] * values[c] + d2).sqrt();
            }
        }
        let b = self.weights.b();
        for (k, f) in self.mask.faces().iter().enumerate() {
            if b[k] != 0.0 {
                let u = values[f.cell];
                grad[f.cell] += b[k] * self.mask.face_measure(k).1 * u / (u * u + d2).sqrt();
            }
        }
        for (g, &free) in grad.iter_mut().zip(&self.free) {
            if !free {
                *g = 0.0;
            }
        }
        grad
    }

    /// Smoothed objective only.
    pub fn value(&self, values: &[f64], delta: f64) -> SmoothedValue {
        self.state(values, delta).value
    }

    /// Smoothed objective and its gradient with respect to every cell value
    /// (zero on cells the constraint pins or that lie outside the mask).
    pub fn value_and_gradient(&self, values: &[f64], delta: f64) -> (SmoothedValue, Vec<f64>) {
        let state = self.state(values, delta);
        let grad = self.gradient_of(values, &state);
        (state.value, grad)
    }
}

/// Smoothed `Φ_A(u)` and its gradient field.
pub fn smoothed_objective_and_gradient(
    u: &GridFunction,
    mask: &DomainMask,
    weights: &Weights,
    spec: &ConstraintSpec,
    delta: f64,
    quadrature: &SphereQuadrature,
    backend: Backend,
) -> Result<(SmoothedValue, GridFunction)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing must be > 0, got {delta}")));
    }
    if u.spec() != mask.spec() {
        return Err(Error::GridMismatch("field does not live on the mask grid".into()));
    }
    let problem = SmoothedProblem::new(mask, weights, quadrature, backend, spec.zero_trace)?;
    let (v, g) = problem.value_and_gradient(u.values(), delta);
    Ok((v, GridFunction::new(u.spec().clone(), g)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientEntry {
    pub cell: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    pub entries: Vec<GradientEntry>,
    pub gradient_max: f64,
    /// `max(1e-5, 1e-4 ‖g‖_∞)`.
    pub tolerance: f64,
    pub worst_error: f64,
    pub passed: bool,
}

/// Compare the analytic gradient with central differences of step `step`
/// at the given cells.
pub fn gradient_check(
    problem: &SmoothedProblem<'_>,
    u: &GridFunction,
    delta: f64,
    cells: &[usize],
    step: f64,
) -> Result<GradientCheck> {
    if u.spec() != problem.mask.spec() {
        return Err(Error::GridMismatch("field does not live on the mask grid".into()));
    }
    let values = u.values();
    let (_, grad) = problem.value_and_gradient(values, delta);
    let gradient_max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let tolerance = (1e-4 * gradient_max).max(1e-5);
    let mut work = values.to_vec();
    let mut entries = Vec::with_capacity(cells.len());
    let mut worst_error = 0.0f64;
    for &c in cells {
        if c >= values.len() {
            return Err(Error::InvalidArgument(format!("cell {c} is outside the grid")));
        }
        let numeric = if problem.free[c] {
            work[c] = values[c] + step;
            let up = problem.value(&work, delta).value;
            work[c] = values[c] - step;
            let down = problem.value(&work, delta).value;
            work[c] = values[c];
            (up - down) / (2.0 * step)
        } else {
            0.0
        };
        worst_error = worst_error.max((numeric - grad[c]).abs());
        entries.push(GradientEntry { cell: c, analytic: grad[c], numeric });
    }
    Ok(GradientCheck { entries, gradient_max, tolerance, worst_error, passed: worst_error <= tolerance })
}

/// Centroid and inscribed radius of the inside cells.
fn inscribed_ball(mask: &DomainMask) -> ([f64; 3], f64) {
    let spec = mask.spec();
    let dim = spec.dim();
    let mut c = [0.0; 3];
    let mut count = 0.0;
    for idx in (0..spec.len()).filter(|&i| mask.is_inside(i)) {
        let x = spec.cell_center(idx);
        for d in 0..dim {
            c[d] += x[d];
        }
        count += 1.0;
    }
    for v in c.iter_mut().take(dim) {
        *v /= count;
    }
    let h = spec.spacing();
    let r = mask
        .faces()
        .iter()
        .map(|f| {
            let mut x = spec.cell_center(f.cell);
            x[f.axis] += 0.5 * h * f.sign as f64;
            (0..dim).map(|d| (x[d] - c[d]).powi(2)).sum::<f64>().sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    (c, r)
}

fn random_rotation(dim: usize, rng: &mut impl Rng) -> nalgebra::DMatrix<f64> {
    let g = nalgebra::DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

fn random_unit(dim: usize, rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let mut v = [0.0; 3];
        for x in v.iter_mut().take(dim) {
            *x = rng.sample(StandardNormal);
        }
        let n = crate::variation::norm3(&v);
        if n > 1e-8 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn initial_guess(label: &str, mask: &DomainMask, rng: &mut impl Rng) -> Result<GridFunction> {
    let spec = mask.spec();
    let dim = spec.dim();
    let h = spec.spacing();
    let (c, r) = inscribed_ball(mask);
    let sigma = 1.5 * h;
    let radius = (r - 4.0 * sigma).max(0.5 * r);
    let dist2 = |x: &[f64], p: &[f64; 3]| (0..dim).map(|d| (x[d] - p[d]).powi(2)).sum::<f64>();
    let raw = match label {
        "constant" => return Ok(GridFunction::from_fn_masked(mask, |_| 1.0)),
        "ball" => GridFunction::from_fn_masked(mask, |x| (dist2(x, &c) <= radius * radius) as u8 as f64),
        "ellipsoid" => {
            let rot = random_rotation(dim, rng);
            let axes: Vec<f64> =
                (0..dim).map(|d| if d == 0 { radius } else { radius * rng.random_range(0.4..1.0) }).collect();
            GridFunction::from_fn_masked(mask, |x| {
                let s: f64 = (0..dim)
                    .map(|k| {
                        let y: f64 = (0..dim).map(|d| rot[(d, k)] * (x[d] - c[d])).sum();
                        (y / axes[k]).powi(2)
                    })
                    .sum();
                (s <= 1.0) as u8 as f64
            })
        }
        "random-field" => {
            let values = (0..spec.len())
                .map(|i| if mask.is_inside(i) { rng.sample::<f64, _>(StandardNormal) } else { 0.0 })
                .collect();
            let noise = GridFunction::new(spec.clone(), values)?;
            let smooth = mollify(&noise, 3.0 * h)?;
            return Ok(restrict(&smooth, mask));
        }
        "two-bump" => {
            let e = random_unit(dim, rng);
            let off = 0.45 * radius;
            let p = [c[0] + off * e[0], c[1] + off * e[1], c[2] + off * e[2]];
            let m = [c[0] - off * e[0], c[1] - off * e[1], c[2] - off * e[2]];
            let rb = 0.4 * radius;
            GridFunction::from_fn_masked(mask, |x| {
                if dist2(x, &p) <= rb * rb {
                    1.0
                } else if dist2(x, &m) <= rb * rb {
                    -1.0
                } else {
                    0.0
                }
            })
        }
        _ => return Err(Error::InvalidArgument(format!("unknown initial guess '{label}'"))),
    };
    Ok(restrict(&mollify(&raw, sigma)?, mask))
}

fn restrict(u: &GridFunction, mask: &DomainMask) -> GridFunction {
    let values = u.values().iter().zip(mask.inside()).map(|(&v, &i)| if i { v } else { 0.0 }).collect();
    GridFunction::new(u.spec().clone(), values).expect("same grid")
}

fn start_labels(kind: ConstraintKind, count: usize) -> Vec<&'static str> {
    let head: &[&str] = match kind {
        ConstraintKind::X => &["constant", "ball", "ellipsoid", "random-field"],
        ConstraintKind::Y => &["two-bump", "ball", "ellipsoid", "random-field"],
    };
    (0..count)
        .map(|k| if k < head.len() { head[k] } else if k % 2 == 0 { "ellipsoid" } else { "random-field" })
        .collect()
}

fn support_width(u: &GridFunction, mask: &DomainMask) -> f64 {
    let spec = mask.spec();
    let dim = spec.dim();
    let mut mass = 0.0;
    let mut first = [0.0; 3];
    let mut second = 0.0;
    for idx in (0..spec.len()).filter(|&i| mask.is_inside(i)) {
        let w = u.values()[idx].abs();
        let x = spec.cell_center(idx);
        mass += w;
        for d in 0..dim {
            first[d] += w * x[d];
            second += w * x[d] * x[d];
        }
    }
    if mass == 0.0 {
        return 0.0;
    }
    let mean2: f64 = (0..dim).map(|d| (first[d] / mass).powi(2)).sum();
    2.0 * (second / mass - mean2).max(0.0).sqrt()
}

struct StartOutcome {
    record: StartRecord,
    best: Option<(f64, GridFunction)>,
}

struct Run<'a> {
    mask: &'a DomainMask,
    weights: &'a Weights,
    quadrature: &'a SphereQuadrature,
    spec: ConstraintSpec,
    config: &'a MinimizeConfig,
    problem: SmoothedProblem<'a>,
}

impl Run<'_> {
    fn project(&self, values: Vec<f64>) -> Option<GridFunction> {
        let u = GridFunction::new(self.mask.spec().clone(), values).ok()?;
        project_constraint(&u, self.mask, &self.spec).ok().map(|p| p.field)
    }

    fn exact(&self, u: &GridFunction) -> f64 {
        phi_affine(u, self.mask, self.weights, self.config.backend, self.quadrature).unwrap_or(f64::INFINITY)
    }

    fn descend(&self, label: String, guess: &GridFunction) -> StartOutcome {
        let cfg = self.config;
        let mut record = StartRecord {
            label,
            initial_level: f64::INFINITY,
            final_level: f64::INFINITY,
            iterations: 0,
            history: Vec::new(),
            delta_changes: Vec::new(),
            checkpoints: Vec::new(),
            converged: false,
            degenerate: false,
        };
        let Some(mut u) = self.project(guess.values().to_vec()) else {
            record.degenerate = true;
            return StartOutcome { record, best: None };
        };
        let initial = self.exact(&u);
        record.initial_level = initial;
        record.checkpoints.push(initial);
        let mut best = (initial, u.clone());

        let (lo, hi) = u
            .values()
            .iter()
            .zip(self.mask.inside())
            .filter(|(_, &i)| i)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
        let range = if hi > lo { hi - lo } else { hi.abs().max(lo.abs()) };
        let mut delta = (cfg.delta_factor * range).max(cfg.delta_min);

        let (mut cur, mut grad) = self.problem.value_and_gradient(u.values(), delta);
        if cur.degenerate {
            record.degenerate = true;
        }
        record.history.push(cur.value);
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let umax = u.max_abs();
        let mut tau = cfg.initial_step.unwrap_or(if gmax > 0.0 { 0.1 * umax / gmax } else { 1.0 });
        let mut stage_start = 0usize;

        for it in 1..=cfg.max_iters {
            record.iterations = it;
            let mut accepted = None;
            let mut trial = tau;
            for _ in 0..=cfg.max_backtracks {
                let step: Vec<f64> = u.values().iter().zip(&grad).map(|(v, g)| v - trial * g).collect();
                if let Some(cand) = self.project(step) {
                    let moved: f64 =
                        cand.values().iter().zip(u.values()).map(|(a, b)| (a - b) * (a - b)).sum();
                    let state = self.problem.state(cand.values(), delta);
                    if moved > 0.0 && state.value.value <= cur.value - cfg.sufficient_decrease * moved / trial {
                        accepted = Some((cand, state));
                        break;
                    }
                }
                trial *= cfg.shrink;
            }

            let mut stalled = false;
            match accepted {
                Some((cand, state)) => {
                    let new_grad = self.problem.gradient_of(cand.values(), &state);
                    let mut ss = 0.0;
                    let mut sy = 0.0;
                    for ((a, b), (g1, g0)) in cand.values().iter().zip(u.values()).zip(new_grad.iter().zip(&grad)) {
                        let s = a - b;
                        ss += s * s;
                        sy += s * (g1 - g0);
                    }
                    tau = if sy > 0.0 && (ss / sy).is_finite() { ss / sy } else { 2.0 * trial };
                    u = cand;
                    cur = state.value;
                    grad = new_grad;
                    record.history.push(cur.value);
                }
                None => stalled = true,
            }

            let at_floor = delta <= cfg.delta_min;
            let window = if at_floor { cfg.level_window } else { cfg.stall_window };
            let tol = if at_floor { cfg.level_tolerance } else { cfg.stall_tolerance };
            let h = &record.history;
            let in_stage = h.len() - 1 - stage_start.min(h.len() - 1);
            if !stalled && in_stage >= window {
                let old = h[h.len() - 1 - window];
                let new = h[h.len() - 1];
                stalled = old - new <= tol * new.abs();
            }
            if !at_floor && in_stage >= cfg.max_iters_per_delta {
                stalled = true;
            }
            if stalled {
                let exact = self.exact(&u);
                record.checkpoints.push(exact);
                if exact < best.0 {
                    best = (exact, u.clone());
                }
                if at_floor {
                    record.converged = true;
                    break;
                }
                delta = (0.5 * delta).max(cfg.delta_min);
                record.delta_changes.push((record.history.len(), delta));
                let (v, g) = self.problem.value_and_gradient(u.values(), delta);
                cur = v;
                grad = g;
                record.history.push(cur.value);
                stage_start = record.history.len() - 1;
            }
        }
        if !record.converged {
            let exact = self.exact(&u);
            record.checkpoints.push(exact);
            if exact < best.0 {
                best = (exact, u);
            }
        }
        record.final_level = best.0;
        StartOutcome { record, best: Some(best) }
    }
}

/// Estimate the least level of `Φ_A` over the constraint set `spec`.
pub fn minimize_level(
    mask: &DomainMask,
    weights: &Weights,
    spec: &ConstraintSpec,
    quadrature: &SphereQuadrature,
    config: &MinimizeConfig,
) -> Result<MinimizeResult> {
    let dim = mask.spec().dim();
    spec.validate(dim)?;
    config.validate()?;
    for extra in &config.extra_starts {
        if extra.spec() != mask.spec() {
            return Err(Error::GridMismatch("supplied initial guess lives on a different grid".into()));
        }
    }
    let run = Run {
        mask,
        weights,
        quadrature,
        spec: *spec,
        config,
        problem: SmoothedProblem::new(mask, weights, quadrature, config.backend, spec.zero_trace)?,
    };

    let mut guesses = Vec::new();
    for (k, label) in start_labels(spec.kind, config.starts).into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k as u64);
        guesses.push((label.to_string(), initial_guess(label, mask, &mut rng)?));
    }
    for (k, extra) in config.extra_starts.iter().enumerate() {
        guesses.push((format!("supplied-{k}"), extra.clone()));
    }

    let outcomes: Vec<StartOutcome> = if config.deterministic {
        guesses.iter().map(|(l, g)| run.descend(l.clone(), g)).collect()
    } else {
        guesses.par_iter().map(|(l, g)| run.descend(l.clone(), g)).collect()
    };

    let mut best: Option<(usize, f64, GridFunction)> = None;
    for (k, o) in outcomes.iter().enumerate() {
        if let Some((v, u)) = &o.best {
            if v.is_finite() && best.as_ref().is_none_or(|b| *v < b.1) {
                best = Some((k, *v, u.clone()));
            }
        }
    }
    let records: Vec<StartRecord> = outcomes.into_iter().map(|o| o.record).collect();
    let Some((best_start, level, extremal)) = best else {
        let diag = records
            .iter()
            .map(|r| format!("{}: degenerate={}", r.label, r.degenerate))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::MinimizeFailed(format!("no start produced a feasible field ({diag})")));
    };
    let (norm_residual, orthogonality_residual) = constraint_residual(&extremal, mask, spec)?;
    let c = constants(dim)?;
    Ok(MinimizeResult {
        level,
        support_width: support_width(&extremal, mask),
        extremal,
        constraint: *spec,
        norm_residual,
        orthogonality_residual,
        best_start,
        starts: records,
        critical: check_critical_threshold(level, &c),
        advisory: spec.is_critical(dim),
        backend: config.backend,
        quadrature_size: quadrature.len(),
        grid_shape: mask.spec().shape().to_vec(),
        spacing: mask.spec().spacing(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::make_quadrature;
    use crate::functionals::m_r_solve;
    use crate::grid::{make_mask, GridSpec, Shape};

    fn square(cells: usize) -> DomainMask {
        let s = Shape::unit_square();
        make_mask(&GridSpec::around(&s, cells).unwrap(), &s).unwrap()
    }

    fn bump(mask: &DomainMask) -> GridFunction {
        let raw = GridFunction::from_fn_masked(mask, |x| {
            let r2 = (x[0] - 0.45).powi(2) + (x[1] - 0.55).powi(2);
            (r2 < 0.09) as u8 as f64 + 0.3 * x[0]
        });
        restrict(&mollify(&raw, 2.0 * mask.spec().spacing()).unwrap(), mask)
    }

    #[test]
    fn critical_flag_follows_the_threshold() {
        let c = constants(2).unwrap();
        assert!(check_critical_threshold(3.0, &c).critical_flag);
        assert!(!check_critical_threshold(4.0, &c).critical_flag);
        assert!(!check_critical_threshold(0.0, &c).critical_flag);
        assert!(!check_critical_threshold(-1.0, &c).critical_flag);
        let r = check_critical_threshold(4.0, &c);
        assert!((r.margin - (4.0 - c.sharp_sobolev)).abs() < 1e-15);
    }

    #[test]
    fn level_names_round_trip() {
        for l in [Level::CA, Level::DA, Level::CA0, Level::DA0] {
            assert_eq!(l.name().parse::<Level>().unwrap(), l);
        }
        assert!("cB".parse::<Level>().is_err());
        assert!(Level::DA0.constraint(1.0, 1.0).zero_trace);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mask = square(32);
        let q = make_quadrature(2, 64).unwrap();
        let u = bump(&mask);
        for (a, b, zero_trace, backend) in [
            (0.0, 0.0, false, Backend::CellGradient),
            (-1.0, 0.5, false, Backend::FaceAtoms),
            (0.3, 0.0, true, Backend::CellGradient),
        ] {
            let w = Weights::constant(&mask, a, b).unwrap();
            let p = SmoothedProblem::new(&mask, &w, &q, backend, zero_trace).unwrap();
            let cells: Vec<usize> = (0..mask.spec().len()).filter(|&c| mask.is_inside(c)).step_by(37).collect();
            let check = gradient_check(&p, &u, 0.05, &cells, 1e-6).unwrap();
            assert!(check.passed, "{} > {}", check.worst_error, check.tolerance);
        }
    }

    #[test]
    fn smoothed_objective_is_jointly_homogeneous() {
        let mask = square(32);
        let q = make_quadrature(2, 64).unwrap();
        let w = Weights::zero(&mask);
        let u = bump(&mask);
        let p = SmoothedProblem::new(&mask, &w, &q, Backend::CellGradient, false).unwrap();
        let one = p.value(u.values(), 0.01).energy;
        let two = p.value(u.scaled(2.0).values(), 0.02).energy;
        assert!((two / one - 2.0).abs() < 1e-8);
    }

    #[test]
    fn interior_shift_has_no_energy_gradient_with_pinned_trace() {
        let mask = square(32);
        let q = make_quadrature(2, 64).unwrap();
        let w = Weights::zero(&mask);
        let u = bump(&mask);
        let p = SmoothedProblem::new(&mask, &w, &q, Backend::CellGradient, true).unwrap();
        let (_, g) = p.value_and_gradient(u.values(), 1.0);
        let layer = mask.boundary_layer();
        // the layer is pinned, so its gradient is dropped
        assert!(g.iter().zip(&layer).filter(|(_, &l)| l).all(|(g, _)| *g == 0.0));
    }

    #[test]
    fn square_level_stays_below_the_constant_guess() {
        let mask = square(32);
        let q = make_quadrature(2, 128).unwrap();
        let w = Weights::zero(&mask);
        let config = MinimizeConfig { max_iters: 60, starts: 2, ..Default::default() };
        let res = minimize_level(&mask, &w, &ConstraintSpec::x(1.0), &q, &config).unwrap();
        for s in &res.starts {
            assert!(res.level <= s.initial_level);
        }
        assert!(res.norm_residual < 1e-8);
        let check = phi_affine(&res.extremal, &mask, &w, config.backend, &q).unwrap();
        assert!((check - res.level).abs() < 1e-10);
        // sharp Sobolev bound from below, constant guess from above
        assert!(res.level >= 2.0 * std::f64::consts::PI.sqrt() * 0.97);
        assert!(res.level <= 3.937402486430605 * 1.01);
        assert!(!res.critical.critical_flag);
    }

    #[test]
    fn orthogonal_level_has_zero_mean_extremal() {
        let mask = square(24);
        let q = make_quadrature(2, 64).unwrap();
        let w = Weights::zero(&mask);
        let config = MinimizeConfig { max_iters: 40, starts: 2, ..Default::default() };
        let res = minimize_level(&mask, &w, &ConstraintSpec::y(1.0, 1.0), &q, &config).unwrap();
        assert!(m_r_solve(&res.extremal, &mask, 1.0).unwrap().abs() < 1e-6);
        assert!(res.level > 0.0);
    }

    #[test]
    fn history_is_monotone_between_smoothing_changes() {
        let mask = square(24);
        let q = make_quadrature(2, 64).unwrap();
        let w = Weights::zero(&mask);
        let config = MinimizeConfig { max_iters: 80, starts: 1, max_iters_per_delta: 20, ..Default::default() };
        let res = minimize_level(&mask, &w, &ConstraintSpec::x(2.0), &q, &config).unwrap();
        let s = &res.starts[0];
        let jumps: Vec<usize> = s.delta_changes.iter().map(|c| c.0).collect();
        for k in 1..s.history.len() {
            if !jumps.contains(&k) {
                assert!(s.history[k] <= s.history[k - 1] + 1e-12, "step {k}");
            }
        }
        assert!(s.delta_changes.len() >= 2);
    }
}
