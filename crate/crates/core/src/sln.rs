//! Volume-preserving linear maps and the SL(n) normalization search
//! `min_T Σ |Tᵀ v_i|` over the variation atoms of a field.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variation::VariationAtoms;

/// Tolerance on `|det T - 1|`.
pub const DET_TOL: f64 = 1e-10;

/// A matrix of determinant one, optionally recorded as `exp(A)` with `A`
/// traceless.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    matrix: DMatrix<f64>,
    generator: Option<DMatrix<f64>>,
}

impl AffineMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidArgument("map matrix must be square".into()));
        }
        let det = matrix.determinant();
        if (det - 1.0).abs() > DET_TOL {
            return Err(Error::InvalidArgument(format!("map determinant is {det}, expected 1")));
        }
        Ok(Self { matrix, generator: None })
    }

    pub fn identity(n: usize) -> Self {
        Self { matrix: DMatrix::identity(n, n), generator: Some(DMatrix::zeros(n, n)) }
    }

    /// `T = exp(A)`. The trace of `A` is removed first and the result is
    /// rescaled by `det^{-1/n}` to absorb roundoff.
    pub fn from_generator(generator: DMatrix<f64>) -> Result<Self> {
        if !generator.is_square() {
            return Err(Error::InvalidArgument("generator must be square".into()));
        }
        let n = generator.nrows();
        let shift = generator.trace() / n as f64;
        let a = &generator - DMatrix::identity(n, n) * shift;
        let mut t = a.clone().exp();
        let det = t.determinant();
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::InvalidArgument("matrix exponential overflowed".into()));
        }
        t *= det.powf(-1.0 / n as f64);
        Ok(Self { matrix: t, generator: Some(a) })
    }

    /// Generator from the `n² - 1` free parameters: all entries of `A`
    /// row-major except the last diagonal one, which closes the trace.
    pub fn from_params(n: usize, params: &[f64]) -> Result<Self> {
        if params.len() != n * n - 1 {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                n * n - 1,
                params.len()
            )));
        }
        let mut a = DMatrix::zeros(n, n);
        for (k, p) in params.iter().enumerate() {
            a[(k / n, k % n)] = *p;
        }
        let tr: f64 = (0..n - 1).map(|i| a[(i, i)]).sum();
        a[(n - 1, n - 1)] = -tr;
        Self::from_generator(a)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn generator(&self) -> Option<&DMatrix<f64>> {
        self.generator.as_ref()
    }

    pub fn determinant(&self) -> f64 {
        self.matrix.determinant()
    }
}

/// Random `T = exp(A)` with `A` traceless and `‖A‖_F = norm`.
pub fn random_sl_map(n: usize, norm: f64, rng: &mut impl Rng) -> AffineMap {
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let shift = a.trace() / n as f64;
    a -= DMatrix::identity(n, n) * shift;
    let f = a.norm();
    if f > 0.0 {
        a *= norm / f;
    }
    AffineMap::from_generator(a).expect("bounded generator")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlnConfig {
    pub restarts: usize,
    pub seed: u64,
    pub max_evals: usize,
    pub initial_step: f64,
    pub tolerance: f64,
}

impl Default for SlnConfig {
    fn default() -> Self {
        Self { restarts: 10, seed: 42, max_evals: 2000, initial_step: 0.3, tolerance: 1e-10 }
    }
}

/// `F(T) = Σ |Tᵀ v_i|` with axis-aligned atoms pre-aggregated.
struct SlnObjective {
    dim: usize,
    axis: [f64; 3],
    general: Vec<[f64; 3]>,
}

impl SlnObjective {
    fn new(atoms: &VariationAtoms) -> Self {
        let mut axis = [0.0; 3];
        let mut general = Vec::new();
        for v in &atoms.atoms {
            let nz: Vec<usize> = (0..3).filter(|&d| v[d] != 0.0).collect();
            if nz.len() == 1 {
                axis[nz[0]] += v[nz[0]].abs();
            } else {
                general.push(*v);
            }
        }
        Self { dim: atoms.dim, axis, general }
    }

    fn eval(&self, t: &DMatrix<f64>) -> f64 {
        let n = self.dim;
        // tt holds Tᵀ
        let mut tt = [[0.0f64; 3]; 3];
        for i in 0..n {
            for j in 0..n {
                tt[i][j] = t[(j, i)];
            }
        }
        let mut acc = 0.0;
        for (d, s) in self.axis.iter().enumerate().take(n) {
            if *s != 0.0 {
                let col: f64 = (0..n).map(|i| tt[i][d] * tt[i][d]).sum();
                acc += s * col.sqrt();
            }
        }
        let mut sum = 0.0;
        for v in &self.general {
            let mut w2 = 0.0;
            for row in tt.iter().take(n) {
                let w = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
                w2 += w * w;
            }
            sum += w2.sqrt();
        }
        acc + sum
    }
}

/// `Σ |Tᵀ v_i|` for an explicit map.
pub fn sl_objective(atoms: &VariationAtoms, map: &AffineMap) -> f64 {
    SlnObjective::new(atoms).eval(map.matrix())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlnResult {
    pub matrix: Vec<Vec<f64>>,
    pub objective: f64,
    pub objective_identity: f64,
    pub evaluations: usize,
}

/// Minimize `Σ |Tᵀ v_i|` over `T = exp(A)`, `A` traceless, with Nelder–Mead
/// on the `n² - 1` generator entries: one start at the identity and
/// `restarts - 1` random starts. Never returns something worse than `T = I`.
pub fn sl_n_minimize_tv(atoms: &VariationAtoms, config: &SlnConfig) -> Result<(AffineMap, SlnResult)> {
    if atoms.is_empty() {
        return Err(Error::InvalidArgument("SL(n) search needs a nonempty atom set".into()));
    }
    let n = atoms.dim;
    let objective = SlnObjective::new(atoms);
    let f = |p: &[f64]| match AffineMap::from_params(n, p) {
        Ok(map) => objective.eval(map.matrix()),
        Err(_) => f64::INFINITY,
    };
    let f_identity = objective.eval(&DMatrix::identity(n, n));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best_params = vec![0.0; n * n - 1];
    let mut best = f_identity;
    let mut evaluations = 1;
    for start in 0..config.restarts.max(1) {
        let x0: Vec<f64> = if start == 0 {
            vec![0.0; n * n - 1]
        } else {
            (0..n * n - 1).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let run = nelder_mead(&f, &x0, config.initial_step, config.tolerance, config.max_evals);
        evaluations += run.evaluations;
        if run.value < best {
            best = run.value;
            best_params = run.x;
        }
    }
    let map = AffineMap::from_params(n, &best_params)?;
    let value = objective.eval(map.matrix());
    let (map, value) = if value <= f_identity { (map, value) } else { (AffineMap::identity(n), f_identity) };
    let matrix = (0..n).map(|i| (0..n).map(|j| map.matrix()[(i, j)]).collect()).collect();
    Ok((map, SlnResult { matrix, objective: value, objective_identity: f_identity, evaluations }))
}

pub struct NelderMeadRun {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Plain Nelder–Mead (reflection 1, expansion 2, contraction 1/2, shrink 1/2)
/// from an axis simplex of size `step`; stops when the spread of simplex
/// values drops below `tol` (relative) or after `max_evals` evaluations.
pub fn nelder_mead(
    f: &impl Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    tol: f64,
    max_evals: usize,
) -> NelderMeadRun {
    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = f(&x);
        simplex.push((x, v));
    }
    let mut evals = dim + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (lo, hi) = (simplex[0].1, simplex[dim].1);
        if (hi - lo).abs() <= tol * (lo.abs() + tol) {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|k| simplex[..dim].iter().map(|p| p.0[k]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..dim).map(|k| centroid[k] + t * (simplex[dim].0[k] - centroid[k])).collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[dim].1 {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < simplex[dim].1.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    for k in 0..dim {
                        p.0[k] = best[k] + 0.5 * (p.0[k] - best[k]);
                    }
                    p.1 = f(&p.0);
                }
                evals += dim;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    NelderMeadRun { x, value, evaluations: evals }
}
