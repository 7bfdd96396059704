//! Command-line front end.
//!
//! Exit status: 0 on success (and on an all-pass `verify`), 1 when a check
//! fails or a computation cannot finish, 2 for configuration and usage
//! errors. Parallel work runs on a pool sized by `--threads`, overridden by
//! the `AFFINE_BV_THREADS` environment variable.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::energy::{constants, energy_of_atoms, make_quadrature, EnergyConstants};
use crate::error::{Error, Result};
use crate::functionals::ConstraintSpec;
use crate::grid::{extract_trace, make_mask, mollify, DomainMask, GridFunction, GridSpec, Shape};
use crate::io::{field_to_csv, load_afg1, save_afg1, weights_from_sources, DomainConfig};
use crate::minimize::{minimize_level, Level, MinimizeConfig, MinimizeResult};
use crate::oracle::{dense_directions, energy_body, Body, EllipsoidBody, OracleEnergy, PolygonBody};
use crate::variation::{boundary_atoms, compute_atoms, Backend};
use crate::verify::{run_suite, VerifyConfig};

pub const THREADS_ENV: &str = "AFFINE_BV_THREADS";

/// JSON schemas for every report the CLI writes, keyed by subcommand.
pub const REPORT_SCHEMAS: [(&str, &str); 5] = [
    ("energy", include_str!("../schemas/energy.schema.json")),
    ("minimize", include_str!("../schemas/minimize.schema.json")),
    ("verify", include_str!("../schemas/verify.schema.json")),
    ("constants", include_str!("../schemas/constants.schema.json")),
    ("oracle", include_str!("../schemas/oracle.schema.json")),
];

#[derive(Debug, Parser)]
#[command(name = "affine-bv", version, about = "Affine BV energies on grids: evaluation, minimization, verification")]
pub struct Cli {
    /// Worker threads (AFFINE_BV_THREADS takes precedence).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Affine energy of a field (default: the domain indicator).
    Energy(EnergyArgs),
    /// Estimate a level c_A, d_A, c_A0 or d_A0 and dump its extremal.
    Minimize(MinimizeArgs),
    /// Run the inequality suite.
    Verify(VerifyArgs),
    /// Print the dimensional constants.
    Constants(ConstantsArgs),
    /// Closed-form Ψ samples and energy of a reference body.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Extended,
    Interior,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendArg {
    FaceAtoms,
    CellGradient,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::FaceAtoms => Backend::FaceAtoms,
            BackendArg::CellGradient => Backend::CellGradient,
        }
    }
}

#[derive(Debug, Args)]
pub struct EnergyArgs {
    /// JSON domain config.
    #[arg(long)]
    pub domain: PathBuf,
    /// Cells per axis; the grid spans twice the domain's bounding box.
    #[arg(long, default_value_t = 256)]
    pub grid: usize,
    #[arg(long, default_value_t = 512)]
    pub dirs: usize,
    #[arg(long, value_enum, default_value = "cell-gradient")]
    pub backend: BackendArg,
    #[arg(long, value_enum, default_value = "extended")]
    pub part: Part,
    /// AFG1 field on the domain grid instead of the indicator.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Gaussian mollification width in cells before evaluation.
    #[arg(long, default_value_t = 0.0)]
    pub mollify: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also dump the variation atoms as CSV.
    #[arg(long)]
    pub atoms_csv: Option<PathBuf>,
    /// Also dump the evaluated field as CSV.
    #[arg(long)]
    pub field_csv: Option<PathBuf>,
    /// Accepted for symmetry; every reduction is already ordered.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct MinimizeArgs {
    #[arg(long)]
    pub level: Level,
    #[arg(long)]
    pub q: f64,
    /// Orthogonality exponent for dA and dA0.
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long)]
    pub domain: PathBuf,
    #[arg(long)]
    pub grid: usize,
    #[arg(long)]
    pub dirs: usize,
    /// Overrides `a_const` from the domain config.
    #[arg(long, allow_hyphen_values = true)]
    pub a_const: Option<f64>,
    /// Overrides `b_const` from the domain config.
    #[arg(long, allow_hyphen_values = true)]
    pub b_const: Option<f64>,
    /// AFG1 cell weights `a` (takes precedence over constants).
    #[arg(long)]
    pub a_field: Option<PathBuf>,
    /// AFG1 weights `b`, read at each boundary face's inside cell.
    #[arg(long)]
    pub b_field: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub starts: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value = "cell-gradient")]
    pub backend: BackendArg,
    /// Run starts sequentially with fixed RNG streams.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Extremal dump; defaults to the report path with extension `afg1`.
    #[arg(long)]
    pub field_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// `all` or one suite name.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long, default_value_t = 256)]
    pub grid: usize,
    #[arg(long, default_value_t = 512)]
    pub dirs: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Random fields per check.
    #[arg(long, default_value_t = 100)]
    pub corpus: usize,
    /// Replace every tolerance (harness self-test).
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Accepted for symmetry; corpora use fixed RNG streams regardless.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub dim: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyArg {
    Square,
    Disk,
    Ellipse,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_enum)]
    pub body: BodyArg,
    /// Linear image applied to the body, rows separated by `;`
    /// (for example `2,0;0,0.5`). Required for `ellipse`.
    #[arg(long, allow_hyphen_values = true)]
    pub matrix: Option<String>,
    /// Quadrature size; defaults to the dense minimum for the dimension.
    #[arg(long)]
    pub dirs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `argv` (including the program name), run, and return the exit
/// status. Reports go to `--out` or `stdout`; diagnostics go to `stderr`.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let threads = match pool_size(cli.threads, std::env::var(THREADS_ENV).ok().as_deref()) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return 2;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: cannot start worker pool: {e}");
            return 1;
        }
    };
    let mut buffer = Vec::new();
    let outcome = pool.install(|| dispatch(&cli.command, &mut buffer));
    let _ = stdout.write_all(&buffer);
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Status for an error: 2 for bad input, 1 for failures during a run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::InvalidShape(_)
        | Error::InvalidGrid(_)
        | Error::GridMismatch(_)
        | Error::Format(_) => 2,
        _ => 1,
    }
}

/// Pool size: the environment wins over the flag; 0 means all cores.
pub fn pool_size(flag: Option<usize>, env: Option<&str>) -> Result<usize> {
    if let Some(v) = env.filter(|v| !v.trim().is_empty()) {
        return v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'")));
    }
    Ok(flag.unwrap_or(0))
}

fn dispatch(command: &Command, stdout: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Energy(a) => energy(a, stdout).map(|_| 0),
        Command::Minimize(a) => minimize(a, stdout).map(|_| 0),
        Command::Verify(a) => verify(a, stdout),
        Command::Constants(a) => {
            let text = constants_json(&constants(a.dim as usize)?);
            writeln!(stdout, "{text}")?;
            Ok(0)
        }
        Command::Oracle(a) => oracle(a, stdout).map(|_| 0),
    }
}

fn emit(value: &impl Serialize, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => writeln!(stdout, "{text}")?,
    }
    Ok(())
}

fn load_input_field(path: &Path) -> Result<GridFunction> {
    load_afg1(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn domain_mask(path: &Path, grid: usize) -> Result<(DomainConfig, Shape, DomainMask)> {
    let config = DomainConfig::load(path)?;
    let shape = config.to_shape()?;
    let spec = GridSpec::around(&shape, grid).map_err(|e| Error::Config(format!("--grid: {e}")))?;
    let mask = make_mask(&spec, &shape)?;
    Ok((config, shape, mask))
}

#[derive(Debug, Serialize)]
struct EnergyReport {
    subcommand: &'static str,
    domain: DomainConfig,
    grid_shape: Vec<usize>,
    spacing: f64,
    dirs: usize,
    backend: Backend,
    part: Part,
    mollify_cells: f64,
    value: f64,
    alpha_n: f64,
    psi_min: f64,
    psi_max: f64,
    degenerate: bool,
    total_variation: f64,
    eigen_ratio: Option<f64>,
    trace_l1: f64,
    atom_count: usize,
}

fn energy(args: &EnergyArgs, stdout: &mut dyn Write) -> Result<()> {
    let (config, shape, mask) = domain_mask(&args.domain, args.grid)?;
    if !(args.mollify >= 0.0 && args.mollify.is_finite()) {
        return Err(Error::Config(format!("--mollify must be >= 0, got {}", args.mollify)));
    }
    let quad = make_quadrature(shape.dim(), args.dirs).map_err(|e| Error::Config(format!("--dirs: {e}")))?;
    let mut u = match &args.field {
        Some(path) => {
            let f = load_input_field(path)?;
            if f.spec() != mask.spec() {
                return Err(Error::GridMismatch(format!(
                    "{} does not live on the domain grid (shape {:?}, spacing {})",
                    path.display(),
                    mask.spec().shape(),
                    mask.spec().spacing()
                )));
            }
            f
        }
        None => GridFunction::from_fn_masked(&mask, |_| 1.0),
    };
    if args.mollify > 0.0 {
        u = mollify(&u, args.mollify * mask.spec().spacing())?;
    }
    let backend = Backend::from(args.backend);
    let trace = extract_trace(&u, &mask)?;
    let atoms = match args.part {
        Part::Extended => compute_atoms(&u, &mask, backend, true)?,
        Part::Interior => compute_atoms(&u, &mask, backend, false)?,
        Part::Boundary => boundary_atoms(&trace),
    };
    if let Some(path) = &args.atoms_csv {
        std::fs::write(path, atoms.to_csv())?;
    }
    if let Some(path) = &args.field_csv {
        std::fs::write(path, field_to_csv(&u))?;
    }
    let e = energy_of_atoms(&atoms, &quad)?;
    let report = EnergyReport {
        subcommand: "energy",
        domain: config,
        grid_shape: mask.spec().shape().to_vec(),
        spacing: mask.spec().spacing(),
        dirs: quad.len(),
        backend,
        part: args.part,
        mollify_cells: args.mollify,
        value: e.value,
        alpha_n: constants(shape.dim())?.alpha,
        psi_min: e.psi_min,
        psi_max: e.psi_max,
        degenerate: e.degenerate,
        total_variation: e.total_variation.unwrap_or(0.0),
        eigen_ratio: e.eigen_ratio(),
        trace_l1: trace.l1_norm(),
        atom_count: atoms.atoms.len(),
    };
    emit(&report, args.out.as_deref(), stdout)
}

#[derive(Debug, Serialize)]
struct MinimizeReport<'a> {
    subcommand: &'static str,
    level_name: &'static str,
    q: f64,
    r: f64,
    domain: DomainConfig,
    a_const: f64,
    b_const: f64,
    seed: u64,
    deterministic: bool,
    extremal_file: String,
    #[serde(flatten)]
    result: &'a MinimizeResult,
}

fn minimize(args: &MinimizeArgs, stdout: &mut dyn Write) -> Result<()> {
    let (config, shape, mask) = domain_mask(&args.domain, args.grid)?;
    let spec: ConstraintSpec = args.level.constraint(args.q, args.r);
    spec.validate(shape.dim()).map_err(|e| Error::Config(e.to_string()))?;
    let quad = make_quadrature(shape.dim(), args.dirs).map_err(|e| Error::Config(format!("--dirs: {e}")))?;
    let a_const = args.a_const.or(config.a_const).unwrap_or(0.0);
    let b_const = args.b_const.or(config.b_const).unwrap_or(0.0);
    let a_field = args.a_field.as_deref().map(load_input_field).transpose()?;
    let b_field = args.b_field.as_deref().map(load_input_field).transpose()?;
    let weights = weights_from_sources(&mask, a_field.as_ref(), b_field.as_ref(), a_const, b_const)?;
    let mc = MinimizeConfig {
        backend: args.backend.into(),
        max_iters: args.max_iters,
        starts: args.starts,
        seed: args.seed,
        deterministic: args.deterministic,
        ..MinimizeConfig::default()
    };
    mc.validate().map_err(|e| Error::Config(e.to_string()))?;
    let result = minimize_level(&mask, &weights, &spec, &quad, &mc)?;
    let field_out = args.field_out.clone().unwrap_or_else(|| args.out.with_extension("afg1"));
    save_afg1(&result.extremal, &field_out)?;
    let report = MinimizeReport {
        subcommand: "minimize",
        level_name: args.level.name(),
        q: args.q,
        r: args.r,
        domain: config,
        a_const,
        b_const,
        seed: args.seed,
        deterministic: args.deterministic,
        extremal_file: field_out.display().to_string(),
        result: &result,
    };
    emit(&report, Some(&args.out), stdout)?;
    writeln!(stdout, "{} = {:.10} ({} starts, best: {})", args.level.name(), result.level, result.starts.len(), result.starts[result.best_start].label)?;
    Ok(())
}

fn verify(args: &VerifyArgs, stdout: &mut dyn Write) -> Result<i32> {
    let config = VerifyConfig {
        suite: args.suite.clone(),
        grid: args.grid,
        dirs: args.dirs,
        seed: args.seed,
        corpus_size: args.corpus,
        tolerance_override: args.tolerance,
    };
    let report = run_suite(&config)?;
    match &args.out {
        Some(path) => {
            emit(&report, Some(path), stdout)?;
            for r in &report.records {
                let status = if r.passed { "PASS" } else { "FAIL" };
                writeln!(stdout, "{status} {:<28} worst {:+.3e} tol {:.1e} n={}", r.name, r.worst_margin, r.tolerance, r.count)?;
            }
        }
        None => emit(&report, None, stdout)?,
    }
    Ok(report.exit_code())
}

/// `{:.16e}` carries 17 significant digits.
fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Constants as JSON with 17 significant digits.
pub fn constants_json(c: &EnergyConstants) -> String {
    let n = c.dim;
    let fields = [
        ("alpha_n", c.alpha),
        ("sharp_sobolev", c.sharp_sobolev),
        ("d0", c.d0),
        ("omega_n", c.omega[n]),
        ("omega_n_minus_1", c.omega[n - 1]),
        ("sphere_area", c.sphere_area),
        ("critical_exponent", ConstraintSpec::critical_exponent(n)),
    ];
    let body: Vec<String> = fields.iter().map(|(k, v)| format!("  \"{k}\": {}", sig17(*v))).collect();
    format!("{{\n  \"dim\": {n},\n{}\n}}", body.join(",\n"))
}

/// Rows separated by `;`, entries by `,`.
pub fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Config(format!("--matrix: bad entry '{}'", x.trim()))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    if !(2..=3).contains(&n) || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("--matrix must be 2×2 or 3×3, got '{text}'")));
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
struct PsiSample {
    direction: Vec<f64>,
    weight: f64,
    psi: f64,
}

#[derive(Debug, Serialize)]
struct OracleReport {
    subcommand: &'static str,
    body: BodyArg,
    matrix: Vec<Vec<f64>>,
    dim: usize,
    dirs: usize,
    volume: f64,
    energy: f64,
    closed_form: Option<f64>,
    self_check_gap: Option<f64>,
    samples: Vec<PsiSample>,
}

fn oracle(args: &OracleArgs, stdout: &mut dyn Write) -> Result<()> {
    let matrix = match (&args.matrix, args.body) {
        (Some(m), _) => parse_matrix(m)?,
        (None, BodyArg::Ellipse) => return Err(Error::Config("--matrix is required for --body ellipse".into())),
        (None, _) => vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    };
    let n = matrix.len();
    let cfg = |e: Error| Error::Config(e.to_string());
    let body = match args.body {
        BodyArg::Square => {
            if n != 2 {
                return Err(Error::Config("--body square needs a 2×2 matrix".into()));
            }
            let corners = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
            let vertices = corners
                .iter()
                .map(|c| {
                    [
                        matrix[0][0] * c[0] + matrix[0][1] * c[1],
                        matrix[1][0] * c[0] + matrix[1][1] * c[1],
                    ]
                })
                .collect();
            Body::Polygon(PolygonBody::new(vertices).map_err(cfg)?)
        }
        BodyArg::Disk | BodyArg::Ellipse => {
            Body::Ellipsoid(EllipsoidBody::new(matrix.clone(), vec![0.0; n]).map_err(cfg)?)
        }
    };
    let constants = constants(n)?;
    let dirs = args.dirs.unwrap_or_else(|| dense_directions(n));
    let quad = make_quadrature(n, dirs).map_err(|e| Error::Config(format!("--dirs: {e}")))?;
    let OracleEnergy { value, psi, closed_form, self_check_gap } =
        energy_body(&body, &constants, &quad).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        })?;
    let samples = quad
        .directions
        .iter()
        .zip(&quad.weights)
        .zip(psi)
        .map(|((d, &weight), psi)| PsiSample { direction: d[..n].to_vec(), weight, psi })
        .collect();
    let report = OracleReport {
        subcommand: "oracle",
        body: args.body,
        matrix,
        dim: n,
        dirs: quad.len(),
        volume: body.volume(),
        energy: value,
        closed_form,
        self_check_gap,
        samples,
    };
    emit(&report, args.out.as_deref(), stdout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn pool_size_precedence() {
        assert_eq!(pool_size(Some(3), None).unwrap(), 3);
        assert_eq!(pool_size(Some(3), Some("2")).unwrap(), 2);
        assert_eq!(pool_size(None, None).unwrap(), 0);
        assert_eq!(pool_size(None, Some(" ")).unwrap(), 0);
        assert!(pool_size(None, Some("many")).is_err());
    }

    #[test]
    fn constants_have_seventeen_digits() {
        let text = constants_json(&constants(2).unwrap());
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["dim"], 2);
        let alpha = v["alpha_n"].as_f64().unwrap();
        assert!((alpha - 3.937_402_486_430_604_936).abs() < 1e-15, "{text}");
        for line in text.lines().filter(|l| l.contains('.')) {
            let mantissa = line.split(':').nth(1).unwrap().trim().trim_end_matches(',').split('e').next().unwrap();
            assert_eq!(mantissa.replace(['.', '-'], "").len(), 17, "{line}");
        }
    }

    #[test]
    fn matrix_parsing() {
        assert_eq!(parse_matrix("2,0;0,0.5").unwrap(), vec![vec![2.0, 0.0], vec![0.0, 0.5]]);
        assert!(parse_matrix("1,2,3;4,5").is_err());
        assert!(parse_matrix("1,x;0,1").is_err());
    }

    #[test]
    fn error_classes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::MinimizeFailed("x".into())), 1);
    }
}
