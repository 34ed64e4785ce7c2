//! Command-line front end: `triangularise`, `solve` and `verify`.
//!
//! Every flag can also be set through an environment variable with the
//! `HYPERTRI_` prefix; an explicit flag wins.

use std::ffi::OsString;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cascade::{
    check_hypotheses, mode_oracle, solve_cascade, solve_reference, CascadeConfig, CascadeSolution, HypothesisReport,
    SlabStats, SystemSpec,
};
use crate::diagnostics::{aliasing_warnings, fit_exponential_bound, fit_solution, refinement_study, ConvergenceReport, GrowthFit};
use crate::error::{Error, Result, Witness};
use crate::grid::GridSpec;
use crate::pdo::{sobolev_norm, Field};
use crate::scenario::{triangularised_system, Scenario, ScenarioFile};
use crate::schur::{SchurConfig, StepCondition, VerificationReport};
use crate::symbol::{max_modulus, MatrixSymbol, C64};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONDITION: i32 = 2;
pub const EXIT_HYPOTHESIS: i32 = 3;
pub const EXIT_SOLVE: i32 = 4;
pub const EXIT_RESIDUAL: i32 = 5;
pub const EXIT_EIGEN: i32 = 6;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_MISMATCH: i32 = 65;
pub const EXIT_NO_INPUT: i32 = 66;

/// Relative tolerance of `verify`.
pub const VERIFY_TOL: f64 = 1e-9;

/// Maps every library error to its process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConditionFailure { .. } => EXIT_CONDITION,
        Error::HypothesisFailure(_) => EXIT_HYPOTHESIS,
        Error::SolveFailure(_) | Error::Instability { .. } | Error::NotContractive { .. } => EXIT_SOLVE,
        Error::BadEigenpair { .. } | Error::Continuation { .. } => EXIT_EIGEN,
        Error::Parse { .. }
        | Error::Scenario(_)
        | Error::Json(_)
        | Error::Dimension { .. }
        | Error::InvalidGrid(_)
        | Error::InvalidArgument(_)
        | Error::Evaluation(_)
        | Error::DegenerateData(_) => EXIT_USAGE,
        Error::Io(io) if io.kind() == ErrorKind::NotFound => EXIT_NO_INPUT,
        Error::Io(_) | Error::Csv(_) | Error::NotXIndependent { .. } => EXIT_INTERNAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "hypertri", version, about = "Schur triangularisation and cascade solver for hyperbolic pseudodifferential systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Triangularise the full matrix A of a scenario.
    Triangularise(TriangulariseArgs),
    /// Solve an upper-triangular system.
    Solve(SolveArgs),
    /// Recompute residuals and fits from a previous run's files.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct TriangulariseArgs {
    #[arg(long, env = "HYPERTRI_SCENARIO")]
    pub scenario: PathBuf,
    #[arg(long, env = "HYPERTRI_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "HYPERTRI_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Cascade,
    Reference,
    Both,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, env = "HYPERTRI_SCENARIO", required_unless_present = "from_triangularised")]
    pub scenario: Option<PathBuf>,
    #[arg(long, env = "HYPERTRI_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "HYPERTRI_MODE", value_enum, default_value = "cascade")]
    pub mode: Mode,
    #[arg(long, env = "HYPERTRI_OVERRIDE_LEVI")]
    pub override_levi: bool,
    /// Output directory of a previous `triangularise` run.
    #[arg(long, env = "HYPERTRI_FROM_TRIANGULARISED")]
    pub from_triangularised: Option<PathBuf>,
    #[arg(long, env = "HYPERTRI_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "HYPERTRI_TOL_FP")]
    pub tol_fp: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, env = "HYPERTRI_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    #[serde(rename = "T_final")]
    pub t_final: f64,
    pub nt: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub nx: usize,
    #[serde(rename = "M")]
    pub cutoff: f64,
}

impl From<&GridSpec> for GridInfo {
    fn from(g: &GridSpec) -> Self {
        GridInfo {
            t_final: g.t_final,
            nt: g.nt,
            l: g.l(),
            nx: g.nx(),
            cutoff: g.cutoff,
        }
    }
}

impl GridInfo {
    fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.t_final, self.nt, self.l, self.nx, self.cutoff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessInfo {
    pub t: f64,
    pub x: f64,
    pub xi: f64,
}

impl From<Witness> for WitnessInfo {
    fn from(w: Witness) -> Self {
        WitnessInfo { t: w.t, x: w.x, xi: w.xi }
    }
}

impl From<&Error> for ErrorInfo {
    fn from(e: &Error) -> Self {
        let witness = match e {
            Error::ConditionFailure { witness, .. }
            | Error::BadEigenpair { witness, .. }
            | Error::Continuation { witness, .. } => Some((*witness).into()),
            Error::Evaluation(w) => Some((*w).into()),
            _ => None,
        };
        ErrorInfo {
            message: e.to_string(),
            witness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub cascade_vs_reference: Vec<f64>,
    pub max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cascade_vs_oracle: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_vs_oracle: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenSummary {
    pub max_residual: f64,
    pub multiplicity_warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriangulariseReport {
    pub command: &'static str,
    pub exit_code: i32,
    pub seed: u64,
    pub grid: GridInfo,
    pub tol_tri: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
    pub permutations: Vec<(usize, usize)>,
    pub condition_report: Vec<StepCondition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub numeric_eigendata: Option<EigenSummary>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub command: &'static str,
    pub exit_code: i32,
    pub mode: Mode,
    pub seed: u64,
    pub m: usize,
    pub s: f64,
    pub grid: GridInfo,
    pub substeps: usize,
    pub tol_fp: f64,
    pub override_levi: bool,
    pub from_triangularised: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<HypothesisReport>,
    pub slab_boundaries: Vec<f64>,
    pub neumann_stats: Vec<SlabStats>,
    pub c_fit: Option<f64>,
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth_fit: Option<GrowthFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    pub orders: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub low_frequency_discarded: Option<Vec<f64>>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Triangularise(a) => cmd_triangularise(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Verify(a) => cmd_verify(&a.out),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn write_matrix_csv(path: &Path, grid: &GridSpec, sym: &MatrixSymbol) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "xi", "i", "j", "re", "im"])?;
    let m = sym.dim();
    for node in grid.shell_nodes() {
        let (t, x, xi) = grid.point(node);
        let v = sym.eval(t, x, xi);
        for i in 0..m {
            for j in 0..m {
                let c = v[(i, j)];
                w.write_record([fmt(t), fmt(x), fmt(xi), (i + 1).to_string(), (j + 1).to_string(), fmt(c.re), fmt(c.im)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_lambda_csv(path: &Path, grid: &GridSpec, lambda: &[crate::symbol::ScalarSymbol]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "xi", "j", "re", "im"])?;
    for node in grid.shell_nodes() {
        let (t, x, xi) = grid.point(node);
        for (j, l) in lambda.iter().enumerate() {
            let c = l.eval(t, x, xi);
            w.write_record([fmt(t), fmt(x), fmt(xi), (j + 1).to_string(), fmt(c.re), fmt(c.im)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_norms_csv(path: &Path, sol: &CascadeSolution) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "k", "norm"])?;
    for (t, row) in sol.times.iter().zip(&sol.norm_trace) {
        for (k, v) in row.iter().enumerate() {
            w.write_record([fmt(*t), (k + 1).to_string(), fmt(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_solution_csv(path: &Path, sol: &CascadeSolution) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "k", "re", "im"])?;
    for (t, state) in sol.times.iter().zip(&sol.u) {
        for (k, f) in state.components.iter().enumerate() {
            for (i, v) in f.values.iter().enumerate() {
                w.write_record([fmt(*t), fmt(f.torus.x(i)), (k + 1).to_string(), fmt(v.re), fmt(v.im)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn schur_config() -> SchurConfig {
    SchurConfig::default()
}

pub fn cmd_triangularise(args: &TriangulariseArgs) -> Result<i32> {
    let sc = Scenario::load(&args.scenario)?;
    prepare_out(&args.out)?;
    let seed = args.seed.unwrap_or_else(|| sc.seed());
    let cfg = schur_config();
    let mut report = TriangulariseReport {
        command: "triangularise",
        exit_code: EXIT_OK,
        seed,
        grid: (&sc.grid).into(),
        tol_tri: cfg.tol_tri,
        verification: None,
        permutations: vec![],
        condition_report: vec![],
        numeric_eigendata: None,
        warnings: sc.order_spot_checks(seed),
        error: None,
    };
    write_json(&args.out.join("scenario.json"), &sc.file)?;
    let (res, fit) = match sc.triangularise(&cfg) {
        Ok(r) => r,
        Err(e) => {
            report.exit_code = exit_code(&e);
            report.error = Some((&e).into());
            write_json(&args.out.join("report.json"), &report)?;
            eprintln!("error: {e}");
            return Ok(report.exit_code);
        }
    };
    let a = sc.a.as_ref().expect("checked by triangularise");
    let verification = crate::schur::verify_triangular_with(a, &res, &sc.grid, cfg.exec);
    if let Some(fit) = &fit {
        report.numeric_eigendata = Some(EigenSummary {
            max_residual: fit.max_residual,
            multiplicity_warnings: fit.warnings.len(),
        });
        if let Some(w) = fit.warnings.first() {
            report.warnings.push(format!(
                "eigenvalue collision at (t={}, x={}, xi={}), separation {:e}",
                w.t, w.x, w.xi, w.separation
            ));
        }
    }
    report.permutations = res.permutations.clone();
    report.condition_report = res.condition_report.clone();
    report.exit_code = if verification.passes(cfg.tol_tri) {
        EXIT_OK
    } else {
        EXIT_RESIDUAL
    };
    report.verification = Some(verification);

    write_matrix_csv(&args.out.join("T.csv"), &sc.grid, &res.t)?;
    write_matrix_csv(&args.out.join("Tinv.csv"), &sc.grid, &res.t_inv)?;
    write_matrix_csv(&args.out.join("N.csv"), &sc.grid, &res.n)?;
    write_lambda_csv(&args.out.join("Lambda.csv"), &sc.grid, &res.lambda)?;
    write_json(&args.out.join("report.json"), &report)?;
    Ok(report.exit_code)
}

fn comparison(cascade: &CascadeSolution, reference: &CascadeSolution, oracle: Option<&CascadeSolution>) -> Comparison {
    let d = cascade.relative_discrepancy(reference);
    Comparison {
        max: d.iter().copied().fold(0.0, f64::max),
        cascade_vs_reference: d,
        cascade_vs_oracle: oracle.map(|o| cascade.relative_discrepancy(o)),
        reference_vs_oracle: oracle.map(|o| reference.relative_discrepancy(o)),
    }
}

pub fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    let (sc, spec, discarded) = match &args.from_triangularised {
        Some(dir) => {
            let path = dir.join("scenario.json");
            let sc = Scenario::load(&path)?;
            let (res, _) = sc.triangularise(&schur_config())?;
            let (spec, discarded) = triangularised_system(&sc, &res)?;
            (sc, spec, Some(discarded))
        }
        None => {
            let path = args.scenario.as_ref().expect("required by clap");
            let sc = Scenario::load(path)?;
            let spec = sc.system()?;
            (sc, spec, None)
        }
    };
    prepare_out(&args.out)?;
    let seed = args.seed.unwrap_or_else(|| sc.seed());
    let cfg = CascadeConfig {
        substeps: sc.file.substeps.unwrap_or(CascadeConfig::default().substeps),
        tol_fp: args.tol_fp.unwrap_or(CascadeConfig::default().tol_fp),
        override_levi: args.override_levi || sc.file.flags.override_levi,
        ..CascadeConfig::default()
    };
    let mut report = SolveReport {
        command: "solve",
        exit_code: EXIT_OK,
        mode: args.mode,
        seed,
        m: sc.m(),
        s: sc.file.s,
        grid: (&sc.grid).into(),
        substeps: cfg.substeps,
        tol_fp: cfg.tol_fp,
        override_levi: cfg.override_levi,
        from_triangularised: args.from_triangularised.is_some(),
        hypothesis: None,
        slab_boundaries: vec![],
        neumann_stats: vec![],
        c_fit: None,
        residual: None,
        growth_fit: None,
        comparison: None,
        orders: vec![],
        convergence: None,
        low_frequency_discarded: discarded,
        warnings: sc.order_spot_checks(seed),
        error: None,
    };
    let report_path = args.out.join("report.json");
    match solve_into(&sc, &spec, &cfg, args.mode, &args.out, &mut report) {
        Ok(()) => {}
        Err(e) => {
            report.exit_code = exit_code(&e);
            report.error = Some((&e).into());
            eprintln!("error: {e}");
        }
    }
    write_json(&report_path, &report)?;
    Ok(report.exit_code)
}

fn solve_into(
    sc: &Scenario,
    spec: &SystemSpec,
    cfg: &CascadeConfig,
    mode: Mode,
    out: &Path,
    report: &mut SolveReport,
) -> Result<()> {
    let grid = &sc.grid;
    let hyp = check_hypotheses(spec, grid)?;
    let passed = hyp.passed;
    let failures = hyp.failures();
    report.hypothesis = Some(hyp);
    if !passed {
        if !cfg.override_levi {
            return Err(Error::HypothesisFailure(failures.join("; ")));
        }
        report.warnings.extend(failures.into_iter().map(|f| format!("hypothesis overridden: {f}")));
    }
    let oracle = mode_oracle(spec, grid).ok();
    let primary = match mode {
        Mode::Cascade => solve_cascade(spec, grid, cfg)?,
        Mode::Reference => solve_reference(spec, grid, cfg)?,
        Mode::Both => {
            let c = solve_cascade(spec, grid, cfg)?;
            let r = solve_reference(spec, grid, cfg)?;
            report.comparison = Some(comparison(&c, &r, oracle.as_ref()));
            write_solution_csv(&out.join("reference_solution.csv"), &r)?;
            c
        }
    };
    report.slab_boundaries = primary.slab_boundaries.clone();
    report.neumann_stats = primary.neumann_stats.clone();
    match fit_solution(&primary) {
        Ok(fit) => {
            report.c_fit = Some(fit.c_fit);
            report.residual = Some(fit.residual);
            report.growth_fit = Some(fit);
        }
        Err(Error::DegenerateData(msg)) => report.warnings.push(format!("no growth fit: {msg}")),
        Err(e) => return Err(e),
    }
    for w in aliasing_warnings(&primary) {
        report.warnings.push(w);
    }
    if let Some(ladder) = &sc.file.refine {
        let conv = refinement_study(ladder, oracle.as_ref(), |r| {
            let c = CascadeConfig { substeps: r, ..*cfg };
            match mode {
                Mode::Reference => solve_reference(spec, grid, &c),
                _ => solve_cascade(spec, grid, &c),
            }
        })?;
        report.orders = conv.measured_orders();
        report.convergence = Some(conv);
    }
    write_norms_csv(&out.join("norms.csv"), &primary)?;
    write_solution_csv(&out.join("solution.csv"), &primary)?;
    Ok(())
}

fn read_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            ErrorKind::NotFound,
            format!("missing {}", path.display()),
        )));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.records().collect::<std::result::Result<Vec<_>, _>>()?)
}

fn num(rec: &csv::StringRecord, i: usize, file: &str) -> std::result::Result<f64, String> {
    rec.get(i)
        .and_then(|s| s.parse::<f64>().ok())
        .ok_or_else(|| format!("{file}: malformed value in column {}", i + 1))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= VERIFY_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Collects mismatches as human-readable lines.
#[derive(Default)]
struct Mismatches(Vec<String>);

impl Mismatches {
    fn check(&mut self, name: &str, stored: f64, recomputed: f64) {
        if !close(stored, recomputed) {
            self.0.push(format!("{name}: stored {stored:e}, recomputed {recomputed:e}"));
        }
    }
}

pub fn cmd_verify(out: &Path) -> Result<i32> {
    let report_path = out.join("report.json");
    if !report_path.exists() {
        return Err(Error::Io(std::io::Error::new(
            ErrorKind::NotFound,
            format!("missing {}", report_path.display()),
        )));
    }
    let report: serde_json::Value = match serde_json::from_str(&fs::read_to_string(&report_path)?) {
        Ok(v) => v,
        Err(e) => {
            println!("mismatch: report.json is not valid JSON ({e})");
            return Ok(EXIT_MISMATCH);
        }
    };
    if report.get("error").is_some() {
        println!("report records a failed run; nothing to recompute");
        return Ok(EXIT_OK);
    }
    let result = match report.get("command").and_then(|c| c.as_str()) {
        Some("triangularise") => verify_triangularise(out, &report),
        Some("solve") => verify_solve(out, &report),
        _ => Ok(Mismatches(vec!["report.json: unknown command".into()])),
    };
    let mismatches = match result {
        Ok(m) => m,
        Err(Error::Io(e)) if e.kind() == ErrorKind::NotFound => return Err(Error::Io(e)),
        Err(e) => Mismatches(vec![format!("unreadable artifacts: {e}")]),
    };
    if mismatches.0.is_empty() {
        println!("verified {}", out.display());
        Ok(EXIT_OK)
    } else {
        for m in &mismatches.0 {
            println!("mismatch: {m}");
        }
        Ok(EXIT_MISMATCH)
    }
}

fn json_f64(v: &serde_json::Value, path: &[&str]) -> Option<f64> {
    let mut cur = v;
    for p in path {
        cur = cur.get(p)?;
    }
    cur.as_f64()
}

fn verify_triangularise(out: &Path, report: &serde_json::Value) -> Result<Mismatches> {
    let file: ScenarioFile = serde_json::from_str(&fs::read_to_string(out.join("scenario.json"))?)?;
    let sc = Scenario::from_file(file)?;
    let a = sc.a.as_ref().ok_or_else(|| Error::Scenario("stored scenario has no A".into()))?;
    let m = sc.m();
    let t_rows = read_rows(&out.join("T.csv"))?;
    let ti_rows = read_rows(&out.join("Tinv.csv"))?;
    let n_rows = read_rows(&out.join("N.csv"))?;
    let l_rows = read_rows(&out.join("Lambda.csv"))?;
    let mut mm = Mismatches::default();
    let nodes = t_rows.len() / (m * m);
    if t_rows.len() != nodes * m * m || ti_rows.len() != t_rows.len() || n_rows.len() != t_rows.len() || l_rows.len() != nodes * m {
        mm.0.push("CSV row counts are inconsistent".into());
        return Ok(mm);
    }
    let read_mat = |rows: &[csv::StringRecord], node: usize, file: &str| -> std::result::Result<nalgebra::DMatrix<C64>, String> {
        let mut out = nalgebra::DMatrix::zeros(m, m);
        for p in 0..m * m {
            let r = &rows[node * m * m + p];
            out[(p / m, p % m)] = C64::new(num(r, 5, file)?, num(r, 6, file)?);
        }
        Ok(out)
    };
    let (mut total, mut below, mut inv, mut diag) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for node in 0..nodes {
        let r0 = &t_rows[node * m * m];
        let parsed = (|| -> std::result::Result<_, String> {
            let (t, x, xi) = (num(r0, 0, "T.csv")?, num(r0, 1, "T.csv")?, num(r0, 2, "T.csv")?);
            let tm = read_mat(&t_rows, node, "T.csv")?;
            let ti = read_mat(&ti_rows, node, "Tinv.csv")?;
            let nm = read_mat(&n_rows, node, "N.csv")?;
            let mut lam = Vec::with_capacity(m);
            for j in 0..m {
                let r = &l_rows[node * m + j];
                lam.push(C64::new(num(r, 4, "Lambda.csv")?, num(r, 5, "Lambda.csv")?));
            }
            Ok((t, x, xi, tm, ti, nm, lam))
        })();
        let (t, x, xi, tm, ti, nm, lam) = match parsed {
            Ok(v) => v,
            Err(msg) => {
                mm.0.push(msg);
                return Ok(mm);
            }
        };
        let conj = &ti * a.eval(t, x, xi) * &tm;
        for i in 0..m {
            for j in 0..m {
                let target = if i == j { lam[i] } else { nm[(i, j)] };
                total = total.max((conj[(i, j)] - target).norm());
                if i > j {
                    below = below.max(conj[(i, j)].norm());
                }
            }
            diag = diag.max((conj[(i, i)] - lam[i]).norm());
        }
        inv = inv.max(max_modulus((&ti * &tm - nalgebra::DMatrix::<C64>::identity(m, m)).iter()));
    }
    for (key, value) in [
        ("residual_total", total),
        ("residual_below_diag", below),
        ("residual_inverse", inv),
        ("diag_deviation_max", diag),
    ] {
        match json_f64(report, &["verification", key]) {
            Some(stored) => mm.check(key, stored, value),
            None => mm.0.push(format!("report.json: missing verification.{key}")),
        }
    }
    Ok(mm)
}

/// Reads `solution.csv`-style rows into fields indexed `[time][component]`.
fn read_solution(path: &Path, grid: &GridSpec, m: usize, mm: &mut Mismatches) -> Result<Option<Vec<Vec<Field>>>> {
    let rows = read_rows(path)?;
    let nx = grid.nx();
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if rows.len() != grid.nt * m * nx {
        mm.0.push(format!("{name}: expected {} rows, found {}", grid.nt * m * nx, rows.len()));
        return Ok(None);
    }
    let mut out = Vec::with_capacity(grid.nt);
    for n in 0..grid.nt {
        let mut comps = Vec::with_capacity(m);
        for k in 0..m {
            let mut f = Field::zeros(grid.torus);
            for i in 0..nx {
                let r = &rows[(n * m + k) * nx + i];
                match (num(r, 3, &name), num(r, 4, &name)) {
                    (Ok(re), Ok(im)) => f.values[i] = C64::new(re, im),
                    (Err(e), _) | (_, Err(e)) => {
                        mm.0.push(e);
                        return Ok(None);
                    }
                }
            }
            comps.push(f);
        }
        out.push(comps);
    }
    Ok(Some(out))
}

fn verify_solve(out: &Path, report: &serde_json::Value) -> Result<Mismatches> {
    let grid: GridInfo = serde_json::from_value(report["grid"].clone())?;
    let grid = grid.grid()?;
    let m = report["m"].as_u64().unwrap_or(0) as usize;
    let s = report["s"].as_f64().unwrap_or(0.0);
    let mut mm = Mismatches::default();
    let norm_rows = read_rows(&out.join("norms.csv"))?;
    let Some(states) = read_solution(&out.join("solution.csv"), &grid, m, &mut mm)? else {
        return Ok(mm);
    };
    if norm_rows.len() != grid.nt * m {
        mm.0.push(format!("norms.csv: expected {} rows, found {}", grid.nt * m, norm_rows.len()));
        return Ok(mm);
    }
    let mut times = Vec::with_capacity(grid.nt);
    let mut trace = Vec::with_capacity(grid.nt);
    for (n, comps) in states.iter().enumerate() {
        let mut row = Vec::with_capacity(m);
        for (k, f) in comps.iter().enumerate() {
            let r = &norm_rows[n * m + k];
            let stored = match num(r, 2, "norms.csv") {
                Ok(v) => v,
                Err(e) => {
                    mm.0.push(e);
                    return Ok(mm);
                }
            };
            mm.check(&format!("norms.csv row {} (k={})", n * m + k + 1, k + 1), stored, sobolev_norm(f, s + k as f64));
            row.push(stored);
        }
        times.push(num(&norm_rows[n * m], 0, "norms.csv").unwrap_or(f64::NAN));
        trace.push(row);
    }
    if let Some(stored) = report["c_fit"].as_f64() {
        match fit_exponential_bound(&times, &trace, trace[0].iter().sum()) {
            Ok(fit) => {
                mm.check("c_fit", stored, fit.c_fit);
                if let Some(r) = report["residual"].as_f64() {
                    mm.check("residual", r, fit.residual);
                }
            }
            Err(e) => mm.0.push(format!("c_fit: cannot refit ({e})")),
        }
    }
    if let Some(stored) = report.get("comparison").and_then(|c| c["cascade_vs_reference"].as_array()) {
        if let Some(reference) = read_solution(&out.join("reference_solution.csv"), &grid, m, &mut mm)? {
            for k in 0..m {
                let mut num_ = 0.0f64;
                let mut den = 0.0f64;
                for (a, b) in states.iter().zip(&reference) {
                    let sigma = s + k as f64;
                    num_ = num_.max(sobolev_norm(&a[k].sub(&b[k]), sigma));
                    den = den.max(sobolev_norm(&b[k], sigma));
                }
                let d = if den > 0.0 { num_ / den } else { num_ };
                let want = stored.get(k).and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
                mm.check(&format!("comparison.cascade_vs_reference[{k}]"), want, d);
            }
        }
    }
    Ok(mm)
}
