//! Cascade solver for `D_t u = (Lambda + N + B)(t, x, D) u + f` with `Lambda`
//! diagonal, `N` strictly upper triangular (both of order one) and `B` of
//! order zero whose below-diagonal entries satisfy the Levi condition
//! `ord b_ij <= j - i`.
//!
//! Component `k` (0-based) is measured in `H^{s+k}`. The solver follows the
//! constructive existence proof: scalar propagators along each
//! characteristic, back-substitution from the last component to the first,
//! Neumann inversion of the resulting fixed-point maps on a short time slab,
//! and continuation slab by slab. [`solve_reference`] integrates the full
//! coupled system by the method of lines and serves as an independent check.

mod growth;
mod reference;
mod solve;

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::par::Exec;
use crate::pdo::{apply_symbol_with, sobolev_norm, Field, StateVector};
use crate::propagators::{MeshSeries, TimeMesh};
use crate::symbol::{dyadic_levels, estimate_order, MatrixSymbol, ScalarSymbol, C64};

pub use growth::{demo_loss_of_regularity, GrowthConfig, GrowthReport, GrowthSample};
pub use reference::{mode_oracle, solve_reference};
pub use solve::{
    neumann_invert, solve_cascade, LevelStats, NeumannStat, SlabEngine, SlabStats,
};

/// Principal and lower-order symbols of an upper-triangular system.
#[derive(Debug, Clone)]
pub struct SystemSymbols {
    /// Diagonal of the principal part, order one and real.
    pub lambda: Vec<ScalarSymbol>,
    /// Strictly upper-triangular part of the principal part.
    pub nupper: MatrixSymbol,
    /// Zero-order part.
    pub b: MatrixSymbol,
}

impl SystemSymbols {
    pub fn new(lambda: Vec<ScalarSymbol>, nupper: MatrixSymbol, b: MatrixSymbol) -> Result<Self> {
        let m = lambda.len();
        for d in [nupper.dim(), b.dim()] {
            if d != m {
                return Err(Error::Dimension { expected: m, found: d });
            }
        }
        Ok(SystemSymbols { lambda, nupper, b })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// Coefficient of `u_j` in equation `k`: `b_kj` below the diagonal,
    /// `a_kj + b_kj` above it.
    pub fn coupling(&self, k: usize, j: usize) -> ScalarSymbol {
        if j < k {
            self.b.entry(k, j).clone()
        } else {
            self.nupper.entry(k, j) + self.b.entry(k, j)
        }
    }

    /// `A + B` with `A = diag(lambda) + N`.
    pub fn full_matrix(&self) -> Result<MatrixSymbol> {
        MatrixSymbol::diagonal(&self.lambda).add(&self.nupper)?.add(&self.b)
    }
}

type ForcingFn = dyn Fn(f64) -> Vec<Field> + Send + Sync;

/// Source term `f`.
#[derive(Clone, Default)]
pub enum Forcing {
    #[default]
    Zero,
    /// Values at the grid times, indexed `[time][component]`; interpolated
    /// linearly in between.
    Levels(Vec<Vec<Field>>),
    /// Exact evaluation at any time.
    Function(Arc<ForcingFn>),
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Forcing::Zero => write!(f, "Forcing::Zero"),
            Forcing::Levels(l) => write!(f, "Forcing::Levels({} levels)", l.len()),
            Forcing::Function(_) => write!(f, "Forcing::Function"),
        }
    }
}

impl Forcing {
    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::Zero)
    }

    /// Component `k` on the half-step points of `mesh`, or `None` for zero.
    pub fn on_mesh(&self, k: usize, mesh: TimeMesh, grid: &GridSpec) -> Result<Option<MeshSeries>> {
        match self {
            Forcing::Zero => Ok(None),
            Forcing::Levels(levels) => {
                let comp: Vec<Field> = levels.iter().map(|l| l[k].clone()).collect();
                Ok(Some(MeshSeries::from_levels(mesh, grid, &comp)?))
            }
            Forcing::Function(f) => Ok(Some(MeshSeries::from_fn(mesh, |t| f(t)[k].clone()))),
        }
    }

    /// All components at time `t` (linear interpolation for levels).
    pub fn at(&self, t: f64, grid: &GridSpec, like: &Field, m: usize) -> Vec<Field> {
        match self {
            Forcing::Zero => vec![Field::zeros(like.torus); m],
            Forcing::Function(f) => f(t),
            Forcing::Levels(levels) => {
                let dt = grid.dt();
                let s = (t / dt).clamp(0.0, (grid.nt - 1) as f64);
                let n = (s.floor() as usize).min(grid.nt - 2);
                let w = s - n as f64;
                (0..m)
                    .map(|k| {
                        let mut out = levels[n][k].scaled(C64::new(1.0 - w, 0.0));
                        out.axpy(C64::new(w, 0.0), &levels[n + 1][k]);
                        out
                    })
                    .collect()
            }
        }
    }
}

/// A full Cauchy problem.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub symbols: SystemSymbols,
    pub u0: Vec<Field>,
    pub forcing: Forcing,
    /// Base Sobolev index `s`; component `k` lives in `H^{s+k}`.
    pub s: f64,
}

impl SystemSpec {
    pub fn new(symbols: SystemSymbols, u0: Vec<Field>, forcing: Forcing, s: f64) -> Result<Self> {
        if u0.len() != symbols.dim() {
            return Err(Error::Dimension {
                expected: symbols.dim(),
                found: u0.len(),
            });
        }
        if let Forcing::Levels(levels) = &forcing {
            if let Some(bad) = levels.iter().find(|l| l.len() != symbols.dim()) {
                return Err(Error::Dimension {
                    expected: symbols.dim(),
                    found: bad.len(),
                });
            }
        }
        Ok(SystemSpec {
            symbols,
            u0,
            forcing,
            s,
        })
    }

    pub fn dim(&self) -> usize {
        self.symbols.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeConfig {
    /// RK4 steps per grid interval.
    pub substeps: usize,
    /// Relative increment tolerance of the Neumann iterations.
    pub tol_fp: f64,
    pub max_iter: usize,
    /// Smallest slab, in RK4 steps, before giving up.
    pub min_slab_steps: usize,
    /// First slab length in RK4 steps; the whole interval when `None`.
    pub initial_slab_steps: Option<usize>,
    /// Solve even when the Levi condition fails.
    pub override_levi: bool,
    pub exec: Exec,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            substeps: 8,
            tol_fp: 1e-10,
            max_iter: 200,
            min_slab_steps: 4,
            initial_slab_steps: None,
            override_levi: false,
            exec: Exec::default(),
        }
    }
}

/// Output of [`solve_cascade`] and [`solve_reference`].
#[derive(Debug, Clone)]
pub struct CascadeSolution {
    pub times: Vec<f64>,
    /// State at each grid time.
    pub u: Vec<StateVector>,
    /// Start times of the slabs.
    pub slab_boundaries: Vec<f64>,
    pub neumann_stats: Vec<SlabStats>,
    /// `||u_k(t)||_{H^{s+k}}` per grid time.
    pub norm_trace: Vec<Vec<f64>>,
}

impl CascadeSolution {
    pub(crate) fn from_states(
        times: Vec<f64>,
        u: Vec<StateVector>,
        slab_boundaries: Vec<f64>,
        neumann_stats: Vec<SlabStats>,
    ) -> Self {
        let norm_trace = u.iter().map(|v| v.anisotropic_norms()).collect();
        CascadeSolution {
            times,
            u,
            slab_boundaries,
            neumann_stats,
            norm_trace,
        }
    }

    /// `max_t ||u_k - v_k||_{H^{s+k}} / max_t ||v_k||_{H^{s+k}}` per component.
    pub fn relative_discrepancy(&self, other: &CascadeSolution) -> Vec<f64> {
        let m = self.u.first().map(|v| v.dim()).unwrap_or(0);
        (0..m)
            .map(|k| {
                let mut num = 0.0f64;
                let mut den = 0.0f64;
                for (a, b) in self.u.iter().zip(&other.u) {
                    let sigma = b.sobolev_base + k as f64;
                    num = num.max(sobolev_norm(&a.components[k].sub(&b.components[k]), sigma));
                    den = den.max(sobolev_norm(&b.components[k], sigma));
                }
                if den > 0.0 {
                    num / den
                } else {
                    num
                }
            })
            .collect()
    }
}

/// Estimated order of one below-diagonal entry against the required `j - i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeviCheck {
    /// 1-based row.
    pub i: usize,
    /// 1-based column.
    pub j: usize,
    /// `None` when the entry vanishes.
    pub estimated: Option<f64>,
    pub required: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub levi: Vec<LeviCheck>,
    pub lambda_real: bool,
    pub lambda_max_imag: f64,
    pub nupper_strict: bool,
    pub data_finite: bool,
    pub passed: bool,
}

impl HypothesisReport {
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .levi
            .iter()
            .filter(|c| !c.pass)
            .map(|c| {
                format!(
                    "b_{}{} has order {:.3} > {}",
                    c.i,
                    c.j,
                    c.estimated.unwrap_or(f64::NEG_INFINITY),
                    c.required
                )
            })
            .collect();
        if !self.lambda_real {
            out.push(format!("lambda is not real (max |Im| = {:e})", self.lambda_max_imag));
        }
        if !self.nupper_strict {
            out.push("N is not strictly upper triangular".into());
        }
        if !self.data_finite {
            out.push("data is not finite".into());
        }
        out
    }
}

/// Margin on the Levi order check.
pub const ORDER_SLACK: f64 = 0.1;

fn probe_levels(grid: &GridSpec) -> Vec<f64> {
    let mut lo = 8.0f64;
    while lo < 2.0 * grid.cutoff {
        lo *= 2.0;
    }
    dyadic_levels(lo, 64.0 * lo)
}

/// Checks the Levi orders `ord b_ij <= j - i + 0.1`, reality of `lambda`,
/// strict triangularity of `N` and finiteness of the data.
pub fn check_hypotheses(spec: &SystemSpec, grid: &GridSpec) -> Result<HypothesisReport> {
    let sym = &spec.symbols;
    let m = sym.dim();
    let levels = probe_levels(grid);
    let mut levi = Vec::new();
    for i in 0..m {
        for j in 0..i {
            let b = sym.b.entry(i, j);
            let required = j as f64 - i as f64;
            let est = if b.is_zero() {
                f64::NEG_INFINITY
            } else {
                estimate_order(b, grid, &levels)?
            };
            levi.push(LeviCheck {
                i: i + 1,
                j: j + 1,
                estimated: est.is_finite().then_some(est),
                required,
                pass: est <= required + ORDER_SLACK,
            });
        }
    }
    let mut lambda_max_imag = 0.0f64;
    let mut below = 0.0f64;
    for &t in &grid.times() {
        for &x in &grid.xs() {
            for &xi in &grid.frequencies() {
                for (k, l) in sym.lambda.iter().enumerate() {
                    let v = l.eval(t, x, xi);
                    lambda_max_imag = lambda_max_imag.max(v.im.abs() / v.norm().max(1.0));
                    for j in 0..=k {
                        below = below.max(sym.nupper.entry(k, j).eval(t, x, xi).norm());
                    }
                }
            }
        }
    }
    let data_finite = spec.u0.iter().all(Field::is_finite)
        && match &spec.forcing {
            Forcing::Zero => true,
            Forcing::Levels(l) => l.iter().flatten().all(Field::is_finite),
            Forcing::Function(f) => grid.times().iter().all(|&t| f(t).iter().all(Field::is_finite)),
        };
    let lambda_real = lambda_max_imag <= 1e-10;
    let nupper_strict = below <= 1e-12;
    let passed = levi.iter().all(|c| c.pass) && lambda_real && nupper_strict && data_finite;
    Ok(HypothesisReport {
        levi,
        lambda_real,
        lambda_max_imag,
        nupper_strict,
        data_finite,
        passed,
    })
}

/// `sum_{j<i} b_ij u_j + sum_{j>i} (a_ij + b_ij) u_j` at time `t` (0-based `i`).
pub fn component_rhs(spec: &SystemSpec, i: usize, u: &StateVector, t: f64) -> Field {
    let mut out = Field::zeros(u.components[i].torus);
    for (j, uj) in u.components.iter().enumerate() {
        if j == i {
            continue;
        }
        let c = spec.symbols.coupling(i, j);
        if !c.is_zero() {
            out = out.add(&apply_symbol_with(&c, t, uj, Exec::Sequential));
        }
    }
    out
}
