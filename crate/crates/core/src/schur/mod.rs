//! Parameter-dependent Schur triangularisation of matrix symbols.
//!
//! Given eigenvalue symbols `lambda_1..lambda_m` and eigenvector symbols
//! `h_1..h_{m-1}` of `A(t, x, xi)`, the procedure builds a non-unitary
//! `T = T_1 ... T_{m-1}` with entries of order zero such that
//! `T^{-1} A T = diag(lambda) + N` on the shell `|xi| >= M`, with `N` strictly
//! upper triangular.
//!
//! Each factor comes from one Schur step: the eigenvector is rescaled so that
//! its pivot component is identically one, and the rescaled vector becomes
//! the first column of a unit lower-triangular matrix. The pivot may be any
//! component that stays away from zero on the grid; the corresponding row and
//! column swap is recorded.

mod eigen;
mod verify;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub use eigen::{dense_eigen, numeric_eigendata, ContinuationConfig, EigenFit, MultiplicityWarning};
pub use verify::{verify_triangular, verify_triangular_with, VerificationReport};

use crate::error::{Error, Result, Witness};
use crate::grid::GridSpec;
use crate::par::{self, Exec};
use crate::symbol::{max_modulus, MatrixSymbol, ScalarSymbol, VectorSymbol, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchurConfig {
    /// Pivot threshold, relative to the sup-norm of the vector on the grid.
    pub eps_cond: f64,
    /// Relative eigen-residual tolerance.
    pub tol_eig: f64,
    /// Absolute tolerance on triangularity residuals.
    pub tol_tri: f64,
    pub exec: Exec,
}

impl Default for SchurConfig {
    fn default() -> Self {
        SchurConfig {
            eps_cond: 1e-6,
            tol_eig: 1e-8,
            tol_tri: 1e-9,
            exec: Exec::default(),
        }
    }
}

/// Eigenvalues `lambda_1..lambda_m` (order 1) and eigenvectors
/// `h_1..h_{m-1}` (order 0) of a matrix symbol, in the prescribed order.
#[derive(Debug, Clone)]
pub struct EigenData {
    pub eigenvalues: Vec<ScalarSymbol>,
    pub eigenvectors: Vec<VectorSymbol>,
}

impl EigenData {
    pub fn new(eigenvalues: Vec<ScalarSymbol>, eigenvectors: Vec<VectorSymbol>) -> Result<Self> {
        let m = eigenvalues.len();
        if m == 0 || eigenvectors.len() + 1 != m {
            return Err(Error::Dimension {
                expected: m.saturating_sub(1),
                found: eigenvectors.len(),
            });
        }
        if let Some(bad) = eigenvectors.iter().find(|h| h.dim() != m) {
            return Err(Error::Dimension {
                expected: m,
                found: bad.dim(),
            });
        }
        Ok(EigenData {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Pivot choice for one step of the procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepCondition {
    /// 1-based step number.
    pub step: usize,
    /// 0-based pivot component within the reduced eigenvector.
    pub pivot: usize,
    /// `min over the shell of |<h^(step) | e_pivot>|`.
    pub min_modulus: f64,
}

/// Output of [`schur_step`].
#[derive(Debug, Clone)]
pub struct SchurStep {
    /// Effective transform, swap included: `T = P * core`.
    pub t: MatrixSymbol,
    pub t_inv: MatrixSymbol,
    /// Unit lower-triangular factor built from the rescaled eigenvector `mu`.
    pub core: MatrixSymbol,
    pub core_inv: MatrixSymbol,
    /// `mu_i = h_{perm(i)} / h_pivot`, with `mu_0 = 1`.
    pub mu: VectorSymbol,
    /// Lower-right `(m-1) x (m-1)` block of `T^{-1} A T`.
    pub e: MatrixSymbol,
    /// `T^{-1} A T`.
    pub conjugated: MatrixSymbol,
    pub pivot: usize,
    pub min_modulus: f64,
}

/// Result of [`full_triangularise`].
#[derive(Debug, Clone)]
pub struct TriangularResult {
    pub t: MatrixSymbol,
    pub t_inv: MatrixSymbol,
    pub lambda: Vec<ScalarSymbol>,
    /// Strictly upper part of `T^{-1} A T`.
    pub n: MatrixSymbol,
    /// Row/column swap applied at each step, in full-matrix indices.
    pub permutations: Vec<(usize, usize)>,
    pub condition_report: Vec<StepCondition>,
    /// Per-step unpermuted factors embedded in `m x m`, for audits.
    pub core_factors: Vec<MatrixSymbol>,
    /// `T^{-1} A T` as composed during the procedure.
    pub conjugated: MatrixSymbol,
}

fn swap_perm(m: usize, j: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..m).collect();
    p.swap(0, j);
    p
}

/// Permutation matrix `P` with `(P v)_a = v_{perm[a]}`.
pub fn permutation_matrix(perm: &[usize]) -> DMatrix<C64> {
    let m = perm.len();
    let mut p = DMatrix::zeros(m, m);
    for (a, &b) in perm.iter().enumerate() {
        p[(a, b)] = C64::new(1.0, 0.0);
    }
    p
}

/// Smallest 0-based component index `j` with
/// `min over the shell |<hred|e_j>| >= eps_cond * sup |hred|`.
pub fn check_condition(hred: &VectorSymbol, grid: &GridSpec, eps_cond: f64) -> Result<(usize, f64)> {
    check_condition_at(hred, grid, eps_cond, 1, Exec::default())
}

pub(crate) fn check_condition_at(
    hred: &VectorSymbol,
    grid: &GridSpec,
    eps_cond: f64,
    step: usize,
    exec: Exec,
) -> Result<(usize, f64)> {
    let dim = hred.dim();
    let nodes = grid.shell_nodes();
    let moduli: Vec<Vec<f64>> = par::map_slice(exec, &nodes, |&node| {
        let (t, x, xi) = grid.point(node);
        hred.eval(t, x, xi).iter().map(|v| v.norm()).collect()
    });
    let mut sup = 0.0f64;
    let mut mins = vec![(f64::INFINITY, 0usize); dim];
    for (idx, row) in moduli.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                let (t, x, xi) = grid.point(nodes[idx]);
                return Err(Error::Evaluation(Witness { t, x, xi }));
            }
            sup = sup.max(v);
            if v < mins[j].0 {
                mins[j] = (v, idx);
            }
        }
    }
    let threshold = eps_cond * sup;
    if sup > 0.0 {
        if let Some(j) = (0..dim).find(|&j| mins[j].0 >= threshold) {
            return Ok((j, mins[j].0));
        }
    }
    // the component that comes closest to qualifying provides the witness
    let (best_j, _) = mins
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (j, m)| if m.0 > acc.1 { (j, m.0) } else { acc });
    let (t, x, xi) = grid.point(nodes[mins[best_j].1]);
    Err(Error::ConditionFailure {
        step,
        min_modulus: mins[best_j].0,
        witness: Witness { t, x, xi },
    })
}

/// Max over the shell of `|A h - lambda h| / ((|A| + |lambda|) |h|)`.
fn eigen_residual(
    a: &MatrixSymbol,
    lambda: &ScalarSymbol,
    h: &VectorSymbol,
    grid: &GridSpec,
    exec: Exec,
) -> (f64, Witness) {
    let nodes = grid.shell_nodes();
    let res = par::map_slice(exec, &nodes, |&node| {
        let (t, x, xi) = grid.point(node);
        let am = a.eval(t, x, xi);
        let hv = h.eval(t, x, xi);
        let lv = lambda.eval(t, x, xi);
        let r = max_modulus((&am * &hv - &hv * lv).iter());
        let scale = (max_modulus(am.iter()) * am.nrows() as f64 + lv.norm()) * max_modulus(hv.iter());
        if scale > 0.0 {
            r / scale
        } else {
            r
        }
    });
    let (idx, worst) = res
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |acc, (i, &r)| if r > acc.1 || r.is_nan() { (i, r) } else { acc });
    let (t, x, xi) = if nodes.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        grid.point(nodes[idx])
    };
    (worst, Witness { t, x, xi })
}

/// One Schur step: conjugates `A` so that its first column becomes
/// `(lambda, 0, ..., 0)`, returning the transform and the reduced block.
pub fn schur_step(
    a: &MatrixSymbol,
    lambda: &ScalarSymbol,
    h: &VectorSymbol,
    grid: &GridSpec,
    cfg: &SchurConfig,
) -> Result<SchurStep> {
    schur_step_at(a, lambda, h, grid, cfg, 1)
}

fn schur_step_at(
    a: &MatrixSymbol,
    lambda: &ScalarSymbol,
    h: &VectorSymbol,
    grid: &GridSpec,
    cfg: &SchurConfig,
    step: usize,
) -> Result<SchurStep> {
    let m = a.dim();
    if h.dim() != m {
        return Err(Error::Dimension {
            expected: m,
            found: h.dim(),
        });
    }
    if m < 2 {
        return Err(Error::InvalidArgument("schur_step needs m >= 2".into()));
    }
    let (residual, witness) = eigen_residual(a, lambda, h, grid, cfg.exec);
    if !(residual <= cfg.tol_eig) {
        return Err(Error::BadEigenpair {
            step,
            residual,
            witness,
        });
    }
    let (pivot, min_modulus) = check_condition_at(h, grid, cfg.eps_cond, step, cfg.exec)?;
    let perm = swap_perm(m, pivot);

    let hv = h.clone();
    let perm_mu = perm.clone();
    let mut mu_orders = vec![0.0; m];
    mu_orders[0] = 0.0;
    let mu = VectorSymbol::from_fn(mu_orders, h.deps(), move |t, x, xi| {
        let v = hv.eval(t, x, xi);
        let p = v[perm_mu[0]];
        let mut out = DVector::from_fn(m, |i, _| v[perm_mu[i]] / p);
        out[0] = C64::new(1.0, 0.0);
        out
    });

    let mut core_orders = vec![f64::NEG_INFINITY; m * m];
    for i in 0..m {
        core_orders[i * m + i] = 0.0;
        core_orders[i * m] = 0.0;
    }
    let (mu1, mu2) = (mu.clone(), mu.clone());
    let core = MatrixSymbol::from_fn(m, core_orders.clone(), mu.deps(), move |t, x, xi| {
        let v = mu1.eval(t, x, xi);
        let mut out = DMatrix::identity(m, m);
        for i in 1..m {
            out[(i, 0)] = v[i];
        }
        out
    });
    let core_inv = MatrixSymbol::from_fn(m, core_orders, mu.deps(), move |t, x, xi| {
        let v = mu2.eval(t, x, xi);
        let mut out = DMatrix::identity(m, m);
        for i in 1..m {
            out[(i, 0)] = -v[i];
        }
        out
    });

    let (t, t_inv) = if pivot == 0 {
        (core.clone(), core_inv.clone())
    } else {
        let p = MatrixSymbol::constant(&permutation_matrix(&perm));
        (p.mul(&core)?, core_inv.mul(&p)?)
    };
    let conjugated = t_inv.mul(a)?.mul(&t)?;
    let e = conjugated.trailing_block(1)?;
    Ok(SchurStep {
        t,
        t_inv,
        core,
        core_inv,
        mu,
        e,
        conjugated,
        pivot,
        min_modulus,
    })
}

/// `h^(k) = Pi_k T_k^{-1} ... T_1^{-1} h` for 0-based `k = inverses.len()`,
/// where `inverses` are the embedded `m x m` inverse factors of the previous
/// steps.
pub fn reduced_eigenvector(h: &VectorSymbol, inverses: &[MatrixSymbol]) -> Result<VectorSymbol> {
    let k = inverses.len();
    let mut v = h.clone();
    for tinv in inverses {
        v = tinv.mul_vec(&v)?;
    }
    if k == 0 {
        return Ok(v);
    }
    let orders = vec![0.0; h.dim().saturating_sub(k)];
    let projected = v.project(k)?;
    Ok(VectorSymbol::from_fn(orders, projected.deps(), move |t, x, xi| {
        projected.eval(t, x, xi)
    }))
}

/// Full triangularisation `T^{-1} A T = diag(lambda) + N` by `m - 1` Schur
/// steps on successively smaller trailing blocks.
pub fn full_triangularise(
    a: &MatrixSymbol,
    eig: &EigenData,
    grid: &GridSpec,
    cfg: &SchurConfig,
) -> Result<TriangularResult> {
    let m = a.dim();
    if eig.dim() != m {
        return Err(Error::Dimension {
            expected: m,
            found: eig.dim(),
        });
    }
    let mut factors: Vec<MatrixSymbol> = Vec::with_capacity(m.saturating_sub(1));
    let mut inverses: Vec<MatrixSymbol> = Vec::with_capacity(m.saturating_sub(1));
    let mut cores = Vec::new();
    let mut permutations = Vec::new();
    let mut report = Vec::new();
    let mut current = a.clone();

    for k in 0..m.saturating_sub(1) {
        let hred = reduced_eigenvector(&eig.eigenvectors[k], &inverses)?;
        let block = if k == 0 {
            current.clone()
        } else {
            current.trailing_block(k)?
        };
        let step = schur_step_at(&block, &eig.eigenvalues[k], &hred, grid, cfg, k + 1)?;
        let tk = step.t.embed(k);
        let tk_inv = step.t_inv.embed(k);
        current = tk_inv.mul(&current)?.mul(&tk)?;
        permutations.push((k, k + step.pivot));
        report.push(StepCondition {
            step: k + 1,
            pivot: step.pivot,
            min_modulus: step.min_modulus,
        });
        cores.push(step.core.embed(k));
        factors.push(tk);
        inverses.push(tk_inv);
    }

    let mut t = MatrixSymbol::identity(m);
    for f in &factors {
        t = t.mul(f)?;
    }
    let mut t_inv = MatrixSymbol::identity(m);
    for f in inverses.iter().rev() {
        t_inv = t_inv.mul(f)?;
    }
    let mut n_entries = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            n_entries.push(if j > i {
                current.entry(i, j).clone().with_order(1.0)
            } else {
                ScalarSymbol::zero()
            });
        }
    }
    Ok(TriangularResult {
        t,
        t_inv,
        lambda: eig.eigenvalues.clone(),
        n: MatrixSymbol::from_entries(m, n_entries)?,
        permutations,
        condition_report: report,
        core_factors: cores,
        conjugated: current,
    })
}

#[cfg(test)]
mod tests;
