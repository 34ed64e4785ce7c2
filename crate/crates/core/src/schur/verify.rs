use serde::ser::{Serialize, SerializeMap, Serializer};

use crate::grid::GridSpec;
use crate::par::{self, Exec};
use crate::symbol::{dyadic_levels, estimate_order, max_modulus, MatrixSymbol, C64};

use super::TriangularResult;

/// Numerical audit of `T^{-1} A T = diag(lambda) + N` on the grid shell.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    /// `max |T^{-1} A T - (diag(lambda) + N)|`.
    pub residual_total: f64,
    /// `max |(T^{-1} A T)_ij|` over `i > j`.
    pub residual_below_diag: f64,
    /// `max |T^{-1} T - I|`.
    pub residual_inverse: f64,
    /// Per eigenvalue `max |(T^{-1} A T)_ii - lambda_i|`.
    pub diag_deviation: Vec<f64>,
    pub diag_deviation_max: f64,
    /// Largest estimated order among entries of `T` and `T^{-1}`.
    pub order_t_max: f64,
    /// Largest estimated order among entries of `N`; `-inf` when `N = 0`.
    pub order_n_max: f64,
}

impl VerificationReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.residual_total < tol && self.residual_below_diag < tol && self.residual_inverse < tol
    }
}

/// Flat JSON object; a vanishing order is written as `null`.
impl Serialize for VerificationReport {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let finite = |v: f64| if v.is_finite() { Some(v) } else { None };
        let mut map = s.serialize_map(Some(6))?;
        map.serialize_entry("residual_total", &self.residual_total)?;
        map.serialize_entry("residual_below_diag", &self.residual_below_diag)?;
        map.serialize_entry("residual_inverse", &self.residual_inverse)?;
        map.serialize_entry("diag_deviation_max", &self.diag_deviation_max)?;
        map.serialize_entry("order_T_max", &finite(self.order_t_max))?;
        map.serialize_entry("order_N_max", &finite(self.order_n_max))?;
        map.end()
    }
}

fn order_levels(grid: &GridSpec) -> Vec<f64> {
    let mut lo = 8.0f64;
    while lo < 2.0 * grid.cutoff {
        lo *= 2.0;
    }
    dyadic_levels(lo, 64.0 * lo)
}

fn max_order(syms: &[&MatrixSymbol], grid: &GridSpec) -> f64 {
    let levels = order_levels(grid);
    let mut worst = f64::NEG_INFINITY;
    for s in syms {
        let m = s.dim();
        for i in 0..m {
            for j in 0..m {
                let e = s.entry(i, j);
                let o = match e.as_constant() {
                    Some(c) if c == C64::new(0.0, 0.0) => f64::NEG_INFINITY,
                    Some(_) => 0.0,
                    None => estimate_order(e, grid, &levels).unwrap_or(f64::NAN),
                };
                if o > worst || o.is_nan() {
                    worst = o;
                }
            }
        }
    }
    worst
}

pub fn verify_triangular(a: &MatrixSymbol, res: &TriangularResult, grid: &GridSpec) -> VerificationReport {
    verify_triangular_with(a, res, grid, Exec::default())
}

pub fn verify_triangular_with(
    a: &MatrixSymbol,
    res: &TriangularResult,
    grid: &GridSpec,
    exec: Exec,
) -> VerificationReport {
    let m = a.dim();
    let nodes = grid.shell_nodes();
    // (total, below, inverse, diag deviations)
    let per_node = par::map_slice(exec, &nodes, |&node| {
        let (t, x, xi) = grid.point(node);
        let tm = res.t.eval(t, x, xi);
        let ti = res.t_inv.eval(t, x, xi);
        let conj = &ti * a.eval(t, x, xi) * &tm;
        let nm = res.n.eval(t, x, xi);
        let mut total = 0.0f64;
        let mut below = 0.0f64;
        let mut diag = vec![0.0f64; m];
        for i in 0..m {
            let lam = res.lambda[i].eval(t, x, xi);
            for j in 0..m {
                let target = if i == j { lam } else { nm[(i, j)] };
                total = total.max((conj[(i, j)] - target).norm());
                if i > j {
                    below = below.max(conj[(i, j)].norm());
                }
            }
            diag[i] = (conj[(i, i)] - lam).norm();
        }
        let inv = max_modulus((ti * tm - nalgebra::DMatrix::<C64>::identity(m, m)).iter());
        (total, below, inv, diag)
    });
    let mut report = VerificationReport {
        residual_total: 0.0,
        residual_below_diag: 0.0,
        residual_inverse: 0.0,
        diag_deviation: vec![0.0; m],
        diag_deviation_max: 0.0,
        order_t_max: max_order(&[&res.t, &res.t_inv], grid),
        order_n_max: max_order(&[&res.n], grid),
    };
    for (total, below, inv, diag) in per_node {
        report.residual_total = report.residual_total.max(total);
        report.residual_below_diag = report.residual_below_diag.max(below);
        report.residual_inverse = report.residual_inverse.max(inv);
        for (d, v) in report.diag_deviation.iter_mut().zip(diag) {
            *d = d.max(v);
        }
    }
    report.diag_deviation_max = report.diag_deviation.iter().copied().fold(0.0, f64::max);
    report
}
