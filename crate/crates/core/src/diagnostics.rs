//! Post-processing of solver output: exponential-bound fits, refinement
//! studies and operator-norm probes.

use serde::Serialize;

use crate::cascade::CascadeSolution;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::pdo::{aliasing_warning, apply_symbol, sobolev_norm, Field};
use crate::symbol::{bracket, dyadic_levels, least_squares_slope, ScalarSymbol};

/// Fits with a residual above this are flagged as poorly described by `c e^{ct}`.
pub const POOR_FIT_RESIDUAL: f64 = 0.05;

/// Relative errors below this are treated as round-off.
pub const SATURATION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthFit {
    /// Fitted rate, clipped below at zero.
    pub c_fit: f64,
    /// Unclipped least-squares slope.
    pub raw_slope: f64,
    pub intercept: f64,
    /// Max relative deviation of the trace from the fitted exponential.
    pub residual: f64,
    pub window: (f64, f64),
    pub poor_fit: bool,
}

/// Fits `log(N(t) / data_norm) ~ a + c t`, where `N(t)` sums the per-component
/// norms of `trace[n]`.
pub fn fit_exponential_bound(times: &[f64], trace: &[Vec<f64>], data_norm: f64) -> Result<GrowthFit> {
    if !(data_norm > 0.0) || !data_norm.is_finite() {
        return Err(Error::DegenerateData(format!("data norm {data_norm}")));
    }
    if times.len() != trace.len() {
        return Err(Error::Dimension {
            expected: times.len(),
            found: trace.len(),
        });
    }
    if times.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "a growth fit needs at least 4 samples, got {}",
            times.len()
        )));
    }
    let mut ys = Vec::with_capacity(trace.len());
    for (t, row) in times.iter().zip(trace) {
        let total: f64 = row.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateData(format!("norm trace is {total} at t={t}")));
        }
        ys.push((total / data_norm).ln());
    }
    let slope = least_squares_slope(times, &ys);
    let n = times.len() as f64;
    let intercept = ys.iter().sum::<f64>() / n - slope * times.iter().sum::<f64>() / n;
    let residual = times
        .iter()
        .zip(&ys)
        .map(|(t, y)| (y - intercept - slope * t).exp_m1().abs())
        .fold(0.0, f64::max);
    Ok(GrowthFit {
        c_fit: slope.max(0.0),
        raw_slope: slope,
        intercept,
        residual,
        window: (times[0], times[times.len() - 1]),
        poor_fit: residual > POOR_FIT_RESIDUAL,
    })
}

/// [`fit_exponential_bound`] on a solver's own norm trace, normalised by the data.
pub fn fit_solution(sol: &CascadeSolution) -> Result<GrowthFit> {
    let data_norm = sol.norm_trace.first().map(|r| r.iter().sum()).unwrap_or(0.0);
    fit_exponential_bound(&sol.times, &sol.norm_trace, data_norm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// Resolution parameter of each run (for example RK4 substeps).
    pub resolutions: Vec<usize>,
    /// Largest per-component relative error of each compared run.
    pub errors: Vec<f64>,
    /// `log2(e_h / e_{h/2})` for consecutive runs; `None` when saturated.
    pub orders: Vec<Option<f64>>,
    /// The errors reached the round-off floor.
    pub saturated: bool,
    pub warnings: Vec<String>,
}

impl ConvergenceReport {
    pub fn measured_orders(&self) -> Vec<f64> {
        self.orders.iter().flatten().copied().collect()
    }

    pub fn monotone(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Runs `run` at every resolution of `ladder` (each a doubling of the previous)
/// and measures errors against `baseline`, or against the finest run when no
/// baseline is given.
pub fn refinement_study<F>(ladder: &[usize], baseline: Option<&CascadeSolution>, run: F) -> Result<ConvergenceReport>
where
    F: Fn(usize) -> Result<CascadeSolution>,
{
    if ladder.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "a refinement study needs at least 3 resolutions, got {}",
            ladder.len()
        )));
    }
    let runs = ladder.iter().map(|&r| run(r)).collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    for sol in &runs {
        for w in aliasing_warnings(sol) {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
    }
    let (compared, reference, resolutions) = match baseline {
        Some(b) => (&runs[..], b, ladder.to_vec()),
        None => (&runs[..runs.len() - 1], &runs[runs.len() - 1], ladder[..ladder.len() - 1].to_vec()),
    };
    let errors: Vec<f64> = compared
        .iter()
        .map(|sol| sol.relative_discrepancy(reference).into_iter().fold(0.0, f64::max))
        .collect();
    let mut saturated = false;
    let orders = errors
        .windows(2)
        .map(|w| {
            if w[0] < SATURATION_FLOOR || w[1] < SATURATION_FLOOR {
                saturated = true;
                None
            } else {
                Some((w[0] / w[1]).log2())
            }
        })
        .collect();
    Ok(ConvergenceReport {
        resolutions,
        errors,
        orders,
        saturated,
        warnings,
    })
}

/// Aliasing warnings for the initial and final states of a run.
pub fn aliasing_warnings(sol: &CascadeSolution) -> Vec<String> {
    let mut out = Vec::new();
    for (label, state) in [("initial", sol.u.first()), ("final", sol.u.last())] {
        let Some(state) = state else { continue };
        for (k, u) in state.components.iter().enumerate() {
            let name = format!("{label} u_{}", k + 1);
            out.extend(aliasing_warning(u, state.sobolev_base + k as f64, &name));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormProbe {
    pub frequencies: Vec<f64>,
    /// `||a u||_{H^sigma} / ||u||_{H^{sigma+r}}` for the mode at each frequency.
    pub ratios: Vec<f64>,
    pub sup: f64,
}

/// Probes the `H^{sigma+r} -> H^sigma` norm of `a(t, x, D)` on single modes at
/// the dyadic frequencies inside the grid's band limit.
pub fn operator_norm_probe(a: &ScalarSymbol, grid: &GridSpec, t: f64, sigma: f64, r: f64) -> Result<NormProbe> {
    let torus = grid.torus;
    let unit = 2.0 * std::f64::consts::PI / torus.l;
    let levels = dyadic_levels(unit, torus.band_limit());
    if levels.is_empty() {
        return Err(Error::InvalidArgument("grid has no probe frequencies".into()));
    }
    let mut frequencies = Vec::new();
    let mut ratios = Vec::new();
    for xi in levels {
        let n = (xi / unit).round() as i64;
        let u = Field::mode(torus, n);
        let au = apply_symbol(a, t, &u);
        let ratio = sobolev_norm(&au, sigma) / sobolev_norm(&u, sigma + r);
        frequencies.push(n as f64 * unit);
        ratios.push(ratio);
    }
    let sup = ratios.iter().copied().fold(0.0, f64::max);
    Ok(NormProbe {
        frequencies,
        ratios,
        sup,
    })
}

/// Multiplies `u` by `<xi>^r` in frequency space; used to build data of a given
/// anisotropic regularity.
pub fn bracket_weighted(u: &Field, r: f64) -> Field {
    let torus = u.torus;
    let spec: Vec<_> = u
        .spectrum()
        .iter()
        .enumerate()
        .map(|(k, v)| v * bracket(torus.frequency(k)).powf(r))
        .collect();
    Field::from_spectrum(torus, &spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdo::StateVector;
    use crate::C64;

    fn times(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn constant_trace_has_zero_rate() {
        let t = times(9);
        let trace = vec![vec![2.0, 1.0]; 9];
        let fit = fit_exponential_bound(&t, &trace, 3.0).unwrap();
        assert!(fit.c_fit.abs() < 1e-6);
        assert!(fit.residual < 1e-12);
        assert!(!fit.poor_fit);
    }

    #[test]
    fn recovers_synthetic_exponential() {
        let c0 = 0.7;
        let t = times(17);
        let trace: Vec<Vec<f64>> = t.iter().map(|t| vec![c0 * (c0 * t).exp()]).collect();
        let fit = fit_exponential_bound(&t, &trace, 1.0).unwrap();
        assert!((fit.c_fit - c0).abs() < 1e-8);
        assert!((fit.intercept - c0.ln()).abs() < 1e-8);
    }

    #[test]
    fn decay_is_clipped_but_reported() {
        let t = times(5);
        let trace: Vec<Vec<f64>> = t.iter().map(|t| vec![(-0.5 * t).exp()]).collect();
        let fit = fit_exponential_bound(&t, &trace, 1.0).unwrap();
        assert_eq!(fit.c_fit, 0.0);
        assert!((fit.raw_slope + 0.5).abs() < 1e-10);
    }

    #[test]
    fn linear_growth_is_flagged() {
        // |u_1(t)| = |1 + i t xi| for the nilpotent block at xi = 32
        let t = times(17);
        let trace: Vec<Vec<f64>> = t.iter().map(|t| vec![(1.0 + (32.0 * t).powi(2)).sqrt(), 1.0]).collect();
        let fit = fit_exponential_bound(&t, &trace, 2.0).unwrap();
        assert!(fit.poor_fit, "{fit:?}");
    }

    #[test]
    fn fit_errors() {
        let t = times(4);
        let trace = vec![vec![1.0]; 4];
        assert!(matches!(fit_exponential_bound(&t, &trace, 0.0), Err(Error::DegenerateData(_))));
        assert!(matches!(
            fit_exponential_bound(&t[..3], &trace[..3], 1.0),
            Err(Error::InvalidArgument(_))
        ));
        let mut bad = trace.clone();
        bad[2][0] = 0.0;
        assert!(fit_exponential_bound(&t, &bad, 1.0).is_err());
    }

    fn const_solution(grid: &GridSpec, scale: f64, noise: f64) -> CascadeSolution {
        let torus = grid.torus;
        let u = grid
            .times()
            .iter()
            .map(|t| {
                StateVector::new(
                    vec![Field::mode(torus, 1).scaled(C64::new(scale * (1.0 + noise * t), 0.0))],
                    0.0,
                )
            })
            .collect();
        CascadeSolution::from_states(grid.times(), u, vec![0.0], vec![])
    }

    #[test]
    fn refinement_orders_from_synthetic_errors() {
        let grid = GridSpec::new(1.0, 5, 2.0 * std::f64::consts::PI, 8, 0.0).unwrap();
        let exact = const_solution(&grid, 1.0, 0.0);
        let rep = refinement_study(&[2, 4, 8], Some(&exact), |r| {
            Ok(const_solution(&grid, 1.0, 1e-2 / (r as f64).powi(4)))
        })
        .unwrap();
        for o in rep.measured_orders() {
            assert!((o - 4.0).abs() < 1e-6);
        }
        assert!(rep.monotone() && !rep.saturated);

        let rep = refinement_study(&[2, 4, 8], None, |_| Ok(const_solution(&grid, 1.0, 0.0))).unwrap();
        assert!(rep.saturated);
        assert_eq!(rep.errors, vec![0.0, 0.0]);
        assert!(refinement_study(&[2, 4], None, |_| Ok(const_solution(&grid, 1.0, 0.0))).is_err());
    }

    #[test]
    fn rough_data_triggers_aliasing_warning() {
        let grid = GridSpec::new(1.0, 3, 2.0 * std::f64::consts::PI, 16, 0.0).unwrap();
        let torus = grid.torus;
        let rough: Vec<StateVector> = grid
            .times()
            .iter()
            .map(|_| StateVector::new(vec![Field::mode(torus, 7)], 0.0))
            .collect();
        let sol = CascadeSolution::from_states(grid.times(), rough, vec![0.0], vec![]);
        let rep = refinement_study(&[1, 2, 4], None, |_| Ok(sol.clone())).unwrap();
        assert!(rep.warnings.iter().any(|w| w.contains("aliasing")));
        assert!(aliasing_warnings(&const_solution(&grid, 1.0, 0.0)).is_empty());
    }

    #[test]
    fn probe_is_flat_for_matching_order() {
        let grid = GridSpec::new(1.0, 2, 2.0 * std::f64::consts::PI, 256, 0.0).unwrap();
        let a = ScalarSymbol::xi();
        let p = operator_norm_probe(&a, &grid, 0.0, 0.5, 1.0).unwrap();
        assert!(p.sup <= 1.0 + 1e-12);
        assert!(p.ratios.iter().all(|r| *r > 0.7));
        let p = operator_norm_probe(&a, &grid, 0.0, 0.0, 0.0).unwrap();
        assert!(p.sup > 60.0);
    }

    #[test]
    fn bracket_weight_inverts() {
        let grid = GridSpec::new(1.0, 2, 2.0 * std::f64::consts::PI, 16, 0.0).unwrap();
        let u = Field::from_fn(grid.torus, |x| C64::new(x.sin(), (2.0 * x).cos()));
        let back = bracket_weighted(&bracket_weighted(&u, 1.5), -1.5);
        assert!(back.sub(&u).max_abs() < 1e-14);
        assert!((sobolev_norm(&bracket_weighted(&u, 1.0), 0.0) - sobolev_norm(&u, 1.0)).abs() < 1e-12);
    }
}
