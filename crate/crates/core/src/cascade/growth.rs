use std::f64::consts::PI;

use serde::Serialize;

use super::{mode_oracle, solve_reference, CascadeConfig, CascadeSolution, Forcing, SystemSpec, SystemSymbols};
use crate::error::Result;
use crate::grid::GridSpec;
use crate::par::Exec;
use crate::pdo::Field;
use crate::symbol::{bracket, least_squares_slope, C64};

/// Frequency ladder and discretisation of the growth experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthConfig {
    pub ladder: Vec<f64>,
    pub t_final: f64,
    pub s: f64,
    /// Grid points per period; the data sit on wavenumber `mode_index`.
    pub nx: usize,
    pub mode_index: i64,
    pub nt: usize,
    pub exec: Exec,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            ladder: vec![8.0, 16.0, 32.0, 64.0, 128.0, 256.0],
            t_final: 1.0,
            s: 0.0,
            nx: 16,
            mode_index: 4,
            nt: 17,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthSample {
    pub xi0: f64,
    /// `sup_t sum_k ||u_k(t)||_{H^{s+k}} / sum_k ||u_k(0)||_{H^{s+k}}` for
    /// data `u_k(0) = <xi0>^{-k} e^{i xi0 x}`.
    pub ratio_anisotropic: f64,
    /// `sup_t sum_k ||u_k(t)||_{H^s} / sum_k ||u_k(0)||_{H^s}` for data
    /// `u_k(0) = e^{i xi0 x}`.
    pub ratio_isotropic: f64,
    pub oracle_anisotropic: Option<f64>,
    pub oracle_isotropic: Option<f64>,
}

/// Slopes of `log ratio` against `log xi0` over the ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub samples: Vec<GrowthSample>,
    pub exponent_anisotropic: f64,
    pub exponent_isotropic: f64,
    pub oracle_exponent_anisotropic: Option<f64>,
    pub oracle_exponent_isotropic: Option<f64>,
}

fn sup_ratio(sol: &CascadeSolution, anisotropic: bool) -> f64 {
    let norm = |v: &crate::pdo::StateVector| if anisotropic { v.anisotropic_norm() } else { v.isotropic_norm() };
    let base = norm(&sol.u[0]);
    sol.u.iter().map(|v| norm(v) / base).fold(0.0, f64::max)
}

/// Single-mode growth experiment on a compact grid per frequency: the
/// period is `2 pi mode_index / xi0` so that `xi0` is a grid frequency.
/// Solves with [`solve_reference`] (no hypothesis check) and, for symbols
/// depending on `xi` only, also with [`mode_oracle`].
pub fn demo_loss_of_regularity(symbols: &SystemSymbols, cfg: &GrowthConfig) -> Result<GrowthReport> {
    let m = symbols.dim();
    let deps = symbols.full_matrix()?.deps();
    let constant = !deps.t && !deps.x;
    let mut samples = Vec::with_capacity(cfg.ladder.len());
    for &xi0 in &cfg.ladder {
        let l = 2.0 * PI * cfg.mode_index as f64 / xi0;
        let grid = GridSpec::new(cfg.t_final, cfg.nt, l, cfg.nx, 0.0)?;
        // RK4 step with h * (row sum of A + B) <= 1/2
        let full = symbols.full_matrix()?;
        let mut bound = 0.0f64;
        for &t in &grid.times() {
            for &x in &grid.xs() {
                for &xi in &grid.frequencies() {
                    let a = full.eval(t, x, xi);
                    for r in 0..m {
                        bound = bound.max(a.row(r).iter().map(|z| z.norm()).sum());
                    }
                }
            }
        }
        let steps_needed = (2.0 * bound * cfg.t_final).ceil().max(64.0) as usize;
        let substeps = steps_needed.div_ceil(cfg.nt - 1);
        let run = CascadeConfig {
            substeps,
            exec: cfg.exec,
            ..CascadeConfig::default()
        };
        let mode = Field::mode(grid.torus, cfg.mode_index);
        let aniso: Vec<Field> = (0..m)
            .map(|k| mode.scaled(C64::new(bracket(xi0).powi(-(k as i32)), 0.0)))
            .collect();
        let iso = vec![mode.clone(); m];
        let spec_a = SystemSpec::new(symbols.clone(), aniso, Forcing::Zero, cfg.s)?;
        let spec_i = SystemSpec::new(symbols.clone(), iso, Forcing::Zero, cfg.s)?;
        let ratio_anisotropic = sup_ratio(&solve_reference(&spec_a, &grid, &run)?, true);
        let ratio_isotropic = sup_ratio(&solve_reference(&spec_i, &grid, &run)?, false);
        let (oracle_anisotropic, oracle_isotropic) = if constant {
            (
                Some(sup_ratio(&mode_oracle(&spec_a, &grid)?, true)),
                Some(sup_ratio(&mode_oracle(&spec_i, &grid)?, false)),
            )
        } else {
            (None, None)
        };
        samples.push(GrowthSample {
            xi0,
            ratio_anisotropic,
            ratio_isotropic,
            oracle_anisotropic,
            oracle_isotropic,
        });
    }
    let logs: Vec<f64> = cfg.ladder.iter().map(|x| x.ln()).collect();
    let slope = |f: &dyn Fn(&GrowthSample) -> f64| {
        least_squares_slope(&logs, &samples.iter().map(|s| f(s).ln()).collect::<Vec<_>>())
    };
    let exponent_anisotropic = slope(&|s| s.ratio_anisotropic);
    let exponent_isotropic = slope(&|s| s.ratio_isotropic);
    let (oracle_exponent_anisotropic, oracle_exponent_isotropic) = if constant {
        (
            Some(slope(&|s| s.oracle_anisotropic.unwrap_or(f64::NAN))),
            Some(slope(&|s| s.oracle_isotropic.unwrap_or(f64::NAN))),
        )
    } else {
        (None, None)
    };
    Ok(GrowthReport {
        samples,
        exponent_anisotropic,
        exponent_isotropic,
        oracle_exponent_anisotropic,
        oracle_exponent_isotropic,
    })
}
