use nalgebra::DMatrix;

use super::{CascadeConfig, CascadeSolution, Forcing, SystemSpec};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::par::{self, Exec};
use crate::pdo::{apply_symbol_with, Field, StateVector};
use crate::propagators::CFL_LIMIT;
use crate::symbol::{ScalarSymbol, C64};

const I: C64 = C64 { re: 0.0, im: 1.0 };

fn entries(spec: &SystemSpec) -> Vec<Vec<Option<ScalarSymbol>>> {
    let sym = &spec.symbols;
    let m = sym.dim();
    (0..m)
        .map(|k| {
            (0..m)
                .map(|j| {
                    let e = if j == k {
                        &sym.lambda[k] + sym.b.entry(k, k)
                    } else {
                        sym.coupling(k, j)
                    };
                    (!e.is_zero()).then_some(e)
                })
                .collect()
        })
        .collect()
}

fn max_row_sum(rows: &[Vec<Option<ScalarSymbol>>], grid: &GridSpec) -> f64 {
    let mut worst = 0.0f64;
    for &t in &grid.times() {
        for &x in &grid.xs() {
            for &xi in &grid.frequencies() {
                for row in rows {
                    let s: f64 = row.iter().flatten().map(|e| e.eval(t, x, xi).norm()).sum();
                    worst = worst.max(s);
                }
            }
        }
    }
    worst
}

/// Method of lines for `du/dt = i (A + B)(t, x, D) u + i f` with classical
/// RK4 on the full coupled system.
pub fn solve_reference(spec: &SystemSpec, grid: &GridSpec, cfg: &CascadeConfig) -> Result<CascadeSolution> {
    let m = spec.dim();
    let rows = entries(spec);
    let h = grid.dt() / cfg.substeps as f64;
    let cfl = h * max_row_sum(&rows, grid);
    if cfl > CFL_LIMIT {
        return Err(Error::Instability { t: 0.0, cfl });
    }
    let torus = spec.u0[0].torus;
    let rhs = |t: f64, u: &[Field]| -> Vec<Field> {
        let f = match &spec.forcing {
            Forcing::Zero => None,
            other => Some(other.at(t, grid, &spec.u0[0], m)),
        };
        par::map_range(cfg.exec, m, |k| {
            let mut acc = Field::zeros(torus);
            for (j, e) in rows[k].iter().enumerate() {
                if let Some(e) = e {
                    acc.axpy(I, &apply_symbol_with(e, t, &u[j], Exec::Sequential));
                }
            }
            if let Some(f) = &f {
                acc.axpy(I, &f[k]);
            }
            acc
        })
    };
    let stage = |u: &[Field], k: &[Field], c: f64| -> Vec<Field> {
        u.iter()
            .zip(k)
            .map(|(a, b)| {
                let mut o = a.clone();
                o.axpy(C64::new(c, 0.0), b);
                o
            })
            .collect()
    };

    let mut u = spec.u0.clone();
    let mut states = vec![StateVector::new(spec.u0.clone(), spec.s)];
    let steps = (grid.nt - 1) * cfg.substeps;
    for step in 0..steps {
        let t = h * step as f64;
        let k1 = rhs(t, &u);
        let k2 = rhs(t + 0.5 * h, &stage(&u, &k1, 0.5 * h));
        let k3 = rhs(t + 0.5 * h, &stage(&u, &k2, 0.5 * h));
        let k4 = rhs(t + h, &stage(&u, &k3, h));
        for c in 0..m {
            let w = &mut u[c];
            w.axpy(C64::new(h / 6.0, 0.0), &k1[c]);
            w.axpy(C64::new(h / 3.0, 0.0), &k2[c]);
            w.axpy(C64::new(h / 3.0, 0.0), &k3[c]);
            w.axpy(C64::new(h / 6.0, 0.0), &k4[c]);
        }
        if u.iter().any(|w| !w.is_finite()) {
            return Err(Error::Instability { t: t + h, cfl });
        }
        if (step + 1) % cfg.substeps == 0 {
            states.push(StateVector::new(u.clone(), spec.s));
        }
    }
    Ok(CascadeSolution::from_states(grid.times(), states, vec![0.0], Vec::new()))
}

/// Exact solution of a system whose symbols depend on `xi` only:
/// each Fourier mode evolves by `exp(i t M(xi))` with `M = A + B`.
pub fn mode_oracle(spec: &SystemSpec, grid: &GridSpec) -> Result<CascadeSolution> {
    if !spec.forcing.is_zero() {
        return Err(Error::InvalidArgument("the mode oracle needs f = 0".into()));
    }
    let full = spec.symbols.full_matrix()?;
    let deps = full.deps();
    if deps.t || deps.x {
        return Err(Error::InvalidArgument(
            "the mode oracle needs symbols independent of t and x".into(),
        ));
    }
    let m = spec.dim();
    let torus = spec.u0[0].torus;
    let nx = torus.nx;
    let spectra: Vec<Vec<C64>> = spec.u0.iter().map(Field::spectrum).collect();
    let modes: Vec<DMatrix<C64>> = (0..nx)
        .map(|k| full.eval(0.0, 0.0, torus.frequency(k)) * I)
        .collect();
    let states = grid
        .times()
        .iter()
        .map(|&t| {
            let mut out = vec![vec![C64::new(0.0, 0.0); nx]; m];
            for (k, mk) in modes.iter().enumerate() {
                let c = nalgebra::DVector::from_iterator(m, spectra.iter().map(|s| s[k]));
                if c.iter().all(|z| z.norm() == 0.0) {
                    continue;
                }
                let v = (mk * C64::new(t, 0.0)).exp() * c;
                for (j, o) in out.iter_mut().enumerate() {
                    o[k] = v[j];
                }
            }
            StateVector::new(out.iter().map(|s| Field::from_spectrum(torus, s)).collect(), spec.s)
        })
        .collect();
    Ok(CascadeSolution::from_states(grid.times(), states, vec![0.0], Vec::new()))
}
