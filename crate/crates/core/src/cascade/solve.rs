use std::cell::RefCell;

use serde::Serialize;

use super::{check_hypotheses, CascadeConfig, CascadeSolution, SystemSpec};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::par::{self, Exec};
use crate::pdo::{apply_symbol_with, Field, StateVector};
use crate::propagators::{evolve, MeshSeries, PropagatorConfig, TimeMesh};
use crate::symbol::{ScalarSymbol, C64};

/// Outcome of one Neumann inversion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeumannStat {
    pub iterations: usize,
    /// Geometric mean of successive increment ratios.
    pub rho: f64,
    pub ratios: Vec<f64>,
    pub converged: bool,
}

fn geometric_mean(r: &[f64]) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    (r.iter().map(|v| v.ln()).sum::<f64>() / r.len() as f64).exp()
}

/// `v = sum_{k>=0} G^k rhs`, stopped once an increment drops below
/// `tol_fp * |rhs|` in the norm `sup_t H^sigma`, or after `max_iter` terms.
///
/// Three consecutive non-decreasing increments give
/// [`Error::NotContractive`].
pub fn neumann_invert<F>(
    mut apply_g: F,
    rhs: &MeshSeries,
    sigma: f64,
    tol_fp: f64,
    max_iter: usize,
) -> Result<(MeshSeries, NeumannStat)>
where
    F: FnMut(&MeshSeries) -> Result<MeshSeries>,
{
    let n0 = rhs.sup_norm(sigma);
    let mut v = rhs.clone();
    let mut stat = NeumannStat {
        iterations: 0,
        rho: 0.0,
        ratios: Vec::new(),
        converged: true,
    };
    if n0 == 0.0 {
        return Ok((v, stat));
    }
    let mut inc = rhs.clone();
    let mut prev = n0;
    let mut streak = 0;
    stat.converged = false;
    for it in 1..=max_iter {
        let next = apply_g(&inc)?;
        let ni = next.sup_norm(sigma);
        if !ni.is_finite() {
            return Err(Error::NotContractive { rho: f64::INFINITY });
        }
        let ratio = ni / prev;
        stat.ratios.push(ratio);
        stat.iterations = it;
        streak = if ratio >= 1.0 { streak + 1 } else { 0 };
        if streak >= 3 {
            return Err(Error::NotContractive {
                rho: geometric_mean(&stat.ratios),
            });
        }
        v.axpy(C64::new(1.0, 0.0), &next);
        if ni <= tol_fp * n0 {
            stat.converged = true;
            break;
        }
        inc = next;
        prev = ni;
    }
    stat.rho = geometric_mean(&stat.ratios);
    Ok((v, stat))
}

/// Aggregated Neumann statistics of one cascade level over a slab.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelStats {
    /// 1-based level.
    pub level: usize,
    pub calls: usize,
    pub iterations_total: usize,
    pub iterations_max: usize,
    /// Mean of the per-call contraction factors.
    pub rho_mean: f64,
    pub rho_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlabStats {
    pub t_start: f64,
    pub t_end: f64,
    pub levels: Vec<LevelStats>,
}

/// Back-substitution machinery on one time slab.
///
/// With `c_kj = b_kj` for `j < k` and `a_kj + b_kj` for `j > k`, level `k`
/// solves
/// `u_k = U0_k + G_k(sum_{j<k} c_kj u_j + sum_{j>k} c_kj u_j[u_0..u_k])`,
/// where `u_j[u_0..u_k]` for `j > k` is the solution of the trailing
/// subsystem given the leading components. Splitting off the part that is
/// linear in `u_k` gives `u_k = Ut0_k + Gt_k u_k`, inverted by a Neumann
/// series in `sup_t H^{s+k}`. The operators are compositions of propagator
/// and symbol applications and are never assembled.
pub struct SlabEngine<'a> {
    spec: &'a SystemSpec,
    cfg: CascadeConfig,
    props: Vec<PropagatorConfig>,
    couplings: Vec<Vec<Option<ScalarSymbol>>>,
    mesh: TimeMesh,
    data: Vec<MeshSeries>,
    zero_field: Field,
    stats: RefCell<Vec<(usize, Vec<NeumannStat>)>>,
}

impl<'a> SlabEngine<'a> {
    /// `start` holds `u(t0)`; `forcing[k]` is `f_k` on `mesh` (or zero).
    pub fn new(
        spec: &'a SystemSpec,
        cfg: CascadeConfig,
        mesh: TimeMesh,
        start: &[Field],
        forcing: &[Option<MeshSeries>],
    ) -> Result<Self> {
        let m = spec.dim();
        let sym = &spec.symbols;
        let props: Vec<PropagatorConfig> = (0..m)
            .map(|k| {
                let mut p = PropagatorConfig::new(sym.lambda[k].clone(), sym.b.entry(k, k).clone(), cfg.substeps);
                p.exec = cfg.exec;
                p
            })
            .collect();
        let couplings = (0..m)
            .map(|k| {
                (0..m)
                    .map(|j| {
                        if j == k {
                            return None;
                        }
                        let c = sym.coupling(k, j);
                        (!c.is_zero()).then_some(c)
                    })
                    .collect()
            })
            .collect();
        let data = (0..m)
            .map(|k| evolve(&props[k], mesh, &start[k], forcing[k].as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(SlabEngine {
            spec,
            cfg,
            props,
            couplings,
            mesh,
            data,
            zero_field: Field::zeros(start[0].torus),
            stats: RefCell::new((0..m).map(|k| (k, Vec::new())).collect()),
        })
    }

    /// `U0_k = G0_k u_k(t0) + G_k f_k`.
    pub fn data(&self, k: usize) -> &MeshSeries {
        &self.data[k]
    }

    fn sigma(&self, k: usize) -> f64 {
        self.spec.s + k as f64
    }

    /// `sum_j c_kj(t) u_j(t)` at every half-step point, or `None` if every
    /// term vanishes.
    fn assemble(&self, k: usize, fields: &[Option<&MeshSeries>]) -> Option<MeshSeries> {
        let terms: Vec<(&ScalarSymbol, &MeshSeries)> = fields
            .iter()
            .enumerate()
            .filter_map(|(j, f)| Some((self.couplings[k][j].as_ref()?, (*f)?)))
            .collect();
        if terms.is_empty() {
            return None;
        }
        let mesh = self.mesh;
        let zero = &self.zero_field;
        let values = par::map_range(self.cfg.exec, mesh.points(), |p| {
            let t = mesh.time(p);
            let mut acc = zero.clone();
            for (c, u) in &terms {
                acc.axpy(C64::new(1.0, 0.0), &apply_symbol_with(c, t, &u.values[p], Exec::Sequential));
            }
            acc
        });
        Some(MeshSeries { mesh, values })
    }

    /// `G_k g` on the slab.
    fn propagate(&self, k: usize, g: &MeshSeries) -> Result<MeshSeries> {
        evolve(&self.props[k], self.mesh, &self.zero_field, Some(g))
    }

    /// `Phi_k(v) = [U0_k] + G_k(sum_{j<k} c_kj prefix_j + sum_{j>k} c_kj tail_j)`
    /// with `tail = resolve(k+1, prefix ++ [v])`. `None` entries are zero.
    pub fn phi(
        &self,
        k: usize,
        prefix: &[Option<&MeshSeries>],
        v: Option<&MeshSeries>,
        with_data: bool,
    ) -> Result<MeshSeries> {
        let m = self.spec.dim();
        let tail = if k + 1 < m {
            let mut p = prefix.to_vec();
            p.push(v);
            if p.iter().all(Option::is_none) && !with_data {
                None
            } else {
                Some(self.resolve(k + 1, &p, with_data)?)
            }
        } else {
            None
        };
        let mut fields: Vec<Option<&MeshSeries>> = prefix.to_vec();
        fields.push(None);
        if let Some(tail) = &tail {
            fields.extend(tail.iter().map(Some));
        } else {
            fields.resize(m, None);
        }
        let mut out = match self.assemble(k, &fields) {
            Some(src) => self.propagate(k, &src)?,
            None => MeshSeries::zeros(self.mesh, &self.zero_field),
        };
        if with_data {
            out.axpy(C64::new(1.0, 0.0), &self.data[k]);
        }
        Ok(out)
    }

    /// `Ut0_k = Phi_k(0)` with zero leading components.
    pub fn reduced_data(&self, k: usize) -> Result<MeshSeries> {
        self.phi(k, &vec![None; k], None, true)
    }

    /// Components `u_k, ..., u_{m-1}` given `u_0, ..., u_{k-1}`.
    pub fn resolve(
        &self,
        k: usize,
        prefix: &[Option<&MeshSeries>],
        with_data: bool,
    ) -> Result<Vec<MeshSeries>> {
        let m = self.spec.dim();
        if k + 1 == m {
            return Ok(vec![self.phi(k, prefix, None, with_data)?]);
        }
        let rhs = self.phi(k, prefix, None, with_data)?;
        let zero_prefix = vec![None; k];
        let (uk, stat) = neumann_invert(
            |w| self.phi(k, &zero_prefix, Some(w), false),
            &rhs,
            self.sigma(k),
            self.cfg.tol_fp,
            self.cfg.max_iter,
        )?;
        if !stat.converged {
            return Err(Error::NotContractive { rho: stat.rho });
        }
        self.stats.borrow_mut()[k].1.push(stat);
        let mut p = prefix.to_vec();
        p.push(Some(&uk));
        let tail = self.resolve(k + 1, &p, with_data)?;
        let mut out = vec![uk];
        out.extend(tail);
        Ok(out)
    }

    /// All components on the slab.
    pub fn solve(&self) -> Result<Vec<MeshSeries>> {
        self.resolve(0, &[], true)
    }

    /// Per-level statistics of the Neumann inversions run so far.
    pub fn stats(&self) -> Vec<LevelStats> {
        self.stats
            .borrow()
            .iter()
            .filter(|(_, s)| !s.is_empty())
            .map(|(k, s)| LevelStats {
                level: k + 1,
                calls: s.len(),
                iterations_total: s.iter().map(|x| x.iterations).sum(),
                iterations_max: s.iter().map(|x| x.iterations).max().unwrap_or(0),
                rho_mean: s.iter().map(|x| x.rho).sum::<f64>() / s.len() as f64,
                rho_max: s.iter().map(|x| x.rho).fold(0.0, f64::max),
            })
            .collect()
    }
}

/// Solves the system on `[0, T]` by the cascade, halving the slab whenever
/// a Neumann inversion fails to contract.
pub fn solve_cascade(spec: &SystemSpec, grid: &GridSpec, cfg: &CascadeConfig) -> Result<CascadeSolution> {
    let report = check_hypotheses(spec, grid)?;
    if !report.passed && !cfg.override_levi {
        return Err(Error::HypothesisFailure(report.failures().join("; ")));
    }
    let m = spec.dim();
    for k in 0..m {
        PropagatorConfig::new(spec.symbols.lambda[k].clone(), spec.symbols.b.entry(k, k).clone(), cfg.substeps)
            .validate(grid)?;
    }
    let mesh = TimeMesh::for_grid(grid, cfg.substeps);
    let total = mesh.steps;
    let forcing = (0..m)
        .map(|k| spec.forcing.on_mesh(k, mesh, grid))
        .collect::<Result<Vec<_>>>()?;

    let mut series: Vec<Vec<Field>> = spec.u0.iter().map(|u| vec![u.clone()]).collect();
    let mut state = spec.u0.clone();
    let mut boundaries = Vec::new();
    let mut stats = Vec::new();
    let mut slab = cfg.initial_slab_steps.unwrap_or(total).clamp(1, total);
    let mut step = 0;
    while step < total {
        let len = slab.min(total - step);
        let sub = mesh.slab(step, step + len);
        let f: Vec<Option<MeshSeries>> = forcing
            .iter()
            .map(|f| f.as_ref().map(|s| s.slice(step, step + len)))
            .collect();
        let engine = SlabEngine::new(spec, *cfg, sub, &state, &f)?;
        match engine.solve() {
            Ok(parts) => {
                for (k, part) in parts.into_iter().enumerate() {
                    state[k] = part.last().clone();
                    series[k].extend(part.values.into_iter().skip(1));
                }
                boundaries.push(sub.t0);
                stats.push(SlabStats {
                    t_start: sub.t0,
                    t_end: sub.t0 + sub.h * len as f64,
                    levels: engine.stats(),
                });
                step += len;
            }
            Err(Error::NotContractive { rho }) => {
                if len / 2 < cfg.min_slab_steps {
                    return Err(Error::SolveFailure(format!(
                        "no contraction at t={} even on a slab of {len} steps (rho = {rho})",
                        sub.t0
                    )));
                }
                slab = len / 2;
            }
            Err(e) => return Err(e),
        }
    }

    let stride = 2 * cfg.substeps;
    let times = grid.times();
    let states: Vec<StateVector> = (0..grid.nt)
        .map(|n| {
            let comps = if n == 0 {
                spec.u0.clone()
            } else {
                series.iter().map(|s| s[n * stride].clone()).collect()
            };
            StateVector::new(comps, spec.s)
        })
        .collect();
    Ok(CascadeSolution::from_states(times, states, boundaries, stats))
}
