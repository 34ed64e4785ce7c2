//! Eigendata from pointwise dense eigensolves plus continuation matching.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result, Witness};
use crate::grid::GridSpec;
use crate::par::{self, Exec};
use crate::pdo;
use crate::symbol::{max_modulus, MatrixSymbol, ScalarSymbol, VectorSymbol, C64};

use super::EigenData;

/// Eigenvalues and unit eigenvectors of a dense complex matrix.
///
/// Eigenvalues come from the complex Schur form `A = Q T Q*`; eigenvectors
/// are obtained by back substitution in `T` and mapped back by `Q`.
pub fn dense_eigen(a: &DMatrix<C64>) -> (Vec<C64>, Vec<DVector<C64>>) {
    let m = a.nrows();
    let (q, t) = a.clone().schur().unpack();
    let values: Vec<C64> = (0..m).map(|i| t[(i, i)]).collect();
    let scale = max_modulus(t.iter()).max(f64::MIN_POSITIVE);
    let vectors = (0..m)
        .map(|k| {
            let lam = values[k];
            let mut y = DVector::<C64>::zeros(m);
            y[k] = C64::new(1.0, 0.0);
            for i in (0..k).rev() {
                let mut s = C64::new(0.0, 0.0);
                for j in i + 1..=k {
                    s += t[(i, j)] * y[j];
                }
                let mut d = t[(i, i)] - lam;
                if d.norm() < 1e-14 * scale {
                    d = C64::new(1e-14 * scale, 0.0);
                }
                y[i] = -s / d;
            }
            let v = &q * y;
            let n = v.norm();
            v / C64::new(n, 0.0)
        })
        .collect();
    (values, vectors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationConfig {
    /// Separation threshold relative to `max(1, max |A_ij|)` at the node.
    pub delta_sep: f64,
    pub exec: Exec,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            delta_sep: 1e-8,
            exec: Exec::default(),
        }
    }
}

/// Two eigenvalues closer than the separation threshold at a grid node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultiplicityWarning {
    pub t: f64,
    pub x: f64,
    pub xi: f64,
    pub separation: f64,
}

/// Output of [`numeric_eigendata`].
#[derive(Debug, Clone)]
pub struct EigenFit {
    pub data: EigenData,
    /// Eigenvectors of all `m` branches; `data` holds the first `m - 1`.
    pub branch_vectors: Vec<VectorSymbol>,
    pub warnings: Vec<MultiplicityWarning>,
    /// Largest relative residual `|A v - lambda v| / |A|` over all nodes.
    pub max_residual: f64,
}

impl EigenFit {
    /// Eigendata with the branches taken in the given order.
    pub fn reordered(&self, order: &[usize]) -> Result<EigenData> {
        let m = self.branch_vectors.len();
        let mut seen = vec![false; m];
        if order.len() != m || order.iter().any(|&b| b >= m || std::mem::replace(&mut seen[b], true)) {
            return Err(Error::InvalidArgument(format!(
                "branch order {order:?} is not a permutation of 0..{m}"
            )));
        }
        EigenData::new(
            order.iter().map(|&b| self.data.eigenvalues[b].clone()).collect(),
            order[..m - 1].iter().map(|&b| self.branch_vectors[b].clone()).collect(),
        )
    }
}

/// Sampled fields on `times x xs x sorted shell frequencies`, with
/// piecewise-linear interpolation in `t`, trigonometric interpolation in `x`
/// and nearest-neighbour lookup in `xi`.
struct Table {
    grid: GridSpec,
    freqs: Vec<f64>,
    entries: usize,
    /// `[(n * nf + kp) * entries + e] * nx + i`
    samples: Vec<C64>,
    /// DFT in `x` of each sampled line, same layout.
    coeffs: Vec<C64>,
}

impl Table {
    fn line(&self, n: usize, kp: usize, e: usize) -> usize {
        ((n * self.freqs.len() + kp) * self.entries + e) * self.grid.nx()
    }

    fn nearest_freq(&self, xi: f64) -> usize {
        let pos = self.freqs.partition_point(|&f| f < xi);
        if pos == 0 {
            0
        } else if pos == self.freqs.len() {
            pos - 1
        } else if (self.freqs[pos] - xi).abs() < (xi - self.freqs[pos - 1]).abs() {
            pos
        } else {
            pos - 1
        }
    }

    fn at_time(&self, n: usize, kp: usize, x: f64, start: usize, out: &mut [C64]) {
        let nx = self.grid.nx();
        let dx = self.grid.torus.dx();
        let r = x / dx;
        let ri = r.round();
        if (r - ri).abs() < 1e-9 {
            let i = (ri as i64).rem_euclid(nx as i64) as usize;
            for (e, o) in out.iter_mut().enumerate() {
                *o = self.samples[self.line(n, kp, start + e) + i];
            }
            return;
        }
        let phases: Vec<C64> = (0..nx)
            .map(|k| C64::from_polar(1.0 / nx as f64, self.grid.torus.frequency(k) * x))
            .collect();
        for (e, o) in out.iter_mut().enumerate() {
            let base = self.line(n, kp, start + e);
            *o = phases
                .iter()
                .zip(&self.coeffs[base..base + nx])
                .map(|(p, c)| p * c)
                .sum();
        }
    }

    fn eval(&self, t: f64, x: f64, xi: f64, start: usize, out: &mut [C64]) {
        let kp = self.nearest_freq(xi);
        let nt = self.grid.nt;
        let s = (t / self.grid.dt()).clamp(0.0, (nt - 1) as f64);
        let n = (s.floor() as usize).min(nt - 2);
        let w = s - n as f64;
        if w < 1e-12 {
            self.at_time(n, kp, x, start, out);
        } else if w > 1.0 - 1e-12 {
            self.at_time(n + 1, kp, x, start, out);
        } else {
            let mut hi = vec![C64::new(0.0, 0.0); out.len()];
            self.at_time(n, kp, x, start, out);
            self.at_time(n + 1, kp, x, start, &mut hi);
            for (o, h) in out.iter_mut().zip(hi) {
                *o = *o * (1.0 - w) + h * w;
            }
        }
    }
}

struct NodeEigen {
    values: Vec<C64>,
    vectors: Vec<DVector<C64>>,
    scale: f64,
    residual: f64,
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                prefix.push(j);
                rec(prefix, used, out);
                prefix.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; m], &mut out);
    out
}

/// Assignment `branch a <- eigenpair perm[a]` minimising the total eigenvalue
/// displacement, with the gap to the runner-up assignment and the cost.
fn best_assignment(parent: &[C64], child: &[C64], perms: &[Vec<usize>]) -> (Vec<usize>, f64, f64) {
    if perms.is_empty() {
        // greedy for large m
        let m = parent.len();
        let mut used = vec![false; m];
        let mut perm = Vec::with_capacity(m);
        let mut gap = f64::INFINITY;
        let mut cost = 0.0f64;
        for p in parent {
            let mut ds: Vec<(f64, usize)> = (0..m)
                .filter(|&j| !used[j])
                .map(|j| ((child[j] - p).norm(), j))
                .collect();
            ds.sort_by(|a, b| a.0.total_cmp(&b.0));
            if ds.len() > 1 {
                gap = gap.min(ds[1].0 - ds[0].0);
            }
            cost += ds[0].0 * ds[0].0;
            used[ds[0].1] = true;
            perm.push(ds[0].1);
        }
        return (perm, gap, cost.sqrt());
    }
    let mut best = (f64::INFINITY, 0usize);
    let mut second = f64::INFINITY;
    for (idx, p) in perms.iter().enumerate() {
        let cost: f64 = p
            .iter()
            .enumerate()
            .map(|(a, &j)| (child[j] - parent[a]).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if cost < best.0 {
            second = best.0;
            best = (cost, idx);
        } else if cost < second {
            second = cost;
        }
    }
    (perms[best.1].clone(), second - best.0, best.0)
}

fn min_separation(values: &[C64]) -> f64 {
    let mut sep = f64::INFINITY;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            sep = sep.min((values[i] - values[j]).norm());
        }
    }
    sep
}

/// Builds [`EigenData`] for `A` from dense eigensolves at every node of the
/// grid shell, matched along a continuation path: first along increasing
/// `xi` within each `(t, x)` line, the line heads along `x`, and the `x = 0`
/// heads along `t`.
///
/// Branches are ordered by real part (then imaginary part) at the first node.
/// Each eigenvector is scaled so that its pivot component equals one; the
/// pivot is inherited from the previous node unless its modulus falls below
/// half of the largest component.
pub fn numeric_eigendata(
    a: &MatrixSymbol,
    grid: &GridSpec,
    cfg: &ContinuationConfig,
) -> Result<EigenFit> {
    let m = a.dim();
    let nx = grid.nx();
    let nt = grid.nt;
    let mut shell = grid.shell_indices();
    shell.sort_by(|&p, &q| grid.torus.frequency(p).total_cmp(&grid.torus.frequency(q)));
    let freqs: Vec<f64> = shell.iter().map(|&k| grid.torus.frequency(k)).collect();
    let nf = shell.len();
    let times = grid.times();
    let xs = grid.xs();
    let index = |n: usize, i: usize, kp: usize| (n * nx + i) * nf + kp;

    let solved: Vec<NodeEigen> = par::map_range(cfg.exec, nt * nx * nf, |id| {
        let kp = id % nf;
        let i = (id / nf) % nx;
        let n = id / (nf * nx);
        let am = a.eval(times[n], xs[i], freqs[kp]);
        let (values, vectors) = dense_eigen(&am);
        let scale = max_modulus(am.iter()).max(1.0);
        let residual = values
            .iter()
            .zip(&vectors)
            .map(|(l, v)| max_modulus((&am * v - v * *l).iter()) / scale)
            .fold(0.0, f64::max);
        NodeEigen {
            values,
            vectors,
            scale,
            residual,
        }
    });
    if let Some((id, _)) = solved
        .iter()
        .enumerate()
        .find(|(_, s)| s.values.iter().any(|v| !v.is_finite()))
    {
        let kp = id % nf;
        let i = (id / nf) % nx;
        let n = id / (nf * nx);
        return Err(Error::Evaluation(Witness {
            t: times[n],
            x: xs[i],
            xi: freqs[kp],
        }));
    }

    let perms = if m <= 7 { permutations(m) } else { Vec::new() };
    // per node: branch -> dense index, and branch pivots
    let mut assign: Vec<Vec<usize>> = vec![Vec::new(); solved.len()];
    let mut pivots: Vec<Vec<usize>> = vec![Vec::new(); solved.len()];
    let mut collided = vec![false; solved.len()];
    let mut warnings = Vec::new();

    for n in 0..nt {
        for i in 0..nx {
            for kp in 0..nf {
                let id = index(n, i, kp);
                let node = &solved[id];
                let sep = min_separation(&node.values);
                let threshold = cfg.delta_sep * node.scale;
                let witness = Witness {
                    t: times[n],
                    x: xs[i],
                    xi: freqs[kp],
                };
                if sep < threshold {
                    collided[id] = true;
                    warnings.push(MultiplicityWarning {
                        t: witness.t,
                        x: witness.x,
                        xi: witness.xi,
                        separation: sep,
                    });
                }
                let parent = if kp > 0 {
                    Some(index(n, i, kp - 1))
                } else if i > 0 {
                    Some(index(n, i - 1, 0))
                } else if n > 0 {
                    Some(index(n - 1, 0, 0))
                } else {
                    None
                };
                let (perm, inherited) = match parent {
                    None => {
                        let mut order: Vec<usize> = (0..m).collect();
                        order.sort_by(|&p, &q| {
                            node.values[p]
                                .re
                                .total_cmp(&node.values[q].re)
                                .then(node.values[p].im.total_cmp(&node.values[q].im))
                        });
                        (order, None)
                    }
                    Some(pid) => {
                        // Order-one eigenvalues are close to homogeneous in xi,
                        // so along xi the parent is rescaled before matching.
                        // Across xi = 0 both odd and even extensions are tried.
                        let ratios: Vec<f64> = if kp == 0 || freqs[kp - 1] == 0.0 || freqs[kp] == 0.0 {
                            vec![1.0]
                        } else if freqs[kp - 1] * freqs[kp] > 0.0 {
                            vec![freqs[kp] / freqs[kp - 1]]
                        } else {
                            let r = freqs[kp] / freqs[kp - 1];
                            vec![r, -r]
                        };
                        let (perm, gap) = ratios
                            .iter()
                            .map(|&ratio| {
                                let pvals: Vec<C64> = assign[pid]
                                    .iter()
                                    .map(|&j| solved[pid].values[j] * ratio)
                                    .collect();
                                best_assignment(&pvals, &node.values, &perms)
                            })
                            .min_by(|a, b| a.2.total_cmp(&b.2))
                            .map(|(p, g, _)| (p, g))
                            .expect("at least one predictor");
                        if m > 1 && gap < threshold && !collided[id] && !collided[pid] {
                            return Err(Error::Continuation { witness, gap });
                        }
                        (perm, Some(pivots[pid].clone()))
                    }
                };
                let piv: Vec<usize> = perm
                    .iter()
                    .enumerate()
                    .map(|(b, &j)| {
                        let v = &node.vectors[j];
                        let big = (0..m).fold(0, |b, c| if v[c].norm() > v[b].norm() { c } else { b });
                        match &inherited {
                            Some(p) if v[p[b]].norm() >= 0.5 * v[big].norm() => p[b],
                            _ => big,
                        }
                    })
                    .collect();
                assign[id] = perm;
                pivots[id] = piv;
            }
        }
    }

    // table layout per node: m eigenvalues, then m eigenvectors of length m
    let entries = m + m * m;
    let mut samples = vec![C64::new(0.0, 0.0); nt * nf * entries * nx];
    for n in 0..nt {
        for i in 0..nx {
            for kp in 0..nf {
                let id = index(n, i, kp);
                let node = &solved[id];
                let base = |e: usize| ((n * nf + kp) * entries + e) * nx + i;
                for (b, &j) in assign[id].iter().enumerate() {
                    samples[base(b)] = node.values[j];
                    let v = &node.vectors[j];
                    let p = v[pivots[id][b]];
                    for c in 0..m {
                        samples[base(m + b * m + c)] = v[c] / p;
                    }
                }
            }
        }
    }
    let mut coeffs = vec![C64::new(0.0, 0.0); samples.len()];
    for (src, dst) in samples.chunks(nx).zip(coeffs.chunks_mut(nx)) {
        dst.copy_from_slice(&pdo::forward(src));
    }
    let table = Arc::new(Table {
        grid: grid.clone(),
        freqs,
        entries,
        samples,
        coeffs,
    });

    let deps = a.deps();
    let eigenvalues = (0..m)
        .map(|b| {
            let tb = table.clone();
            ScalarSymbol::with_deps(1.0, deps, move |t, x, xi| {
                let mut out = [C64::new(0.0, 0.0)];
                tb.eval(t, x, xi, b, &mut out);
                out[0]
            })
        })
        .collect();
    let branch_vectors: Vec<VectorSymbol> = (0..m)
        .map(|b| {
            let tb = table.clone();
            VectorSymbol::from_fn(vec![0.0; m], deps, move |t, x, xi| {
                let mut out = vec![C64::new(0.0, 0.0); m];
                tb.eval(t, x, xi, m + b * m, &mut out);
                DVector::from_vec(out)
            })
        })
        .collect();
    let max_residual = solved.iter().map(|s| s.residual).fold(0.0, f64::max);
    let eigenvectors = branch_vectors[..m - 1].to_vec();
    Ok(EigenFit {
        data: EigenData::new(eigenvalues, eigenvectors)?,
        branch_vectors,
        warnings,
        max_residual,
    })
}
