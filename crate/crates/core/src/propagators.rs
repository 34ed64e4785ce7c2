//! Scalar propagators for `D_t w = (lambda + b)(t, x, D) w + g`, i.e.
//! `dw/dt = i (lambda + b) w + i g`, by classical RK4 in time and spectral
//! quantisation in space.
//!
//! Solutions are kept on a half-step mesh: the values at every RK4 step plus
//! cubic Hermite midpoints built from the stored right-hand sides. A solution
//! on that mesh can therefore serve as a source for another solve with the
//! same step, with all RK4 stage times available at fourth-order accuracy.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::par::Exec;
use crate::pdo::{apply_symbol_with, sobolev_norm, Field};
use crate::symbol::{ScalarSymbol, C64};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Largest admissible `dt * max |lambda + b|`.
pub const CFL_LIMIT: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct PropagatorConfig {
    pub lambda: ScalarSymbol,
    pub b_diag: ScalarSymbol,
    /// RK4 steps per grid interval.
    pub substeps: usize,
    /// Admissible `|Im lambda|`, relative to `max(1, |lambda|)`.
    pub tol_real: f64,
    pub exec: Exec,
}

impl PropagatorConfig {
    pub fn new(lambda: ScalarSymbol, b_diag: ScalarSymbol, substeps: usize) -> Self {
        PropagatorConfig {
            lambda,
            b_diag,
            substeps,
            tol_real: 1e-10,
            exec: Exec::default(),
        }
    }

    fn generator(&self) -> ScalarSymbol {
        &self.lambda + &self.b_diag
    }

    /// Checks `substeps >= 1`, real `lambda` and the CFL guard on `grid`.
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be >= 1".into()));
        }
        let gen = self.generator();
        let h = grid.dt() / self.substeps as f64;
        let xs = grid.xs();
        let freqs = grid.frequencies();
        let mut max_gen = 0.0f64;
        for &t in &grid.times() {
            for &x in &xs {
                for &xi in &freqs {
                    let l = self.lambda.eval(t, x, xi);
                    if l.im.abs() > self.tol_real * l.norm().max(1.0) {
                        return Err(Error::InvalidArgument(format!(
                            "lambda is not real at (t={t}, x={x}, xi={xi}): {l}"
                        )));
                    }
                    max_gen = max_gen.max(gen.eval(t, x, xi).norm());
                }
            }
        }
        let cfl = h * max_gen;
        if cfl > CFL_LIMIT {
            return Err(Error::Instability { t: 0.0, cfl });
        }
        Ok(())
    }
}

/// Uniform RK4 step mesh `t0 + j h`, `j = 0..=steps`, with midpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeMesh {
    pub t0: f64,
    pub h: f64,
    pub steps: usize,
}

impl TimeMesh {
    pub fn for_grid(grid: &GridSpec, substeps: usize) -> Self {
        TimeMesh {
            t0: 0.0,
            h: grid.dt() / substeps as f64,
            steps: (grid.nt - 1) * substeps,
        }
    }

    /// Number of half-step points, `2 steps + 1`.
    pub fn points(&self) -> usize {
        2 * self.steps + 1
    }

    /// Time of half-step point `j`.
    pub fn time(&self, j: usize) -> f64 {
        self.t0 + 0.5 * self.h * j as f64
    }

    pub fn end(&self) -> f64 {
        self.time(self.points() - 1)
    }

    /// Sub-mesh covering steps `from..to`.
    pub fn slab(&self, from: usize, to: usize) -> TimeMesh {
        TimeMesh {
            t0: self.t0 + self.h * from as f64,
            h: self.h,
            steps: to - from,
        }
    }
}

/// Fields on the half-step points of a [`TimeMesh`].
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSeries {
    pub mesh: TimeMesh,
    pub values: Vec<Field>,
}

impl MeshSeries {
    pub fn zeros(mesh: TimeMesh, like: &Field) -> Self {
        MeshSeries {
            mesh,
            values: vec![Field::zeros(like.torus); mesh.points()],
        }
    }

    /// Samples `f(t)` at every half-step point.
    pub fn from_fn<F: Fn(f64) -> Field>(mesh: TimeMesh, f: F) -> Self {
        MeshSeries {
            mesh,
            values: (0..mesh.points()).map(|j| f(mesh.time(j))).collect(),
        }
    }

    /// Piecewise-linear interpolation of fields given at the grid times.
    pub fn from_levels(mesh: TimeMesh, grid: &GridSpec, levels: &[Field]) -> Result<Self> {
        if levels.len() != grid.nt {
            return Err(Error::Dimension {
                expected: grid.nt,
                found: levels.len(),
            });
        }
        let dt = grid.dt();
        Ok(Self::from_fn(mesh, |t| {
            let s = (t / dt).clamp(0.0, (grid.nt - 1) as f64);
            let n = (s.floor() as usize).min(grid.nt - 2);
            let w = s - n as f64;
            let mut out = levels[n].scaled(C64::new(1.0 - w, 0.0));
            out.axpy(C64::new(w, 0.0), &levels[n + 1]);
            out
        }))
    }

    /// Values at the grid times, assuming the mesh was built with
    /// [`TimeMesh::for_grid`] and `substeps` steps per grid interval.
    pub fn at_grid(&self, substeps: usize) -> Vec<Field> {
        self.values.iter().step_by(2 * substeps).cloned().collect()
    }

    pub fn last(&self) -> &Field {
        self.values.last().expect("mesh series is never empty")
    }

    /// Half-step points of steps `from..=to`.
    pub fn slice(&self, from: usize, to: usize) -> MeshSeries {
        MeshSeries {
            mesh: self.mesh.slab(from, to),
            values: self.values[2 * from..=2 * to].to_vec(),
        }
    }

    pub fn add(&self, other: &MeshSeries) -> MeshSeries {
        MeshSeries {
            mesh: self.mesh,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a.add(b)).collect(),
        }
    }

    pub fn scaled(&self, c: C64) -> MeshSeries {
        MeshSeries {
            mesh: self.mesh,
            values: self.values.iter().map(|v| v.scaled(c)).collect(),
        }
    }

    pub fn axpy(&mut self, c: C64, other: &MeshSeries) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.axpy(c, b);
        }
    }

    pub fn sup_norm(&self, s: f64) -> f64 {
        self.values.iter().map(|v| sobolev_norm(v, s)).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.values.iter().all(|z| z.re == 0.0 && z.im == 0.0))
    }
}

fn rhs(gen: &ScalarSymbol, t: f64, w: &Field, g: Option<&Field>, exec: Exec) -> Field {
    let mut out = apply_symbol_with(gen, t, w, exec).scaled(I);
    if let Some(g) = g {
        out.axpy(I, g);
    }
    out
}

fn combine(w: &Field, h: f64, k: &[&Field; 4], weights: [f64; 4]) -> Field {
    let mut out = w.clone();
    for (kk, c) in k.iter().zip(weights) {
        if c != 0.0 {
            out.axpy(C64::new(h * c, 0.0), kk);
        }
    }
    out
}

/// RK4 on `mesh` from `w0`, with an optional source given on the same mesh.
pub fn evolve(
    cfg: &PropagatorConfig,
    mesh: TimeMesh,
    w0: &Field,
    source: Option<&MeshSeries>,
) -> Result<MeshSeries> {
    if let Some(src) = source {
        if src.values.len() != mesh.points() {
            return Err(Error::Dimension {
                expected: mesh.points(),
                found: src.values.len(),
            });
        }
    }
    let gen = cfg.generator();
    let exec = cfg.exec;
    let h = mesh.h;
    let src = |j: usize| source.map(|s| &s.values[j]);
    let mut values = Vec::with_capacity(mesh.points());
    values.push(w0.clone());
    let mut w = w0.clone();
    let mut f0 = rhs(&gen, mesh.time(0), &w, src(0), exec);
    for step in 0..mesh.steps {
        let j = 2 * step;
        let t = mesh.time(j);
        let tm = mesh.time(j + 1);
        let k1 = &f0;
        let k2 = rhs(&gen, tm, &combine(&w, h, &[k1, k1, k1, k1], [0.5, 0.0, 0.0, 0.0]), src(j + 1), exec);
        let k3 = rhs(&gen, tm, &combine(&w, h, &[&k2, &k2, &k2, &k2], [0.5, 0.0, 0.0, 0.0]), src(j + 1), exec);
        let k4 = rhs(&gen, mesh.time(j + 2), &combine(&w, h, &[&k3, &k3, &k3, &k3], [1.0, 0.0, 0.0, 0.0]), src(j + 2), exec);
        let w1 = combine(&w, h, &[k1, &k2, &k3, &k4], [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0]);
        if !w1.is_finite() {
            let max_gen = max_generator(&gen, t, &w.torus);
            return Err(Error::Instability {
                t: mesh.time(j + 2),
                cfl: h * max_gen,
            });
        }
        let f1 = rhs(&gen, mesh.time(j + 2), &w1, src(j + 2), exec);
        // cubic Hermite midpoint
        let mut mid = w.add(&w1).scaled(C64::new(0.5, 0.0));
        mid.axpy(C64::new(h / 8.0, 0.0), &f0);
        mid.axpy(C64::new(-h / 8.0, 0.0), &f1);
        values.push(mid);
        values.push(w1.clone());
        w = w1;
        f0 = f1;
    }
    Ok(MeshSeries { mesh, values })
}

fn max_generator(gen: &ScalarSymbol, t: f64, torus: &crate::grid::Torus) -> f64 {
    let mut m = 0.0f64;
    for i in 0..torus.nx {
        for k in 0..torus.nx {
            m = m.max(gen.eval(t, torus.x(i), torus.frequency(k)).norm());
        }
    }
    m
}

/// `G0 theta` at the grid times.
pub fn solve_homogeneous(cfg: &PropagatorConfig, theta: &Field, grid: &GridSpec) -> Result<Vec<Field>> {
    cfg.validate(grid)?;
    let mesh = TimeMesh::for_grid(grid, cfg.substeps);
    Ok(evolve(cfg, mesh, theta, None)?.at_grid(cfg.substeps))
}

/// `G g` at the grid times, for a source given at the grid times and
/// interpolated linearly in between.
pub fn solve_inhomogeneous(cfg: &PropagatorConfig, g: &[Field], grid: &GridSpec) -> Result<Vec<Field>> {
    cfg.validate(grid)?;
    let first = g.first().ok_or(Error::Dimension {
        expected: grid.nt,
        found: 0,
    })?;
    let mesh = TimeMesh::for_grid(grid, cfg.substeps);
    let src = MeshSeries::from_levels(mesh, grid, g)?;
    Ok(evolve(cfg, mesh, &Field::zeros(first.torus), Some(&src))?.at_grid(cfg.substeps))
}

/// `phi(t, s, x, xi) = x xi + int_s^t lambda(tau, xi) dtau` for a symbol
/// without `x` dependence.
#[derive(Debug, Clone)]
pub struct Phase {
    lambda: ScalarSymbol,
    /// Quadrature step bound.
    h: f64,
}

impl Phase {
    pub fn eval(&self, t: f64, s: f64, x: f64, xi: f64) -> f64 {
        x * xi + self.integral(t, s, xi)
    }

    /// Composite Simpson on an even number of panels no wider than `h`.
    pub fn integral(&self, t: f64, s: f64, xi: f64) -> f64 {
        if t == s {
            return 0.0;
        }
        let panels = ((t - s).abs() / self.h).ceil().max(1.0) as usize;
        let n = 2 * panels;
        let step = (t - s) / n as f64;
        let f = |k: usize| self.lambda.eval(s + step * k as f64, 0.0, xi).re;
        let mut acc = f(0) + f(n);
        for k in 1..n {
            acc += if k % 2 == 1 { 4.0 * f(k) } else { 2.0 * f(k) };
        }
        acc * step / 3.0
    }
}

/// Max over the grid of `|lambda(t, x, xi) - lambda(t, 0, xi)|`.
pub fn x_variation(lambda: &ScalarSymbol, grid: &GridSpec) -> f64 {
    if !lambda.deps().x {
        return 0.0;
    }
    let mut v = 0.0f64;
    for &t in &grid.times() {
        for &xi in &grid.frequencies() {
            let base = lambda.eval(t, 0.0, xi);
            for &x in &grid.xs() {
                let d = (lambda.eval(t, x, xi) - base).norm() / base.norm().max(1.0);
                v = v.max(d);
            }
        }
    }
    v
}

pub fn explicit_phase(lambda_xi: &ScalarSymbol, grid: &GridSpec, substeps: usize) -> Result<Phase> {
    let variation = x_variation(lambda_xi, grid);
    if variation >= 1e-12 {
        return Err(Error::NotXIndependent { variation });
    }
    Ok(Phase {
        lambda: lambda_xi.clone(),
        h: grid.dt() / substeps.max(1) as f64,
    })
}

/// `(1/nx) sum_k e^{i phi(t, 0, x_i, xi_k)} amp(t, x_i, xi_k) theta^(xi_k)`.
pub fn fio_apply(phase: &Phase, amp: &ScalarSymbol, t: f64, theta: &Field) -> Field {
    let torus = theta.torus;
    let spec: Vec<C64> = theta
        .spectrum()
        .iter()
        .enumerate()
        .map(|(k, v)| C64::from_polar(1.0, phase.integral(t, 0.0, torus.frequency(k))) * v)
        .collect();
    apply_symbol_with(amp, t, &Field::from_spectrum(torus, &spec), Exec::default())
}

/// Probe constants `C0 = sup ||G0 theta(t)|| / ||theta||` and
/// `C1 = sup ||G g(t)|| / (t sup ||g||)` in `H^s`, over single-mode probes.
pub fn measure_small_time_bounds(cfg: &PropagatorConfig, grid: &GridSpec, s: f64) -> Result<(f64, f64)> {
    cfg.validate(grid)?;
    let torus = grid.torus;
    let nx = torus.nx as i64;
    let mut probes = vec![0, 1, -1, nx / 8, nx / 4, -(nx / 4)];
    probes.sort();
    probes.dedup();
    let times = grid.times();
    let mut c0 = 0.0f64;
    let mut c1 = 0.0f64;
    for n in probes {
        let theta = Field::mode(torus, n);
        let base = sobolev_norm(&theta, s);
        for w in solve_homogeneous(cfg, &theta, grid)? {
            c0 = c0.max(sobolev_norm(&w, s) / base);
        }
        let g = vec![theta.clone(); grid.nt];
        for (w, &t) in solve_inhomogeneous(cfg, &g, grid)?.iter().zip(&times).skip(1) {
            c1 = c1.max(sobolev_norm(w, s) / (t * base));
        }
    }
    Ok((c0, c1))
}
