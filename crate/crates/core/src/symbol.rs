//! Symbols `a(t, x, xi)` of class `S^m` and matrices of them.
//!
//! Symbols are closures paired with a declared order. They carry a small
//! amount of structural metadata (which variables they depend on, whether they
//! are constant) so that quantisation can pick the cheapest exact algorithm.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result, Witness};
use crate::grid::GridSpec;
use crate::par::{self, Exec};

pub type C64 = Complex64;

type ScalarFn = dyn Fn(f64, f64, f64) -> C64 + Send + Sync;
type VectorFn = dyn Fn(f64, f64, f64) -> DVector<C64> + Send + Sync;
type MatrixFn = dyn Fn(f64, f64, f64) -> DMatrix<C64> + Send + Sync;

/// Japanese bracket `<xi> = (1 + xi^2)^(1/2)`.
pub fn bracket(xi: f64) -> f64 {
    (1.0 + xi * xi).sqrt()
}

/// Which of `(t, x, xi)` a symbol may depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Deps {
    pub t: bool,
    pub x: bool,
    pub xi: bool,
}

impl Deps {
    pub const NONE: Deps = Deps {
        t: false,
        x: false,
        xi: false,
    };
    pub const ALL: Deps = Deps {
        t: true,
        x: true,
        xi: true,
    };

    pub fn union(self, o: Deps) -> Deps {
        Deps {
            t: self.t || o.t,
            x: self.x || o.x,
            xi: self.xi || o.xi,
        }
    }
}

#[derive(Clone)]
pub struct ScalarSymbol {
    f: Arc<ScalarFn>,
    order: f64,
    deps: Deps,
    constant: Option<C64>,
}

impl fmt::Debug for ScalarSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarSymbol")
            .field("order", &self.order)
            .field("deps", &self.deps)
            .field("constant", &self.constant)
            .finish()
    }
}

impl ScalarSymbol {
    /// A general symbol; assumed to depend on every variable.
    pub fn new<F>(order: f64, f: F) -> Self
    where
        F: Fn(f64, f64, f64) -> C64 + Send + Sync + 'static,
    {
        Self::with_deps(order, Deps::ALL, f)
    }

    pub fn with_deps<F>(order: f64, deps: Deps, f: F) -> Self
    where
        F: Fn(f64, f64, f64) -> C64 + Send + Sync + 'static,
    {
        ScalarSymbol {
            f: Arc::new(f),
            order,
            deps,
            constant: None,
        }
    }

    pub fn constant(c: C64) -> Self {
        let order = if c == C64::new(0.0, 0.0) {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        ScalarSymbol {
            f: Arc::new(move |_, _, _| c),
            order,
            deps: Deps::NONE,
            constant: Some(c),
        }
    }

    pub fn real(c: f64) -> Self {
        Self::constant(C64::new(c, 0.0))
    }

    pub fn zero() -> Self {
        Self::real(0.0)
    }

    pub fn one() -> Self {
        Self::real(1.0)
    }

    /// The symbol `xi`.
    pub fn xi() -> Self {
        Self::with_deps(
            1.0,
            Deps {
                xi: true,
                ..Deps::NONE
            },
            |_, _, xi| C64::new(xi, 0.0),
        )
    }

    /// `<xi>^p`, of order `p`.
    pub fn bracket_pow(p: f64) -> Self {
        if p == 0.0 {
            return Self::one();
        }
        Self::with_deps(
            p,
            Deps {
                xi: true,
                ..Deps::NONE
            },
            move |_, _, xi| C64::new(bracket(xi).powf(p), 0.0),
        )
    }

    /// A Fourier multiplier `m(t, xi)` (no `x` dependence).
    pub fn multiplier<F>(order: f64, f: F) -> Self
    where
        F: Fn(f64, f64) -> C64 + Send + Sync + 'static,
    {
        Self::with_deps(
            order,
            Deps {
                t: true,
                x: false,
                xi: true,
            },
            move |t, _, xi| f(t, xi),
        )
    }

    /// A multiplication operator `c(t, x)`, of order zero.
    pub fn coefficient<F>(f: F) -> Self
    where
        F: Fn(f64, f64) -> C64 + Send + Sync + 'static,
    {
        Self::with_deps(
            0.0,
            Deps {
                t: true,
                x: true,
                xi: false,
            },
            move |t, x, _| f(t, x),
        )
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64, xi: f64) -> C64 {
        (self.f)(t, x, xi)
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn deps(&self) -> Deps {
        self.deps
    }

    pub fn as_constant(&self) -> Option<C64> {
        self.constant
    }

    pub fn is_zero(&self) -> bool {
        self.constant == Some(C64::new(0.0, 0.0))
    }

    /// Overrides the declared order, e.g. for quotients whose order must be
    /// confirmed a posteriori.
    pub fn with_order(mut self, order: f64) -> Self {
        self.order = order;
        self
    }

    pub fn scale(&self, c: C64) -> Self {
        if let Some(k) = self.constant {
            return Self::constant(k * c);
        }
        if c == C64::new(0.0, 0.0) {
            return Self::zero();
        }
        let f = self.f.clone();
        Self::with_deps(self.order, self.deps, move |t, x, xi| c * f(t, x, xi))
    }

    /// Quotient with declared order `ord(self) - ord(den)`.
    pub fn div(&self, den: &ScalarSymbol) -> Self {
        if let (Some(a), Some(b)) = (self.constant, den.constant) {
            return Self::constant(a / b);
        }
        let (f, g) = (self.f.clone(), den.f.clone());
        Self::with_deps(
            self.order - den.order,
            self.deps.union(den.deps),
            move |t, x, xi| f(t, x, xi) / g(t, x, xi),
        )
    }

    pub fn map<F>(&self, order: f64, h: F) -> Self
    where
        F: Fn(C64) -> C64 + Send + Sync + 'static,
    {
        if let Some(c) = self.constant {
            return Self::constant(h(c)).with_order(order);
        }
        let f = self.f.clone();
        Self::with_deps(order, self.deps, move |t, x, xi| h(f(t, x, xi)))
    }
}

impl Add for &ScalarSymbol {
    type Output = ScalarSymbol;
    fn add(self, o: &ScalarSymbol) -> ScalarSymbol {
        if self.is_zero() {
            return o.clone();
        }
        if o.is_zero() {
            return self.clone();
        }
        if let (Some(a), Some(b)) = (self.constant, o.constant) {
            return ScalarSymbol::constant(a + b);
        }
        let (f, g) = (self.f.clone(), o.f.clone());
        ScalarSymbol::with_deps(
            self.order.max(o.order),
            self.deps.union(o.deps),
            move |t, x, xi| f(t, x, xi) + g(t, x, xi),
        )
    }
}

impl Sub for &ScalarSymbol {
    type Output = ScalarSymbol;
    fn sub(self, o: &ScalarSymbol) -> ScalarSymbol {
        self + &(-o)
    }
}

impl Mul for &ScalarSymbol {
    type Output = ScalarSymbol;
    fn mul(self, o: &ScalarSymbol) -> ScalarSymbol {
        if self.is_zero() || o.is_zero() {
            return ScalarSymbol::zero();
        }
        if let Some(c) = self.constant {
            return o.scale(c);
        }
        if let Some(c) = o.constant {
            return self.scale(c);
        }
        let (f, g) = (self.f.clone(), o.f.clone());
        ScalarSymbol::with_deps(
            self.order + o.order,
            self.deps.union(o.deps),
            move |t, x, xi| f(t, x, xi) * g(t, x, xi),
        )
    }
}

impl Neg for &ScalarSymbol {
    type Output = ScalarSymbol;
    fn neg(self) -> ScalarSymbol {
        self.scale(C64::new(-1.0, 0.0))
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for ScalarSymbol {
            type Output = ScalarSymbol;
            fn $m(self, o: ScalarSymbol) -> ScalarSymbol {
                (&self).$m(&o)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for ScalarSymbol {
    type Output = ScalarSymbol;
    fn neg(self) -> ScalarSymbol {
        -(&self)
    }
}

/// Evaluates `sym` on every `(x_i, xi_k)` of the grid at time `t`.
/// Rows index `x`, columns index frequency in DFT order.
pub fn eval_grid(sym: &ScalarSymbol, grid: &GridSpec, t: f64) -> Result<DMatrix<C64>> {
    eval_grid_with(sym, grid, t, Exec::default())
}

pub fn eval_grid_with(
    sym: &ScalarSymbol,
    grid: &GridSpec,
    t: f64,
    exec: Exec,
) -> Result<DMatrix<C64>> {
    if !(0.0..=grid.t_final).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "t={t} outside [0, {}]",
            grid.t_final
        )));
    }
    let nx = grid.nx();
    let xs = grid.xs();
    let freqs = grid.frequencies();
    let rows = par::map_range(exec, nx, |i| {
        freqs
            .iter()
            .map(|&xi| sym.eval(t, xs[i], xi))
            .collect::<Vec<_>>()
    });
    let mut out = DMatrix::zeros(nx, nx);
    for (i, row) in rows.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::Evaluation(Witness {
                    t,
                    x: xs[i],
                    xi: freqs[k],
                }));
            }
            out[(i, k)] = *v;
        }
    }
    Ok(out)
}

/// Largest modulus among complex entries (zero for an empty input).
pub fn max_modulus<'a, I: IntoIterator<Item = &'a C64>>(entries: I) -> f64 {
    entries.into_iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Returned by [`estimate_order`] when the symbol vanishes on a probe level.
pub const VANISHING_ORDER: f64 = f64::NEG_INFINITY;

/// Dyadic frequencies `lo, 2 lo, ..., hi`.
pub fn dyadic_levels(lo: f64, hi: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut f = lo;
    while f <= hi * (1.0 + 1e-12) {
        v.push(f);
        f *= 2.0;
    }
    v
}

/// Growth probe: least-squares slope of `log sup_{t,x} |a(t,x,+-xi)|`
/// against `log <xi>` over the given levels. The sup runs over the grid's
/// time samples and spatial nodes; the levels need not be grid frequencies.
///
/// Returns [`VANISHING_ORDER`] if the symbol is zero on any level.
pub fn estimate_order(sym: &ScalarSymbol, grid: &GridSpec, levels: &[f64]) -> Result<f64> {
    if levels.len() < 3 {
        return Err(Error::InvalidArgument(
            "estimate_order needs at least 3 levels".into(),
        ));
    }
    let floor = (2.0 * grid.cutoff).max(2.0);
    if let Some(bad) = levels.iter().find(|&&l| l < floor) {
        return Err(Error::InvalidArgument(format!(
            "level {bad} below max(2M, 2) = {floor}"
        )));
    }
    let times = grid.times();
    let xs = grid.xs();
    let sups = par::map_slice(Exec::default(), levels, |&xi| {
        let mut sup = 0.0f64;
        for &t in &times {
            for &x in &xs {
                sup = sup.max(sym.eval(t, x, xi).norm()).max(sym.eval(t, x, -xi).norm());
            }
        }
        sup
    });
    if sups.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(
            "symbol is not finite on the probe levels".into(),
        ));
    }
    if sups.iter().any(|&s| s == 0.0) {
        return Ok(VANISHING_ORDER);
    }
    let xs: Vec<f64> = levels.iter().map(|&l| bracket(l).ln()).collect();
    let ys: Vec<f64> = sups.iter().map(|s| s.ln()).collect();
    Ok(least_squares_slope(&xs, &ys))
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// A length-`dim` vector of symbols.
#[derive(Clone)]
pub struct VectorSymbol {
    dim: usize,
    entries: Vec<ScalarSymbol>,
    fused: Option<Arc<VectorFn>>,
}

impl fmt::Debug for VectorSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorSymbol")
            .field("dim", &self.dim)
            .field("orders", &self.orders())
            .finish()
    }
}

impl VectorSymbol {
    pub fn from_entries(entries: Vec<ScalarSymbol>) -> Self {
        VectorSymbol {
            dim: entries.len(),
            entries,
            fused: None,
        }
    }

    pub fn constant(values: &[C64]) -> Self {
        Self::from_entries(values.iter().map(|&c| ScalarSymbol::constant(c)).collect())
    }

    /// A vector evaluated as a whole; component symbols extract from it.
    pub fn from_fn<F>(orders: Vec<f64>, deps: Deps, f: F) -> Self
    where
        F: Fn(f64, f64, f64) -> DVector<C64> + Send + Sync + 'static,
    {
        let fused: Arc<VectorFn> = Arc::new(f);
        let entries = orders
            .iter()
            .enumerate()
            .map(|(i, &o)| {
                let g = fused.clone();
                ScalarSymbol::with_deps(o, deps, move |t, x, xi| g(t, x, xi)[i])
            })
            .collect();
        VectorSymbol {
            dim: orders.len(),
            entries,
            fused: Some(fused),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn component(&self, i: usize) -> &ScalarSymbol {
        &self.entries[i]
    }

    pub fn components(&self) -> &[ScalarSymbol] {
        &self.entries
    }

    pub fn orders(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.order()).collect()
    }

    pub fn deps(&self) -> Deps {
        self.entries
            .iter()
            .fold(Deps::NONE, |d, e| d.union(e.deps()))
    }

    pub fn eval(&self, t: f64, x: f64, xi: f64) -> DVector<C64> {
        match &self.fused {
            Some(f) => f(t, x, xi),
            None => DVector::from_iterator(self.dim, self.entries.iter().map(|e| e.eval(t, x, xi))),
        }
    }

    /// Drops the first `k` coordinates.
    pub fn project(&self, k: usize) -> Result<VectorSymbol> {
        if k >= self.dim {
            return Err(Error::Dimension {
                expected: k + 1,
                found: self.dim,
            });
        }
        let me = self.clone();
        let orders = self.orders()[k..].to_vec();
        let n = self.dim - k;
        Ok(VectorSymbol::from_fn(orders, self.deps(), move |t, x, xi| {
            me.eval(t, x, xi).rows(k, n).into_owned()
        }))
    }
}

#[derive(Clone)]
pub struct MatrixSymbol {
    dim: usize,
    entries: Vec<ScalarSymbol>,
    fused: Option<Arc<MatrixFn>>,
}

impl fmt::Debug for MatrixSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixSymbol")
            .field("dim", &self.dim)
            .field("orders", &self.orders())
            .finish()
    }
}

/// Operation for [`matsym_apply_pointwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatOp {
    Add,
    Mul,
    Scale,
}

pub enum MatOperand<'a> {
    Matrix(&'a MatrixSymbol),
    Scalar(&'a ScalarSymbol),
}

impl MatrixSymbol {
    /// Builds from row-major entries.
    pub fn from_entries(dim: usize, entries: Vec<ScalarSymbol>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::Dimension {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Ok(MatrixSymbol {
            dim,
            entries,
            fused: None,
        })
    }

    pub fn from_rows(rows: Vec<Vec<ScalarSymbol>>) -> Result<Self> {
        let dim = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::from_entries(dim, rows.into_iter().flatten().collect())
    }

    pub fn from_fn<F>(dim: usize, orders: Vec<f64>, deps: Deps, f: F) -> Self
    where
        F: Fn(f64, f64, f64) -> DMatrix<C64> + Send + Sync + 'static,
    {
        assert_eq!(orders.len(), dim * dim);
        let fused: Arc<MatrixFn> = Arc::new(f);
        let entries = (0..dim * dim)
            .map(|idx| {
                let g = fused.clone();
                let (i, j) = (idx / dim, idx % dim);
                ScalarSymbol::with_deps(orders[idx], deps, move |t, x, xi| g(t, x, xi)[(i, j)])
            })
            .collect();
        MatrixSymbol {
            dim,
            entries,
            fused: Some(fused),
        }
    }

    pub fn constant(m: &DMatrix<C64>) -> Self {
        let dim = m.nrows();
        assert_eq!(dim, m.ncols());
        let entries = (0..dim * dim)
            .map(|idx| ScalarSymbol::constant(m[(idx / dim, idx % dim)]))
            .collect();
        MatrixSymbol {
            dim,
            entries,
            fused: None,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::constant(&DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self::constant(&DMatrix::zeros(dim, dim))
    }

    pub fn diagonal(diag: &[ScalarSymbol]) -> Self {
        let dim = diag.len();
        let entries = (0..dim * dim)
            .map(|idx| {
                let (i, j) = (idx / dim, idx % dim);
                if i == j {
                    diag[i].clone()
                } else {
                    ScalarSymbol::zero()
                }
            })
            .collect();
        MatrixSymbol {
            dim,
            entries,
            fused: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> &ScalarSymbol {
        &self.entries[i * self.dim + j]
    }

    pub fn orders(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.order()).collect()
    }

    pub fn deps(&self) -> Deps {
        self.entries
            .iter()
            .fold(Deps::NONE, |d, e| d.union(e.deps()))
    }

    pub fn eval(&self, t: f64, x: f64, xi: f64) -> DMatrix<C64> {
        match &self.fused {
            Some(f) => f(t, x, xi),
            None => DMatrix::from_fn(self.dim, self.dim, |i, j| self.entry(i, j).eval(t, x, xi)),
        }
    }

    pub fn add(&self, o: &MatrixSymbol) -> Result<MatrixSymbol> {
        self.check_dim(o)?;
        let entries = self
            .entries
            .iter()
            .zip(&o.entries)
            .map(|(a, b)| a + b)
            .collect();
        Ok(MatrixSymbol {
            dim: self.dim,
            entries,
            fused: None,
        })
    }

    /// Pointwise matrix product.
    pub fn mul(&self, o: &MatrixSymbol) -> Result<MatrixSymbol> {
        self.check_dim(o)?;
        let m = self.dim;
        let mut orders = vec![f64::NEG_INFINITY; m * m];
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let ord = self.entry(i, k).order() + o.entry(k, j).order();
                    orders[i * m + j] = orders[i * m + j].max(ord);
                }
            }
        }
        let (a, b) = (self.clone(), o.clone());
        Ok(MatrixSymbol::from_fn(
            m,
            orders,
            self.deps().union(o.deps()),
            move |t, x, xi| a.eval(t, x, xi) * b.eval(t, x, xi),
        ))
    }

    pub fn scale(&self, c: &ScalarSymbol) -> MatrixSymbol {
        MatrixSymbol {
            dim: self.dim,
            entries: self.entries.iter().map(|e| e * c).collect(),
            fused: None,
        }
    }

    pub fn mul_vec(&self, v: &VectorSymbol) -> Result<VectorSymbol> {
        if v.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: v.dim(),
            });
        }
        let m = self.dim;
        let orders = (0..m)
            .map(|i| {
                (0..m)
                    .map(|k| self.entry(i, k).order() + v.component(k).order())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let (a, w) = (self.clone(), v.clone());
        Ok(VectorSymbol::from_fn(
            orders,
            self.deps().union(v.deps()),
            move |t, x, xi| a.eval(t, x, xi) * w.eval(t, x, xi),
        ))
    }

    /// The `size x size` block starting at `(offset, offset)`.
    pub fn trailing_block(&self, offset: usize) -> Result<MatrixSymbol> {
        if offset >= self.dim {
            return Err(Error::Dimension {
                expected: offset + 1,
                found: self.dim,
            });
        }
        let n = self.dim - offset;
        let mut orders = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                orders.push(self.entry(i + offset, j + offset).order());
            }
        }
        let a = self.clone();
        Ok(MatrixSymbol::from_fn(n, orders, self.deps(), move |t, x, xi| {
            a.eval(t, x, xi).view((offset, offset), (n, n)).into_owned()
        }))
    }

    /// `blockdiag(I_k, self)`.
    pub fn embed(&self, k: usize) -> MatrixSymbol {
        if k == 0 {
            return self.clone();
        }
        let n = self.dim;
        let m = n + k;
        let mut orders = vec![f64::NEG_INFINITY; m * m];
        for i in 0..k {
            orders[i * m + i] = 0.0;
        }
        for i in 0..n {
            for j in 0..n {
                orders[(i + k) * m + j + k] = self.entry(i, j).order();
            }
        }
        let a = self.clone();
        MatrixSymbol::from_fn(m, orders, self.deps(), move |t, x, xi| {
            let mut out = DMatrix::identity(m, m);
            out.view_mut((k, k), (n, n)).copy_from(&a.eval(t, x, xi));
            out
        })
    }

    /// Conjugation by a constant permutation matrix `P A P^T`.
    pub fn permuted(&self, perm: &[usize]) -> MatrixSymbol {
        let m = self.dim;
        let mut entries = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                entries.push(self.entry(perm[i], perm[j]).clone());
            }
        }
        MatrixSymbol {
            dim: m,
            entries,
            fused: None,
        }
    }

    /// Max modulus of strictly-below-diagonal entries over the grid shell.
    pub fn max_below_diagonal(&self, grid: &GridSpec) -> f64 {
        let m = self.dim;
        let nodes = grid.shell_nodes();
        par::map_slice(Exec::default(), &nodes, |&node| {
            let (t, x, xi) = grid.point(node);
            let a = self.eval(t, x, xi);
            let mut worst = 0.0f64;
            for i in 0..m {
                for j in 0..i {
                    worst = worst.max(a[(i, j)].norm());
                }
            }
            worst
        })
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn is_upper_triangular(&self, grid: &GridSpec, tol: f64) -> bool {
        self.max_below_diagonal(grid) <= tol
    }

    fn check_dim(&self, o: &MatrixSymbol) -> Result<()> {
        if self.dim != o.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: o.dim,
            });
        }
        Ok(())
    }
}

/// Entrywise sum, matrix product, or scaling of matrix symbols.
pub fn matsym_apply_pointwise(
    op: MatOp,
    a: &MatrixSymbol,
    b: MatOperand<'_>,
) -> Result<MatrixSymbol> {
    match (op, b) {
        (MatOp::Add, MatOperand::Matrix(b)) => a.add(b),
        (MatOp::Mul, MatOperand::Matrix(b)) => a.mul(b),
        (MatOp::Scale, MatOperand::Scalar(c)) | (MatOp::Mul, MatOperand::Scalar(c)) => {
            Ok(a.scale(c))
        }
        (MatOp::Add, MatOperand::Scalar(c)) => {
            let shift = MatrixSymbol::diagonal(&vec![c.clone(); a.dim()]);
            a.add(&shift)
        }
        (MatOp::Scale, MatOperand::Matrix(_)) => Err(Error::InvalidArgument(
            "scale expects a scalar operand".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(1.0, 3, 2.0 * PI, 8, 0.0).unwrap()
    }

    #[test]
    fn constant_symbol_grid_is_all_ones() {
        let g = grid();
        let a = eval_grid(&ScalarSymbol::one(), &g, 0.5).unwrap();
        assert!(a.iter().all(|v| *v == C64::new(1.0, 0.0)));
    }

    #[test]
    fn xi_symbol_columns_are_frequencies() {
        let g = GridSpec::new(1.0, 2, 2.0 * PI, 4, 0.0).unwrap();
        let a = eval_grid(&ScalarSymbol::xi(), &g, 0.0).unwrap();
        for i in 0..4 {
            let row: Vec<f64> = (0..4).map(|k| a[(i, k)].re).collect();
            assert_eq!(row, vec![0.0, 1.0, -2.0, -1.0]);
        }
    }

    #[test]
    fn bracket_at_two() {
        let s = ScalarSymbol::bracket_pow(1.0);
        assert!((s.eval(0.0, 0.0, 2.0).re - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn eval_grid_reports_poles() {
        let g = grid();
        let inv_xi = ScalarSymbol::one().div(&ScalarSymbol::xi());
        match eval_grid(&inv_xi, &g, 0.0) {
            Err(Error::Evaluation(w)) => assert_eq!(w.xi, 0.0),
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn eval_grid_is_pure() {
        let g = grid();
        let s = ScalarSymbol::new(1.0, |t, x, xi| C64::new(x.sin() * xi, t * xi.cos()));
        let a = eval_grid(&s, &g, 0.25).unwrap();
        let b = eval_grid_with(&s, &g, 0.25, Exec::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn order_of_bracket() {
        let g = grid();
        let lv = [8.0, 16.0, 32.0, 64.0];
        let o = estimate_order(&ScalarSymbol::bracket_pow(1.0), &g, &lv).unwrap();
        assert!((o - 1.0).abs() < 0.05, "{o}");
        let s = &ScalarSymbol::bracket_pow(-1.0)
            * &ScalarSymbol::coefficient(|_, x| C64::new(x.sin(), 0.0));
        let o = estimate_order(&s, &g, &lv).unwrap();
        assert!((o + 1.0).abs() < 0.05, "{o}");
        let z = estimate_order(&ScalarSymbol::zero(), &g, &lv).unwrap();
        assert_eq!(z, VANISHING_ORDER);
    }

    #[test]
    fn order_levels_validated() {
        let g = grid();
        assert!(estimate_order(&ScalarSymbol::xi(), &g, &[8.0, 16.0]).is_err());
        assert!(estimate_order(&ScalarSymbol::xi(), &g, &[1.0, 16.0, 32.0]).is_err());
    }

    #[test]
    fn order_arithmetic() {
        let a = ScalarSymbol::xi();
        let b = ScalarSymbol::bracket_pow(-1.0);
        assert_eq!((&a * &b).order(), 0.0);
        assert_eq!((&a + &b).order(), 1.0);
        assert_eq!(ScalarSymbol::zero().order(), f64::NEG_INFINITY);
    }

    #[test]
    fn identity_product_and_scaling() {
        let a = MatrixSymbol::from_rows(vec![
            vec![ScalarSymbol::xi(), ScalarSymbol::coefficient(|t, x| C64::new(t + x, 0.0))],
            vec![ScalarSymbol::real(2.0), ScalarSymbol::bracket_pow(1.0)],
        ])
        .unwrap();
        let ai = matsym_apply_pointwise(MatOp::Mul, &a, MatOperand::Matrix(&MatrixSymbol::identity(2)))
            .unwrap();
        let lam = ScalarSymbol::real(3.0);
        let scaled = matsym_apply_pointwise(MatOp::Scale, &a, MatOperand::Scalar(&lam)).unwrap();
        for &(t, x, xi) in &[(0.1, 0.2, 3.0), (0.9, 5.0, -7.0)] {
            assert_eq!(ai.eval(t, x, xi), a.eval(t, x, xi));
            assert_eq!(scaled.eval(t, x, xi), a.eval(t, x, xi) * C64::new(3.0, 0.0));
        }
        assert!(a.add(&MatrixSymbol::identity(3)).is_err());
    }

    #[test]
    fn product_matches_numeric_product() {
        let a = MatrixSymbol::from_fn(2, vec![1.0; 4], Deps::ALL, |t, x, xi| {
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    C64::new(xi, t),
                    C64::new(x.cos(), 0.0),
                    C64::new(1.0, xi),
                    C64::new(t * x, -xi),
                ],
            )
        });
        let b = a.add(&MatrixSymbol::identity(2)).unwrap();
        let p = a.mul(&b).unwrap();
        let (t, x, xi) = (0.3, 1.7, 5.0);
        let want = a.eval(t, x, xi) * b.eval(t, x, xi);
        let got = p.eval(t, x, xi);
        assert!((&want - &got).norm() <= 1e-12 * want.norm());
        // entries extracted from a fused product agree with the fused value
        assert_eq!(p.entry(1, 0).eval(t, x, xi), got[(1, 0)]);
        assert_eq!(p.orders(), vec![2.0; 4]);
    }

    #[test]
    fn embed_and_block() {
        let a = MatrixSymbol::constant(&DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(3.0, 0.0), C64::new(4.0, 0.0)],
        ));
        let e = a.embed(1);
        let v = e.eval(0.0, 0.0, 0.0);
        assert_eq!(v[(0, 0)], C64::new(1.0, 0.0));
        assert_eq!(v[(2, 1)], C64::new(3.0, 0.0));
        let blk = e.trailing_block(1).unwrap();
        assert_eq!(blk.eval(0.0, 0.0, 0.0), a.eval(0.0, 0.0, 0.0));
    }
}
