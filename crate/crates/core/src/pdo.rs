//! Quantisation of symbols on torus grid functions and discrete Sobolev norms.
//!
//! Transform convention: forward DFT unnormalised, inverse carries `1/nx`,
//! frequencies laid out as in [`Torus::frequency`].

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::grid::Torus;
use crate::par::{self, Exec};
use crate::symbol::{bracket, ScalarSymbol, C64};

type Plans = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

static PLANS: Lazy<Mutex<HashMap<usize, Plans>>> = Lazy::new(|| Mutex::new(HashMap::new()));
static TWIDDLES: Lazy<Mutex<HashMap<usize, Arc<Vec<C64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plans(nx: usize) -> Plans {
    let mut cache = PLANS.lock().expect("fft plan cache poisoned");
    cache
        .entry(nx)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(nx), planner.plan_fft_inverse(nx))
        })
        .clone()
}

/// `exp(2 pi i j / nx)` for `j in 0..nx`.
fn twiddles(nx: usize) -> Arc<Vec<C64>> {
    let mut cache = TWIDDLES.lock().expect("twiddle cache poisoned");
    cache
        .entry(nx)
        .or_insert_with(|| {
            Arc::new(
                (0..nx)
                    .map(|j| C64::from_polar(1.0, 2.0 * PI * j as f64 / nx as f64))
                    .collect(),
            )
        })
        .clone()
}

/// Unnormalised forward DFT.
pub fn forward(values: &[C64]) -> Vec<C64> {
    let mut buf = values.to_vec();
    plans(buf.len()).0.process(&mut buf);
    buf
}

/// Inverse DFT including the `1/nx` factor.
pub fn inverse(spectrum: &[C64]) -> Vec<C64> {
    let mut buf = spectrum.to_vec();
    let n = buf.len();
    plans(n).1.process(&mut buf);
    let inv = 1.0 / n as f64;
    for v in &mut buf {
        *v *= inv;
    }
    buf
}

/// Samples of a complex function on the torus grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub torus: Torus,
    pub values: Vec<C64>,
}

impl Field {
    pub fn zeros(torus: Torus) -> Self {
        Field {
            torus,
            values: vec![C64::new(0.0, 0.0); torus.nx],
        }
    }

    pub fn from_fn<F: Fn(f64) -> C64>(torus: Torus, f: F) -> Self {
        Field {
            torus,
            values: (0..torus.nx).map(|i| f(torus.x(i))).collect(),
        }
    }

    /// `exp(i xi_n x)` for signed wavenumber `n`.
    pub fn mode(torus: Torus, n: i64) -> Self {
        let xi = 2.0 * PI / torus.l * n as f64;
        Self::from_fn(torus, |x| C64::from_polar(1.0, xi * x))
    }

    pub fn from_spectrum(torus: Torus, spectrum: &[C64]) -> Self {
        Field {
            torus,
            values: inverse(spectrum),
        }
    }

    pub fn spectrum(&self) -> Vec<C64> {
        forward(&self.values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn scaled(&self, c: C64) -> Field {
        Field {
            torus: self.torus,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: C64, other: &Field) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(C64::new(1.0, 0.0), other);
        out
    }

    pub fn sub(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "re", "im"])?;
        for (i, v) in self.values.iter().enumerate() {
            out.write_record(&[
                self.torus.x(i).to_string(),
                v.re.to_string(),
                v.im.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `m` fields tracked in the anisotropic scale: component `k` (0-based) in
/// `H^{s+k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub components: Vec<Field>,
    pub sobolev_base: f64,
}

impl StateVector {
    pub fn new(components: Vec<Field>, sobolev_base: f64) -> Self {
        StateVector {
            components,
            sobolev_base,
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// `||u_k||_{H^{s+k}}` for each 0-based component `k`.
    pub fn anisotropic_norms(&self) -> Vec<f64> {
        self.components
            .iter()
            .enumerate()
            .map(|(k, u)| sobolev_norm(u, self.sobolev_base + k as f64))
            .collect()
    }

    pub fn anisotropic_norm(&self) -> f64 {
        self.anisotropic_norms().iter().sum()
    }

    /// `sum_k ||u_k||_{H^s}` with the same index for every component.
    pub fn isotropic_norm(&self) -> f64 {
        self.components
            .iter()
            .map(|u| sobolev_norm(u, self.sobolev_base))
            .sum()
    }
}

/// Quantised action `(a(t,x,D) u)(x_i) = (1/nx) sum_k e^{i x_i xi_k} a(t,x_i,xi_k) u^(xi_k)`.
pub fn apply_symbol(a: &ScalarSymbol, t: f64, u: &Field) -> Field {
    apply_symbol_with(a, t, u, Exec::default())
}

pub fn apply_symbol_with(a: &ScalarSymbol, t: f64, u: &Field, exec: Exec) -> Field {
    let torus = u.torus;
    let nx = torus.nx;
    if let Some(c) = a.as_constant() {
        return u.scaled(c);
    }
    let deps = a.deps();
    if !deps.xi {
        // multiplication operator
        let values = u
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| a.eval(t, torus.x(i), 0.0) * v)
            .collect();
        return Field { torus, values };
    }
    let mut spec = u.spectrum();
    if !deps.x {
        for (k, v) in spec.iter_mut().enumerate() {
            *v *= a.eval(t, 0.0, torus.frequency(k));
        }
        return Field::from_spectrum(torus, &spec);
    }
    let w = twiddles(nx);
    let inv = 1.0 / nx as f64;
    let freqs = torus.frequencies();
    let mut values = vec![C64::new(0.0, 0.0); nx];
    let rows_per_chunk = (nx / 16).max(1);
    par::fill_chunks(exec, &mut values, rows_per_chunk, |start, out| {
        for (r, slot) in out.iter_mut().enumerate() {
            let i = start + r;
            let x = torus.x(i);
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..nx {
                if spec[k].re == 0.0 && spec[k].im == 0.0 {
                    continue;
                }
                acc += w[(i * k) % nx] * a.eval(t, x, freqs[k]) * spec[k];
            }
            *slot = acc * inv;
        }
    });
    Field { torus, values }
}

/// Discrete `H^s` norm `( sum_k <xi_k>^{2s} |u^(xi_k)|^2 )^{1/2}` with the
/// unnormalised forward transform.
pub fn sobolev_norm(u: &Field, s: f64) -> f64 {
    let spec = u.spectrum();
    spec.iter()
        .enumerate()
        .map(|(k, v)| bracket(u.torus.frequency(k)).powf(2.0 * s) * v.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutoffMode {
    /// keep `|xi| >= M`
    High,
    /// keep `|xi| < M`
    Low,
}

pub fn frequency_cutoff(u: &Field, m: f64, mode: CutoffMode) -> Field {
    let torus = u.torus;
    let keep = |k: usize| {
        let high = torus.frequency(k).abs() >= m;
        match mode {
            CutoffMode::High => high,
            CutoffMode::Low => !high,
        }
    };
    let kept = (0..torus.nx).filter(|&k| keep(k)).count();
    if kept == torus.nx {
        return u.clone();
    }
    if kept == 0 {
        return Field::zeros(torus);
    }
    let mut spec = u.spectrum();
    for (k, v) in spec.iter_mut().enumerate() {
        if !keep(k) {
            *v = C64::new(0.0, 0.0);
        }
    }
    Field::from_spectrum(torus, &spec)
}

/// Splits `u` into `(high, low)` parts whose sum reproduces `u`.
pub fn split_at_cutoff(u: &Field, m: f64) -> (Field, Field) {
    let high = frequency_cutoff(u, m, CutoffMode::High);
    let low = u.sub(&high);
    (high, low)
}

/// Fraction of the `H^s` mass carried by the top quarter of the spectrum
/// (signed wavenumbers with `|n| >= 3 nx / 8`).
pub fn top_quarter_fraction(u: &Field, s: f64) -> f64 {
    let spec = u.spectrum();
    let nx = u.torus.nx as i64;
    let mut total = 0.0;
    let mut top = 0.0;
    for (k, v) in spec.iter().enumerate() {
        let w = bracket(u.torus.frequency(k)).powf(2.0 * s) * v.norm_sqr();
        total += w;
        if 8 * u.torus.wavenumber(k).abs() >= 3 * nx {
            top += w;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        top / total
    }
}

/// Threshold above which [`top_quarter_fraction`] triggers an aliasing warning.
pub const ALIASING_THRESHOLD: f64 = 1e-8;

pub fn aliasing_warning(u: &Field, s: f64, label: &str) -> Option<String> {
    let frac = top_quarter_fraction(u, s);
    (frac > ALIASING_THRESHOLD).then(|| {
        format!("aliasing: {label} carries {frac:.3e} of its H^{s} mass in the top quarter of the spectrum")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol::Deps;

    fn torus(nx: usize) -> Torus {
        Torus::new(2.0 * PI, nx).unwrap()
    }

    #[test]
    fn identity_symbol_is_bitwise_identity() {
        let u = Field::from_fn(torus(16), |x| C64::new(x.sin(), x.cos() * 0.3));
        assert_eq!(apply_symbol(&ScalarSymbol::one(), 0.0, &u), u);
    }

    #[test]
    fn xi_acts_on_single_mode() {
        let u = Field::mode(torus(16), 1);
        let v = apply_symbol(&ScalarSymbol::xi(), 0.0, &u);
        for (a, b) in v.values.iter().zip(&u.values) {
            assert!((a - b).norm() < 1e-14);
        }
        // the dense path must agree with the multiplier path
        let xi_dense = ScalarSymbol::with_deps(1.0, Deps::ALL, |_, _, xi| C64::new(xi, 0.0));
        let w = apply_symbol(&xi_dense, 0.0, &u);
        for (a, b) in w.values.iter().zip(&u.values) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn x_multiplier_on_constant() {
        let t = torus(16);
        let one = Field::from_fn(t, |_| C64::new(1.0, 0.0));
        let s = &ScalarSymbol::coefficient(|_, x| C64::new(x.sin(), 0.0)) * &ScalarSymbol::bracket_pow(0.0);
        let v = apply_symbol(&s, 0.0, &one);
        for i in 0..16 {
            assert!((v.values[i] - C64::new(t.x(i).sin(), 0.0)).norm() < 1e-15);
        }
        // same through the general quadrature
        let g = ScalarSymbol::new(0.0, |_, x, _| C64::new(x.sin(), 0.0));
        let w = apply_symbol(&g, 0.0, &one);
        for i in 0..16 {
            assert!((w.values[i] - v.values[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn sobolev_norm_of_single_mode() {
        let nx = 32;
        let u = Field::mode(torus(nx), 1);
        for s in [0.0, 0.5, 1.0, 2.5] {
            let want = 2f64.powf(s / 2.0) * nx as f64;
            assert!((sobolev_norm(&u, s) - want).abs() < 1e-10 * want);
        }
        assert_eq!(sobolev_norm(&Field::zeros(torus(8)), 1.0), 0.0);
    }

    #[test]
    fn parseval_at_s_zero() {
        let u = Field::from_fn(torus(16), |x| C64::new((3.0 * x).cos() + 0.1 * x, x.sin()));
        let sum: f64 = u.values.iter().map(|v| v.norm_sqr()).sum();
        let want = (sum * 16.0).sqrt();
        assert!((sobolev_norm(&u, 0.0) - want).abs() < 1e-12 * want);
    }

    #[test]
    fn cutoff_edge_cases() {
        let t = torus(16);
        let u = Field::from_fn(t, |x| C64::new(x.cos() + (5.0 * x).sin(), 0.0));
        assert_eq!(frequency_cutoff(&u, 0.0, CutoffMode::High), u);
        assert!(frequency_cutoff(&u, 100.0, CutoffMode::High).max_abs() == 0.0);
        let (hi, lo) = split_at_cutoff(&u, 3.0);
        for i in 0..16 {
            assert!((hi.values[i] + lo.values[i] - u.values[i]).norm() < 1e-15);
            assert!((hi.values[i] - C64::new((5.0 * t.x(i)).sin(), 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn aliasing_guard() {
        let t = torus(16);
        assert!(aliasing_warning(&Field::mode(t, 2), 0.0, "u").is_none());
        assert!(aliasing_warning(&Field::mode(t, 7), 0.0, "u").is_some());
    }
}
