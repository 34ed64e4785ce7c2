//! Discretisation of `[0, T] x R/LZ` and its dual frequencies.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The periodic spatial grid: `nx` equispaced samples on a circle of
/// circumference `l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Torus {
    pub l: f64,
    pub nx: usize,
}

impl Torus {
    pub fn new(l: f64, nx: usize) -> Result<Self> {
        if nx < 4 || !nx.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "nx must be a power of two >= 4, got {nx}"
            )));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidGrid(format!("L must be positive, got {l}")));
        }
        Ok(Torus { l, nx })
    }

    pub fn dx(&self) -> f64 {
        self.l / self.nx as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    /// Signed integer wavenumber of DFT index `k`.
    pub fn wavenumber(&self, k: usize) -> i64 {
        if k < self.nx / 2 {
            k as i64
        } else {
            k as i64 - self.nx as i64
        }
    }

    /// `xi_k = (2 pi / L) k` for `k < nx/2`, `(2 pi / L)(k - nx)` otherwise.
    pub fn frequency(&self, k: usize) -> f64 {
        2.0 * PI / self.l * self.wavenumber(k) as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.nx).map(|k| self.frequency(k)).collect()
    }

    pub fn max_abs_frequency(&self) -> f64 {
        2.0 * PI / self.l * (self.nx / 2) as f64
    }

    /// DFT index holding the signed wavenumber `n`, if representable.
    pub fn index_of_wavenumber(&self, n: i64) -> Option<usize> {
        let half = (self.nx / 2) as i64;
        if n >= -half && n < half {
            Some(n.rem_euclid(self.nx as i64) as usize)
        } else {
            None
        }
    }

    /// Largest frequency modulus allowed for band-limited data,
    /// `nx * pi / (2 L)`.
    pub fn band_limit(&self) -> f64 {
        self.nx as f64 * PI / (2.0 * self.l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_final: f64,
    pub nt: usize,
    pub torus: Torus,
    /// Frequency cutoff `M`; triangularising transforms live on `|xi| >= M`.
    pub cutoff: f64,
}

impl GridSpec {
    pub fn new(t_final: f64, nt: usize, l: f64, nx: usize, cutoff: f64) -> Result<Self> {
        let torus = Torus::new(l, nx)?;
        if nt < 2 {
            return Err(Error::InvalidGrid(format!("nt must be >= 2, got {nt}")));
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "T_final must be positive, got {t_final}"
            )));
        }
        if !(cutoff >= 0.0 && cutoff < torus.max_abs_frequency()) {
            return Err(Error::InvalidGrid(format!(
                "cutoff M={cutoff} must satisfy 0 <= M < {}",
                torus.max_abs_frequency()
            )));
        }
        Ok(GridSpec {
            t_final,
            nt,
            torus,
            cutoff,
        })
    }

    pub fn nx(&self) -> usize {
        self.torus.nx
    }

    pub fn l(&self) -> f64 {
        self.torus.l
    }

    pub fn dt(&self) -> f64 {
        self.t_final / (self.nt - 1) as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n + 1 == self.nt {
            self.t_final
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nt).map(|n| self.time(n)).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        self.torus.xs()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.torus.frequencies()
    }

    /// DFT indices with `|xi_k| >= M`.
    pub fn shell_indices(&self) -> Vec<usize> {
        (0..self.nx())
            .filter(|&k| self.torus.frequency(k).abs() >= self.cutoff)
            .collect()
    }

    /// Every node `(t_n, x_i, xi_k)` of the grid restricted to the shell
    /// `|xi| >= M`, ordered by time, then space, then frequency index.
    pub fn shell_nodes(&self) -> Vec<Node> {
        let shell = self.shell_indices();
        let mut out = Vec::with_capacity(self.nt * self.nx() * shell.len());
        for n in 0..self.nt {
            for i in 0..self.nx() {
                for &k in &shell {
                    out.push(Node { n, i, k });
                }
            }
        }
        out
    }

    pub fn point(&self, node: Node) -> (f64, f64, f64) {
        (
            self.time(node.n),
            self.torus.x(node.i),
            self.torus.frequency(node.k),
        )
    }

    pub fn with_cutoff(&self, cutoff: f64) -> Result<Self> {
        GridSpec::new(self.t_final, self.nt, self.l(), self.nx(), cutoff)
    }
}

/// Index triple into a [`GridSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    pub n: usize,
    pub i: usize,
    pub k: usize,
}
