//! Symmetric banded matrices with an in-band LDLᵀ factorization.
//!
//! P1 assembly on the structured meshes of this crate produces SPD systems
//! with half-bandwidth n+2, so an envelope factorization is the direct
//! sparse solver of choice at desk scale: O(n·hbw²) flops, no pivoting, and
//! bit-for-bit deterministic.

use crate::error::{Error, Result};

/// Lower-band storage of a symmetric matrix: entry (j+d, j) for diagonal
/// offset d in 0..=hbw lives at `band[d*n + j]`.
#[derive(Clone, Debug)]
pub struct SymBanded {
    n: usize,
    hbw: usize,
    band: Vec<f64>,
}

impl SymBanded {
    pub fn zeros(n: usize, hbw: usize) -> SymBanded {
        SymBanded { n, hbw, band: vec![0.0; (hbw + 1) * n] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.hbw
    }

    /// Add `v` at (i, j); symmetric storage, so (i, j) and (j, i) are the
    /// same slot. Panics if |i-j| exceeds the bandwidth.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let d = r - c;
        assert!(d <= self.hbw, "entry ({i},{j}) outside bandwidth {}", self.hbw);
        self.band[d * self.n + c] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let d = r - c;
        if d > self.hbw {
            0.0
        } else {
            self.band[d * self.n + c]
        }
    }

    /// Replace row and column `c` by the identity row/column.
    pub fn set_identity_row_col(&mut self, c: usize) {
        for d in 0..=self.hbw {
            // (c+d, c): column c below the diagonal
            if c + d < self.n {
                self.band[d * self.n + c] = 0.0;
            }
            // (c, c-d): row c left of the diagonal
            if d > 0 && c >= d {
                self.band[d * self.n + (c - d)] = 0.0;
            }
        }
        self.band[c] = 1.0;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            y[j] += self.band[j] * x[j];
            for d in 1..=self.hbw {
                if j + d >= self.n {
                    break;
                }
                let v = self.band[d * self.n + j];
                y[j + d] += v * x[j];
                y[j] += v * x[j + d];
            }
        }
        y
    }

    /// Largest absolute entry; a cheap scale reference for relative
    /// comparisons.
    pub fn max_abs(&self) -> f64 {
        self.band.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// In-band LDLᵀ (no pivoting). Fails on a non-positive pivot, which for
    /// the assembled Jacobians means the matrix lost positive definiteness.
    pub fn factor(&self) -> Result<LdlFactor> {
        let n = self.n;
        let hbw = self.hbw;
        let mut band = self.band.clone();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let tiny = 1.0e-300 * scale;
        for j in 0..n {
            let k0 = j.saturating_sub(hbw);
            let mut d = band[j];
            for k in k0..j {
                let ljk = band[(j - k) * n + k];
                d -= ljk * ljk * band[k];
            }
            if !(d > tiny) {
                return Err(Error::SingularJacobian { index: j, pivot: d });
            }
            band[j] = d;
            let imax = (j + hbw).min(n - 1);
            for i in j + 1..=imax {
                let ki0 = k0.max(i.saturating_sub(hbw));
                let mut s = band[(i - j) * n + j];
                for k in ki0..j {
                    s -= band[(i - k) * n + k] * band[(j - k) * n + k] * band[k];
                }
                band[(i - j) * n + j] = s / d;
            }
        }
        Ok(LdlFactor { n, hbw, band })
    }
}

/// LDLᵀ factor: unit-lower L in the strict lower band, D on the diagonal.
#[derive(Clone, Debug)]
pub struct LdlFactor {
    n: usize,
    hbw: usize,
    band: Vec<f64>,
}

impl LdlFactor {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let hbw = self.hbw;
        let mut x = b.to_vec();
        // L z = b
        for i in 0..n {
            let k0 = i.saturating_sub(hbw);
            let mut s = x[i];
            for k in k0..i {
                s -= self.band[(i - k) * n + k] * x[k];
            }
            x[i] = s;
        }
        // D y = z
        for i in 0..n {
            x[i] /= self.band[i];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let kmax = (i + hbw).min(n - 1);
            let mut s = x[i];
            for k in i + 1..=kmax {
                s -= self.band[(k - i) * n + i] * x[k];
            }
            x[i] = s;
        }
        x
    }
}
