//! Banded LU factorization with partial pivoting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Square matrix with `kl` sub-diagonals and `ku` super-diagonals, stored
/// row by row in a dense band of width `2 kl + ku + 1` so that row
/// interchanges during partial pivoting have room for fill-in.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    /// Whether `(i, j)` lies inside the declared band `[i − kl, i + ku]`.
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    // Column j of row i lives at slot j + kl − i, valid for j ∈ [i − kl, i + kl + ku].
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.kl + self.ku || j >= self.n {
            None
        } else {
            Some(i * self.width + j + self.kl - i)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Adds `x` to entry `(i, j)`. Panics if the entry is outside the band.
    pub fn add(&mut self, i: usize, j: usize, x: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band ({}, {})", self.kl, self.ku);
        let s = self.slot(i, j).unwrap();
        self.data[s] += x;
    }

    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band ({}, {})", self.kl, self.ku);
        let s = self.slot(i, j).unwrap();
        self.data[s] = x;
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.kl + self.ku).min(self.n - 1);
            (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
        })
    }

    /// Factorizes in place; returns the factorization or the first row whose pivot vanished.
    pub fn lu(mut self) -> Result<BandLu> {
        let n = self.n;
        let scale = self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        let mut perm = vec![0usize; n];
        let span = self.kl + self.ku;
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let a = self.get(i, k).abs();
                if a > best {
                    best = a;
                    p = i;
                }
            }
            if best <= 1e-300_f64.max(scale * f64::EPSILON * 1e-4) || !best.is_finite() {
                return Err(Error::Regularity { row: k });
            }
            perm[k] = p;
            let last_col = (k + span).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.get(k, j), self.get(p, j));
                    self.put(k, j, b);
                    self.put(p, j, a);
                }
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last_row {
                let factor = self.get(i, k) / pivot;
                if factor == 0.0 {
                    continue;
                }
                self.put(i, k, factor);
                for j in k + 1..=last_col {
                    let u = self.get(k, j);
                    if u != 0.0 {
                        let s = self.slot(i, j).unwrap();
                        self.data[s] -= factor * u;
                    }
                }
            }
        }
        Ok(BandLu { lu: self, perm })
    }

    // Writes inside the widened storage (used by the factorization for fill-in).
    fn put(&mut self, i: usize, j: usize, x: f64) {
        let s = self.slot(i, j).expect("fill-in outside storage");
        self.data[s] = x;
    }
}

/// `P A = L U` for a [`BandMatrix`].
#[derive(Clone, Debug)]
pub struct BandLu {
    lu: BandMatrix,
    perm: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let a = &self.lu;
        let n = a.n;
        let mut x = b.clone();
        for k in 0..n {
            x.swap_rows(k, self.perm[k]);
            let last_row = (k + a.kl).min(n - 1);
            for i in k + 1..=last_row {
                x[i] -= a.get(i, k) * x[k];
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + a.kl + a.ku).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=last_col {
                s -= a.get(k, j) * x[j];
            }
            x[k] = s / a.get(k, k);
        }
        x
    }
}
