//! Banded Gaussian elimination with partial pivoting.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Square matrix with `kl` sub- and `ku` super-diagonals, plus room for the
/// fill-in produced by row interchanges.
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
        let kl = kl.min(n.saturating_sub(1));
        let ku = ku.min(n.saturating_sub(1));
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

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.kl + self.ku {
            return None;
        }
        Some(i * self.width + (j + self.kl - i))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Accumulate into entry (i, j). Entries outside the declared band are a
    /// caller bug.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside band");
        let s = self.slot(i, j).expect("entry outside band");
        self.data[s] += v;
    }

    /// Solve A x = b, overwriting `b` with x. The matrix is destroyed.
    pub fn solve_in_place(&mut self, b: &mut [f64]) -> Result<()> {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let reach = self.kl + self.ku;
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = libm::fabs(self.get(k, k));
            for i in k + 1..=last_row {
                let v = libm::fabs(self.get(i, k));
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular { pivot: k });
            }
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.slot(k, j).unwrap();
                    let c = self.slot(p, j).unwrap();
                    self.data.swap(a, c);
                }
                b.swap(k, p);
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last_row {
                let si = self.slot(i, k).unwrap();
                let l = self.data[si] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[si] = 0.0;
                for j in k + 1..=last_col {
                    let akj = self.data[self.slot(k, j).unwrap()];
                    let s = self.slot(i, j).unwrap();
                    self.data[s] -= l * akj;
                }
                b[i] -= l * b[k];
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + reach).min(n - 1);
            let mut acc = b[k];
            for j in k + 1..=last_col {
                acc -= self.data[self.slot(k, j).unwrap()] * b[j];
            }
            b[k] = acc / self.data[self.slot(k, k).unwrap()];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(rows: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        rows.iter()
            .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    #[test]
    fn solves_tridiagonal_needing_pivots() {
        // zero on the first diagonal entry forces a row interchange
        let rows = vec![
            vec![0.0, 2.0, 0.0, 0.0],
            vec![1.0, 1.0, 3.0, 0.0],
            vec![0.0, 4.0, 1.0, 1.0],
            vec![0.0, 0.0, 2.0, 5.0],
        ];
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut b = dense_mul(&rows, &x);
        let mut m = BandMatrix::zeros(4, 1, 1);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                if *v != 0.0 {
                    m.add(i, j, *v);
                }
            }
        }
        m.solve_in_place(&mut b).unwrap();
        for (a, e) in b.iter().zip(x) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_as_full_band() {
        let rows = vec![
            vec![2.0, -1.0, 0.5],
            vec![4.0, 1.0, -3.0],
            vec![-1.0, 7.0, 2.0],
        ];
        let x = [0.25, 1.5, -2.0];
        let mut b = dense_mul(&rows, &x);
        let mut m = BandMatrix::zeros(3, 2, 2);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                m.add(i, j, *v);
            }
        }
        m.solve_in_place(&mut b).unwrap();
        for (a, e) in b.iter().zip(x) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_is_reported() {
        let mut m = BandMatrix::zeros(2, 1, 1);
        m.add(0, 0, 1.0);
        m.add(0, 1, 2.0);
        m.add(1, 0, 2.0);
        m.add(1, 1, 4.0);
        let mut b = [1.0, 2.0];
        assert!(matches!(
            m.solve_in_place(&mut b),
            Err(Error::Singular { pivot: 1 })
        ));
    }
}
