//! Banded LU factorization with partial pivoting.
//!
//! Row interchanges are kept as a sequence of elementary transforms (the same
//! layout LAPACK's `gbtrf` uses), so both `A x = b` and `Aᵀ x = b` can be
//! solved from one factorization.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row `k` holds columns `k - kl ..= k + kl + ku`; after factorization the
    /// part from column `k` onward is row `k` of U.
    work: Vec<f64>,
    lmul: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    fn width(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    #[inline]
    fn at(&self, i: usize, c: usize) -> usize {
        i * self.width() + (c + self.kl - i)
    }

    /// Factorizes the `n x n` matrix given as rows of `(column, value)`.
    pub fn factor(n: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: rows.len(),
            });
        }
        let (mut kl, mut ku) = (0usize, 0usize);
        for (i, row) in rows.iter().enumerate() {
            for &(c, _) in row {
                if c >= n {
                    return Err(Error::Dimension {
                        expected: n,
                        found: c + 1,
                    });
                }
                if c < i {
                    kl = kl.max(i - c);
                } else {
                    ku = ku.max(c - i);
                }
            }
        }
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            work: vec![0.0; n * width],
            lmul: vec![0.0; n * kl],
            piv: vec![0; n],
        };
        for (i, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                let k = lu.at(i, c);
                lu.work[k] += v;
            }
        }

        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let hi = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = lu.work[lu.at(k, k)].abs();
            for i in k + 1..=last {
                let v = lu.work[lu.at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Solver {
                    reason: format!("zero pivot in column {k}"),
                    residual: f64::INFINITY,
                });
            }
            lu.piv[k] = p;
            if p != k {
                for c in k..=hi {
                    let (a, b) = (lu.at(k, c), lu.at(p, c));
                    lu.work.swap(a, b);
                }
            }
            let pivot = lu.work[lu.at(k, k)];
            for i in k + 1..=last {
                let l = lu.work[lu.at(i, k)] / pivot;
                lu.lmul[k * kl + (i - k - 1)] = l;
                if l != 0.0 {
                    let (ri, rk) = (lu.at(i, k), lu.at(k, k));
                    for off in 1..=(hi - k) {
                        lu.work[ri + off] -= l * lu.work[rk + off];
                    }
                }
            }
        }
        Ok(lu)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                let last = (k + kl).min(n - 1);
                for i in k + 1..=last {
                    b[i] -= self.lmul[k * kl + (i - k - 1)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let hi = (k + kl + ku).min(n - 1);
            let rk = self.at(k, k);
            let mut s = b[k];
            for c in k + 1..=hi {
                s -= self.work[rk + (c - k)] * b[c];
            }
            b[k] = s / self.work[rk];
        }
    }

    /// Solves `Aᵀ x = b` in place.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        // Uᵀ y = b
        for k in 0..n {
            let rk = self.at(k, k);
            b[k] /= self.work[rk];
            let bk = b[k];
            if bk != 0.0 {
                let hi = (k + kl + ku).min(n - 1);
                for c in k + 1..=hi {
                    b[c] -= self.work[rk + (c - k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let last = (k + kl).min(n - 1);
            let mut s = b[k];
            for i in k + 1..=last {
                s -= self.lmul[k * kl + (i - k - 1)] * b[i];
            }
            b[k] = s;
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_from_rows(n: usize, rows: &[Vec<(usize, f64)>]) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                a[i][c] += v;
            }
        }
        a
    }

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> Vec<Vec<(usize, f64)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(kl);
                let hi = (i + ku).min(n - 1);
                (lo..=hi).map(|c| (c, rng.gen_range(-1.0..1.0))).collect()
            })
            .collect()
    }

    #[test]
    fn solves_random_banded_systems_with_pivoting() {
        let n = 40;
        let rows = random_banded(n, 3, 5, 7);
        let a = dense_from_rows(n, &rows);
        let lu = BandedLu::factor(n, &rows).unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|c| a[i][c] * x_true[c]).sum())
            .collect();
        lu.solve_in_place(&mut b);
        for (x, y) in b.iter().zip(&x_true) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        let mut bt: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|c| a[c][i] * x_true[c]).sum())
            .collect();
        lu.solve_transpose_in_place(&mut bt);
        for (x, y) in bt.iter().zip(&x_true) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [[0, 1], [1, 0]]
        let rows = vec![vec![(1, 1.0)], vec![(0, 1.0)]];
        let lu = BandedLu::factor(2, &rows).unwrap();
        let mut b = vec![2.0, 3.0];
        lu.solve_in_place(&mut b);
        assert_eq!(b, vec![3.0, 2.0]);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let rows = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 2.0), (1, 2.0)]];
        assert!(matches!(
            BandedLu::factor(2, &rows),
            Err(Error::Solver { .. })
        ));
    }
}
