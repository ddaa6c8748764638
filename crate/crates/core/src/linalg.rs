//! Dense row-major linear algebra used by the vortex-lattice solve and its adjoint.

use crate::error::{Error, Result};

/// Systems whose reciprocal 1-norm condition estimate falls below this are rejected.
pub const RCOND_MIN: f64 = 1e-14;

/// LU factorization with partial pivoting, `P·A = L·U`, stored compactly.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    rcond: f64,
}

impl Lu {
    /// Factorizes the `n × n` row-major matrix `a`.
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::Dimension {
                context: "lu factor",
                expected: n * n,
                got: a.len(),
            });
        }
        let anorm = norm1(a, n);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular { n, rcond: 0.0 });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f != 0.0 {
                    let (upper, lower) = lu.split_at_mut(i * n);
                    let row_k = &upper[k * n + k + 1..k * n + n];
                    let row_i = &mut lower[k + 1..n];
                    for (x, &y) in row_i.iter_mut().zip(row_k) {
                        *x -= f * y;
                    }
                }
            }
        }
        let mut out = Lu {
            n,
            lu,
            perm,
            rcond: 1.0,
        };
        out.rcond = if anorm == 0.0 {
            0.0
        } else {
            1.0 / (anorm * out.inverse_norm1_estimate())
        };
        if !(out.rcond >= RCOND_MIN) {
            return Err(Error::Singular {
                n,
                rcond: out.rcond,
            });
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Reciprocal condition number estimate in the 1-norm.
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..i * n + n];
            let s: f64 = row.iter().zip(&x[i + 1..]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }

    /// Solves `Aᵀ x = b` with the same factorization.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        // Uᵀ z = b
        let mut z = b.to_vec();
        for i in 0..n {
            let zi = z[i] / self.lu[i * n + i];
            z[i] = zi;
            if zi != 0.0 {
                for j in i + 1..n {
                    z[j] -= self.lu[i * n + j] * zi;
                }
            }
        }
        // Lᵀ w = z
        for i in (0..n).rev() {
            let wi = z[i];
            if wi != 0.0 {
                for j in 0..i {
                    z[j] -= self.lu[i * n + j] * wi;
                }
            }
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = z[k];
        }
        x
    }

    /// Hager's estimate of `‖A⁻¹‖₁`.
    fn inverse_norm1_estimate(&self) -> f64 {
        let n = self.n;
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            let new_est: f64 = y.iter().map(|v| v.abs()).sum();
            if !new_est.is_finite() {
                return f64::INFINITY;
            }
            let xi: Vec<f64> = y
                .iter()
                .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
                .collect();
            let z = self.solve_transpose(&xi);
            let (jmax, zmax) = z.iter().enumerate().fold((0, 0.0f64), |acc, (j, &v)| {
                if v.abs() > acc.1 {
                    (j, v.abs())
                } else {
                    acc
                }
            });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if new_est <= est || zmax <= ztx {
                est = est.max(new_est);
                break;
            }
            est = new_est;
            x.iter_mut().for_each(|v| *v = 0.0);
            x[jmax] = 1.0;
        }
        est
    }
}

/// Maximum absolute column sum.
pub fn norm1(a: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|j| (0..n).map(|i| a[i * n + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn matvec(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    (0..rows)
        .map(|i| {
            a[i * cols..(i + 1) * cols]
                .iter()
                .zip(x)
                .map(|(p, q)| p * q)
                .sum()
        })
        .collect()
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖A x − b‖₂ / max(‖b‖₂, tiny)`.
pub fn relative_residual(a: &[f64], n: usize, x: &[f64], b: &[f64]) -> f64 {
    let ax = matvec(a, n, n, x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    norm2(&r) / norm2(b).max(f64::MIN_POSITIVE)
}

/// Solves with `lu` (a factorization of `a`) plus up to three steps of
/// iterative refinement. Returns the solution and its relative residual.
///
/// Fails with [`Error::Residual`] if the residual stays above `tol`.
pub fn solve_refined(lu: &Lu, a: &[f64], b: &[f64], tol: f64) -> Result<(Vec<f64>, f64)> {
    let n = lu.dim();
    let mut x = lu.solve(b);
    let mut res = relative_residual(a, n, &x, b);
    for _ in 0..3 {
        if res <= tol || !res.is_finite() {
            break;
        }
        let ax = matvec(a, n, n, &x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let dx = lu.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(p, q)| *p += q);
        res = relative_residual(a, n, &x, b);
    }
    if res <= tol {
        Ok((x, res))
    } else {
        Err(Error::Residual {
            residual: res,
            tolerance: tol,
        })
    }
}

/// Row-major `C = A·B` with `A: m×k`, `B: k×n`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(1.0, a, false, b, false, &mut c, m, k, n, 0.0);
    c
}

/// `C = alpha·op(A)·op(B) + beta·C`, where `op(A)` is `m×k` and `op(B)` is `k×n`,
/// and transposed operands are stored row-major in their untransposed shape.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: slice lengths are checked above and the strides address exactly
    // those row-major buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gauss–Jordan elimination on an augmented copy; shares no code with `Lu`.
    fn gauss_jordan(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row = a[i * n..(i + 1) * n].to_vec();
                row.push(b[i]);
                row
            })
            .collect();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap())
                .unwrap();
            m.swap(c, p);
            let piv = m[c][c];
            for v in m[c].iter_mut() {
                *v /= piv;
            }
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    for k in 0..=n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
        m.iter().map(|row| row[n]).collect()
    }

    fn random_system(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for i in 0..n {
            a[i * n + i] += n as f64;
        }
        let b = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (a, b)
    }

    #[test]
    fn identity_returns_rhs() {
        let n = 4;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        let lu = Lu::factor(&a, n).unwrap();
        let b = [1.0, -2.0, 3.5, 0.25];
        assert_eq!(lu.solve(&b), b.to_vec());
        assert_eq!(lu.solve_transpose(&b), b.to_vec());
    }

    #[test]
    fn diagonal_two_by_two() {
        let lu = Lu::factor(&[2.0, 0.0, 0.0, 4.0], 2).unwrap();
        assert_eq!(lu.solve(&[2.0, 8.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn random_system_matches_gauss_jordan() {
        let n = 20;
        let (a, b) = random_system(n, 11);
        let x = Lu::factor(&a, n).unwrap().solve(&b);
        let oracle = gauss_jordan(&a, &b, n);
        assert!(relative_residual(&a, n, &x, &b) <= 1e-10);
        for (p, q) in x.iter().zip(&oracle) {
            assert!((p - q).abs() <= 1e-8 * q.abs().max(1.0));
        }
    }

    #[test]
    fn transpose_solve_matches_explicit_transpose() {
        let n = 9;
        let (a, b) = random_system(n, 3);
        let mut at = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                at[j * n + i] = a[i * n + j];
            }
        }
        let x = Lu::factor(&a, n).unwrap().solve_transpose(&b);
        let oracle = gauss_jordan(&at, &b, n);
        for (p, q) in x.iter().zip(&oracle) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_rejected_with_condition_estimate() {
        let a = [1.0, 2.0, 2.0, 4.0];
        match Lu::factor(&a, 2) {
            Err(Error::Singular { n, rcond }) => {
                assert_eq!(n, 2);
                assert!(rcond < RCOND_MIN);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
        let nearly = [1.0, 1.0, 1.0, 1.0 + 1e-17];
        assert!(Lu::factor(&nearly, 2).is_err());
    }

    #[test]
    fn condition_estimate_is_reasonable() {
        // diag(1, 1e-6): exact rcond = 1e-6
        let lu = Lu::factor(&[1.0, 0.0, 0.0, 1e-6], 2).unwrap();
        assert!((lu.rcond() - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = vec![0.0; 4];
        gemm(1.0, &a, true, &b, false, &mut c, 2, 2, 2, 0.0);
        assert_eq!(c, vec![26.0, 30.0, 38.0, 44.0]);
        gemm(1.0, &a, false, &b, true, &mut c, 2, 2, 2, 0.0);
        assert_eq!(c, vec![17.0, 23.0, 39.0, 53.0]);
    }
}
