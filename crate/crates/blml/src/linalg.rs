//! Dense and iterative kernels behind the Newton solver.

use ndarray::Array2;

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky
/// factorization. `A` is consumed as workspace.
pub fn cholesky_solve(mut a: Array2<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    debug_assert_eq!(b.len(), n);
    // Lower-triangular factor in place.
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::InvalidInput(format!(
                "matrix is not positive definite (pivot {d:.3e} at {j})"
            )));
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = v / d;
        }
    }
    // Forward then backward substitution.
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            x[i] -= a[(i, k)] * x[k];
        }
        x[i] /= a[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            x[i] -= a[(k, i)] * x[k];
        }
        x[i] /= a[(i, i)];
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy)]
pub struct PcgOutcome {
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients on a matrix given as a closure.
///
/// Solves `A x = b` to relative residual `tol` or `max_iters`, whichever comes
/// first, starting from zero. The caller's `apply` must be deterministic; the
/// returned iterate is then reproducible bit for bit.
pub fn pcg<F>(
    apply: F,
    precond_diag: &[f64],
    b: &[f64],
    tol: f64,
    max_iters: usize,
) -> (Vec<f64>, PcgOutcome)
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return (
            x,
            PcgOutcome {
                iterations: 0,
                rel_residual: 0.0,
            },
        );
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(precond_diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut rel = 1.0;
    for _ in 0..max_iters {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        rel = norm2(&r) / bnorm;
        if rel <= tol {
            break;
        }
        for i in 0..n {
            z[i] = r[i] / precond_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (
        x,
        PcgOutcome {
            iterations,
            rel_residual: rel,
        },
    )
}

/// Eigenvalues of a small symmetric matrix by the cyclic Jacobi method.
///
/// Intended for spectrum checks in tests (n up to a hundred or so).
pub fn symmetric_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    debug_assert_eq!(m.ncols(), n);
    let mut a = m.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        let scale: f64 = (0..n).map(|i| a[(i, i)].abs()).fold(1e-300, f64::max);
        if off.sqrt() < 1e-14 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = {
                    let s = theta.signum();
                    s / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn cholesky_solves_a_known_system() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        // b = A [1, -2]^T = [0, -4]^T
        let x = cholesky_solve(a, &[0.0, -4.0]).unwrap();
        assert_relative_eq!(x[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(x[1], -2.0, max_relative = 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky_solve(a, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn pcg_matches_direct_solve() {
        // Random-ish SPD: M = B^T B + I on 8 points.
        let n = 8;
        let mut b = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] = ((i * 7 + j * 3) as f64 * 0.817).sin();
            }
        }
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mut acc = if i == j { 1.0 } else { 0.0 };
                for k in 0..n {
                    acc += b[(k, i)] * b[(k, j)];
                }
                m[(i, j)] = acc;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 - 3.0) * 0.25).collect();
        let direct = cholesky_solve(m.clone(), &rhs).unwrap();
        let diag: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
        let (x, out) = pcg(
            |v, o| {
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += m[(i, j)] * v[j];
                    }
                    o[i] = acc;
                }
            },
            &diag,
            &rhs,
            1e-12,
            200,
        );
        assert!(out.rel_residual <= 1e-12);
        for i in 0..n {
            assert_relative_eq!(x[i], direct[i], max_relative = 1e-9);
        }
    }

    #[test]
    fn jacobi_eigenvalues_of_diagonal_plus_rank_one() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
        let eig = symmetric_eigenvalues(&array![[2.0, 1.0], [1.0, 2.0]]);
        assert_relative_eq!(eig[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(eig[1], 3.0, max_relative = 1e-12);
    }
}
