//! Dense linear algebra for small matrices: cyclic Jacobi eigensolver for
//! symmetric matrices, one-sided Jacobi SVD, and random orthogonal
//! matrices. Latent dimensions stay two-digit, so O(n^3) sweeps with
//! guaranteed accuracy beat pulling in a linear algebra dependency.

use rand::Rng;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Eigendecomposition of a symmetric matrix (row-major `n x n`). Returns
/// eigenvalues in descending order and eigenvectors as the matching
/// columns of a row-major `n x n` matrix.
pub fn jacobi_eigh(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(Error::dim("eigendecomposition input is not n x n"));
    }
    if n == 0 {
        return Ok((vec![], vec![]));
    }
    // Symmetrize defensively; inputs are covariance-like.
    let mut m: Vec<f64> = (0..n * n)
        .map(|i| {
            let (r, c) = (i / n, i % n);
            0.5 * (a[r * n + c] + a[c * n + r])
        })
        .collect();
    let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = sign(tau) / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .partial_cmp(&m[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_c, &old_c) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + new_c] = v[r * n + old_c];
        }
    }
    Ok((values, vectors))
}

/// Thin SVD `a = u * diag(s) * v^T` of a row-major `m x n` matrix with
/// `m >= n`, via one-sided Jacobi orthogonalization of the columns.
/// Singular values are descending and nonnegative; `u` is `m x n` with
/// orthonormal columns, `v` is `n x n` orthogonal.
pub fn jacobi_svd(a: &[f64], m: usize, n: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if a.len() != m * n {
        return Err(Error::dim("svd input is not m x n"));
    }
    if m < n {
        return Err(Error::dim("svd expects at least as many rows as columns"));
    }
    if n == 0 {
        return Ok((vec![], vec![], vec![]));
    }
    let mut b = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..MAX_SWEEPS {
        let mut converged = true;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for r in 0..m {
                    let bp = b[r * n + p];
                    let bq = b[r * n + q];
                    alpha += bp * bp;
                    beta += bq * bq;
                    gamma += bp * bq;
                }
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = sign(zeta) / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..m {
                    let bp = b[r * n + p];
                    let bq = b[r * n + q];
                    b[r * n + p] = c * bp - s * bq;
                    b[r * n + q] = s * bp + c * bq;
                }
                for r in 0..n {
                    let vp = v[r * n + p];
                    let vq = v[r * n + q];
                    v[r * n + p] = c * vp - s * vq;
                    v[r * n + q] = s * vp + c * vq;
                }
            }
        }
        if converged {
            break;
        }
    }
    let mut s: Vec<f64> = (0..n)
        .map(|c| (0..m).map(|r| b[r * n + c] * b[r * n + c]).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap_or(std::cmp::Ordering::Equal));
    let sorted_s: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let mut u = vec![0.0; m * n];
    let mut vv = vec![0.0; n * n];
    for (new_c, &old_c) in order.iter().enumerate() {
        for r in 0..n {
            vv[r * n + new_c] = v[r * n + old_c];
        }
        if s[old_c] > 1e-13 * sorted_s[0].max(1e-300) {
            for r in 0..m {
                u[r * n + new_c] = b[r * n + old_c] / s[old_c];
            }
        }
    }
    s = sorted_s;
    // Columns for (near-)zero singular values are arbitrary up to
    // orthonormality; complete them from the standard basis.
    for c in 0..n {
        let norm: f64 = (0..m).map(|r| u[r * n + c] * u[r * n + c]).sum::<f64>().sqrt();
        if norm > 0.5 {
            continue;
        }
        'basis: for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            for other in 0..n {
                if other == c {
                    continue;
                }
                let dot: f64 = (0..m).map(|r| cand[r] * u[r * n + other]).sum();
                for (r, val) in cand.iter_mut().enumerate() {
                    *val -= dot * u[r * n + other];
                }
            }
            let cn: f64 = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if cn > 1e-6 {
                for r in 0..m {
                    u[r * n + c] = cand[r] / cn;
                }
                break 'basis;
            }
        }
    }
    Ok((u, s, vv))
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniformly random orthogonal matrix (row-major `d x d`), built by
/// Gram-Schmidt over Gaussian columns. May include reflections.
pub fn random_orthogonal(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut q = vec![0.0; d * d];
    for c in 0..d {
        loop {
            let mut col: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
            for other in 0..c {
                let dot: f64 = (0..d).map(|r| col[r] * q[r * d + other]).sum();
                for (r, val) in col.iter_mut().enumerate() {
                    *val -= dot * q[r * d + other];
                }
            }
            let norm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for r in 0..d {
                    q[r * d + c] = col[r] / norm;
                }
                break;
            }
        }
    }
    q
}

/// `c = a * b` for row-major `m x k` times `k x n`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += av * b[p * n + j];
            }
        }
    }
    c
}
