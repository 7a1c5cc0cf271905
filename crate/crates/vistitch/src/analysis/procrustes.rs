//! Orthogonal Procrustes alignment: the best similarity transform
//! (rotation/reflection, optional uniform scale, optional translation)
//! mapping one point cloud onto another. A small residual between two
//! policies' latent clouds means they agree up to exactly the
//! transformations a relative representation is designed to absorb.

use serde::Serialize;

use crate::analysis::linalg::{jacobi_svd, matmul};
use crate::error::{Error, Result};

/// Fitted transform: `y ~ scale * x * rotation + translation` applied to
/// row vectors. `rotation` is a row-major `d x d` orthogonal matrix (it
/// may include a reflection), and `residual` is the relative alignment
/// error `|s*Xc*Q - Yc|_F / |Yc|_F` on the centered clouds.
#[derive(Debug, Clone, Serialize)]
pub struct ProcrustesFit {
    pub rotation: Vec<f64>,
    pub scale: f64,
    pub translation: Vec<f64>,
    pub residual: f64,
    pub dims: usize,
}

impl ProcrustesFit {
    /// Applies the fitted transform to one row vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dims;
        let mut out = self.translation.clone();
        for (j, o) in out.iter_mut().enumerate() {
            for i in 0..d {
                *o += self.scale * x[i] * self.rotation[i * d + j];
            }
        }
        out
    }
}

/// Fits the transform minimizing `|s * X Q + 1 t^T - Y|_F` over
/// orthogonal `Q`, with `s` fixed to 1 unless `allow_scale` and `t`
/// fixed to 0 unless `allow_translation`. `x` and `y` are matched lists
/// of row vectors of equal dimension.
pub fn procrustes_fit(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    allow_scale: bool,
    allow_translation: bool,
) -> Result<ProcrustesFit> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::data("procrustes needs two matched nonempty point lists"));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::dim("procrustes points have zero dimension"));
    }
    if x.iter().chain(y.iter()).any(|r| r.len() != d) {
        return Err(Error::dim("procrustes points have mixed dimensions"));
    }
    let n = x.len();
    if n < d {
        return Err(Error::data(format!(
            "procrustes with {n} points in {d} dimensions is underdetermined"
        )));
    }
    let mut mx = vec![0.0; d];
    let mut my = vec![0.0; d];
    if allow_translation {
        for i in 0..n {
            for j in 0..d {
                mx[j] += x[i][j] / n as f64;
                my[j] += y[i][j] / n as f64;
            }
        }
    }
    let xc: Vec<f64> = (0..n)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| x[i][j] - mx[j])
        .collect();
    let yc: Vec<f64> = (0..n)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| y[i][j] - my[j])
        .collect();
    let x_ss: f64 = xc.iter().map(|v| v * v).sum();
    let y_ss: f64 = yc.iter().map(|v| v * v).sum();
    if x_ss < 1e-24 {
        return Err(Error::data("procrustes source cloud has zero variance"));
    }
    // Cross-covariance M = Xc^T Yc, then Q = U V^T from M = U S V^T.
    let mut m = vec![0.0; d * d];
    for i in 0..n {
        for a in 0..d {
            let xv = xc[i * d + a];
            for b in 0..d {
                m[a * d + b] += xv * yc[i * d + b];
            }
        }
    }
    let (u, s, v) = jacobi_svd(&m, d, d)?;
    let mut rotation = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            rotation[r * d + c] = (0..d).map(|k| u[r * d + k] * v[c * d + k]).sum();
        }
    }
    let scale = if allow_scale {
        s.iter().sum::<f64>() / x_ss
    } else {
        1.0
    };
    let translation: Vec<f64> = if allow_translation {
        (0..d)
            .map(|j| my[j] - scale * (0..d).map(|i| mx[i] * rotation[i * d + j]).sum::<f64>())
            .collect()
    } else {
        vec![0.0; d]
    };
    let mapped = matmul(&xc, &rotation, n, d, d);
    let err: f64 = mapped
        .iter()
        .zip(&yc)
        .map(|(p, q)| {
            let diff = scale * p - q;
            diff * diff
        })
        .sum();
    let residual = if y_ss > 1e-24 {
        (err / y_ss).sqrt()
    } else {
        err.sqrt()
    };
    Ok(ProcrustesFit {
        rotation,
        scale,
        translation,
        residual,
        dims: d,
    })
}
