//! Principal component analysis for visualizing latent spaces. Centers
//! the rows, eigendecomposes the sample covariance, and projects onto
//! the leading components with a deterministic sign convention so that
//! repeated runs produce identical plots.

use serde::Serialize;

use crate::analysis::linalg::jacobi_eigh;
use crate::error::{Error, Result};

/// Result of projecting `n` row vectors onto the top principal
/// components. `components` holds `kept_dims` rows, each a unit vector of
/// the original dimension; `eigenvalues` covers all input dimensions in
/// descending order; `explained` is each eigenvalue's fraction of the
/// total variance.
#[derive(Debug, Clone, Serialize)]
pub struct PcaProjection {
    pub projected: Vec<Vec<f64>>,
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained: Vec<f64>,
    pub mean: Vec<f64>,
    pub requested_dims: usize,
    pub kept_dims: usize,
    pub warning: Option<String>,
}

/// Projects `rows` onto the top `out_dims` principal components. If the
/// data has lower rank than requested, the projection keeps only the
/// informative dimensions and says so in `warning` instead of padding
/// with noise directions.
pub fn pca_project(rows: &[Vec<f64>], out_dims: usize) -> Result<PcaProjection> {
    if rows.len() < 2 {
        return Err(Error::data("pca needs at least two rows"));
    }
    let d = rows[0].len();
    if d == 0 || out_dims == 0 {
        return Err(Error::config("pca needs at least one dimension"));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::dim("pca rows have mixed lengths"));
    }
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for row in &centered {
        for k in 0..d {
            for l in k..d {
                cov[k * d + l] += row[k] * row[l];
            }
        }
    }
    for k in 0..d {
        for l in k..d {
            let v = cov[k * d + l] / (n - 1) as f64;
            cov[k * d + l] = v;
            cov[l * d + k] = v;
        }
    }
    let (mut eigenvalues, vectors) = jacobi_eigh(&cov, d)?;
    for v in eigenvalues.iter_mut() {
        if *v < 0.0 {
            // Round-off can nudge a zero eigenvalue slightly negative.
            *v = 0.0;
        }
    }
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::data("pca input has zero variance"));
    }
    let rank = eigenvalues.iter().filter(|&&v| v > 1e-12 * eigenvalues[0]).count();
    let kept = out_dims.min(rank).min(d);
    let warning = if kept < out_dims {
        Some(format!(
            "data rank {rank} is below the requested {out_dims} dimensions; keeping {kept}"
        ))
    } else {
        None
    };
    let mut components = Vec::with_capacity(kept);
    for c in 0..kept {
        let mut comp: Vec<f64> = (0..d).map(|r| vectors[r * d + c]).collect();
        // Deterministic sign: the largest-magnitude entry is positive.
        let mut pivot = 0;
        for (i, v) in comp.iter().enumerate() {
            if v.abs() > comp[pivot].abs() {
                pivot = i;
            }
        }
        if comp[pivot] < 0.0 {
            for v in comp.iter_mut() {
                *v = -*v;
            }
        }
        components.push(comp);
    }
    let projected: Vec<Vec<f64>> = centered
        .iter()
        .map(|row| {
            components
                .iter()
                .map(|comp| row.iter().zip(comp).map(|(x, c)| x * c).sum())
                .collect()
        })
        .collect();
    let explained = eigenvalues.iter().map(|v| v / total).collect();
    Ok(PcaProjection {
        projected,
        components,
        eigenvalues,
        explained,
        mean,
        requested_dims: out_dims,
        kept_dims: kept,
        warning,
    })
}
