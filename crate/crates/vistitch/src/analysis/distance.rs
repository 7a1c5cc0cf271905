//! Distances between the latent codes two policies produce for the same
//! observations. The interesting comparison is at the encoder/decoder
//! boundary: if two independently trained encoders land paired images in
//! nearby relative representations, swapping one encoder for the other
//! should preserve behavior.

use serde::Serialize;
use tapegrad::Tensor;

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::sim::Slot;

/// Summary of per-sample distances between two matched sets of latent
/// vectors. `d_cos` is `1 - cosine similarity`, so it lives in `[0, 2]`;
/// `d_l2` is the Euclidean distance.
#[derive(Debug, Clone, Serialize)]
pub struct DistanceReport {
    pub d_cos_mean: f64,
    pub d_l2_mean: f64,
    pub per_sample_cos: Vec<f64>,
    pub per_sample_l2: Vec<f64>,
    pub sample_count: usize,
}

/// Distances between two matched lists of vectors. Vectors with a
/// near-zero norm have no direction, so their cosine distance is counted
/// as the neutral value 1.
pub fn pairwise_distances(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DistanceReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::data("distance report needs at least one pair"));
    }
    if a.len() != b.len() {
        return Err(Error::data(format!(
            "distance report got {} vs {} vectors",
            a.len(),
            b.len()
        )));
    }
    let mut per_cos = Vec::with_capacity(a.len());
    let mut per_l2 = Vec::with_capacity(a.len());
    for (x, y) in a.iter().zip(b) {
        if x.len() != y.len() {
            return Err(Error::dim("distance report pair with mismatched lengths"));
        }
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx: f64 = x.iter().map(|p| p * p).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|q| q * q).sum::<f64>().sqrt();
        let cos = if nx < 1e-12 || ny < 1e-12 {
            0.0
        } else {
            (dot / (nx * ny)).clamp(-1.0, 1.0)
        };
        per_cos.push(1.0 - cos);
        per_l2.push(
            x.iter()
                .zip(y)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt(),
        );
    }
    let n = per_cos.len() as f64;
    Ok(DistanceReport {
        d_cos_mean: per_cos.iter().sum::<f64>() / n,
        d_l2_mean: per_l2.iter().sum::<f64>() / n,
        per_sample_cos: per_cos,
        per_sample_l2: per_l2,
        sample_count: a.len(),
    })
}

/// Embeds each image pair with the named slot of each policy and reports
/// the distances between the resulting interface vectors. Pair `i` feeds
/// `pairs[i].0` to `policy_a` and `pairs[i].1` to `policy_b`.
pub fn interface_distances(
    policy_a: &Policy,
    slot_a: Slot,
    policy_b: &Policy,
    slot_b: Slot,
    pairs: &[(Tensor, Tensor)],
) -> Result<DistanceReport> {
    if pairs.is_empty() {
        return Err(Error::data("interface distance needs at least one observation pair"));
    }
    let mut za = Vec::with_capacity(pairs.len());
    let mut zb = Vec::with_capacity(pairs.len());
    for (img_a, img_b) in pairs {
        za.push(policy_a.interface_embedding(slot_a, img_a)?);
        zb.push(policy_b.interface_embedding(slot_b, img_b)?);
    }
    pairwise_distances(&za, &zb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_a_naive_loop_oracle() {
        // Small fixed vectors, distances recomputed by hand formulas.
        let a = vec![vec![1.0, 0.0, 2.0], vec![0.5, -1.0, 0.25]];
        let b = vec![vec![0.0, 1.0, 2.0], vec![0.5, -1.0, 0.25]];
        let report = pairwise_distances(&a, &b).unwrap();
        let mut want_cos = Vec::new();
        let mut want_l2 = Vec::new();
        for (x, y) in a.iter().zip(&b) {
            let mut dot = 0.0;
            let mut nx = 0.0;
            let mut ny = 0.0;
            let mut l2 = 0.0;
            for i in 0..x.len() {
                dot += x[i] * y[i];
                nx += x[i] * x[i];
                ny += y[i] * y[i];
                l2 += (x[i] - y[i]) * (x[i] - y[i]);
            }
            want_cos.push(1.0 - dot / (nx.sqrt() * ny.sqrt()));
            want_l2.push(l2.sqrt());
        }
        for i in 0..2 {
            assert!((report.per_sample_cos[i] - want_cos[i]).abs() < 1e-12);
            assert!((report.per_sample_l2[i] - want_l2[i]).abs() < 1e-12);
        }
        let mc = want_cos.iter().sum::<f64>() / 2.0;
        let ml = want_l2.iter().sum::<f64>() / 2.0;
        assert!((report.d_cos_mean - mc).abs() < 1e-12);
        assert!((report.d_l2_mean - ml).abs() < 1e-12);
        // Identical second pair contributes zero to both distances.
        assert!(report.per_sample_cos[1].abs() < 1e-12);
        assert!(report.per_sample_l2[1].abs() < 1e-12);
    }

    #[test]
    fn cosine_distance_stays_in_range_and_flags_degenerates() {
        // Opposite vectors hit the upper bound of 2.
        let report =
            pairwise_distances(&[vec![1.0, 1.0]], &[vec![-1.0, -1.0]]).unwrap();
        assert!((report.d_cos_mean - 2.0).abs() < 1e-12);
        // A zero vector has no direction: neutral cosine distance 1.
        let report = pairwise_distances(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]]).unwrap();
        assert!((report.d_cos_mean - 1.0).abs() < 1e-12);
        assert!((report.d_l2_mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_and_mismatched_inputs() {
        assert!(pairwise_distances(&[], &[]).is_err());
        assert!(pairwise_distances(&[vec![1.0]], &[]).is_err());
        assert!(pairwise_distances(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }
}
