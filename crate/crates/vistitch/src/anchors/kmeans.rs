//! Lloyd's k-means with k-means++ seeding and restarts.
//!
//! Small, dense, deterministic: points are a flat row-major `n x d`
//! matrix, every random draw comes from the configured seed, and the best
//! of `restarts` runs (lowest inertia, first wins ties) is returned. The
//! returned assignment is recomputed against the returned centers, so
//! `assignment[i]` is always the nearest center to point `i` (lowest index
//! on ties) and `inertia` is exactly the sum of those squared distances.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{salt, stream};

#[derive(Debug, Clone, Copy)]
pub struct KmeansConfig {
    pub max_iter: usize,
    /// Convergence threshold on the largest center movement per iteration.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        KmeansConfig {
            max_iter: 100,
            tol: 1e-8,
            restarts: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    /// Row-major `k x d` center matrix.
    pub centers: Vec<f64>,
    /// Nearest center per point, ties broken toward the lower index.
    pub assignment: Vec<usize>,
    /// Sum of squared distances from each point to its center.
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn nearest(point: &[f64], centers: &[f64], k: usize, d: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..k {
        let dd = dist2(point, &centers[c * d..(c + 1) * d]);
        if dd < best_d {
            best_d = dd;
            best = c;
        }
    }
    (best, best_d)
}

/// k-means++ seeding: first center uniform, each further center drawn with
/// probability proportional to squared distance from the chosen set. If
/// every remaining point coincides with a chosen center, the draw falls
/// back to uniform.
fn seed_centers(data: &[f64], n: usize, d: usize, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut centers = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(&data[first * d..(first + 1) * d]);
    let mut min_d: Vec<f64> = (0..n)
        .map(|i| dist2(&data[i * d..(i + 1) * d], &centers[0..d]))
        .collect();
    while centers.len() < k * d {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let mut threshold = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in min_d.iter().enumerate() {
                if threshold < w {
                    chosen = i;
                    break;
                }
                threshold -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let row = &data[pick * d..(pick + 1) * d];
        centers.extend_from_slice(row);
        for i in 0..n {
            let dd = dist2(&data[i * d..(i + 1) * d], row);
            if dd < min_d[i] {
                min_d[i] = dd;
            }
        }
    }
    centers
}

fn lloyd(data: &[f64], n: usize, d: usize, k: usize, cfg: &KmeansConfig, centers: &mut Vec<f64>) {
    let mut assignment = vec![0usize; n];
    for _ in 0..cfg.max_iter {
        for (i, a) in assignment.iter_mut().enumerate() {
            *a = nearest(&data[i * d..(i + 1) * d], centers, k, d).0;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for j in 0..d {
                sums[c * d + j] += data[i * d + j];
            }
        }
        // Empty clusters grab the points farthest from their centers, one
        // distinct point per empty cluster.
        let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut by_dist: Vec<(f64, usize)> = (0..n)
                .map(|i| {
                    let c = assignment[i];
                    (
                        dist2(
                            &data[i * d..(i + 1) * d],
                            &centers[c * d..(c + 1) * d],
                        ),
                        i,
                    )
                })
                .collect();
            by_dist.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            for (slot, &c) in empties.iter().enumerate() {
                let i = by_dist[slot].1;
                counts[c] = 1;
                sums[c * d..(c + 1) * d].copy_from_slice(&data[i * d..(i + 1) * d]);
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let mut move2 = 0.0;
            for j in 0..d {
                let new = sums[c * d + j] / counts[c] as f64;
                let delta = new - centers[c * d + j];
                move2 += delta * delta;
                centers[c * d + j] = new;
            }
            shift = shift.max(move2.sqrt());
        }
        if shift <= cfg.tol {
            break;
        }
    }
}

pub fn kmeans(data: &[f64], n: usize, d: usize, k: usize, cfg: &KmeansConfig) -> Result<KmeansResult> {
    if n == 0 || d == 0 {
        return Err(Error::config("k-means needs at least one point and one dimension"));
    }
    if data.len() != n * d {
        return Err(Error::dim(format!(
            "k-means data has {} values, expected {}",
            data.len(),
            n * d
        )));
    }
    if k == 0 || k > n {
        return Err(Error::config(format!(
            "cluster count {k} must be in 1..={n}"
        )));
    }
    let mut best: Option<KmeansResult> = None;
    for restart in 0..cfg.restarts.max(1) {
        let mut rng = stream(cfg.seed, &[salt::KMEANS, restart as u64]);
        let mut centers = seed_centers(data, n, d, k, &mut rng);
        lloyd(data, n, d, k, cfg, &mut centers);
        let mut assignment = vec![0usize; n];
        let mut inertia = 0.0;
        for i in 0..n {
            let (c, dd) = nearest(&data[i * d..(i + 1) * d], &centers, k, d);
            assignment[i] = c;
            inertia += dd;
        }
        let better = match &best {
            None => true,
            Some(b) => inertia < b.inertia,
        };
        if better {
            best = Some(KmeansResult {
                centers,
                assignment,
                inertia,
            });
        }
    }
    Ok(best.expect("at least one restart ran"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive search over all k^n assignments. For each assignment the
    /// optimal centers are the cluster centroids, so the minimum over
    /// assignments of the resulting inertia is the global optimum.
    fn brute_force_inertia(data: &[f64], n: usize, d: usize, k: usize) -> f64 {
        let mut best = f64::INFINITY;
        let total = k.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let mut assign = vec![0usize; n];
            for a in assign.iter_mut() {
                *a = c % k;
                c /= k;
            }
            let mut sums = vec![0.0; k * d];
            let mut counts = vec![0usize; k];
            for i in 0..n {
                counts[assign[i]] += 1;
                for j in 0..d {
                    sums[assign[i] * d + j] += data[i * d + j];
                }
            }
            let mut inertia = 0.0;
            for i in 0..n {
                let c = assign[i];
                for j in 0..d {
                    let center = sums[c * d + j] / counts[c] as f64;
                    let delta = data[i * d + j] - center;
                    inertia += delta * delta;
                }
            }
            if inertia < best {
                best = inertia;
            }
        }
        best
    }

    #[test]
    fn two_separated_pairs_on_a_line() {
        let data = [0.0, 1.0, 10.0, 11.0];
        let cfg = KmeansConfig {
            seed: 3,
            ..KmeansConfig::default()
        };
        let r = kmeans(&data, 4, 1, 2, &cfg).unwrap();
        // Optimal centers are 0.5 and 10.5 with inertia 2 * 0.25 * 2 = 1.
        assert!((r.inertia - 1.0).abs() < 1e-12);
        let mut centers = r.centers.clone();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((centers[0] - 0.5).abs() < 1e-12);
        assert!((centers[1] - 10.5).abs() < 1e-12);
        assert_eq!(r.assignment[0], r.assignment[1]);
        assert_eq!(r.assignment[2], r.assignment[3]);
        assert_ne!(r.assignment[0], r.assignment[2]);
        assert!((r.inertia - brute_force_inertia(&data, 4, 1, 2)).abs() < 1e-9);
    }

    #[test]
    fn three_planar_blobs_match_brute_force() {
        // Three well-separated 2-D blobs of four points each.
        let mut data = Vec::new();
        for (cx, cy) in [(0.0, 0.0), (8.0, 0.5), (4.0, 9.0)] {
            for (ox, oy) in [(0.1, 0.0), (-0.1, 0.1), (0.0, -0.1), (0.2, 0.2)] {
                data.push(cx + ox);
                data.push(cy + oy);
            }
        }
        let cfg = KmeansConfig {
            seed: 7,
            ..KmeansConfig::default()
        };
        let r = kmeans(&data, 12, 2, 3, &cfg).unwrap();
        let bf = brute_force_inertia(&data, 12, 2, 3);
        assert!(
            (r.inertia - bf).abs() < 1e-9,
            "kmeans {} vs brute force {}",
            r.inertia,
            bf
        );
    }

    #[test]
    fn k_equals_one_gives_the_centroid() {
        let data = [1.0, 3.0, 5.0, -2.0, 0.0, 5.0];
        let cfg = KmeansConfig::default();
        let r = kmeans(&data, 3, 2, 1, &cfg).unwrap();
        // Centroid of (1,3), (5,-2), (0,5) is (2, 2).
        assert!((r.centers[0] - 2.0).abs() < 1e-12);
        assert!((r.centers[1] - 2.0).abs() < 1e-12);
        assert!((r.inertia - brute_force_inertia(&data, 3, 2, 1)).abs() < 1e-9);
    }

    #[test]
    fn k_equals_n_reaches_zero_inertia() {
        let data = [0.0, 2.0, 5.0, 9.0, 14.0];
        let cfg = KmeansConfig {
            seed: 1,
            ..KmeansConfig::default()
        };
        let r = kmeans(&data, 5, 1, 5, &cfg).unwrap();
        assert!(r.inertia < 1e-18);
        let mut seen: Vec<usize> = r.assignment.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 5, "every point gets its own cluster");
    }

    #[test]
    fn duplicate_points_with_k_of_distinct_values() {
        let data = [1.0, 1.0, 4.0, 4.0, 9.0, 9.0];
        let cfg = KmeansConfig {
            seed: 2,
            ..KmeansConfig::default()
        };
        let r = kmeans(&data, 6, 1, 3, &cfg).unwrap();
        assert!(r.inertia < 1e-18);
        assert!((r.inertia - brute_force_inertia(&data, 6, 1, 3)).abs() < 1e-9);
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let cfg = KmeansConfig::default();
        assert!(kmeans(&[1.0], 1, 1, 0, &cfg).is_err());
        assert!(kmeans(&[1.0], 1, 1, 2, &cfg).is_err());
        assert!(kmeans(&[1.0, 2.0], 3, 1, 1, &cfg).is_err());
        assert!(kmeans(&[], 0, 1, 1, &cfg).is_err());
    }

    #[test]
    fn deterministic_across_calls() {
        let data: Vec<f64> = (0..40).map(|i| ((i * 37) % 17) as f64 * 0.3).collect();
        let cfg = KmeansConfig {
            seed: 9,
            ..KmeansConfig::default()
        };
        let a = kmeans(&data, 20, 2, 4, &cfg).unwrap();
        let b = kmeans(&data, 20, 2, 4, &cfg).unwrap();
        assert_eq!(a.centers, b.centers);
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.inertia, b.inertia);
    }

    proptest! {
        /// The returned triple is internally consistent: each point's
        /// assignment is its nearest returned center (lowest index on
        /// ties) and the inertia is the sum of those squared distances.
        #[test]
        fn result_is_self_consistent(
            points in proptest::collection::vec(-50.0f64..50.0, 6..30),
            k in 1usize..5,
            seed in 0u64..1000,
        ) {
            let d = 2;
            let n = points.len() / d;
            prop_assume!(n >= k && n >= 1);
            let data = &points[..n * d];
            let cfg = KmeansConfig { seed, restarts: 2, ..KmeansConfig::default() };
            let r = kmeans(data, n, d, k, &cfg).unwrap();
            let mut total = 0.0;
            for i in 0..n {
                let p = &data[i * d..(i + 1) * d];
                let (c, dd) = nearest(p, &r.centers, k, d);
                prop_assert_eq!(r.assignment[i], c);
                total += dd;
            }
            prop_assert!((total - r.inertia).abs() <= 1e-9 * (1.0 + total));
        }
    }
}
