//! Anchor selection: k-means over raw pixels, snapped to real dataset
//! observations.
//!
//! Anchors are concrete dataset images, not synthetic centroids: k-means
//! runs on the flattened images of one camera slot, then each center is
//! snapped to its nearest observation. Selection returns `(trajectory,
//! step)` references rather than pixels, so the same reference list pulls
//! index-matched images from any replay of the dataset — that is how the
//! paired anchor sets for stitching are built.

use serde::{Deserialize, Serialize};
use tapegrad::Tensor;

use crate::error::{Error, Result};
use crate::sim::{Dataset, Slot};

use super::kmeans::{kmeans, KmeansConfig};

/// Reference to one observation in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorRef {
    pub trajectory: u32,
    pub step: u32,
}

/// Ordered anchor references plus the slot whose pixels were clustered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorIndex {
    pub slot: Slot,
    pub entries: Vec<AnchorRef>,
}

impl AnchorIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<AnchorIndex> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Selects `count` anchors from `dataset` by clustering the given slot's
/// images. Each cluster center is snapped to the nearest observation in
/// `(trajectory, step)` order (lowest wins on exact distance ties);
/// observations already claimed by an earlier center are skipped, so the
/// returned references are always distinct.
pub fn select_anchors(dataset: &Dataset, slot: Slot, count: usize, seed: u64) -> Result<AnchorIndex> {
    let refs: Vec<AnchorRef> = dataset
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(ti, t)| {
            (0..t.steps.len()).map(move |si| AnchorRef {
                trajectory: ti as u32,
                step: si as u32,
            })
        })
        .collect();
    let n = refs.len();
    if count == 0 || count > n {
        return Err(Error::config(format!(
            "anchor count {count} must be in 1..={n} (dataset has {n} observations)"
        )));
    }
    let d = {
        let first = &dataset.trajectories[0].steps[0];
        first.image(slot).data.len()
    };
    let mut data = Vec::with_capacity(n * d);
    for r in &refs {
        let img = dataset.trajectories[r.trajectory as usize].steps[r.step as usize].image(slot);
        if img.data.len() != d {
            return Err(Error::dim("dataset images disagree in size".to_string()));
        }
        data.extend_from_slice(&img.data);
    }

    let cfg = KmeansConfig {
        seed,
        ..KmeansConfig::default()
    };
    let km = kmeans(&data, n, d, count, &cfg)?;

    let mut taken = vec![false; n];
    let mut entries = Vec::with_capacity(count);
    for c in 0..count {
        let center = &km.centers[c * d..(c + 1) * d];
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let dd = dist2(&data[i * d..(i + 1) * d], center);
            let better = match best {
                None => true,
                Some((bd, _)) => dd < bd,
            };
            if better {
                best = Some((dd, i));
            }
        }
        let (_, idx) = best.expect("count <= n leaves a free observation per center");
        taken[idx] = true;
        entries.push(refs[idx]);
    }
    Ok(AnchorIndex { slot, entries })
}

/// Pulls the images referenced by `index` from `dataset`, reading the
/// requested slot. With `slot` equal to the index's own slot this recovers
/// the clustered anchors; with the other slot, or with a replayed dataset,
/// it produces the index-matched counterpart set.
pub fn anchor_images(index: &AnchorIndex, dataset: &Dataset, slot: Slot) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(index.entries.len());
    for r in &index.entries {
        let traj = dataset
            .trajectories
            .get(r.trajectory as usize)
            .ok_or_else(|| {
                Error::data(format!(
                    "anchor references trajectory {} but dataset has {}",
                    r.trajectory,
                    dataset.trajectories.len()
                ))
            })?;
        let step = traj.steps.get(r.step as usize).ok_or_else(|| {
            Error::data(format!(
                "anchor references step {} of trajectory {} but it has {} steps",
                r.step,
                r.trajectory,
                traj.steps.len()
            ))
        })?;
        out.push(step.image(slot).clone());
    }
    Ok(out)
}
