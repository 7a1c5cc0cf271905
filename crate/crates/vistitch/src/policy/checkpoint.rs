//! Binary policy checkpoints.
//!
//! A checkpoint stores the structural config, every trainable tensor in
//! the fixed [`super::PolicyNets::params`] order, and both anchor image
//! lists, so a policy reloads bit-for-bit without any external context.
//! Anchor embeddings are not stored; they are recomputed on load, which
//! keeps the cached values consistent with the saved weights by
//! construction.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use tapegrad::Tensor;

use crate::error::{Error, Result};
use crate::io::{
    read_bytes, read_f64_vec, read_u32, write_bytes, write_f64_slice, write_u32,
};
use crate::policy::rep::AnchorSet;
use crate::policy::{Policy, PolicyConfig, PolicyNets};
use crate::rng::{salt, stream};

const MAGIC: &[u8; 4] = b"VSPC";
const VERSION: u32 = 1;
const MAX_CONFIG_BYTES: usize = 1 << 16;
const MAX_TENSOR_RANK: u32 = 8;
const MAX_TENSOR_ELEMS: usize = 1 << 26;

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    write_u32(w, t.shape.len() as u32)?;
    for &d in &t.shape {
        write_u32(w, d as u32)?;
    }
    write_f64_slice(w, &t.data)?;
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let rank = read_u32(r)?;
    if rank > MAX_TENSOR_RANK {
        return Err(Error::format(format!("tensor rank {rank} out of range")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut elems: usize = 1;
    for _ in 0..rank {
        let d = read_u32(r)? as usize;
        elems = elems
            .checked_mul(d)
            .filter(|&n| n <= MAX_TENSOR_ELEMS)
            .ok_or_else(|| Error::format("tensor too large"))?;
        shape.push(d);
    }
    let data = read_f64_vec(r, elems)?;
    Ok(Tensor::new(&shape, data)?)
}

fn write_image_list(w: &mut impl Write, images: &[Tensor]) -> Result<()> {
    write_u32(w, images.len() as u32)?;
    for img in images {
        write_tensor(w, img)?;
    }
    Ok(())
}

fn read_image_list(r: &mut impl Read) -> Result<Vec<Tensor>> {
    let count = read_u32(r)? as usize;
    if count > 4096 {
        return Err(Error::format(format!("anchor image count {count} out of range")));
    }
    (0..count).map(|_| read_tensor(r)).collect()
}

pub fn write_policy(w: &mut impl Write, policy: &Policy) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    let config = serde_json::to_vec(&policy.config)?;
    write_bytes(w, &config)?;
    let params = policy.nets.params();
    write_u32(w, params.len() as u32)?;
    for t in params {
        write_tensor(w, t)?;
    }
    write_image_list(w, policy.anchors1.images())?;
    write_image_list(w, policy.anchors2.images())?;
    Ok(())
}

pub fn read_policy(r: &mut impl Read) -> Result<Policy> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("not a policy checkpoint"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let config: PolicyConfig = serde_json::from_slice(&read_bytes(r, MAX_CONFIG_BYTES)?)?;
    config.validate()?;
    // Build nets with the right shapes, then overwrite every tensor from
    // the stream. The seed is irrelevant; all values are replaced.
    let mut rng = stream(0, &[salt::INIT]);
    let mut nets = PolicyNets::init(&config, &mut rng)
        .map_err(|e| Error::format(format!("checkpoint config rejected: {e}")))?;
    let count = read_u32(r)? as usize;
    {
        let mut slots = nets.params_mut();
        if count != slots.len() {
            return Err(Error::format(format!(
                "checkpoint holds {count} tensors, config implies {}",
                slots.len()
            )));
        }
        for slot in slots.iter_mut() {
            let loaded = read_tensor(r)?;
            if loaded.shape != slot.shape {
                return Err(Error::format(format!(
                    "checkpoint tensor shape {:?} does not match expected {:?}",
                    loaded.shape, slot.shape
                )));
            }
            slot.data = loaded.data;
        }
    }
    let anchors1 = read_image_list(r)?;
    let anchors2 = read_image_list(r)?;
    if config.rep_mode.uses_anchors()
        && (anchors1.len() != config.anchor_count || anchors2.len() != config.anchor_count)
    {
        return Err(Error::format(format!(
            "checkpoint anchor counts {} and {} do not match config {}",
            anchors1.len(),
            anchors2.len(),
            config.anchor_count
        )));
    }
    let mut policy = Policy {
        config,
        nets,
        anchors1: AnchorSet::new(anchors1),
        anchors2: AnchorSet::new(anchors2),
    };
    policy.refresh_anchors()?;
    Ok(policy)
}

pub fn save_policy(path: impl AsRef<Path>, policy: &Policy) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_policy(&mut w, policy)?;
    w.flush()?;
    Ok(())
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<Policy> {
    let mut r = BufReader::new(File::open(path)?);
    let policy = read_policy(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format("trailing bytes after checkpoint"));
    }
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::RepMode;
    use crate::sim::Slot;
    use tapegrad::Tape;

    fn sample_policy(mode: RepMode) -> Policy {
        let cfg = PolicyConfig {
            image_channels: 1,
            image_height: 12,
            image_width: 12,
            latent_dim: 8,
            anchor_count: 4,
            gmm_modes: 2,
            rep_mode: mode,
        };
        let images = |s: u64| -> Vec<Tensor> {
            (0..4)
                .map(|k| {
                    Tensor::new(
                        &[1, 12, 12],
                        (0..144)
                            .map(|i| ((i as u64 * 3 + k as u64 * 17 + s) % 11) as f64 / 11.0)
                            .collect(),
                    )
                    .unwrap()
                })
                .collect()
        };
        let (a1, a2) = if mode.uses_anchors() {
            (images(0), images(100))
        } else {
            (vec![], vec![])
        };
        Policy::init(cfg, a1, a2, 42).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise_for_every_mode() {
        for mode in [
            RepMode::Plain,
            RepMode::Relative,
            RepMode::MultiSimLinear,
            RepMode::MultiSimNonlinear,
        ] {
            let policy = sample_policy(mode);
            let mut buf = Vec::new();
            write_policy(&mut buf, &policy).unwrap();
            let loaded = read_policy(&mut buf.as_slice()).unwrap();
            assert_eq!(loaded.config, policy.config);
            let orig = policy.nets.params();
            let back = loaded.nets.params();
            assert_eq!(orig.len(), back.len());
            for (a, b) in orig.iter().zip(back.iter()) {
                assert_eq!(a.shape, b.shape, "mode {mode:?}");
                assert_eq!(a.data, b.data, "mode {mode:?}");
            }
            let img = Tensor::new(&[1, 12, 12], vec![0.25; 144]).unwrap();
            let mut t1 = Tape::inference();
            let mut t2 = Tape::inference();
            let h1 = policy.forward(&mut t1, &img, &img, &[0.1, 0.9, 0.6]).unwrap();
            let h2 = loaded.forward(&mut t2, &img, &img, &[0.1, 0.9, 0.6]).unwrap();
            assert_eq!(h1.means.data, h2.means.data, "mode {mode:?}");
        }
    }

    #[test]
    fn file_round_trip_and_trailing_byte_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.bin");
        let policy = sample_policy(RepMode::Relative);
        save_policy(&path, &policy).unwrap();
        let loaded = load_policy(&path).unwrap();
        assert_eq!(
            loaded.interface_embedding(Slot::Two, &policy.anchors2.images()[1]).unwrap(),
            policy.interface_embedding(Slot::Two, &policy.anchors2.images()[1]).unwrap()
        );
        // Corrupt: append a byte.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_policy(&path).is_err());
    }

    #[test]
    fn rejects_wrong_magic_and_version() {
        assert!(read_policy(&mut b"XXXX".as_slice()).is_err());
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        write_u32(&mut buf, 99).unwrap();
        assert!(read_policy(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn rejects_tensor_count_mismatch() {
        let policy = sample_policy(RepMode::Plain);
        let mut buf = Vec::new();
        write_policy(&mut buf, &policy).unwrap();
        // Rewrite the tensor count field: magic(4) + version(4) + config block.
        let config_len = 8 + 4 + serde_json::to_vec(&policy.config).unwrap().len();
        let count_at = config_len;
        let bad = (policy.nets.params().len() as u32 + 1).to_le_bytes();
        buf[count_at..count_at + 4].copy_from_slice(&bad);
        assert!(read_policy(&mut buf.as_slice()).is_err());
    }
}
