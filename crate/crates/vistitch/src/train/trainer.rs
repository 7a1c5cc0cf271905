//! Seeded behavior-cloning training loop with optional latent
//! regularization.
//!
//! Every epoch shuffles the sample order with a stream keyed by the
//! absolute epoch index, so a run resumed from a saved [`TrainState`]
//! replays exactly the batches an uninterrupted run would have seen.
//! Anchor embedding caches are refreshed once at the end of each epoch;
//! within an epoch they are treated as constants.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use tapegrad::{AdamConfig, AdamState, Tape, Tensor};

use crate::error::{Error, Result};
use crate::io::{
    fnv1a_f64, read_f64, read_f64_vec, read_u32, read_u64, write_f64, write_f64_slice, write_u32,
    write_u64,
};
use crate::policy::{gmm_nll, Policy, PolicyNets};
use crate::rng::{salt, stream};
use crate::sim::Dataset;
use crate::train::loss::{disent_penalty, disent_value, l1l2_penalty};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight on the mean off-diagonal covariance of each encoder's
    /// latent batch (the two slots are averaged). Zero disables the term.
    pub lambda_disent: f64,
    /// Weights on the mean L1/L2 latent norms over both slots' latents.
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-4,
            lambda_disent: 0.0,
            lambda_l1: 0.0,
            lambda_l2: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch size must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive and finite"));
        }
        for (name, v) in [
            ("lambda_disent", self.lambda_disent),
            ("lambda_l1", self.lambda_l1),
            ("lambda_l2", self.lambda_l2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be nonnegative and finite")));
            }
        }
        Ok(())
    }
}

/// Per-epoch averages. The regularizer columns report the raw penalty
/// values before their lambda weights, and are logged even when the
/// corresponding weight is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_bc: f64,
    pub mean_disent: f64,
    pub mean_l1: f64,
    pub mean_l2: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub final_checksum: u64,
}

impl TrainLog {
    /// Deterministic CSV: loss columns only. Wall times vary between runs
    /// and stay out of the reproducible artifact.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_bc,mean_disent,mean_l1,mean_l2\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.mean_bc, e.mean_disent, e.mean_l1, e.mean_l2
            ));
        }
        out
    }

    pub fn total_wall_secs(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_secs).sum()
    }
}

/// FNV-1a over every parameter tensor in registration order.
pub fn param_checksum(nets: &PolicyNets) -> u64 {
    fnv1a_f64(nets.params().iter().flat_map(|t| t.data.iter().copied()))
}

/// Optimizer state plus training progress; everything needed to continue
/// an interrupted run bit-for-bit.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub next_epoch: usize,
    pub adam: AdamState,
}

const STATE_MAGIC: &[u8; 4] = b"VSTS";
const STATE_VERSION: u32 = 1;

impl TrainState {
    pub fn fresh(policy: &Policy, cfg: &TrainConfig) -> TrainState {
        let adam_cfg = AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        };
        TrainState {
            next_epoch: 0,
            adam: AdamState::new(&policy.nets.params(), adam_cfg),
        }
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(STATE_MAGIC)?;
        write_u32(w, STATE_VERSION)?;
        write_u32(w, self.next_epoch as u32)?;
        write_u64(w, self.adam.step_count())?;
        let cfg = self.adam.config();
        for v in [cfg.lr, cfg.beta1, cfg.beta2, cfg.eps] {
            write_f64(w, v)?;
        }
        let (first, second) = self.adam.moments();
        write_u32(w, first.len() as u32)?;
        for (m, v) in first.iter().zip(second) {
            write_u32(w, m.len() as u32)?;
            write_f64_slice(w, m)?;
            write_f64_slice(w, v)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<TrainState> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != STATE_MAGIC {
            return Err(Error::format("not a training state file"));
        }
        let version = read_u32(r)?;
        if version != STATE_VERSION {
            return Err(Error::format(format!("unsupported training state version {version}")));
        }
        let next_epoch = read_u32(r)? as usize;
        let step_count = read_u64(r)?;
        let cfg = AdamConfig {
            lr: read_f64(r)?,
            beta1: read_f64(r)?,
            beta2: read_f64(r)?,
            eps: read_f64(r)?,
        };
        let buffers = read_u32(r)? as usize;
        if buffers > 4096 {
            return Err(Error::format("implausible optimizer buffer count"));
        }
        let mut first = Vec::with_capacity(buffers);
        let mut second = Vec::with_capacity(buffers);
        for _ in 0..buffers {
            let len = read_u32(r)? as usize;
            if len > (1 << 26) {
                return Err(Error::format("implausible optimizer buffer length"));
            }
            first.push(read_f64_vec(r, len)?);
            second.push(read_f64_vec(r, len)?);
        }
        Ok(TrainState {
            next_epoch,
            adam: AdamState::restore(cfg, first, second, step_count)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainState> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        TrainState::read(&mut r)
    }
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn train(policy: &mut Policy, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    let mut state = TrainState::fresh(policy, cfg);
    train_segment(policy, dataset, cfg, &mut state)
}

/// Trains from `state.next_epoch` up to `cfg.epochs`, advancing the state
/// as it goes. Resuming a saved state with the same config reproduces an
/// uninterrupted run exactly.
pub fn train_segment(
    policy: &mut Policy,
    dataset: &Dataset,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<TrainLog> {
    cfg.validate()?;
    let samples: Vec<(usize, usize)> = dataset
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(ti, traj)| (0..traj.steps.len()).map(move |si| (ti, si)))
        .collect();
    if samples.is_empty() && state.next_epoch < cfg.epochs {
        return Err(Error::data("training dataset has no steps"));
    }
    let mut log = TrainLog::default();
    while state.next_epoch < cfg.epochs {
        let epoch = state.next_epoch;
        let started = Instant::now();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream(cfg.seed, &[salt::SHUFFLE, epoch as u64]));

        let mut bc_sum = 0.0;
        let mut bc_count = 0usize;
        let mut disent_sum = 0.0;
        let mut disent_batches = 0usize;
        let mut l1_sum = 0.0;
        let mut l2_sum = 0.0;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let stats = train_batch(policy, dataset, cfg, state, epoch, batch_index, &samples, chunk)?;
            bc_sum += stats.bc * chunk.len() as f64;
            bc_count += chunk.len();
            if let Some(d) = stats.disent {
                disent_sum += d;
                disent_batches += 1;
            }
            l1_sum += stats.l1 * chunk.len() as f64;
            l2_sum += stats.l2 * chunk.len() as f64;
        }
        policy.refresh_anchors()?;
        state.next_epoch += 1;
        log.epochs.push(EpochStats {
            epoch,
            mean_bc: bc_sum / bc_count as f64,
            mean_disent: if disent_batches > 0 {
                disent_sum / disent_batches as f64
            } else {
                0.0
            },
            mean_l1: l1_sum / bc_count as f64,
            mean_l2: l2_sum / bc_count as f64,
            wall_secs: started.elapsed().as_secs_f64(),
        });
    }
    log.final_checksum = param_checksum(&policy.nets);
    Ok(log)
}

struct BatchStats {
    bc: f64,
    /// Mean of the two slots' covariance penalties; absent for batches too
    /// small to form a covariance.
    disent: Option<f64>,
    l1: f64,
    l2: f64,
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    policy: &mut Policy,
    dataset: &Dataset,
    cfg: &TrainConfig,
    state: &mut TrainState,
    epoch: usize,
    batch_index: usize,
    samples: &[(usize, usize)],
    chunk: &[usize],
) -> Result<BatchStats> {
    let mut tape = Tape::new();
    let watched = policy.nets.watched(&mut tape);
    let mut nlls = Vec::with_capacity(chunk.len());
    let mut z1s = Vec::with_capacity(chunk.len());
    let mut z2s = Vec::with_capacity(chunk.len());
    for &idx in chunk {
        let (ti, si) = samples[idx];
        let step = &dataset.trajectories[ti].steps[si];
        let (z1, z2, head) =
            policy.forward_parts_with(&watched, &mut tape, &step.image1, &step.image2, &step.proprio)?;
        nlls.push(gmm_nll(&mut tape, &head, &step.action)?);
        z1s.push(z1);
        z2s.push(z2);
    }
    let nll_refs: Vec<&Tensor> = nlls.iter().collect();
    let stacked = tape.stack(&nll_refs)?;
    let bc = tape.mean(&stacked)?;
    let bc_v = bc.item()?;
    let mut loss = bc;

    let latent_dim = policy.config.latent_dim;
    let mut disent_v = None;
    if chunk.len() >= 2 && latent_dim >= 2 {
        if cfg.lambda_disent > 0.0 {
            let rows1_refs: Vec<&Tensor> = z1s.iter().collect();
            let rows2_refs: Vec<&Tensor> = z2s.iter().collect();
            let rows1 = tape.stack(&rows1_refs)?;
            let rows2 = tape.stack(&rows2_refs)?;
            let p1 = disent_penalty(&mut tape, &rows1)?;
            let p2 = disent_penalty(&mut tape, &rows2)?;
            let both = tape.add(&p1, &p2)?;
            let avg = tape.mulc(&both, 0.5)?;
            disent_v = Some(avg.item()?);
            let weighted = tape.mulc(&avg, cfg.lambda_disent)?;
            loss = tape.add(&loss, &weighted)?;
        } else {
            // Logged for diagnostics even when the term is off.
            let flat = |zs: &[Tensor]| -> Vec<f64> {
                zs.iter().flat_map(|z| z.data.iter().copied()).collect()
            };
            let d1 = disent_value(&flat(&z1s), chunk.len(), latent_dim)?;
            let d2 = disent_value(&flat(&z2s), chunk.len(), latent_dim)?;
            disent_v = Some(0.5 * (d1 + d2));
        }
    }

    // Raw norm means over both slots, for logging and the NaN diagnostic.
    let mut l1_v = 0.0;
    let mut l2_v = 0.0;
    for z in z1s.iter().chain(z2s.iter()) {
        l1_v += z.data.iter().map(|v| v.abs()).sum::<f64>();
        l2_v += z.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    l1_v /= (2 * chunk.len()) as f64;
    l2_v /= (2 * chunk.len()) as f64;
    if cfg.lambda_l1 > 0.0 || cfg.lambda_l2 > 0.0 {
        let all: Vec<&Tensor> = z1s.iter().chain(z2s.iter()).collect();
        let pen = l1l2_penalty(&mut tape, &all, cfg.lambda_l1, cfg.lambda_l2)?;
        loss = tape.add(&loss, &pen)?;
    }

    let loss_v = loss.item()?;
    if !loss_v.is_finite() {
        return Err(Error::train(format!(
            "non-finite loss at epoch {epoch} batch {batch_index}: total={loss_v} bc={bc_v} \
             disent={disent_v:?} l1={l1_v} l2={l2_v}"
        )));
    }
    let grads = tape.backward(&loss)?;
    let grad_tensors: Vec<Tensor> = watched
        .params()
        .iter()
        .map(|p| grads.grad_of(p))
        .collect::<tapegrad::Result<_>>()?;
    state.adam.step(&mut policy.nets.params_mut(), &grad_tensors)?;
    Ok(BatchStats {
        bc: bc_v,
        disent: disent_v,
        l1: l1_v,
        l2: l2_v,
    })
}
