//! `train`: behavior-clone both source policies for each seed, then
//! assemble the stitched policy once both are fully trained.
//!
//! Training is resumable: the optimizer state lives in a sidecar next to
//! each checkpoint, and `--stop-after N` caps the total epoch count of
//! this invocation. A later `--resume` run continues from the sidecar
//! and reproduces an uninterrupted run exactly, because every shuffle
//! and sampling stream is keyed by absolute epoch number.

use std::path::Path;

use serde::Serialize;
use vistitch::anchors::anchor_images;
use vistitch::eval::{
    prepare_seed, DecoderChoice, SeedArtifacts, SALT_INIT_P1, SALT_INIT_P2, SALT_TRAIN_P1,
    SALT_TRAIN_P2,
};
use vistitch::policy::{load_policy, save_policy, Policy};
use vistitch::rng::mix;
use vistitch::sim::{load_dataset, save_dataset, Slot};
use vistitch::train::{param_checksum, train_segment, TrainState};
use vistitch::{Error, Result};

use crate::commands::{
    checkpoint_path, index_path, replayed_path, source_path, state_path, train_log_path,
    write_json, Context,
};
use crate::logger;

#[derive(Debug, Serialize)]
struct PolicySummary {
    epochs_done: usize,
    param_checksum: u64,
}

#[derive(Debug, Serialize)]
struct SeedSummary {
    seed: u64,
    policy1: PolicySummary,
    policy2: PolicySummary,
    stitched: bool,
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    experiment_id: String,
    variant: String,
    epochs_target: usize,
    seeds: Vec<SeedSummary>,
}

pub fn run(config: &Path, stop_after: Option<usize>, resume: bool) -> Result<()> {
    let ctx = Context::load(config)?;
    ctx.write_spec()?;
    ctx.note_invocation("train")?;
    ctx.subdir("checkpoints")?;
    ctx.subdir("train_logs")?;
    let target = stop_after
        .map(|n| n.min(ctx.spec.epochs))
        .unwrap_or(ctx.spec.epochs);
    let mut seeds = Vec::new();
    for &seed in &ctx.spec.seeds {
        let art = load_or_prepare(&ctx, seed)?;
        let p1 = train_one(&ctx, &art, seed, SIDE_POLICY1, target, resume)?;
        let p2 = train_one(&ctx, &art, seed, SIDE_POLICY2, target, resume)?;
        let complete = p1.1 >= ctx.spec.epochs && p2.1 >= ctx.spec.epochs;
        if complete {
            let stitched = match ctx.spec.decoder {
                DecoderChoice::Policy1 => Policy::stitch(
                    &p1.0,
                    &p2.0,
                    Slot::Two,
                    art.a1_slot1.clone(),
                    art.a2_slot2.clone(),
                )?,
                DecoderChoice::Policy2 => Policy::stitch(
                    &p2.0,
                    &p1.0,
                    Slot::One,
                    art.a1_slot1.clone(),
                    art.a2_slot2.clone(),
                )?,
            };
            save_policy(checkpoint_path(ctx.out_dir(), seed, "stitched"), &stitched)?;
            logger::info(&format!("assembled stitched policy for seed {seed}"));
        } else {
            logger::info(&format!(
                "seed {seed} paused at {}/{} epochs; resume with --resume",
                p1.1.min(p2.1),
                ctx.spec.epochs
            ));
        }
        seeds.push(SeedSummary {
            seed,
            policy1: PolicySummary {
                epochs_done: p1.1,
                param_checksum: param_checksum(&p1.0.nets),
            },
            policy2: PolicySummary {
                epochs_done: p2.1,
                param_checksum: param_checksum(&p2.0.nets),
            },
            stitched: complete,
        });
    }
    let summary = TrainSummary {
        experiment_id: ctx.spec.experiment_id.clone(),
        variant: ctx.spec.variant.name().to_string(),
        epochs_target: ctx.spec.epochs,
        seeds,
    };
    write_json(&ctx.out_dir().join("train_summary.json"), &summary)
}

/// Which of the two source policies is being trained.
#[derive(Clone, Copy)]
struct Side {
    name: &'static str,
    first: bool,
    init_salt: u64,
    train_salt: u64,
}

const SIDE_POLICY1: Side = Side {
    name: "policy1",
    first: true,
    init_salt: SALT_INIT_P1,
    train_salt: SALT_TRAIN_P1,
};

const SIDE_POLICY2: Side = Side {
    name: "policy2",
    first: false,
    init_salt: SALT_INIT_P2,
    train_salt: SALT_TRAIN_P2,
};

/// Trains one side up to `target` total epochs, saving checkpoint, state
/// sidecar, and log rows. Returns the policy and its completed epochs.
fn train_one(
    ctx: &Context,
    art: &SeedArtifacts,
    seed: u64,
    side: Side,
    target: usize,
    resume: bool,
) -> Result<(Policy, usize)> {
    let ckpt = checkpoint_path(ctx.out_dir(), seed, side.name);
    let st_path = state_path(ctx.out_dir(), seed, side.name);
    let full_cfg = ctx.spec.train_config(mix(seed, &[side.train_salt]));
    let (mut policy, mut state) = if resume && ckpt.exists() && st_path.exists() {
        let policy = load_policy(&ckpt)?;
        let state = TrainState::load(&st_path)?;
        logger::info(&format!(
            "resuming seed {seed} {} from epoch {}",
            side.name, state.next_epoch
        ));
        (policy, state)
    } else {
        if resume {
            return Err(Error::data(format!(
                "cannot resume seed {seed} {}: no saved checkpoint and state",
                side.name
            )));
        }
        let (anchors1, anchors2) = if side.first {
            (art.a1_slot1.clone(), art.a1_slot2.clone())
        } else {
            (art.a2_slot1.clone(), art.a2_slot2.clone())
        };
        let policy = Policy::init(
            ctx.spec.policy_config(),
            anchors1,
            anchors2,
            mix(seed, &[side.init_salt]),
        )?;
        let state = TrainState::fresh(&policy, &full_cfg);
        (policy, state)
    };
    let dataset = if side.first { &art.source } else { &art.replayed };
    let mut cfg = full_cfg;
    cfg.epochs = target;
    let started_at = state.next_epoch;
    let log = train_segment(&mut policy, dataset, &cfg, &mut state)?;
    save_policy(&ckpt, &policy)?;
    state.save(&st_path)?;
    append_log(ctx, seed, side.name, &log, started_at == 0)?;
    logger::info(&format!(
        "trained seed {seed} {} through epoch {} ({} new)",
        side.name,
        state.next_epoch,
        log.epochs.len()
    ));
    Ok((policy, state.next_epoch))
}

/// Writes the log CSV, appending data rows when continuing an earlier
/// segment so the finished file matches an uninterrupted run's.
fn append_log(
    ctx: &Context,
    seed: u64,
    name: &str,
    log: &vistitch::train::TrainLog,
    fresh: bool,
) -> Result<()> {
    let path = train_log_path(ctx.out_dir(), seed, name);
    let csv = log.to_csv();
    if fresh || !path.exists() {
        std::fs::write(&path, csv)?;
    } else {
        let rows = csv.split_once('\n').map(|(_, rest)| rest).unwrap_or("");
        use std::io::Write as _;
        let mut f = std::fs::OpenOptions::new().append(true).open(&path)?;
        f.write_all(rows.as_bytes())?;
    }
    Ok(())
}

/// Loads the seed's datasets and anchor index from the run directory if
/// all three exist, computing anchor images from them; otherwise runs
/// the collect/replay/anchor stages and persists their artifacts so the
/// directory ends up identical to a staged pipeline.
fn load_or_prepare(ctx: &Context, seed: u64) -> Result<SeedArtifacts> {
    let src = source_path(ctx.out_dir(), seed);
    let rep = replayed_path(ctx.out_dir(), seed);
    let idx = index_path(ctx.out_dir(), seed);
    if src.exists() && rep.exists() && idx.exists() {
        let source = load_dataset(&src)?;
        let replayed = load_dataset(&rep)?;
        let index = vistitch::anchors::AnchorIndex::load(&idx)?;
        let a1_slot1 = anchor_images(&index, &source, Slot::One)?;
        let a1_slot2 = anchor_images(&index, &source, Slot::Two)?;
        let a2_slot1 = anchor_images(&index, &replayed, Slot::One)?;
        let a2_slot2 = anchor_images(&index, &replayed, Slot::Two)?;
        Ok(SeedArtifacts {
            seed,
            source,
            replayed,
            index,
            a1_slot1,
            a1_slot2,
            a2_slot1,
            a2_slot2,
        })
    } else {
        let art = prepare_seed(&ctx.spec, seed)?;
        ctx.subdir("datasets")?;
        ctx.subdir("anchors")?;
        save_dataset(&art.source, &src)?;
        save_dataset(&art.replayed, &rep)?;
        art.index.save(&idx)?;
        Ok(art)
    }
}
