//! `replay`: re-render collected trajectories through the second
//! environment's cameras, with the configured action deviation.

use std::path::Path;

use serde::Serialize;
use vistitch::eval::replay_stage;
use vistitch::sim::{load_dataset, save_dataset};
use vistitch::{Error, Result};

use crate::commands::{file_checksum, replayed_path, source_path, write_json, Context};
use crate::logger;

#[derive(Debug, Serialize)]
struct SeedSummary {
    seed: u64,
    source_steps: usize,
    replayed_steps: usize,
    source_checksum: u64,
    replayed_checksum: u64,
}

#[derive(Debug, Serialize)]
struct ReplaySummary {
    experiment_id: String,
    deviation: f64,
    seeds: Vec<SeedSummary>,
}

pub fn run(config: &Path) -> Result<()> {
    let ctx = Context::load(config)?;
    ctx.write_spec()?;
    ctx.note_invocation("replay")?;
    let mut seeds = Vec::new();
    for &seed in &ctx.spec.seeds {
        let src_path = source_path(ctx.out_dir(), seed);
        if !src_path.exists() {
            return Err(Error::data(format!(
                "missing source dataset {}; run `collect` first",
                src_path.display()
            )));
        }
        let source = load_dataset(&src_path)?;
        let replayed = replay_stage(&ctx.spec, seed, &source)?;
        let dst_path = replayed_path(ctx.out_dir(), seed);
        save_dataset(&replayed, &dst_path)?;
        logger::info(&format!(
            "replayed seed {seed}: {} steps at deviation {}",
            replayed.step_count(),
            ctx.spec.deviation
        ));
        seeds.push(SeedSummary {
            seed,
            source_steps: source.step_count(),
            replayed_steps: replayed.step_count(),
            source_checksum: file_checksum(&src_path)?,
            replayed_checksum: file_checksum(&dst_path)?,
        });
    }
    let summary = ReplaySummary {
        experiment_id: ctx.spec.experiment_id.clone(),
        deviation: ctx.spec.deviation,
        seeds,
    };
    write_json(&ctx.out_dir().join("replay_summary.json"), &summary)
}
