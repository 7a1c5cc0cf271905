//! `collect`: gather scripted demonstrations in the first environment,
//! one dataset file per seed.

use std::path::Path;

use serde::Serialize;
use vistitch::analysis::{grayscale_plane, write_pgm};
use vistitch::eval::collect_stage;
use vistitch::sim::save_dataset;
use vistitch::{Error, Result};

use crate::commands::{file_checksum, source_path, write_json, Context};
use crate::logger;

#[derive(Debug, Serialize)]
struct SeedSummary {
    seed: u64,
    trajectories: usize,
    steps: usize,
    successes: usize,
    checksum: u64,
}

#[derive(Debug, Serialize)]
struct CollectSummary {
    experiment_id: String,
    task: String,
    demo_count: usize,
    seeds: Vec<SeedSummary>,
}

pub fn run(config: &Path, preview: Option<&Path>) -> Result<()> {
    let ctx = Context::load(config)?;
    ctx.write_spec()?;
    ctx.note_invocation("collect")?;
    let mut seeds = Vec::new();
    for &seed in &ctx.spec.seeds {
        let dataset = collect_stage(&ctx.spec, seed)?;
        let path = source_path(ctx.out_dir(), seed);
        save_dataset(&dataset, &path)?;
        let summary = SeedSummary {
            seed,
            trajectories: dataset.trajectories.len(),
            steps: dataset.step_count(),
            successes: dataset.success_count(),
            checksum: file_checksum(&path)?,
        };
        logger::info(&format!(
            "collected seed {seed}: {} trajectories, {} steps",
            summary.trajectories, summary.steps
        ));
        if let (Some(out), true) = (preview, seed == ctx.spec.seeds[0]) {
            write_preview(&dataset, out)?;
        }
        seeds.push(summary);
    }
    let summary = CollectSummary {
        experiment_id: ctx.spec.experiment_id.clone(),
        task: format!("{:?}", ctx.spec.task).to_lowercase(),
        demo_count: ctx.spec.demo_count,
        seeds,
    };
    write_json(&ctx.out_dir().join("collect_summary.json"), &summary)
}

/// Writes the first frame of the first trajectory (slot-1 camera) as PGM.
fn write_preview(dataset: &vistitch::sim::Dataset, path: &Path) -> Result<()> {
    let step = dataset
        .trajectories
        .first()
        .and_then(|t| t.steps.first())
        .ok_or_else(|| Error::data("dataset has no steps to preview"))?;
    let (gray, h, w) = grayscale_plane(&step.image1)?;
    write_pgm(path, &gray, h, w)?;
    logger::info(&format!("wrote preview frame to {}", path.display()));
    Ok(())
}
