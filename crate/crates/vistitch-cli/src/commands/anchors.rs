//! `anchors`: pick anchor observations from each seed's source dataset
//! by k-means over slot-1 images, and store their indices. The indices
//! address (trajectory, step) pairs, so the same index file also names
//! the matched slot-2 and replayed counterparts.

use std::path::Path;

use serde::Serialize;
use vistitch::eval::anchor_stage;
use vistitch::sim::load_dataset;
use vistitch::{Error, Result};

use crate::commands::{index_path, source_path, write_json, Context};
use crate::logger;

#[derive(Debug, Serialize)]
struct SeedSummary {
    seed: u64,
    anchor_count: usize,
}

#[derive(Debug, Serialize)]
struct AnchorSummary {
    experiment_id: String,
    requested: usize,
    seeds: Vec<SeedSummary>,
}

pub fn run(config: &Path) -> Result<()> {
    let ctx = Context::load(config)?;
    ctx.write_spec()?;
    ctx.note_invocation("anchors")?;
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
        let index = anchor_stage(&ctx.spec, seed, &source)?;
        index.save(&index_path(ctx.out_dir(), seed))?;
        logger::info(&format!("selected {} anchors for seed {seed}", index.len()));
        seeds.push(SeedSummary {
            seed,
            anchor_count: index.len(),
        });
    }
    let summary = AnchorSummary {
        experiment_id: ctx.spec.experiment_id.clone(),
        requested: ctx.spec.anchor_count,
        seeds,
    };
    write_json(&ctx.out_dir().join("anchor_summary.json"), &summary)
}
