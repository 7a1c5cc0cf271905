//! `analyze`: latent-space diagnostics over a finished run directory.
//!
//! For each seed this compares the two source policies' slot-2 interface
//! embeddings on a held-out paired dataset (distance report), projects
//! both slot-2 encoders' latents to 2-D by PCA (JSON + scatter SVG), and
//! renders saliency overlays for the stitched policy in the mixed
//! environment. Everything is a pure function of the run artifacts, so
//! re-running produces identical bytes.

use std::path::Path;

use serde::Serialize;
use tapegrad::{Tape, Tensor};
use vistitch::analysis::{
    grad_cam, heat_overlay_svg, interface_distances, pairwise_distances, pca_project,
    write_pgm_normalized, DistanceReport, PcaProjection,
};
use vistitch::eval::{paired_slot2_observations, ExperimentSpec};
use vistitch::policy::{load_policy, Policy};
use vistitch::rng::{mix, salt};
use vistitch::sim::{collect_dataset, CollectOptions, Slot};
use vistitch::{Error, Result};

use crate::commands::{checkpoint_path, write_json, Context};
use crate::logger;
use crate::plot::{render_chart, ChartOptions, Series};

/// Episodes in the held-out paired dataset.
const HELDOUT_EPISODES: usize = 20;

#[derive(Debug, Serialize)]
struct SeedAnalysis {
    seed: u64,
    sample_count: usize,
    d_cos_mean: f64,
    d_l2_mean: f64,
}

#[derive(Debug, Serialize)]
struct AnalysisSummary {
    experiment_id: String,
    variant: String,
    heldout_episodes: usize,
    seeds: Vec<SeedAnalysis>,
}

pub fn run(config: &Path) -> Result<()> {
    let ctx = Context::load(config)?;
    ctx.note_invocation("analyze")?;
    // The run directory's own spec is authoritative for what was run.
    let spec = read_run_spec(&ctx)?;
    let out = ctx.subdir("analysis")?;
    let mut seeds = Vec::new();
    for &seed in &spec.seeds {
        let policy1 = load_checkpoint(&ctx, seed, "policy1")?;
        let policy2 = load_checkpoint(&ctx, seed, "policy2")?;
        let stitched = load_checkpoint(&ctx, seed, "stitched")?;

        let pairs = paired_slot2_observations(
            spec.task,
            &spec.env1,
            &spec.env2,
            &spec.sim,
            HELDOUT_EPISODES,
            mix(seed, &[salt::HELDOUT]),
        )?;

        let report = interface_distances(&policy1, Slot::Two, &policy2, Slot::Two, &pairs)?;
        write_json(&out.join(format!("seed{seed}_distance.json")), &report)?;

        for (policy, name, side) in [(&policy1, "policy1", 0usize), (&policy2, "policy2", 1)] {
            let latents = encode_all(policy, Slot::Two, &pairs, side)?;
            let pca = pca_project(&latents, 2)?;
            write_json(&out.join(format!("seed{seed}_pca_{name}_slot2.json")), &pca)?;
            std::fs::write(
                out.join(format!("seed{seed}_pca_{name}_slot2.svg")),
                pca_scatter(&pca, &format!("{name} slot-2 latents, seed {seed}")),
            )?;
        }

        write_saliency(&spec, &stitched, seed, &out)?;

        let cross = cross_check(&policy1, &policy2, &pairs)?;
        logger::debug(&format!(
            "seed {seed}: interface d_cos {:.4}, raw-latent d_cos {:.4}",
            report.d_cos_mean, cross.d_cos_mean
        ));
        seeds.push(SeedAnalysis {
            seed,
            sample_count: report.sample_count,
            d_cos_mean: report.d_cos_mean,
            d_l2_mean: report.d_l2_mean,
        });
    }
    let summary = AnalysisSummary {
        experiment_id: spec.experiment_id.clone(),
        variant: spec.variant.name().to_string(),
        heldout_episodes: HELDOUT_EPISODES,
        seeds,
    };
    write_json(&out.join("analysis.json"), &summary)?;
    logger::info(&format!("wrote analysis artifacts to {}", out.display()));
    Ok(())
}

fn read_run_spec(ctx: &Context) -> Result<ExperimentSpec> {
    let path = ctx.out_dir().join("spec.json");
    if path.exists() {
        let bytes = std::fs::read(&path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::format(format!("cannot parse {}: {e}", path.display())))
    } else {
        Ok(ctx.spec.clone())
    }
}

fn load_checkpoint(ctx: &Context, seed: u64, name: &str) -> Result<Policy> {
    let path = checkpoint_path(ctx.out_dir(), seed, name);
    if !path.exists() {
        return Err(Error::data(format!(
            "missing checkpoint {}; run `train` or `stitch-eval` first",
            path.display()
        )));
    }
    load_policy(&path)
}

/// Raw slot-2 encoder latents over one side of the paired observations.
fn encode_all(
    policy: &Policy,
    slot: Slot,
    pairs: &[(Tensor, Tensor)],
    side: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let image = if side == 0 { &pair.0 } else { &pair.1 };
        let mut tape = Tape::inference();
        let z = policy.nets.encoder(slot).encode(&mut tape, image)?;
        rows.push(z.data);
    }
    Ok(rows)
}

/// Distances between the raw (pre-representation) latents, logged for
/// contrast with the interface distances.
fn cross_check(
    policy1: &Policy,
    policy2: &Policy,
    pairs: &[(Tensor, Tensor)],
) -> Result<DistanceReport> {
    let a = encode_all(policy1, Slot::Two, pairs, 0)?;
    let b = encode_all(policy2, Slot::Two, pairs, 1)?;
    pairwise_distances(&a, &b)
}

fn pca_scatter(pca: &PcaProjection, title: &str) -> String {
    let points: Vec<(f64, f64)> = pca
        .projected
        .iter()
        .map(|row| {
            let x = row.first().copied().unwrap_or(0.0);
            let y = row.get(1).copied().unwrap_or(0.0);
            (x, y)
        })
        .collect();
    let series = vec![Series {
        label: String::new(),
        points,
    }];
    let opts = ChartOptions {
        title: title.to_string(),
        x_label: "component 1".to_string(),
        y_label: "component 2".to_string(),
        lines: false,
        x_categories: None,
        y_range: None,
    };
    render_chart(&series, &opts)
}

/// Saliency overlays for the stitched policy on a fresh observation from
/// the mixed environment, one per camera slot.
fn write_saliency(
    spec: &ExperimentSpec,
    stitched: &Policy,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let probe = collect_dataset(
        spec.task,
        &spec.env3,
        &spec.sim,
        1,
        mix(seed, &[salt::SAMPLE]),
        CollectOptions {
            keep_failures: true,
            ..CollectOptions::default()
        },
    )?;
    let step = probe
        .trajectories
        .first()
        .and_then(|t| t.steps.first())
        .ok_or_else(|| Error::data("probe episode has no steps"))?;
    let action = stitched.act(&step.image1, &step.image2, &step.proprio)?;
    for slot in [Slot::One, Slot::Two] {
        let heat = grad_cam(
            stitched,
            &step.image1,
            &step.image2,
            &step.proprio,
            &action,
            slot,
        )?;
        let tag = match slot {
            Slot::One => "slot1",
            Slot::Two => "slot2",
        };
        write_pgm_normalized(
            &out.join(format!("seed{seed}_gradcam_{tag}.pgm")),
            &heat.values,
            heat.height,
            heat.width,
        )?;
        let image = match slot {
            Slot::One => &step.image1,
            Slot::Two => &step.image2,
        };
        std::fs::write(
            out.join(format!("seed{seed}_gradcam_{tag}.svg")),
            heat_overlay_svg(image, &heat)?,
        )?;
    }
    Ok(())
}
