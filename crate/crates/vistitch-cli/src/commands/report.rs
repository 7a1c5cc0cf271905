//! `report`: turn a run's `results.json` into a human-readable Markdown
//! summary plus a success-rate chart.

use std::fmt::Write as _;
use std::path::Path;

use vistitch::eval::ExperimentResult;
use vistitch::{Error, Result};

use crate::commands::Context;
use crate::logger;
use crate::plot::{render_chart, ChartOptions, Series};

pub fn run(config: &Path) -> Result<()> {
    let ctx = Context::load(config)?;
    ctx.note_invocation("report")?;
    let path = ctx.out_dir().join("results.json");
    if !path.exists() {
        return Err(Error::data(format!(
            "missing {}; run `stitch-eval` first",
            path.display()
        )));
    }
    let result: ExperimentResult = serde_json::from_slice(&std::fs::read(&path)?)
        .map_err(|e| Error::format(format!("cannot parse {}: {e}", path.display())))?;
    std::fs::write(ctx.out_dir().join("report.md"), render_markdown(&result))?;
    std::fs::write(ctx.out_dir().join("report.svg"), render_svg(&result))?;
    logger::info(&format!(
        "wrote report.md and report.svg to {}",
        ctx.out_dir().display()
    ));
    Ok(())
}

fn render_markdown(result: &ExperimentResult) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Results: {}\n", result.experiment_id);
    let seed_count = {
        let mut seeds: Vec<u64> = result.rows.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds.len()
    };
    let _ = writeln!(md, "Success rates over {seed_count} seed(s), mean +- standard error.\n");
    let _ = writeln!(md, "| policy | environment | success |");
    let _ = writeln!(md, "|--------|-------------|---------|");
    for s in &result.summaries {
        let _ = writeln!(
            md,
            "| {} | {} | {:.1}% +- {:.1}% |",
            s.policy_variant,
            s.env,
            s.mean * 100.0,
            s.stderr * 100.0
        );
    }
    let _ = writeln!(md, "\n## Per-seed rates\n");
    let _ = writeln!(md, "| policy | environment | seed | successes | episodes | rate |");
    let _ = writeln!(md, "|--------|-------------|------|-----------|----------|------|");
    for r in &result.rows {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {:.1}% |",
            r.policy_variant,
            r.env,
            r.seed,
            r.successes,
            r.episodes,
            r.rate * 100.0
        );
    }
    if !result.warnings.is_empty() {
        let _ = writeln!(md, "\n## Warnings\n");
        for w in &result.warnings {
            let _ = writeln!(md, "- {w}");
        }
    }
    md
}

fn render_svg(result: &ExperimentResult) -> String {
    let envs = ["env1", "env2", "env3"];
    let series: Vec<Series> = ["policy1", "policy2", "stitched"]
        .iter()
        .map(|policy| Series {
            label: policy.to_string(),
            points: envs
                .iter()
                .enumerate()
                .filter_map(|(i, env)| result.mean_rate(policy, env).map(|m| (i as f64, m)))
                .collect(),
        })
        .collect();
    let opts = ChartOptions {
        title: format!("{}: mean success rate", result.experiment_id),
        x_label: "environment".to_string(),
        y_label: "success rate".to_string(),
        lines: false,
        x_categories: Some(envs.iter().map(|e| e.to_string()).collect()),
        y_range: Some((0.0, 1.0)),
    };
    render_chart(&series, &opts)
}
