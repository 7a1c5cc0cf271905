//! `sweep`: run the full experiment once per value of one axis and
//! aggregate third-environment success rates into a CSV and a chart.
//!
//! Axes: `anchor_count`, `lambda_disent`, `deviation`, `loss_mode`, and
//! `decoder_choice`. Each value runs in its own subdirectory with the
//! axis value folded into the experiment id.

use std::path::Path;

use vistitch::eval::{run_experiment, DecoderChoice, ExperimentResult, ExperimentSpec, PolicyVariant};
use vistitch::{Error, Result};

use crate::commands::Context;
use crate::logger;
use crate::plot::{render_chart, ChartOptions, Series};

/// A sweep axis and how it rewrites the base experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    AnchorCount,
    LambdaDisent,
    Deviation,
    LossMode,
    DecoderChoice,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Axis> {
        match s {
            "anchor_count" => Ok(Axis::AnchorCount),
            "lambda_disent" => Ok(Axis::LambdaDisent),
            "deviation" => Ok(Axis::Deviation),
            "loss_mode" => Ok(Axis::LossMode),
            "decoder_choice" => Ok(Axis::DecoderChoice),
            other => Err(Error::config(format!(
                "unknown sweep axis '{other}'; expected anchor_count, lambda_disent, \
                 deviation, loss_mode, or decoder_choice"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::AnchorCount => "anchor_count",
            Axis::LambdaDisent => "lambda_disent",
            Axis::Deviation => "deviation",
            Axis::LossMode => "loss_mode",
            Axis::DecoderChoice => "decoder_choice",
        }
    }

    /// Applies one value of this axis to a copy of the base experiment.
    pub fn apply(self, spec: &mut ExperimentSpec, value: &str) -> Result<()> {
        match self {
            Axis::AnchorCount => {
                spec.anchor_count = value
                    .parse()
                    .map_err(|_| Error::config(format!("anchor_count value '{value}' is not an integer")))?;
            }
            Axis::LambdaDisent => {
                let l: f64 = value
                    .parse()
                    .map_err(|_| Error::config(format!("lambda_disent value '{value}' is not a number")))?;
                spec.lambda_disent = Some(l);
            }
            Axis::Deviation => {
                spec.deviation = value
                    .parse()
                    .map_err(|_| Error::config(format!("deviation value '{value}' is not a number")))?;
            }
            Axis::LossMode => {
                spec.variant = PolicyVariant::parse(value)?;
            }
            Axis::DecoderChoice => {
                spec.decoder = match value {
                    "policy1" => DecoderChoice::Policy1,
                    "policy2" => DecoderChoice::Policy2,
                    other => {
                        return Err(Error::config(format!(
                            "decoder_choice value '{other}' must be policy1 or policy2"
                        )))
                    }
                };
            }
        }
        Ok(())
    }
}

/// Directory-safe form of one axis value.
fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

pub fn run(config: &Path, axis_name: &str, values: &[String]) -> Result<()> {
    let axis = Axis::parse(axis_name)?;
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one --values entry"));
    }
    let ctx = Context::load(config)?;
    ctx.note_invocation(&format!("sweep {axis_name}"))?;
    let sweep_dir = ctx.subdir(&format!("sweep_{}", axis.name()))?;

    let mut results: Vec<(String, ExperimentResult)> = Vec::new();
    for value in values {
        let mut spec = ctx.spec.clone();
        axis.apply(&mut spec, value)?;
        spec.experiment_id = format!("{}_{}_{}", ctx.spec.experiment_id, axis.name(), sanitize(value));
        let run_dir = sweep_dir.join(sanitize(value));
        std::fs::create_dir_all(&run_dir)?;
        logger::info(&format!("sweep {}={}", axis.name(), value));
        let result = run_experiment(&spec, Some(&run_dir), ctx.cfg.run.parallelism)?;
        for warning in &result.warnings {
            logger::warn(warning);
        }
        results.push((value.clone(), result));
    }

    std::fs::write(sweep_dir.join("sweep.csv"), sweep_csv(axis, &results))?;
    std::fs::write(
        sweep_dir.join("sweep.svg"),
        sweep_chart(axis, &results, &ctx.spec.experiment_id),
    )?;
    logger::info(&format!("wrote sweep.csv and sweep.svg to {}", sweep_dir.display()));
    Ok(())
}

/// One row per (axis value, seed): home rates plus every policy's
/// third-environment rate.
fn sweep_csv(axis: Axis, results: &[(String, ExperimentResult)]) -> String {
    let mut out = format!(
        "{},seed,policy1_home,policy2_home,policy1_env3,policy2_env3,stitched_env3\n",
        axis.name()
    );
    for (value, result) in results {
        let mut seeds: Vec<u64> = result.rows.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        for seed in seeds {
            let cell = |policy: &str, env: &str| {
                result
                    .rows
                    .iter()
                    .find(|r| r.seed == seed && r.policy_variant == policy && r.env == env)
                    .map(|r| r.rate.to_string())
                    .unwrap_or_default()
            };
            out.push_str(&format!(
                "{value},{seed},{},{},{},{},{}\n",
                cell("policy1", "env1"),
                cell("policy2", "env2"),
                cell("policy1", "env3"),
                cell("policy2", "env3"),
                cell("stitched", "env3"),
            ));
        }
    }
    out
}

/// Mean env3 success per axis value, one series per policy.
fn sweep_chart(axis: Axis, results: &[(String, ExperimentResult)], experiment_id: &str) -> String {
    let series: Vec<Series> = ["policy1", "policy2", "stitched"]
        .iter()
        .map(|policy| Series {
            label: policy.to_string(),
            points: results
                .iter()
                .enumerate()
                .filter_map(|(i, (_, result))| {
                    result.mean_rate(policy, "env3").map(|m| (i as f64, m))
                })
                .collect(),
        })
        .collect();
    let opts = ChartOptions {
        title: format!("{experiment_id}: success in the third environment"),
        x_label: axis.name().to_string(),
        y_label: "success rate".to_string(),
        lines: true,
        x_categories: Some(results.iter().map(|(v, _)| v.clone()).collect()),
        y_range: Some((0.0, 1.0)),
    };
    render_chart(&series, &opts)
}
