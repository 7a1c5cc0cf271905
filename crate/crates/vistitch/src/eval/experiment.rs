//! The end-to-end zero-shot transfer experiment.
//!
//! One run: collect demonstrations in the first environment, re-execute
//! them in the second to get a state-matched dataset, pick anchor frames
//! by clustering, train one policy per environment, stitch the second
//! policy's slot-2 vision stack into the first, and evaluate everything in
//! the mixed third environment that pairs slot 1 of the first environment
//! with slot 2 of the second.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tapegrad::Tensor;

use crate::anchors::{anchor_images, select_anchors, AnchorIndex};
use crate::error::{Error, Result};
use crate::eval::rollout::{mean_stderr, success_rate, RolloutOptions};
use crate::policy::{save_policy, Policy, PolicyConfig, RepMode};
use crate::rng::mix;
use crate::sim::{
    collect_dataset, replay_dataset, save_dataset, CollectOptions, Dataset, EnvDescriptor,
    SimParams, Slot, Task,
};
use crate::train::{train, TrainConfig, TrainLog};

/// Per-stage seed derivation salts, applied to the run seed via
/// [`mix`]. Public because they define the artifact contract: any front
/// end reproducing a single stage must derive the same stream.
pub const SALT_COLLECT: u64 = 0x21;
pub const SALT_REPLAY: u64 = 0x22;
pub const SALT_ANCHORS: u64 = 0x23;
pub const SALT_INIT_P1: u64 = 0x24;
pub const SALT_INIT_P2: u64 = 0x25;
pub const SALT_TRAIN_P1: u64 = 0x26;
pub const SALT_TRAIN_P2: u64 = 0x27;
pub const SALT_EVAL: u64 = 0x28;

/// Which representation and loss combination a policy pair is trained
/// with. This is the experiment-level axis the ablations sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyVariant {
    /// Relative representation plus the covariance penalty.
    Disent,
    /// Relative representation, behavior cloning only.
    NoDisent,
    /// Relative representation plus latent norm penalties.
    L1L2,
    /// Raw latents straight into the decoder.
    Plain,
    /// Weighted sum of four similarity channels.
    MultiSimLinear,
    /// Per-channel trained maps over normalized similarities.
    MultiSimNonlinear,
}

impl PolicyVariant {
    pub const ALL: [PolicyVariant; 6] = [
        PolicyVariant::Disent,
        PolicyVariant::NoDisent,
        PolicyVariant::L1L2,
        PolicyVariant::Plain,
        PolicyVariant::MultiSimLinear,
        PolicyVariant::MultiSimNonlinear,
    ];

    pub fn rep_mode(self) -> RepMode {
        match self {
            PolicyVariant::Plain => RepMode::Plain,
            PolicyVariant::MultiSimLinear => RepMode::MultiSimLinear,
            PolicyVariant::MultiSimNonlinear => RepMode::MultiSimNonlinear,
            _ => RepMode::Relative,
        }
    }

    /// `(lambda_disent, lambda_l1, lambda_l2)` for this variant.
    pub fn lambdas(self) -> (f64, f64, f64) {
        match self {
            PolicyVariant::Disent => (0.002, 0.0, 0.0),
            PolicyVariant::L1L2 => (0.0, 0.001, 0.001),
            _ => (0.0, 0.0, 0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyVariant::Disent => "disent",
            PolicyVariant::NoDisent => "no_disent",
            PolicyVariant::L1L2 => "l1l2",
            PolicyVariant::Plain => "plain",
            PolicyVariant::MultiSimLinear => "multisim_linear",
            PolicyVariant::MultiSimNonlinear => "multisim_nonlinear",
        }
    }

    pub fn parse(s: &str) -> Result<PolicyVariant> {
        PolicyVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown policy variant '{s}'; expected one of {}",
                    PolicyVariant::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }
}

/// Which source policy contributes its action decoder (and with it the
/// surviving encoder) to the stitched policy. The swapped-in encoder is
/// always the one trained in the other environment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderChoice {
    #[default]
    Policy1,
    Policy2,
}

/// Everything a full transfer experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment_id: String,
    pub task: Task,
    pub env1: EnvDescriptor,
    pub env2: EnvDescriptor,
    pub env3: EnvDescriptor,
    #[serde(default)]
    pub sim: SimParams,
    pub variant: PolicyVariant,
    pub demo_count: usize,
    pub anchor_count: usize,
    pub latent_dim: usize,
    pub gmm_modes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    /// Translation amplitude applied when re-executing demonstrations in
    /// the second environment.
    pub deviation: f64,
    /// Overrides the variant's default disentanglement weight when set.
    #[serde(default)]
    pub lambda_disent: Option<f64>,
    /// Stitch direction: which trained policy keeps its decoder.
    #[serde(default)]
    pub decoder: DecoderChoice,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.env3.camera1 != self.env1.camera1 {
            return Err(Error::config(
                "third environment must reuse the first environment's slot-1 camera",
            ));
        }
        if self.env3.camera2 != self.env2.camera2 {
            return Err(Error::config(
                "third environment must reuse the second environment's slot-2 camera",
            ));
        }
        let shape = |c: &crate::sim::CameraConfig| (c.channels, c.height, c.width);
        let reference = shape(&self.env1.camera1);
        for cam in [
            &self.env1.camera2,
            &self.env2.camera1,
            &self.env2.camera2,
        ] {
            if shape(cam) != reference {
                return Err(Error::config(
                    "all cameras must share one image shape so encoders are interchangeable",
                ));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.demo_count == 0 || self.eval_episodes == 0 {
            return Err(Error::config("demo and evaluation counts must be positive"));
        }
        if !(self.deviation >= 0.0 && self.deviation.is_finite()) {
            return Err(Error::config("deviation must be nonnegative and finite"));
        }
        if let Some(l) = self.lambda_disent {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::config(
                    "disentanglement weight override must be nonnegative and finite",
                ));
            }
        }
        self.policy_config().validate()?;
        self.train_config(0).validate()
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            image_channels: self.env1.camera1.channels,
            image_height: self.env1.camera1.height,
            image_width: self.env1.camera1.width,
            latent_dim: self.latent_dim,
            anchor_count: self.anchor_count,
            gmm_modes: self.gmm_modes,
            rep_mode: self.variant.rep_mode(),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let (mut lambda_disent, lambda_l1, lambda_l2) = self.variant.lambdas();
        if let Some(l) = self.lambda_disent {
            lambda_disent = l;
        }
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lambda_disent,
            lambda_l1,
            lambda_l2,
            seed,
        }
    }
}

/// Datasets and anchor images for one seed. Variants that share a seed can
/// share these wholesale: collection, replay and clustering do not depend
/// on the representation being trained.
#[derive(Debug, Clone)]
pub struct SeedArtifacts {
    pub seed: u64,
    pub source: Dataset,
    pub replayed: Dataset,
    pub index: AnchorIndex,
    /// Anchor images for policy 1, per slot, in index order.
    pub a1_slot1: Vec<Tensor>,
    pub a1_slot2: Vec<Tensor>,
    /// The matched anchor images for policy 2 (same refs, second dataset).
    pub a2_slot1: Vec<Tensor>,
    pub a2_slot2: Vec<Tensor>,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        other => Error::stage(name, other),
    })
}

/// Demonstration collection for one seed, exactly as [`run_experiment`]
/// performs it. Exposed so single-stage front ends produce byte-identical
/// artifacts.
pub fn collect_stage(spec: &ExperimentSpec, seed: u64) -> Result<Dataset> {
    stage(
        "collect",
        collect_dataset(
            spec.task,
            &spec.env1,
            &spec.sim,
            spec.demo_count,
            mix(seed, &[SALT_COLLECT]),
            CollectOptions::default(),
        ),
    )
}

/// Re-executes a seed's demonstrations in the second environment.
pub fn replay_stage(spec: &ExperimentSpec, seed: u64, source: &Dataset) -> Result<Dataset> {
    stage(
        "replay",
        replay_dataset(
            source,
            &spec.env2,
            &spec.sim,
            spec.deviation,
            mix(seed, &[SALT_REPLAY]),
        ),
    )
}

/// Selects a seed's anchor indices by clustering the source dataset.
pub fn anchor_stage(spec: &ExperimentSpec, seed: u64, source: &Dataset) -> Result<AnchorIndex> {
    stage(
        "anchors",
        select_anchors(
            source,
            Slot::One,
            spec.anchor_count,
            mix(seed, &[SALT_ANCHORS]),
        ),
    )
}

/// Collects, replays, and clusters for one seed.
pub fn prepare_seed(spec: &ExperimentSpec, seed: u64) -> Result<SeedArtifacts> {
    let source = collect_stage(spec, seed)?;
    let replayed = replay_stage(spec, seed, &source)?;
    let index = anchor_stage(spec, seed, &source)?;
    let a1_slot1 = stage("anchors", anchor_images(&index, &source, Slot::One))?;
    let a1_slot2 = stage("anchors", anchor_images(&index, &source, Slot::Two))?;
    let a2_slot1 = stage("anchors", anchor_images(&index, &replayed, Slot::One))?;
    let a2_slot2 = stage("anchors", anchor_images(&index, &replayed, Slot::Two))?;
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
}

/// The trained policies of one seed plus their training logs.
#[derive(Debug, Clone)]
pub struct SeedPolicies {
    pub seed: u64,
    pub policy1: Policy,
    pub policy2: Policy,
    pub stitched: Policy,
    pub log1: TrainLog,
    pub log2: TrainLog,
}

/// Trains both source policies and assembles the stitched one.
pub fn train_seed(spec: &ExperimentSpec, art: &SeedArtifacts) -> Result<SeedPolicies> {
    let config = spec.policy_config();
    let seed = art.seed;
    let mut policy1 = stage(
        "train-policy1",
        Policy::init(
            config,
            art.a1_slot1.clone(),
            art.a1_slot2.clone(),
            mix(seed, &[SALT_INIT_P1]),
        ),
    )?;
    let log1 = stage(
        "train-policy1",
        train(
            &mut policy1,
            &art.source,
            &spec.train_config(mix(seed, &[SALT_TRAIN_P1])),
        ),
    )?;
    let mut policy2 = stage(
        "train-policy2",
        Policy::init(
            config,
            art.a2_slot1.clone(),
            art.a2_slot2.clone(),
            mix(seed, &[SALT_INIT_P2]),
        ),
    )?;
    let log2 = stage(
        "train-policy2",
        train(
            &mut policy2,
            &art.replayed,
            &spec.train_config(mix(seed, &[SALT_TRAIN_P2])),
        ),
    )?;
    let stitched = stage(
        "stitch",
        match spec.decoder {
            DecoderChoice::Policy1 => Policy::stitch(
                &policy1,
                &policy2,
                Slot::Two,
                art.a1_slot1.clone(),
                art.a2_slot2.clone(),
            ),
            DecoderChoice::Policy2 => Policy::stitch(
                &policy2,
                &policy1,
                Slot::One,
                art.a1_slot1.clone(),
                art.a2_slot2.clone(),
            ),
        },
    )?;
    Ok(SeedPolicies {
        seed,
        policy1,
        policy2,
        stitched,
        log1,
        log2,
    })
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub policy_variant: String,
    pub env: String,
    pub seed: u64,
    pub episodes: usize,
    pub successes: usize,
    pub rate: f64,
}

/// Mean and standard error over seeds for one (policy, env) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub policy_variant: String,
    pub env: String,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment_id: String,
    pub rows: Vec<ResultRow>,
    pub summaries: Vec<RateSummary>,
    pub warnings: Vec<String>,
}

impl ExperimentResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment_id,policy_variant,env,seed,episodes,successes,rate\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.experiment_id, r.policy_variant, r.env, r.seed, r.episodes, r.successes, r.rate
            ));
        }
        out
    }

    /// Mean rate of one (policy, env) cell, if present.
    pub fn mean_rate(&self, policy_variant: &str, env: &str) -> Option<f64> {
        self.summaries
            .iter()
            .find(|s| s.policy_variant == policy_variant && s.env == env)
            .map(|s| s.mean)
    }

    pub fn summarize(&mut self) {
        let mut cells: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            let key = (r.policy_variant.clone(), r.env.clone());
            if !cells.contains(&key) {
                cells.push(key);
            }
        }
        self.summaries = cells
            .into_iter()
            .map(|(policy_variant, env)| {
                let rates: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.policy_variant == policy_variant && r.env == env)
                    .map(|r| r.rate)
                    .collect();
                let (mean, stderr) = mean_stderr(&rates);
                RateSummary {
                    policy_variant,
                    env,
                    mean,
                    stderr,
                }
            })
            .collect();
    }
}

/// Evaluates the three policies of one seed: each source policy at home
/// and everything in the mixed third environment. All rollouts of one seed
/// share initial states, so the comparison is paired.
pub fn evaluate_seed(
    spec: &ExperimentSpec,
    policies: &SeedPolicies,
    parallelism: usize,
) -> Result<Vec<ResultRow>> {
    let eval_seed = mix(policies.seed, &[SALT_EVAL]);
    let opts = RolloutOptions::default();
    let cells: [(&Policy, &str, &EnvDescriptor, &str); 5] = [
        (&policies.policy1, "policy1", &spec.env1, "env1"),
        (&policies.policy2, "policy2", &spec.env2, "env2"),
        (&policies.policy1, "policy1", &spec.env3, "env3"),
        (&policies.policy2, "policy2", &spec.env3, "env3"),
        (&policies.stitched, "stitched", &spec.env3, "env3"),
    ];
    let mut rows = Vec::with_capacity(cells.len());
    for (policy, name, env, env_name) in cells {
        let (rate, outcomes) = stage(
            "evaluate",
            success_rate(
                policy,
                spec.task,
                env,
                &spec.sim,
                spec.eval_episodes,
                eval_seed,
                opts,
                parallelism,
            ),
        )?;
        rows.push(ResultRow {
            experiment_id: spec.experiment_id.clone(),
            policy_variant: name.to_string(),
            env: env_name.to_string(),
            seed: policies.seed,
            episodes: spec.eval_episodes,
            successes: outcomes.iter().filter(|s| **s).count(),
            rate,
        });
    }
    Ok(rows)
}

/// Runs the full pipeline over every seed, optionally persisting all
/// artifacts under `out_dir`. Artifacts written before a failure stay on
/// disk.
pub fn run_experiment(
    spec: &ExperimentSpec,
    out_dir: Option<&Path>,
    parallelism: usize,
) -> Result<ExperimentResult> {
    spec.validate()?;
    if let Some(dir) = out_dir {
        for sub in ["datasets", "anchors", "checkpoints", "train_logs"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        std::fs::write(dir.join("spec.json"), serde_json::to_vec_pretty(spec)?)?;
    }
    let mut result = ExperimentResult {
        experiment_id: spec.experiment_id.clone(),
        ..Default::default()
    };
    for &seed in &spec.seeds {
        let art = prepare_seed(spec, seed)?;
        if let Some(dir) = out_dir {
            save_dataset(
                &art.source,
                &dir.join("datasets").join(format!("seed{seed}_source.bin")),
            )?;
            save_dataset(
                &art.replayed,
                &dir.join("datasets").join(format!("seed{seed}_replayed.bin")),
            )?;
            art.index
                .save(&dir.join("anchors").join(format!("seed{seed}_index.json")))?;
        }
        let policies = train_seed(spec, &art)?;
        if let Some(dir) = out_dir {
            let ckpt = |name: &str| dir.join("checkpoints").join(format!("seed{seed}_{name}.bin"));
            save_policy(ckpt("policy1"), &policies.policy1)?;
            save_policy(ckpt("policy2"), &policies.policy2)?;
            save_policy(ckpt("stitched"), &policies.stitched)?;
            std::fs::write(
                dir.join("train_logs").join(format!("seed{seed}_policy1.csv")),
                policies.log1.to_csv(),
            )?;
            std::fs::write(
                dir.join("train_logs").join(format!("seed{seed}_policy2.csv")),
                policies.log2.to_csv(),
            )?;
        }
        let rows = evaluate_seed(spec, &policies, parallelism)?;
        for row in &rows {
            if row.env != "env3" && row.rate < 0.9 {
                result.warnings.push(format!(
                    "seed {}: {} reached only {:.1}% at home; transfer conclusions are weak",
                    seed,
                    row.policy_variant,
                    row.rate * 100.0
                ));
            }
        }
        result.rows.extend(rows);
    }
    result.summarize();
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("results.csv"), result.to_csv())?;
        std::fs::write(dir.join("results.json"), serde_json::to_vec_pretty(&result)?)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{CameraConfig, CameraKind};

    fn flat_cam(noise_seed: u64) -> CameraConfig {
        CameraConfig {
            kind: CameraKind::Fixed {
                x0: 0.0,
                y0: 0.0,
                x1: 1.0,
                y1: 1.0,
            },
            height: 12,
            width: 12,
            channels: 1,
            corruptions: vec![],
            noise_seed,
        }
    }

    fn degenerate_spec(variant: PolicyVariant) -> ExperimentSpec {
        let env = EnvDescriptor {
            camera1: flat_cam(1),
            camera2: flat_cam(2),
        };
        ExperimentSpec {
            experiment_id: "degenerate".into(),
            task: Task::Reach,
            env1: env.clone(),
            env2: env.clone(),
            env3: env,
            sim: SimParams::default(),
            variant,
            demo_count: 8,
            anchor_count: 4,
            latent_dim: 8,
            gmm_modes: 2,
            epochs: 4,
            batch_size: 16,
            learning_rate: 1e-3,
            eval_episodes: 20,
            seeds: vec![0],
            deviation: 0.0,
            lambda_disent: None,
            decoder: DecoderChoice::default(),
        }
    }

    #[test]
    fn spec_validation_catches_miswired_envs() {
        let mut spec = degenerate_spec(PolicyVariant::Disent);
        spec.env3.camera2.noise_seed = 999;
        assert!(spec.validate().is_err());
        let mut spec = degenerate_spec(PolicyVariant::Disent);
        spec.seeds.clear();
        assert!(spec.validate().is_err());
        assert!(degenerate_spec(PolicyVariant::Plain).validate().is_ok());
    }

    #[test]
    fn variant_round_trip_and_lambdas() {
        for v in PolicyVariant::ALL {
            assert_eq!(PolicyVariant::parse(v.name()).unwrap(), v);
        }
        assert!(PolicyVariant::parse("bogus").is_err());
        assert_eq!(PolicyVariant::Disent.lambdas(), (0.002, 0.0, 0.0));
        assert_eq!(PolicyVariant::L1L2.lambdas(), (0.0, 0.001, 0.001));
        assert_eq!(PolicyVariant::Plain.rep_mode(), RepMode::Plain);
    }

    #[test]
    fn degenerate_experiment_matches_self_performance() {
        let spec = degenerate_spec(PolicyVariant::Disent);
        let dir = tempfile::tempdir().unwrap();
        let result = run_experiment(&spec, Some(dir.path()), 1).unwrap();
        // 1 seed x 5 evaluation cells.
        assert_eq!(result.rows.len(), 5);
        let stitched = result.mean_rate("stitched", "env3").unwrap();
        let p1 = result.mean_rate("policy1", "env3").unwrap();
        let bound = 2.0 / (spec.eval_episodes as f64).sqrt();
        assert!(
            (stitched - p1).abs() <= bound,
            "stitched {stitched} vs policy1 {p1} exceeded {bound}"
        );
        // Artifacts persisted.
        for file in [
            "spec.json",
            "results.csv",
            "results.json",
            "datasets/seed0_source.bin",
            "checkpoints/seed0_stitched.bin",
            "anchors/seed0_index.json",
            "train_logs/seed0_policy1.csv",
        ] {
            assert!(dir.path().join(file).exists(), "missing {file}");
        }
        let csv = result.to_csv();
        assert!(csv.starts_with("experiment_id,policy_variant,env,seed,episodes,successes,rate\n"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn shared_artifacts_are_variant_independent() {
        let spec_a = degenerate_spec(PolicyVariant::Disent);
        let mut spec_b = degenerate_spec(PolicyVariant::Plain);
        spec_b.experiment_id = "degenerate-plain".into();
        let art_a = prepare_seed(&spec_a, 4).unwrap();
        let art_b = prepare_seed(&spec_b, 4).unwrap();
        assert_eq!(art_a.index.entries, art_b.index.entries);
        assert_eq!(art_a.source.trajectories.len(), art_b.source.trajectories.len());
        for (x, y) in art_a.a1_slot1.iter().zip(&art_b.a1_slot1) {
            assert_eq!(x.data, y.data);
        }
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let mut spec = degenerate_spec(PolicyVariant::Disent);
        // A weak expert that cannot reach the success-rate floor makes
        // collection fail; the error must say which stage died.
        spec.demo_count = 3;
        spec.sim.max_horizon = 2;
        let err = prepare_seed(&spec, 0).unwrap_err();
        assert!(
            err.to_string().contains("stage 'collect'"),
            "unexpected error: {err}"
        );
    }
}
