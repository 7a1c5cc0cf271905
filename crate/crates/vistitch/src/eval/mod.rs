//! Rollouts, success rates, and the stitching experiment pipeline.

pub mod experiment;
pub mod rollout;

pub use experiment::{
    anchor_stage, collect_stage, evaluate_seed, prepare_seed, replay_stage, run_experiment,
    train_seed, DecoderChoice, ExperimentResult, ExperimentSpec, PolicyVariant, RateSummary,
    ResultRow, SeedArtifacts, SeedPolicies, SALT_ANCHORS, SALT_COLLECT, SALT_EVAL, SALT_INIT_P1,
    SALT_INIT_P2, SALT_REPLAY, SALT_TRAIN_P1, SALT_TRAIN_P2,
};
pub use rollout::{
    mean_stderr, paired_slot2_observations, rollout, success_rate, RolloutOptions,
};
