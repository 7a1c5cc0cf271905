//! Trajectory replay under different cameras.
//!
//! Replay re-executes a recorded action sequence from the recorded initial
//! state while rendering through a new camera pair. Because dynamics are
//! deterministic, zero-deviation replay visits the same states bit for bit
//! and differs from the source dataset only in pixels; the result is an
//! index-aligned paired dataset, which is what anchor matching needs.
//!
//! A positive deviation amplitude perturbs each translational action by a
//! random planar vector (uniform direction, length uniform in
//! `[0, amplitude]`). Steps that move the gripper are never perturbed, so
//! grasp timing survives. Perturbed actions are clamped exactly as the
//! simulator would clamp them and the clamped values are recorded, keeping
//! the dataset's stored actions equal to the executed ones.

use rand::Rng;

use crate::error::Result;
use crate::rng::{salt, stream};

use super::camera::EnvDescriptor;
use super::dataset::{proprio_of, Dataset, Trajectory, TrajectoryStep};
use super::world::{is_success, step, SimParams};

/// Gripper commands at or below this magnitude count as "no gripper
/// motion" when deciding whether a step may be perturbed.
const GRIPPER_EPS: f64 = 1e-12;

/// Replays every trajectory of `source` under `env`, preserving trajectory
/// order, episode ids, and step counts. Failed replays are kept: dropping
/// them would break the index correspondence with the source.
pub fn replay_dataset(
    source: &Dataset,
    env: &EnvDescriptor,
    params: &SimParams,
    deviation: f64,
    seed: u64,
) -> Result<Dataset> {
    env.camera1.validate()?;
    env.camera2.validate()?;
    let mut trajectories = Vec::with_capacity(source.trajectories.len());
    for traj in &source.trajectories {
        trajectories.push(replay_trajectory(traj, env, params, deviation, seed)?);
    }
    Ok(Dataset {
        task: source.task,
        env: env.clone(),
        trajectories,
    })
}

fn replay_trajectory(
    traj: &Trajectory,
    env: &EnvDescriptor,
    params: &SimParams,
    deviation: f64,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = stream(seed, &[salt::REPLAY, traj.episode_id]);
    let mut state = traj.initial_state;
    let mut steps = Vec::with_capacity(traj.steps.len());
    for (t, src_step) in traj.steps.iter().enumerate() {
        let mut action = src_step.action;
        if deviation > 0.0 && action[2].abs() <= GRIPPER_EPS {
            let len = rng.random_range(0.0..deviation);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            action[0] += len * angle.cos();
            action[1] += len * angle.sin();
        }
        let m = params.max_step;
        let executed = [
            action[0].clamp(-m, m),
            action[1].clamp(-m, m),
            action[2].clamp(-m, m),
        ];
        steps.push(TrajectoryStep {
            image1: super::camera::render(&state, &env.camera1, params, traj.episode_id, t as u32)?,
            image2: super::camera::render(&state, &env.camera2, params, traj.episode_id, t as u32)?,
            proprio: proprio_of(&state),
            action: executed,
        });
        state = step(&state, executed, params);
    }
    Ok(Trajectory {
        episode_id: traj.episode_id,
        initial_state: traj.initial_state,
        steps,
        success: is_success(&state, params),
    })
}
