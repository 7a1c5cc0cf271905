//! Closed-loop policy rollouts and success-rate estimation.

use tapegrad::Tape;

use crate::error::{Error, Result};
use crate::policy::{sample_action, Policy};
use crate::rng::{salt, stream};
use crate::sim::{
    is_success, proprio_of, render, sample_initial, step, Dataset, EnvDescriptor, SimParams, Task,
    Trajectory, TrajectoryStep,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    /// Mode-mean action selection when true; otherwise actions are sampled
    /// from the mixture with a per-episode stream.
    pub deterministic: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions {
            deterministic: true,
        }
    }
}

/// Runs one closed-loop episode. The initial state and any sampling noise
/// depend only on `(seed, episode)`, so a rollout is reproducible in
/// isolation.
pub fn rollout(
    policy: &Policy,
    task: Task,
    env: &EnvDescriptor,
    params: &SimParams,
    seed: u64,
    episode: u64,
    opts: RolloutOptions,
) -> Result<Trajectory> {
    let mut init_rng = stream(seed, &[salt::EVAL, episode]);
    let initial_state = sample_initial(task, params, &mut init_rng);
    let mut state = initial_state.clone();
    let mut steps = Vec::new();
    for t in 0..params.max_horizon {
        if is_success(&state, params) {
            break;
        }
        let image1 = render(&state, &env.camera1, params, episode, t)?;
        let image2 = render(&state, &env.camera2, params, episode, t)?;
        let proprio = proprio_of(&state);
        let action = if opts.deterministic {
            policy.act(&image1, &image2, &proprio)?
        } else {
            let mut tape = Tape::inference();
            let head = policy.forward(&mut tape, &image1, &image2, &proprio)?;
            let mut rng = stream(seed, &[salt::SAMPLE, episode, t as u64]);
            sample_action(&head, &mut rng)
        };
        steps.push(TrajectoryStep {
            image1,
            image2,
            proprio,
            action,
        });
        state = step(&state, action, params);
    }
    Ok(Trajectory {
        episode_id: episode,
        initial_state,
        steps,
        success: is_success(&state, params),
    })
}

/// Success rate of a policy over `episodes` seeded rollouts, optionally
/// fanned out over worker threads. Results are merged in episode order, so
/// the outcome is independent of `parallelism`.
pub fn success_rate(
    policy: &Policy,
    task: Task,
    env: &EnvDescriptor,
    params: &SimParams,
    episodes: usize,
    seed: u64,
    opts: RolloutOptions,
    parallelism: usize,
) -> Result<(f64, Vec<bool>)> {
    if episodes == 0 {
        return Err(Error::config("success rate needs at least one episode"));
    }
    let workers = parallelism.clamp(1, episodes);
    let mut outcomes = vec![false; episodes];
    if workers == 1 {
        for (e, out) in outcomes.iter_mut().enumerate() {
            *out = rollout(policy, task, env, params, seed, e as u64, opts)?.success;
        }
    } else {
        let results: Vec<Result<Vec<(usize, bool)>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    scope.spawn(move || {
                        (w..episodes)
                            .step_by(workers)
                            .map(|e| {
                                rollout(policy, task, env, params, seed, e as u64, opts)
                                    .map(|t| (e, t.success))
                            })
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for chunk in results {
            for (e, s) in chunk? {
                outcomes[e] = s;
            }
        }
    }
    let successes = outcomes.iter().filter(|s| **s).count();
    Ok((successes as f64 / episodes as f64, outcomes))
}

/// Mean and standard error (sample standard deviation over sqrt(n)) of
/// per-seed rates.
pub fn mean_stderr(rates: &[f64]) -> (f64, f64) {
    let n = rates.len() as f64;
    if rates.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = rates.iter().sum::<f64>() / n;
    if rates.len() < 2 {
        return (mean, 0.0);
    }
    let var = rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt() / n.sqrt())
}

/// Renders paired observations of identical world states seen through two
/// environments' slot-2 cameras: expert episodes in `env_a`, re-executed
/// under `env_b` with zero deviation. Used for latent distance reports.
pub fn paired_slot2_observations(
    task: Task,
    env_a: &EnvDescriptor,
    env_b: &EnvDescriptor,
    params: &SimParams,
    episodes: usize,
    seed: u64,
) -> Result<Vec<(tapegrad::Tensor, tapegrad::Tensor)>> {
    let opts = crate::sim::CollectOptions {
        keep_failures: true,
        ..Default::default()
    };
    let held_seed = crate::rng::mix(seed, &[salt::HELDOUT]);
    let da: Dataset = crate::sim::collect_dataset(task, env_a, params, episodes, held_seed, opts)?;
    let db = crate::sim::replay_dataset(&da, env_b, params, 0.0, held_seed)?;
    let mut pairs = Vec::new();
    for (ta, tb) in da.trajectories.iter().zip(&db.trajectories) {
        for (sa, sb) in ta.steps.iter().zip(&tb.steps) {
            pairs.push((sa.image2.clone(), sb.image2.clone()));
        }
    }
    if pairs.is_empty() {
        return Err(Error::data("paired observation set is empty"));
    }
    Ok(pairs)
}
