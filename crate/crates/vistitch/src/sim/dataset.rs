//! Demonstration datasets: collection, binary serialization, JSON export.
//!
//! A dataset is a list of trajectories recorded under one camera pair. Each
//! step stores both rendered observations, the proprioceptive reading, and
//! the executed action, so training needs no simulator access. Trajectories
//! remember the episode index they were collected under (`episode_id`);
//! camera noise streams are keyed by it, which is what makes replays under
//! identical cameras reproduce images bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tapegrad::Tensor;

use crate::error::{Error, Result};
use crate::rng::{salt, stream};

use super::camera::{CameraConfig, EnvDescriptor};
use super::expert::expert_action;
use super::world::{is_success, sample_initial, step, SimParams, Task, WorldState};

/// One recorded timestep: observations rendered at the pre-action state,
/// the proprioceptive reading at that state, and the action then executed.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub image1: Tensor,
    pub image2: Tensor,
    /// `[ee_x, ee_y, gripper_width]`.
    pub proprio: [f64; 3],
    pub action: [f64; 3],
}

impl TrajectoryStep {
    pub fn image(&self, slot: super::camera::Slot) -> &Tensor {
        match slot {
            super::camera::Slot::One => &self.image1,
            super::camera::Slot::Two => &self.image2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Episode index the trajectory was recorded under; keys noise streams.
    pub episode_id: u64,
    pub initial_state: WorldState,
    pub steps: Vec<TrajectoryStep>,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub task: Task,
    pub env: EnvDescriptor,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn step_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }

    pub fn success_count(&self) -> usize {
        self.trajectories.iter().filter(|t| t.success).count()
    }
}

/// Proprioceptive reading exposed to policies.
pub fn proprio_of(state: &WorldState) -> [f64; 3] {
    [state.ee[0], state.ee[1], state.gripper]
}

#[derive(Debug, Clone, Copy)]
pub struct CollectOptions {
    /// Expert gain; 1.0 is the competent expert.
    pub gain: f64,
    /// Keep trajectories that time out without success.
    pub keep_failures: bool,
}

impl Default for CollectOptions {
    fn default() -> Self {
        CollectOptions {
            gain: 1.0,
            keep_failures: false,
        }
    }
}

/// Rolls one expert episode under `env` and records it. `episode_id` seeds
/// the initial-state and noise streams.
fn collect_episode(
    task: Task,
    env: &EnvDescriptor,
    params: &SimParams,
    seed: u64,
    episode_id: u64,
    gain: f64,
) -> Result<Trajectory> {
    let mut rng = stream(seed, &[salt::EPISODE, episode_id]);
    let initial_state = sample_initial(task, params, &mut rng);
    let mut state = initial_state;
    let mut steps = Vec::new();
    for t in 0..params.max_horizon {
        if is_success(&state, params) {
            break;
        }
        let action = expert_action(&state, params, gain);
        steps.push(TrajectoryStep {
            image1: super::camera::render(&state, &env.camera1, params, episode_id, t)?,
            image2: super::camera::render(&state, &env.camera2, params, episode_id, t)?,
            proprio: proprio_of(&state),
            action,
        });
        state = step(&state, action, params);
    }
    Ok(Trajectory {
        episode_id,
        initial_state,
        steps,
        success: is_success(&state, params),
    })
}

/// Collects `count` expert trajectories. Without `keep_failures`, failed
/// episodes are skipped and extra episodes are drawn until `count`
/// successes accumulate; an expert succeeding on fewer than a tenth of its
/// attempts is reported as an error rather than looping forever.
pub fn collect_dataset(
    task: Task,
    env: &EnvDescriptor,
    params: &SimParams,
    count: usize,
    seed: u64,
    opts: CollectOptions,
) -> Result<Dataset> {
    env.camera1.validate()?;
    env.camera2.validate()?;
    let mut trajectories = Vec::with_capacity(count);
    let mut episode_id = 0u64;
    while trajectories.len() < count {
        if episode_id >= 10 * count as u64 + 10 {
            return Err(Error::data(format!(
                "collected only {}/{count} successful demonstrations in {episode_id} attempts",
                trajectories.len()
            )));
        }
        let traj = collect_episode(task, env, params, seed, episode_id, opts.gain)?;
        episode_id += 1;
        if traj.success || opts.keep_failures {
            trajectories.push(traj);
        }
    }
    Ok(Dataset {
        task,
        env: env.clone(),
        trajectories,
    })
}

// Binary format
// -------------
// magic "VSDS", version u32 = 1
// task u8 (0 reach, 1 push, 2 lift)
// env descriptor: length-prefixed JSON
// trajectory count u32, then per trajectory:
//   episode_id u64
//   initial state: ee (2 f64), gripper f64, object (2 f64), held u8,
//     step_index u32
//   success u8
//   step count u32, then per step:
//     image1 data (camera1 C*H*W f64), image2 data, proprio 3 f64,
//     action 3 f64
// Image shapes are not stored per step; they are implied by the camera
// configs in the header. All integers and floats are little-endian.

const DATASET_MAGIC: &[u8; 4] = b"VSDS";
const DATASET_VERSION: u32 = 1;
const MAX_HEADER_JSON: usize = 1 << 20;

fn task_code(task: Task) -> u8 {
    match task {
        Task::Reach => 0,
        Task::Push => 1,
        Task::Lift => 2,
    }
}

fn task_from_code(code: u8) -> Result<Task> {
    match code {
        0 => Ok(Task::Reach),
        1 => Ok(Task::Push),
        2 => Ok(Task::Lift),
        other => Err(Error::format(format!("unknown task code {other}"))),
    }
}

fn write_state(w: &mut impl Write, s: &WorldState) -> Result<()> {
    crate::io::write_f64(w, s.ee[0])?;
    crate::io::write_f64(w, s.ee[1])?;
    crate::io::write_f64(w, s.gripper)?;
    crate::io::write_f64(w, s.object[0])?;
    crate::io::write_f64(w, s.object[1])?;
    crate::io::write_u8(w, s.held as u8)?;
    crate::io::write_u32(w, s.step_index)?;
    Ok(())
}

fn read_state(r: &mut impl Read, task: Task) -> Result<WorldState> {
    let ee = [crate::io::read_f64(r)?, crate::io::read_f64(r)?];
    let gripper = crate::io::read_f64(r)?;
    let object = [crate::io::read_f64(r)?, crate::io::read_f64(r)?];
    let held = crate::io::read_u8(r)? != 0;
    let step_index = crate::io::read_u32(r)?;
    Ok(WorldState {
        task,
        ee,
        gripper,
        object,
        held,
        step_index,
    })
}

fn image_len(cam: &CameraConfig) -> usize {
    cam.channels * cam.height * cam.width
}

pub fn write_dataset(ds: &Dataset, w: &mut impl Write) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    crate::io::write_u32(w, DATASET_VERSION)?;
    crate::io::write_u8(w, task_code(ds.task))?;
    crate::io::write_bytes(w, &serde_json::to_vec(&ds.env)?)?;
    crate::io::write_u32(w, ds.trajectories.len() as u32)?;
    let (len1, len2) = (image_len(&ds.env.camera1), image_len(&ds.env.camera2));
    for traj in &ds.trajectories {
        crate::io::write_u64(w, traj.episode_id)?;
        write_state(w, &traj.initial_state)?;
        crate::io::write_u8(w, traj.success as u8)?;
        crate::io::write_u32(w, traj.steps.len() as u32)?;
        for s in &traj.steps {
            if s.image1.data.len() != len1 || s.image2.data.len() != len2 {
                return Err(Error::dim(
                    "trajectory image size disagrees with camera config".to_string(),
                ));
            }
            crate::io::write_f64_slice(w, &s.image1.data)?;
            crate::io::write_f64_slice(w, &s.image2.data)?;
            crate::io::write_f64_slice(w, &s.proprio)?;
            crate::io::write_f64_slice(w, &s.action)?;
        }
    }
    Ok(())
}

pub fn read_dataset(r: &mut impl Read) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::format("not a dataset file (bad magic)".to_string()));
    }
    let version = crate::io::read_u32(r)?;
    if version != DATASET_VERSION {
        return Err(Error::format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let task = task_from_code(crate::io::read_u8(r)?)?;
    let env: EnvDescriptor = serde_json::from_slice(&crate::io::read_bytes(r, MAX_HEADER_JSON)?)?;
    env.camera1.validate()?;
    env.camera2.validate()?;
    let shape1 = vec![env.camera1.channels, env.camera1.height, env.camera1.width];
    let shape2 = vec![env.camera2.channels, env.camera2.height, env.camera2.width];
    let (len1, len2) = (image_len(&env.camera1), image_len(&env.camera2));
    let count = crate::io::read_u32(r)? as usize;
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        let episode_id = crate::io::read_u64(r)?;
        let initial_state = read_state(r, task)?;
        let success = crate::io::read_u8(r)? != 0;
        let steps_len = crate::io::read_u32(r)? as usize;
        let mut steps = Vec::with_capacity(steps_len);
        for _ in 0..steps_len {
            let image1 = Tensor::new(&shape1, crate::io::read_f64_vec(r, len1)?)?;
            let image2 = Tensor::new(&shape2, crate::io::read_f64_vec(r, len2)?)?;
            let p = crate::io::read_f64_vec(r, 3)?;
            let a = crate::io::read_f64_vec(r, 3)?;
            steps.push(TrajectoryStep {
                image1,
                image2,
                proprio: [p[0], p[1], p[2]],
                action: [a[0], a[1], a[2]],
            });
        }
        trajectories.push(Trajectory {
            episode_id,
            initial_state,
            steps,
            success,
        });
    }
    Ok(Dataset {
        task,
        env,
        trajectories,
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    read_dataset(&mut r)
}

/// JSON-lines debug mirror: one object per trajectory. Values are plain
/// JSON numbers; serde round-trips f64 exactly, so the export is lossless,
/// just far larger than the binary format.
#[derive(Serialize, Deserialize)]
struct JsonStep {
    image1: Vec<f64>,
    image2: Vec<f64>,
    proprio: [f64; 3],
    action: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct JsonTrajectory {
    episode_id: u64,
    initial_state: WorldState,
    success: bool,
    steps: Vec<JsonStep>,
}

pub fn export_jsonl(ds: &Dataset, w: &mut impl Write) -> Result<()> {
    for traj in &ds.trajectories {
        let jt = JsonTrajectory {
            episode_id: traj.episode_id,
            initial_state: traj.initial_state,
            success: traj.success,
            steps: traj
                .steps
                .iter()
                .map(|s| JsonStep {
                    image1: s.image1.data.clone(),
                    image2: s.image2.data.clone(),
                    proprio: s.proprio,
                    action: s.action,
                })
                .collect(),
        };
        serde_json::to_writer(&mut *w, &jt)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::camera::CameraKind;

    fn tiny_env() -> EnvDescriptor {
        let cam = |seed| CameraConfig {
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
            noise_seed: seed,
        };
        EnvDescriptor {
            camera1: cam(1),
            camera2: cam(2),
        }
    }

    #[test]
    fn collect_is_deterministic_and_successful() {
        let p = SimParams::default();
        let env = tiny_env();
        let a = collect_dataset(Task::Push, &env, &p, 5, 42, CollectOptions::default()).unwrap();
        let b = collect_dataset(Task::Push, &env, &p, 5, 42, CollectOptions::default()).unwrap();
        assert_eq!(a.trajectories.len(), 5);
        assert_eq!(a.success_count(), 5);
        for (x, y) in a.trajectories.iter().zip(b.trajectories.iter()) {
            assert_eq!(x.episode_id, y.episode_id);
            assert_eq!(x.steps.len(), y.steps.len());
            for (sx, sy) in x.steps.iter().zip(y.steps.iter()) {
                assert_eq!(sx.image1.data, sy.image1.data);
                assert_eq!(sx.image2.data, sy.image2.data);
                assert_eq!(sx.action, sy.action);
            }
        }
    }

    #[test]
    fn weak_expert_with_failures_kept_records_timeouts() {
        let p = SimParams::default();
        let env = tiny_env();
        let opts = CollectOptions {
            gain: 0.15,
            keep_failures: true,
        };
        let ds = collect_dataset(Task::Push, &env, &p, 6, 7, opts).unwrap();
        assert_eq!(ds.trajectories.len(), 6);
        assert!(ds.success_count() < 6);
        // Failed episodes run to the horizon.
        let failed = ds.trajectories.iter().find(|t| !t.success).unwrap();
        assert_eq!(failed.steps.len(), p.max_horizon as usize);
    }

    #[test]
    fn weak_expert_without_kept_failures_errors_out() {
        let p = SimParams::default();
        let env = tiny_env();
        let opts = CollectOptions {
            gain: 0.05,
            keep_failures: false,
        };
        let err = collect_dataset(Task::Push, &env, &p, 5, 7, opts);
        assert!(err.is_err());
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let p = SimParams::default();
        let env = tiny_env();
        let ds = collect_dataset(Task::Lift, &env, &p, 3, 9, CollectOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(&mut buf.as_slice()).unwrap();
        assert_eq!(back.task, ds.task);
        assert_eq!(back.env, ds.env);
        assert_eq!(back.trajectories.len(), ds.trajectories.len());
        for (a, b) in ds.trajectories.iter().zip(back.trajectories.iter()) {
            assert_eq!(a.episode_id, b.episode_id);
            assert_eq!(a.initial_state, b.initial_state);
            assert_eq!(a.success, b.success);
            for (sa, sb) in a.steps.iter().zip(b.steps.iter()) {
                assert_eq!(sa.image1.data, sb.image1.data);
                assert_eq!(sa.image2.data, sb.image2.data);
                assert_eq!(sa.proprio, sb.proprio);
                assert_eq!(sa.action, sb.action);
            }
        }
    }

    #[test]
    fn truncated_file_is_an_error_not_a_panic() {
        let p = SimParams::default();
        let env = tiny_env();
        let ds = collect_dataset(Task::Reach, &env, &p, 2, 3, CollectOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(read_dataset(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn jsonl_export_is_lossless_per_line() {
        let p = SimParams::default();
        let env = tiny_env();
        let ds = collect_dataset(Task::Reach, &env, &p, 2, 3, CollectOptions::default()).unwrap();
        let mut out = Vec::new();
        export_jsonl(&ds, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for (line, traj) in lines.iter().zip(ds.trajectories.iter()) {
            let jt: JsonTrajectory = serde_json::from_str(line).unwrap();
            assert_eq!(jt.episode_id, traj.episode_id);
            assert_eq!(jt.steps.len(), traj.steps.len());
            for (js, s) in jt.steps.iter().zip(traj.steps.iter()) {
                assert_eq!(js.image1, s.image1.data);
                assert_eq!(js.action, s.action);
            }
        }
    }
}
