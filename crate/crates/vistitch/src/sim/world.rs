//! Planar tabletop world: state, dynamics, success predicates.
//!
//! The table is the unit square. An end effector moves in bounded steps,
//! a parallel gripper opens and closes, and a single object reacts
//! according to the active task's contact rule. Dynamics are a pure
//! function of (state, action, parameters), so identical inputs reproduce
//! trajectories bit for bit.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Which manipulation problem the episode poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Bring the end effector within tolerance of the object.
    Reach,
    /// Push the object rightward past a fixed goal line.
    Push,
    /// Grasp the object and raise it above a fixed height.
    Lift,
}

/// Geometry and dynamics constants. Defaults are the reference setup used
/// throughout the test suite; experiments may override individual fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Per-axis displacement bound for one action component.
    pub max_step: f64,
    /// Episode length cap in steps.
    pub max_horizon: u32,
    /// End-effector distance below which a closing gripper captures the object.
    pub grasp_radius: f64,
    /// Gripper width below which the gripper counts as closed.
    pub close_threshold: f64,
    /// Success tolerance for the reach task.
    pub reach_tol: f64,
    /// Half-height of the lateral band in which pushing contact applies.
    pub push_band: f64,
    /// Horizontal offset the object keeps ahead of a pushing end effector.
    pub push_reach: f64,
    /// Goal line x coordinate for the push task.
    pub goal_x: f64,
    /// Height the object must exceed (while held) for the lift task.
    pub lift_height: f64,
    /// Half-extent of the square object, used by rendering.
    pub object_half: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            max_step: 0.05,
            max_horizon: 60,
            grasp_radius: 0.05,
            close_threshold: 0.35,
            reach_tol: 0.05,
            push_band: 0.05,
            push_reach: 0.06,
            goal_x: 0.75,
            lift_height: 0.7,
            object_half: 0.05,
        }
    }
}

/// Full simulator state. `step_index` counts applied actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub task: Task,
    /// End-effector position in table coordinates.
    pub ee: [f64; 2],
    /// Gripper width in [0, 1]; 1 is fully open.
    pub gripper: f64,
    /// Object center position.
    pub object: [f64; 2],
    /// Whether the object is currently captured by the gripper.
    pub held: bool,
    pub step_index: u32,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Applies one action `[dx, dy, dgrip]`. Components are clamped to
/// `±max_step` before use; positions stay inside the unit square and the
/// gripper width inside [0, 1].
///
/// Contact rules, by task:
/// * `Reach`: the object never moves.
/// * `Push`: one-sided contact. If the end effector sits behind the object
///   (smaller x), within the lateral band, and closer than `push_reach`,
///   the object is placed `push_reach` ahead of it. The rule only ever
///   increases object x, so the object cannot be pulled or pushed sideways.
/// * `Lift`: a closing gripper within `grasp_radius` captures the object;
///   once held it follows the end effector exactly.
pub fn step(state: &WorldState, action: [f64; 3], params: &SimParams) -> WorldState {
    let m = params.max_step;
    let dx = action[0].clamp(-m, m);
    let dy = action[1].clamp(-m, m);
    let dg = action[2].clamp(-m, m);

    let ee = [
        (state.ee[0] + dx).clamp(0.0, 1.0),
        (state.ee[1] + dy).clamp(0.0, 1.0),
    ];
    let gripper = (state.gripper + dg).clamp(0.0, 1.0);

    let mut object = state.object;
    let mut held = state.held;

    match state.task {
        Task::Reach => {}
        Task::Push => {
            let behind = ee[0] < object[0];
            let in_band = (ee[1] - object[1]).abs() <= params.push_band;
            let in_reach = ee[0] + params.push_reach > object[0];
            if behind && in_band && in_reach {
                object[0] = (ee[0] + params.push_reach).min(1.0);
            }
        }
        Task::Lift => {
            if held {
                object = ee;
            } else if gripper < params.close_threshold && dist(ee, state.object) <= params.grasp_radius
            {
                held = true;
                object = ee;
            }
        }
    }

    WorldState {
        task: state.task,
        ee,
        gripper,
        object,
        held,
        step_index: state.step_index + 1,
    }
}

/// Task-specific success predicate.
pub fn is_success(state: &WorldState, params: &SimParams) -> bool {
    match state.task {
        Task::Reach => dist(state.ee, state.object) <= params.reach_tol,
        Task::Push => state.object[0] > params.goal_x,
        Task::Lift => state.held && state.object[1] >= params.lift_height,
    }
}

/// Draws an initial state for `task`. Ranges keep the episode solvable
/// within the horizon and never start in a success configuration: reach
/// starts at least four tolerances away, push starts the object well left
/// of the goal line with the end effector behind it, lift starts the
/// object low with the gripper open.
pub fn sample_initial(task: Task, params: &SimParams, rng: &mut impl Rng) -> WorldState {
    match task {
        Task::Reach => {
            let object = [rng.random_range(0.25..0.75), rng.random_range(0.25..0.75)];
            let mut ee = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
            while dist(ee, object) < 4.0 * params.reach_tol {
                ee = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
            }
            WorldState {
                task,
                ee,
                gripper: 0.6,
                object,
                held: false,
                step_index: 0,
            }
        }
        Task::Push => {
            let object = [rng.random_range(0.3..0.45), rng.random_range(0.3..0.7)];
            let ee = [
                rng.random_range(0.1..object[0] - 0.12),
                object[1] + rng.random_range(-0.08..0.08),
            ];
            WorldState {
                task,
                ee: [ee[0], ee[1].clamp(0.0, 1.0)],
                gripper: 0.6,
                object,
                held: false,
                step_index: 0,
            }
        }
        Task::Lift => {
            let object = [rng.random_range(0.3..0.7), rng.random_range(0.25..0.45)];
            let mut ee = [rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)];
            while dist(ee, object) < 0.2 {
                ee = [rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)];
            }
            WorldState {
                task,
                ee,
                gripper: 0.6,
                object,
                held: false,
                step_index: 0,
            }
        }
    }
}
