//! Scripted demonstration experts.
//!
//! Each task has a phase-structured proportional controller that solves it
//! well within the horizon at full gain. The `gain` knob scales commanded
//! displacements before clamping; low gains produce slow, mostly-failing
//! demonstrations used to study degraded data.

use super::world::{is_success, SimParams, Task, WorldState};

fn clamp3(v: [f64; 3], m: f64) -> [f64; 3] {
    [v[0].clamp(-m, m), v[1].clamp(-m, m), v[2].clamp(-m, m)]
}

/// Computes the expert action for `state`. Returns the zero action once the
/// task is solved, so post-success frames (if any are recorded) are inert.
pub fn expert_action(state: &WorldState, params: &SimParams, gain: f64) -> [f64; 3] {
    if is_success(state, params) {
        return [0.0, 0.0, 0.0];
    }
    let m = params.max_step;
    let ee = state.ee;
    let obj = state.object;
    match state.task {
        Task::Reach => clamp3([gain * (obj[0] - ee[0]), gain * (obj[1] - ee[1]), 0.0], m),
        Task::Push => {
            // Phase 1: line up behind the object inside half the contact
            // band. The staging point sits just outside push reach so the
            // approach cannot nudge the object early.
            let aligned = (ee[1] - obj[1]).abs() <= 0.5 * params.push_band;
            if !aligned {
                let staging = [obj[0] - params.push_reach - 0.01, obj[1]];
                clamp3(
                    [gain * (staging[0] - ee[0]), gain * (staging[1] - ee[1]), 0.0],
                    m,
                )
            } else {
                // Phase 2: drive forward at full commanded speed with a
                // small lateral correction to stay centered in the band.
                clamp3([gain * m, gain * (obj[1] - ee[1]), 0.0], m)
            }
        }
        Task::Lift => {
            let d = ((ee[0] - obj[0]).powi(2) + (ee[1] - obj[1]).powi(2)).sqrt();
            if state.held {
                // Phase 3: raise.
                clamp3([0.0, gain * m, 0.0], m)
            } else if d > 0.5 * params.grasp_radius {
                // Phase 1: approach with the gripper kept open.
                clamp3([gain * (obj[0] - ee[0]), gain * (obj[1] - ee[1]), 0.0], m)
            } else {
                // Phase 2: center and close.
                clamp3(
                    [gain * (obj[0] - ee[0]), gain * (obj[1] - ee[1]), -gain * m],
                    m,
                )
            }
        }
    }
}

/// Rolls the expert forward from `state` until success or the horizon.
/// Returns the visited states (including the initial one), the actions
/// taken, and whether the final state is a success.
pub fn run_expert(
    state: &WorldState,
    params: &SimParams,
    gain: f64,
) -> (Vec<WorldState>, Vec<[f64; 3]>, bool) {
    let mut states = vec![*state];
    let mut actions = Vec::new();
    let mut cur = *state;
    for _ in 0..params.max_horizon {
        if is_success(&cur, params) {
            break;
        }
        let a = expert_action(&cur, params, gain);
        actions.push(a);
        cur = super::world::step(&cur, a, params);
        states.push(cur);
    }
    (states, actions, is_success(&cur, params))
}
