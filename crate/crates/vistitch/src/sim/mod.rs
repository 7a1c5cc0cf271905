//! Deterministic planar manipulation simulator with scripted experts,
//! cameras, corruptions, datasets, and trajectory replay.

pub mod camera;
pub mod dataset;
pub mod expert;
pub mod presets;
pub mod replay;
pub mod world;

pub use camera::{render, CameraConfig, CameraKind, Corner, Corruption, EnvDescriptor, Slot};
pub use dataset::{
    collect_dataset, export_jsonl, load_dataset, proprio_of, save_dataset, CollectOptions, Dataset,
    Trajectory, TrajectoryStep,
};
pub use expert::{expert_action, run_expert};
pub use presets::{build_envs, EnvPreset, PresetShape};
pub use replay::replay_dataset;
pub use world::{is_success, sample_initial, step, SimParams, Task, WorldState};
