//! Canonical environment pairs for the transfer experiments.
//!
//! Every experiment uses three environments built from two camera pairs:
//! the source pair `env1`, a pair `env2` whose slot-2 camera differs (a
//! corruption or a viewpoint shift), and the transfer pair `env3` composed
//! of `env1`'s slot-1 camera and `env2`'s slot-2 camera. Slot-1 cameras
//! are identical across all three, which is what makes slot-2 encoder
//! exchange the only thing under test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::mix;

use super::camera::{CameraConfig, CameraKind, Corner, Corruption, EnvDescriptor};

/// Named slot-2 perturbation applied in `env2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvPreset {
    Mask,
    Zoom,
    Blur,
    Noise,
    Fisheye,
    Lighting,
    /// Viewpoint shift instead of a corruption.
    Position,
    /// No perturbation at all: the second environment equals the first.
    /// Useful as a sanity baseline where stitching must be an identity.
    Identity,
}

impl EnvPreset {
    pub const ALL: [EnvPreset; 8] = [
        EnvPreset::Mask,
        EnvPreset::Zoom,
        EnvPreset::Blur,
        EnvPreset::Noise,
        EnvPreset::Fisheye,
        EnvPreset::Lighting,
        EnvPreset::Position,
        EnvPreset::Identity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EnvPreset::Mask => "mask",
            EnvPreset::Zoom => "zoom",
            EnvPreset::Blur => "blur",
            EnvPreset::Noise => "noise",
            EnvPreset::Fisheye => "fisheye",
            EnvPreset::Lighting => "lighting",
            EnvPreset::Position => "position",
            EnvPreset::Identity => "identity",
        }
    }

    pub fn parse(name: &str) -> Result<EnvPreset> {
        EnvPreset::ALL
            .iter()
            .copied()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::config(format!("unknown environment preset '{name}'")))
    }
}

/// Resolution and channel count shared by all preset cameras.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresetShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for PresetShape {
    fn default() -> Self {
        PresetShape {
            height: 24,
            width: 24,
            channels: 1,
        }
    }
}

/// Slot-1 view: the full table.
fn slot1(shape: PresetShape, noise_seed: u64) -> CameraConfig {
    CameraConfig {
        kind: CameraKind::Fixed {
            x0: 0.0,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
        },
        height: shape.height,
        width: shape.width,
        channels: shape.channels,
        corruptions: vec![],
        noise_seed,
    }
}

/// Slot-2 base view: a 0.9-wide window anchored at the origin corner.
fn slot2_base(shape: PresetShape, noise_seed: u64) -> CameraConfig {
    CameraConfig {
        kind: CameraKind::Fixed {
            x0: 0.0,
            y0: 0.0,
            x1: 0.9,
            y1: 0.9,
        },
        height: shape.height,
        width: shape.width,
        channels: shape.channels,
        corruptions: vec![],
        noise_seed,
    }
}

fn preset_corruption(preset: EnvPreset) -> Option<Corruption> {
    match preset {
        EnvPreset::Mask => Some(Corruption::Mask {
            corner: Corner::UpperLeft,
            fraction: 0.25,
        }),
        EnvPreset::Zoom => Some(Corruption::Zoom { factor: 1.6 }),
        EnvPreset::Blur => Some(Corruption::Blur {
            sigma: 1.2,
            radius: 3,
        }),
        EnvPreset::Noise => Some(Corruption::Noise { sigma: 0.08 }),
        EnvPreset::Fisheye => Some(Corruption::Fisheye { strength: 0.5 }),
        EnvPreset::Lighting => Some(Corruption::Lighting {
            gain: 0.55,
            bias: 0.3,
        }),
        EnvPreset::Position | EnvPreset::Identity => None,
    }
}

/// Builds `(env1, env2, env3)` for a preset. `seed` derives the cameras'
/// noise seeds; cameras shared between environments share seeds, so the
/// transfer environment invariant `env3 = (env1 slot 1, env2 slot 2)`
/// holds by construction and by equality.
pub fn build_envs(
    preset: EnvPreset,
    shape: PresetShape,
    seed: u64,
) -> (EnvDescriptor, EnvDescriptor, EnvDescriptor) {
    let s1 = mix(seed, &[100]);
    let s2 = mix(seed, &[200]);
    let s2b = mix(seed, &[201]);

    let cam1 = slot1(shape, s1);
    let cam2_clean = slot2_base(shape, s2);
    let cam2_shifted = match preset_corruption(preset) {
        // Same config including the noise seed: the environments are
        // indistinguishable by construction.
        None if preset == EnvPreset::Identity => cam2_clean.clone(),
        Some(corruption) => {
            let mut c = slot2_base(shape, s2b);
            c.corruptions = vec![corruption];
            c
        }
        None => CameraConfig {
            // Same window size, shifted toward the opposite corner.
            kind: CameraKind::Fixed {
                x0: 0.1,
                y0: 0.1,
                x1: 1.0,
                y1: 1.0,
            },
            ..slot2_base(shape, s2b)
        },
    };

    let env1 = EnvDescriptor {
        camera1: cam1.clone(),
        camera2: cam2_clean,
    };
    let env2 = EnvDescriptor {
        camera1: cam1,
        camera2: cam2_shifted,
    };
    let env3 = EnvDescriptor::transfer(&env1, &env2);
    (env1, env2, env3)
}
