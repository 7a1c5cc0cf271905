//! Cameras: rasterization and the corruption pipeline.
//!
//! A camera maps world state to a `[C, H, W]` image tensor with values in
//! [0, 1]. Rendering is painter's-algorithm point sampling: for each pixel
//! center, the last scene element covering it wins (background, goal line,
//! object, end effector, fingers). Corruptions are applied in the listed
//! order, each followed by a clamp to [0, 1]. The only stochastic
//! corruption is `Noise`; its stream is derived from the camera's
//! `noise_seed` and the frame's (episode, step), so any frame regenerates
//! identically in isolation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tapegrad::Tensor;

use crate::error::{Error, Result};
use crate::rng::{salt, stream};

use super::world::{SimParams, Task, WorldState};

/// Viewpoint of a camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CameraKind {
    /// Fixed axis-aligned window `[x0, x1] x [y0, y1]` in table coordinates.
    Fixed { x0: f64, y0: f64, x1: f64, y1: f64 },
    /// Square window of the given half-width centered on the end effector.
    Hand { half_width: f64 },
}

/// Image corner, used to anchor the mask corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    UpperLeft,
    UpperRight,
    LowerLeft,
    LowerRight,
}

/// One step of the corruption pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Corruption {
    /// Zeroes a corner-anchored block of `round(fraction * extent)` rows
    /// and columns.
    Mask { corner: Corner, fraction: f64 },
    /// Crops the central `1/factor` region and rescales it to full size
    /// with bilinear sampling. `factor` must be >= 1.
    Zoom { factor: f64 },
    /// Separable Gaussian blur with the given sigma and kernel radius,
    /// replicating edge pixels.
    Blur { sigma: f64, radius: usize },
    /// Adds zero-mean Gaussian noise with the given standard deviation.
    Noise { sigma: f64 },
    /// Radial distortion: the sample for normalized radius `r` is taken at
    /// radius `r * (1 + strength * r^2)`; the image center is a fixed point.
    Fisheye { strength: f64 },
    /// Affine intensity change `p -> gain * p + bias`.
    Lighting { gain: f64, bias: f64 },
}

/// Complete camera description. Two states render identically under equal
/// configs, so equality of configs is the sharing criterion between
/// environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub kind: CameraKind,
    pub height: usize,
    pub width: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    pub corruptions: Vec<Corruption>,
    /// Root seed for this camera's noise streams.
    pub noise_seed: u64,
}

/// Identifies one of the two camera positions feeding a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    One,
    Two,
}

impl Slot {
    pub const BOTH: [Slot; 2] = [Slot::One, Slot::Two];

    pub fn index(self) -> usize {
        match self {
            Slot::One => 0,
            Slot::Two => 1,
        }
    }
}

impl std::fmt::Display for Slot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

/// A pair of cameras observing the same scene; slot 1 feeds the first
/// encoder, slot 2 the second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvDescriptor {
    pub camera1: CameraConfig,
    pub camera2: CameraConfig,
}

impl EnvDescriptor {
    pub fn camera(&self, slot: Slot) -> &CameraConfig {
        match slot {
            Slot::One => &self.camera1,
            Slot::Two => &self.camera2,
        }
    }

    /// The transfer environment: slot 1 from `env1`, slot 2 from `env2`.
    pub fn transfer(env1: &EnvDescriptor, env2: &EnvDescriptor) -> EnvDescriptor {
        EnvDescriptor {
            camera1: env1.camera1.clone(),
            camera2: env2.camera2.clone(),
        }
    }
}

const EE_RADIUS: f64 = 0.035;
const GOAL_HALF: f64 = 0.008;
const FINGER_BASE: f64 = 0.015;
const FINGER_SPAN: f64 = 0.035;
const FINGER_HALF_W: f64 = 0.008;
const FINGER_HALF_H: f64 = 0.03;

const GRAY_BG: f64 = 0.12;
const GRAY_GOAL: f64 = 0.35;
const GRAY_OBJECT: f64 = 0.55;
const GRAY_EE: f64 = 0.85;
const GRAY_FINGER: f64 = 1.0;

const RGB_BG: [f64; 3] = [0.10, 0.10, 0.13];
const RGB_GOAL: [f64; 3] = [0.20, 0.70, 0.30];
const RGB_OBJECT: [f64; 3] = [0.85, 0.25, 0.20];
const RGB_EE: [f64; 3] = [0.25, 0.45, 0.90];
const RGB_FINGER: [f64; 3] = [0.95, 0.95, 0.95];

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::config("camera resolution must be at least 2x2"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::config(format!(
                "unsupported channel count {} (expected 1 or 3)",
                self.channels
            )));
        }
        if let CameraKind::Fixed { x0, y0, x1, y1 } = self.kind {
            if !(x1 > x0 && y1 > y0) {
                return Err(Error::config("fixed camera window is empty"));
            }
        }
        if let CameraKind::Hand { half_width } = self.kind {
            if half_width <= 0.0 {
                return Err(Error::config("hand camera half-width must be positive"));
            }
        }
        for c in &self.corruptions {
            match *c {
                Corruption::Mask { fraction, .. } => {
                    if !(0.0..=1.0).contains(&fraction) {
                        return Err(Error::config("mask fraction must be in [0, 1]"));
                    }
                }
                Corruption::Zoom { factor } => {
                    if factor < 1.0 {
                        return Err(Error::config("zoom factor must be >= 1"));
                    }
                }
                Corruption::Blur { sigma, .. } => {
                    if sigma <= 0.0 {
                        return Err(Error::config("blur sigma must be positive"));
                    }
                }
                Corruption::Noise { sigma } => {
                    if sigma < 0.0 {
                        return Err(Error::config("noise sigma must be nonnegative"));
                    }
                }
                Corruption::Fisheye { .. } | Corruption::Lighting { .. } => {}
            }
        }
        Ok(())
    }

    fn window(&self, state: &WorldState) -> (f64, f64, f64, f64) {
        match self.kind {
            CameraKind::Fixed { x0, y0, x1, y1 } => (x0, y0, x1, y1),
            CameraKind::Hand { half_width } => (
                state.ee[0] - half_width,
                state.ee[1] - half_width,
                state.ee[0] + half_width,
                state.ee[1] + half_width,
            ),
        }
    }
}

fn color_for(channels: usize, layer: usize) -> [f64; 3] {
    if channels == 1 {
        let g = [GRAY_BG, GRAY_GOAL, GRAY_OBJECT, GRAY_EE, GRAY_FINGER][layer];
        [g, g, g]
    } else {
        [RGB_BG, RGB_GOAL, RGB_OBJECT, RGB_EE, RGB_FINGER][layer]
    }
}

/// Rasterizes `state` without corruptions into a `[C, H, W]` pixel buffer.
fn rasterize(state: &WorldState, cam: &CameraConfig, params: &SimParams) -> Vec<f64> {
    let (h, w, c) = (cam.height, cam.width, cam.channels);
    let (x0, y0, x1, y1) = cam.window(state);
    let sx = (x1 - x0) / w as f64;
    let sy = (y1 - y0) / h as f64;

    let fingers = [
        state.ee[0] - (FINGER_BASE + FINGER_SPAN * state.gripper),
        state.ee[0] + (FINGER_BASE + FINGER_SPAN * state.gripper),
    ];

    let mut pixels = vec![0.0; c * h * w];
    for i in 0..h {
        // Row 0 is the top of the window (largest y).
        let py = y1 - (i as f64 + 0.5) * sy;
        for j in 0..w {
            let px = x0 + (j as f64 + 0.5) * sx;

            let mut layer = 0;
            if state.task == Task::Push && (px - params.goal_x).abs() <= GOAL_HALF {
                layer = 1;
            }
            if (px - state.object[0]).abs() <= params.object_half
                && (py - state.object[1]).abs() <= params.object_half
            {
                layer = 2;
            }
            let dx = px - state.ee[0];
            let dy = py - state.ee[1];
            if dx * dx + dy * dy <= EE_RADIUS * EE_RADIUS {
                layer = 3;
            }
            if (py - state.ee[1]).abs() <= FINGER_HALF_H
                && ((px - fingers[0]).abs() <= FINGER_HALF_W
                    || (px - fingers[1]).abs() <= FINGER_HALF_W)
            {
                layer = 4;
            }

            let color = color_for(c, layer);
            for ch in 0..c {
                pixels[ch * h * w + i * w + j] = color[ch];
            }
        }
    }
    pixels
}

/// Bilinear sample of one channel at continuous pixel coordinates, with
/// edge clamping. Integer coordinates return the pixel value exactly.
fn bilinear(chan: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let yf = y.floor();
    let xf = x.floor();
    let ty = y - yf;
    let tx = x - xf;
    let cl = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
    let y0 = cl(yf, h);
    let y1 = cl(yf + 1.0, h);
    let x0 = cl(xf, w);
    let x1 = cl(xf + 1.0, w);
    (1.0 - ty) * ((1.0 - tx) * chan[y0 * w + x0] + tx * chan[y0 * w + x1])
        + ty * ((1.0 - tx) * chan[y1 * w + x0] + tx * chan[y1 * w + x1])
}

fn clamp_unit(pixels: &mut [f64]) {
    for p in pixels.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
}

fn apply_corruption(
    pixels: &mut Vec<f64>,
    c: usize,
    h: usize,
    w: usize,
    corruption: &Corruption,
    rng: &mut impl Rng,
) {
    match *corruption {
        Corruption::Mask { corner, fraction } => {
            let rows = ((fraction * h as f64).round() as usize).min(h);
            let cols = ((fraction * w as f64).round() as usize).min(w);
            let (r0, c0) = match corner {
                Corner::UpperLeft => (0, 0),
                Corner::UpperRight => (0, w - cols),
                Corner::LowerLeft => (h - rows, 0),
                Corner::LowerRight => (h - rows, w - cols),
            };
            for ch in 0..c {
                for i in r0..r0 + rows {
                    for j in c0..c0 + cols {
                        pixels[ch * h * w + i * w + j] = 0.0;
                    }
                }
            }
        }
        Corruption::Zoom { factor } => {
            let cy = (h as f64 - 1.0) / 2.0;
            let cx = (w as f64 - 1.0) / 2.0;
            let src = pixels.clone();
            for ch in 0..c {
                let chan = &src[ch * h * w..(ch + 1) * h * w];
                for i in 0..h {
                    let sy = cy + (i as f64 - cy) / factor;
                    for j in 0..w {
                        let sx = cx + (j as f64 - cx) / factor;
                        pixels[ch * h * w + i * w + j] = bilinear(chan, h, w, sy, sx);
                    }
                }
            }
        }
        Corruption::Blur { sigma, radius } => {
            let mut weights = Vec::with_capacity(2 * radius + 1);
            for k in -(radius as isize)..=(radius as isize) {
                weights.push((-(k * k) as f64 / (2.0 * sigma * sigma)).exp());
            }
            let total: f64 = weights.iter().sum();
            for wgt in weights.iter_mut() {
                *wgt /= total;
            }
            let clamp_i = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
            for ch in 0..c {
                let base = ch * h * w;
                // Horizontal pass.
                let src: Vec<f64> = pixels[base..base + h * w].to_vec();
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = 0.0;
                        for (wi, k) in (-(radius as isize)..=(radius as isize)).enumerate() {
                            acc += weights[wi] * src[i * w + clamp_i(j as isize + k, w)];
                        }
                        pixels[base + i * w + j] = acc;
                    }
                }
                // Vertical pass.
                let src: Vec<f64> = pixels[base..base + h * w].to_vec();
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = 0.0;
                        for (wi, k) in (-(radius as isize)..=(radius as isize)).enumerate() {
                            acc += weights[wi] * src[clamp_i(i as isize + k, h) * w + j];
                        }
                        pixels[base + i * w + j] = acc;
                    }
                }
            }
        }
        Corruption::Noise { sigma } => {
            // Box-Muller on the camera's frame stream; two uniforms per
            // normal draw, consumed in pixel order.
            for p in pixels.iter_mut() {
                let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.random_range(0.0..1.0);
                let n = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                *p += sigma * n;
            }
        }
        Corruption::Fisheye { strength } => {
            let cy = (h as f64 - 1.0) / 2.0;
            let cx = (w as f64 - 1.0) / 2.0;
            let ry = cy.max(0.5);
            let rx = cx.max(0.5);
            let src = pixels.clone();
            for ch in 0..c {
                let chan = &src[ch * h * w..(ch + 1) * h * w];
                for i in 0..h {
                    let ny = (i as f64 - cy) / ry;
                    for j in 0..w {
                        let nx = (j as f64 - cx) / rx;
                        let scale = 1.0 + strength * (nx * nx + ny * ny);
                        let sy = cy + (i as f64 - cy) * scale;
                        let sx = cx + (j as f64 - cx) * scale;
                        pixels[ch * h * w + i * w + j] = bilinear(chan, h, w, sy, sx);
                    }
                }
            }
        }
        Corruption::Lighting { gain, bias } => {
            for p in pixels.iter_mut() {
                *p = gain * *p + bias;
            }
        }
    }
    clamp_unit(pixels);
}

/// Renders `state` through `cam` at frame `(episode, step)` and returns a
/// `[C, H, W]` tensor in [0, 1]. The frame indices only matter for noise;
/// corruption-free cameras render identically for any frame.
pub fn render(
    state: &WorldState,
    cam: &CameraConfig,
    params: &SimParams,
    episode: u64,
    step: u32,
) -> Result<Tensor> {
    cam.validate()?;
    let mut pixels = rasterize(state, cam, params);
    if !cam.corruptions.is_empty() {
        let mut rng = stream(cam.noise_seed, &[salt::NOISE, episode, step as u64]);
        for corruption in &cam.corruptions {
            apply_corruption(
                &mut pixels,
                cam.channels,
                cam.height,
                cam.width,
                corruption,
                &mut rng,
            );
        }
    }
    Ok(Tensor::new(
        &[cam.channels, cam.height, cam.width],
        pixels,
    )?)
}
