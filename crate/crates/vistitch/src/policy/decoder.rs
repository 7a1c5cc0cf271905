//! Action decoder: proprioception embedding, MLP trunk, and a Gaussian
//! mixture head over 3-dimensional actions.
//!
//! The head predicts mixture logits, per-mode means, and per-mode log
//! standard deviations (clamped to a sane range before exponentiation).
//! Behavior cloning minimizes the exact mixture negative log-likelihood,
//! composed on the tape as log-softmax plus per-mode diagonal Gaussian
//! log densities combined by log-sum-exp.

use rand::Rng;
use tapegrad::{Tape, Tensor};

use crate::error::{Error, Result};

pub const ACTION_DIM: usize = 3;
pub const PROPRIO_DIM: usize = 3;
pub const PROPRIO_EMBED: usize = 16;
pub const TRUNK_WIDTH: usize = 64;
pub const LOG_STD_MIN: f64 = -6.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub prop_w: Tensor,
    pub prop_b: Tensor,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
    pub logit_w: Tensor,
    pub logit_b: Tensor,
    pub mean_w: Tensor,
    pub mean_b: Tensor,
    pub lstd_w: Tensor,
    pub lstd_b: Tensor,
}

/// Mixture parameters for one observation. `means` and `log_stds` are flat
/// `[modes * ACTION_DIM]` with mode-major layout.
#[derive(Debug, Clone)]
pub struct GmmHead {
    pub logits: Tensor,
    pub means: Tensor,
    pub log_stds: Tensor,
}

impl GmmHead {
    pub fn modes(&self) -> usize {
        self.logits.numel()
    }
}

fn kaiming(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    let mut t = Tensor::new(shape, data)?;
    t.requires_grad = true;
    Ok(t)
}

fn zeros_param(shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.requires_grad = true;
    t
}

impl DecoderParams {
    /// `rep_width` is the combined width of both slot representations.
    pub fn init(rep_width: usize, modes: usize, rng: &mut impl Rng) -> Result<DecoderParams> {
        if modes == 0 {
            return Err(Error::config("mixture needs at least one mode"));
        }
        if rep_width == 0 {
            return Err(Error::config("representation width must be positive"));
        }
        let trunk_in = rep_width + PROPRIO_EMBED;
        Ok(DecoderParams {
            prop_w: kaiming(&[PROPRIO_EMBED, PROPRIO_DIM], PROPRIO_DIM, rng)?,
            prop_b: zeros_param(&[PROPRIO_EMBED]),
            fc1_w: kaiming(&[TRUNK_WIDTH, trunk_in], trunk_in, rng)?,
            fc1_b: zeros_param(&[TRUNK_WIDTH]),
            fc2_w: kaiming(&[TRUNK_WIDTH, TRUNK_WIDTH], TRUNK_WIDTH, rng)?,
            fc2_b: zeros_param(&[TRUNK_WIDTH]),
            logit_w: kaiming(&[modes, TRUNK_WIDTH], TRUNK_WIDTH, rng)?,
            logit_b: zeros_param(&[modes]),
            mean_w: kaiming(&[modes * ACTION_DIM, TRUNK_WIDTH], TRUNK_WIDTH, rng)?,
            mean_b: zeros_param(&[modes * ACTION_DIM]),
            lstd_w: kaiming(&[modes * ACTION_DIM, TRUNK_WIDTH], TRUNK_WIDTH, rng)?,
            lstd_b: zeros_param(&[modes * ACTION_DIM]),
        })
    }

    pub fn modes(&self) -> usize {
        self.logit_w.shape[0]
    }

    /// Combined representation width this decoder expects.
    pub fn rep_width(&self) -> usize {
        self.fc1_w.shape[1] - PROPRIO_EMBED
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.prop_w,
            &self.prop_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
            &self.logit_w,
            &self.logit_b,
            &self.mean_w,
            &self.mean_b,
            &self.lstd_w,
            &self.lstd_b,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.prop_w,
            &mut self.prop_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
            &mut self.logit_w,
            &mut self.logit_b,
            &mut self.mean_w,
            &mut self.mean_b,
            &mut self.lstd_w,
            &mut self.lstd_b,
        ]
    }

    pub fn watched(&self, tape: &mut Tape) -> DecoderParams {
        DecoderParams {
            prop_w: tape.watch(&self.prop_w),
            prop_b: tape.watch(&self.prop_b),
            fc1_w: tape.watch(&self.fc1_w),
            fc1_b: tape.watch(&self.fc1_b),
            fc2_w: tape.watch(&self.fc2_w),
            fc2_b: tape.watch(&self.fc2_b),
            logit_w: tape.watch(&self.logit_w),
            logit_b: tape.watch(&self.logit_b),
            mean_w: tape.watch(&self.mean_w),
            mean_b: tape.watch(&self.mean_b),
            lstd_w: tape.watch(&self.lstd_w),
            lstd_b: tape.watch(&self.lstd_b),
        }
    }

    pub fn frozen(&self) -> DecoderParams {
        let off = |t: &Tensor| {
            let mut c = t.clone();
            c.requires_grad = false;
            c
        };
        DecoderParams {
            prop_w: off(&self.prop_w),
            prop_b: off(&self.prop_b),
            fc1_w: off(&self.fc1_w),
            fc1_b: off(&self.fc1_b),
            fc2_w: off(&self.fc2_w),
            fc2_b: off(&self.fc2_b),
            logit_w: off(&self.logit_w),
            logit_b: off(&self.logit_b),
            mean_w: off(&self.mean_w),
            mean_b: off(&self.mean_b),
            lstd_w: off(&self.lstd_w),
            lstd_b: off(&self.lstd_b),
        }
    }

    /// Maps slot representations and proprioception to mixture parameters.
    pub fn decode(
        &self,
        tape: &mut Tape,
        rep1: &Tensor,
        rep2: &Tensor,
        proprio: &Tensor,
    ) -> Result<GmmHead> {
        if proprio.numel() != PROPRIO_DIM {
            return Err(Error::dim(format!(
                "proprioception must have {PROPRIO_DIM} values, got {}",
                proprio.numel()
            )));
        }
        if rep1.numel() + rep2.numel() != self.rep_width() {
            return Err(Error::dim(format!(
                "decoder expects combined representation width {}, got {} + {}",
                self.rep_width(),
                rep1.numel(),
                rep2.numel()
            )));
        }
        let pe = tape.affine(&self.prop_w, proprio, &self.prop_b)?;
        let pr = tape.relu(&pe)?;
        let x = tape.concat(&[rep1, rep2, &pr])?;
        let a1 = tape.affine(&self.fc1_w, &x, &self.fc1_b)?;
        let h1 = tape.relu(&a1)?;
        let a2 = tape.affine(&self.fc2_w, &h1, &self.fc2_b)?;
        let h2 = tape.relu(&a2)?;
        let logits = tape.affine(&self.logit_w, &h2, &self.logit_b)?;
        let means = tape.affine(&self.mean_w, &h2, &self.mean_b)?;
        let ls = tape.affine(&self.lstd_w, &h2, &self.lstd_b)?;
        let log_stds = tape.clamp(&ls, LOG_STD_MIN, LOG_STD_MAX)?;
        Ok(GmmHead {
            logits,
            means,
            log_stds,
        })
    }
}

/// Exact mixture negative log-likelihood of `action` under `head`,
/// composed on the tape:
/// `-logsumexp_m(log_softmax(logits)_m + sum_d logN(a_d; mu_md, sigma_md))`.
pub fn gmm_nll(tape: &mut Tape, head: &GmmHead, action: &[f64; ACTION_DIM]) -> Result<Tensor> {
    let modes = head.modes();
    if head.means.numel() != modes * ACTION_DIM || head.log_stds.numel() != modes * ACTION_DIM {
        return Err(Error::dim(format!(
            "mixture head inconsistent: {} logits, {} means, {} log stds",
            modes,
            head.means.numel(),
            head.log_stds.numel()
        )));
    }
    let a = Tensor::vector(action.to_vec());
    let lse = tape.logsumexp(&head.logits)?;
    let logw = tape.sub(&head.logits, &lse)?;
    let mut per_mode = Vec::with_capacity(modes);
    for m in 0..modes {
        let mu = tape.slice(&head.means, m * ACTION_DIM, ACTION_DIM)?;
        let ls = tape.slice(&head.log_stds, m * ACTION_DIM, ACTION_DIM)?;
        let diff = tape.sub(&a, &mu)?;
        let sq = tape.square(&diff)?;
        let inv_var = {
            let neg2 = tape.mulc(&ls, -2.0)?;
            tape.exp(&neg2)?
        };
        let weighted = tape.mul(&sq, &inv_var)?;
        let quad = tape.sum(&weighted)?;
        let ls_sum = tape.sum(&ls)?;
        let half_quad = tape.mulc(&quad, -0.5)?;
        let no_norm = tape.sub(&half_quad, &ls_sum)?;
        let log_density = tape.addc(&no_norm, -0.5 * ACTION_DIM as f64 * LN_2PI)?;
        per_mode.push(log_density);
    }
    let refs: Vec<&Tensor> = per_mode.iter().collect();
    let stacked = tape.stack(&refs)?;
    let joint = tape.add(&logw, &stacked)?;
    let log_lik = tape.logsumexp(&joint)?;
    Ok(tape.neg(&log_lik)?)
}

/// Mean of the highest-logit mode (lowest index on ties): the
/// deterministic evaluation action.
pub fn mean_action(head: &GmmHead) -> [f64; ACTION_DIM] {
    let mut best = 0;
    for m in 1..head.modes() {
        if head.logits.data[m] > head.logits.data[best] {
            best = m;
        }
    }
    let mu = &head.means.data[best * ACTION_DIM..(best + 1) * ACTION_DIM];
    [mu[0], mu[1], mu[2]]
}

/// Samples a mode from the logits softmax, then a diagonal Gaussian
/// sample within it.
pub fn sample_action(head: &GmmHead, rng: &mut impl Rng) -> [f64; ACTION_DIM] {
    let modes = head.modes();
    let max = head
        .logits
        .data
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = head.logits.data.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut mode = modes - 1;
    for (m, &w) in weights.iter().enumerate() {
        if pick < w {
            mode = m;
            break;
        }
        pick -= w;
    }
    let mut out = [0.0; ACTION_DIM];
    for d in 0..ACTION_DIM {
        let mu = head.means.data[mode * ACTION_DIM + d];
        let sigma = head.log_stds.data[mode * ACTION_DIM + d].exp();
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let n = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        out[d] = mu + sigma * n;
    }
    out
}

/// Reference mixture NLL computed in plain probability space: softmax
/// weights times products of Gaussian densities, then a bare logarithm.
/// Numerically cruder than the tape version but independently derived;
/// used as the oracle in tests.
pub fn gmm_nll_direct(
    logits: &[f64],
    means: &[f64],
    log_stds: &[f64],
    action: &[f64; ACTION_DIM],
) -> f64 {
    let modes = logits.len();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut p = 0.0;
    for m in 0..modes {
        let mut density = 1.0;
        for d in 0..ACTION_DIM {
            let mu = means[m * ACTION_DIM + d];
            let sigma = log_stds[m * ACTION_DIM + d].exp();
            let zsc = (action[d] - mu) / sigma;
            density *= (-0.5 * zsc * zsc).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        }
        p += weights[m] / total * density;
    }
    -p.ln()
}
