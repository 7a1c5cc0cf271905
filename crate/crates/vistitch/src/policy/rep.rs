//! Representation layer between encoder and decoder.
//!
//! In relative mode the decoder never sees raw latents: each latent is
//! re-expressed as its similarity to a fixed set of anchor embeddings,
//! centered on the anchor mean. Because cosine similarity is invariant to
//! any shared orthogonal transform, positive rescaling, or translation of
//! the latent space, two encoders trained independently produce compatible
//! relative codes as long as their anchors correspond — which is what
//! makes encoder exchange work. `Plain` mode bypasses the layer and is
//! deliberately not invariant.
//!
//! The multi-similarity variants aggregate cosine, negated L1, negated L2,
//! and negated L-infinity channels: linearly with fixed weights, or through
//! a small trained per-channel map (layer norm, linear, tanh, sum).

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tapegrad::{SimAnchors, SimKind, Tape, Tensor};

use crate::error::{Error, Result};

use super::encoder::EncoderParams;

/// How latents are presented to the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepMode {
    /// Raw latents, no anchor mediation.
    Plain,
    /// Cosine similarity to each anchor, centered on the anchor mean.
    Relative,
    /// Fixed-weight sum of four similarity channels.
    MultiSimLinear,
    /// Trained per-channel maps over the four similarity channels.
    MultiSimNonlinear,
}

impl RepMode {
    /// Width of the representation handed to the decoder for one slot.
    pub fn rep_width(self, latent_dim: usize, anchor_count: usize) -> usize {
        match self {
            RepMode::Plain => latent_dim,
            _ => anchor_count,
        }
    }

    pub fn uses_anchors(self) -> bool {
        self != RepMode::Plain
    }

    pub fn has_trained_maps(self) -> bool {
        self == RepMode::MultiSimNonlinear
    }
}

/// Similarity channels and their fixed linear-aggregation weights. The
/// non-cosine channels are normalized by dimension inside the autodiff op
/// (L1 by D, L2 by sqrt(D)), keeping the channels on comparable scales.
pub const SIM_CHANNELS: [(SimKind, f64); 4] = [
    (SimKind::Cos, 0.8),
    (SimKind::L1, 0.05),
    (SimKind::L2, 0.1),
    (SimKind::LInf, 0.05),
];

const LAYER_NORM_EPS: f64 = 1e-5;

/// Anchor images plus cached embeddings under one specific encoder.
///
/// The cache is the load-bearing invariant: similarity is always computed
/// against embeddings produced by the encoder that owns this set, so
/// `refresh` must be called whenever that encoder's parameters change
/// (training does so every epoch; stitching and checkpoint loading do it
/// on assembly).
#[derive(Debug, Clone)]
pub struct AnchorSet {
    images: Vec<Tensor>,
    cache: Option<Cached>,
}

#[derive(Debug, Clone)]
struct Cached {
    embeddings: Vec<f64>,
    dim: usize,
    sim: Arc<SimAnchors>,
}

impl AnchorSet {
    pub fn new(images: Vec<Tensor>) -> AnchorSet {
        AnchorSet {
            images,
            cache: None,
        }
    }

    /// Test/analysis constructor: a set with no backing images whose
    /// "embeddings" are given directly.
    pub fn from_embeddings(rows: &[f64], count: usize, dim: usize) -> Result<AnchorSet> {
        Ok(AnchorSet {
            images: Vec::new(),
            cache: Some(Cached {
                embeddings: rows.to_vec(),
                dim,
                sim: SimAnchors::new(rows, count, dim)?,
            }),
        })
    }

    pub fn len(&self) -> usize {
        if self.images.is_empty() {
            self.cache.as_ref().map_or(0, |c| {
                if c.dim == 0 {
                    0
                } else {
                    c.embeddings.len() / c.dim
                }
            })
        } else {
            self.images.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn is_refreshed(&self) -> bool {
        self.cache.is_some()
    }

    /// Drops the cached embeddings (e.g. after swapping parameter values
    /// in place).
    pub fn invalidate(&mut self) {
        self.cache = None;
    }

    /// Re-embeds every anchor image with `encoder` and rebuilds the
    /// similarity tables.
    pub fn refresh(&mut self, encoder: &EncoderParams) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::config(
                "anchor set has no images to refresh; embedding-only sets are fixed",
            ));
        }
        let dim = encoder.latent_dim();
        let mut rows = Vec::with_capacity(self.images.len() * dim);
        let mut tape = Tape::inference();
        for img in &self.images {
            let z = encoder.encode(&mut tape, img)?;
            rows.extend_from_slice(&z.data);
        }
        let sim = SimAnchors::new(&rows, self.images.len(), dim)?;
        self.cache = Some(Cached {
            embeddings: rows,
            dim,
            sim,
        });
        Ok(())
    }

    pub fn sim_anchors(&self) -> Result<&Arc<SimAnchors>> {
        self.cache
            .as_ref()
            .map(|c| &c.sim)
            .ok_or_else(|| Error::config("anchor set used before refresh"))
    }

    /// Flat `count x dim` anchor embedding matrix.
    pub fn embeddings(&self) -> Result<(&[f64], usize)> {
        self.cache
            .as_ref()
            .map(|c| (c.embeddings.as_slice(), c.dim))
            .ok_or_else(|| Error::config("anchor set used before refresh"))
    }
}

/// Trained per-channel maps for `MultiSimNonlinear`: for each similarity
/// channel, layer norm, a square linear map over anchors, tanh; channels
/// are summed. These parameters belong to the encoder side of the
/// interface and travel with the encoder when policies are stitched.
#[derive(Debug, Clone)]
pub struct NonlinearRep {
    /// One `[A, A]` weight and `[A]` bias per entry of [`SIM_CHANNELS`].
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl NonlinearRep {
    pub fn init(anchor_count: usize, rng: &mut impl Rng) -> Result<NonlinearRep> {
        if anchor_count == 0 {
            return Err(Error::config("anchor count must be positive"));
        }
        let bound = (6.0 / anchor_count as f64).sqrt();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for _ in SIM_CHANNELS {
            let data: Vec<f64> = (0..anchor_count * anchor_count)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let mut w = Tensor::new(&[anchor_count, anchor_count], data)?;
            w.requires_grad = true;
            weights.push(w);
            let mut b = Tensor::zeros(&[anchor_count]);
            b.requires_grad = true;
            biases.push(b);
        }
        Ok(NonlinearRep { weights, biases })
    }

    pub fn anchor_count(&self) -> usize {
        self.weights[0].shape[0]
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.weights.iter().chain(self.biases.iter()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .collect()
    }

    pub fn watched(&self, tape: &mut Tape) -> NonlinearRep {
        NonlinearRep {
            weights: self.weights.iter().map(|t| tape.watch(t)).collect(),
            biases: self.biases.iter().map(|t| tape.watch(t)).collect(),
        }
    }

    pub fn frozen(&self) -> NonlinearRep {
        let off = |t: &Tensor| {
            let mut c = t.clone();
            c.requires_grad = false;
            c
        };
        NonlinearRep {
            weights: self.weights.iter().map(off).collect(),
            biases: self.biases.iter().map(off).collect(),
        }
    }
}

/// Applies the representation layer for one slot.
pub fn rep_forward(
    tape: &mut Tape,
    z: &Tensor,
    mode: RepMode,
    anchors: &AnchorSet,
    nonlinear: Option<&NonlinearRep>,
) -> Result<Tensor> {
    match mode {
        RepMode::Plain => Ok(z.clone()),
        RepMode::Relative => {
            let anchors = anchors.sim_anchors()?;
            Ok(tape.sim(z, SimKind::Cos, anchors)?)
        }
        RepMode::MultiSimLinear => {
            let anchors = anchors.sim_anchors()?;
            let mut acc: Option<Tensor> = None;
            for (kind, weight) in SIM_CHANNELS {
                let channel = tape.sim(z, kind, anchors)?;
                let scaled = tape.mulc(&channel, weight)?;
                acc = Some(match acc {
                    None => scaled,
                    Some(prev) => tape.add(&prev, &scaled)?,
                });
            }
            Ok(acc.expect("SIM_CHANNELS is non-empty"))
        }
        RepMode::MultiSimNonlinear => {
            let nl = nonlinear.ok_or_else(|| {
                Error::config("nonlinear aggregation selected but no channel maps provided")
            })?;
            if nl.anchor_count() != anchors.len() {
                return Err(Error::dim(format!(
                    "channel maps sized for {} anchors, set has {}",
                    nl.anchor_count(),
                    anchors.len()
                )));
            }
            let sim_anchors = anchors.sim_anchors()?;
            let mut acc: Option<Tensor> = None;
            for (i, (kind, _)) in SIM_CHANNELS.iter().enumerate() {
                let channel = tape.sim(z, *kind, sim_anchors)?;
                let normed = tape.layer_norm(&channel, LAYER_NORM_EPS)?;
                let mapped = tape.affine(&nl.weights[i], &normed, &nl.biases[i])?;
                let squashed = tape.tanh(&mapped)?;
                acc = Some(match acc {
                    None => squashed,
                    Some(prev) => tape.add(&prev, &squashed)?,
                });
            }
            Ok(acc.expect("SIM_CHANNELS is non-empty"))
        }
    }
}
