//! Modular visuomotor policies: two image encoders, a representation
//! layer per slot, and a shared action decoder.
//!
//! The slot boundary is the module seam. Everything specific to one
//! camera (encoder weights, its anchor set, and in nonlinear mode its
//! channel maps) lives on that slot and travels together when a policy is
//! re-assembled from parts; [`Policy::stitch`] swaps one slot's vision
//! stack between policies without touching the decoder.

pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod rep;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tapegrad::{Tape, Tensor};

use crate::error::{Error, Result};
use crate::rng::{salt, stream};
use crate::sim::Slot;

pub use checkpoint::{load_policy, save_policy};
pub use decoder::{
    gmm_nll, gmm_nll_direct, mean_action, sample_action, DecoderParams, GmmHead, ACTION_DIM,
};
pub use encoder::EncoderParams;
pub use rep::{rep_forward, AnchorSet, NonlinearRep, RepMode, SIM_CHANNELS};

/// Structural hyperparameters of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub image_channels: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub latent_dim: usize,
    pub anchor_count: usize,
    pub gmm_modes: usize,
    pub rep_mode: RepMode,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            image_channels: 1,
            image_height: 24,
            image_width: 24,
            latent_dim: 32,
            anchor_count: 32,
            gmm_modes: 2,
            rep_mode: RepMode::Relative,
        }
    }
}

impl PolicyConfig {
    /// Representation width of one slot as seen by the decoder.
    pub fn slot_width(&self) -> usize {
        self.rep_mode.rep_width(self.latent_dim, self.anchor_count)
    }

    pub fn validate(&self) -> Result<()> {
        EncoderParams::check_image_shape(self.image_channels, self.image_height, self.image_width)?;
        if self.latent_dim == 0 || self.gmm_modes == 0 {
            return Err(Error::config("latent dimension and mode count must be positive"));
        }
        if self.rep_mode.uses_anchors() && self.anchor_count == 0 {
            return Err(Error::config("anchor-based representations need anchors"));
        }
        Ok(())
    }
}

/// All trainable parameters of a policy.
#[derive(Debug, Clone)]
pub struct PolicyNets {
    pub encoder1: EncoderParams,
    pub encoder2: EncoderParams,
    pub nonlinear1: Option<NonlinearRep>,
    pub nonlinear2: Option<NonlinearRep>,
    pub decoder: DecoderParams,
}

impl PolicyNets {
    fn init(config: &PolicyConfig, rng: &mut impl Rng) -> Result<PolicyNets> {
        let encoder1 = EncoderParams::init(
            config.image_channels,
            config.image_height,
            config.image_width,
            config.latent_dim,
            rng,
        )?;
        let encoder2 = EncoderParams::init(
            config.image_channels,
            config.image_height,
            config.image_width,
            config.latent_dim,
            rng,
        )?;
        let (nonlinear1, nonlinear2) = if config.rep_mode.has_trained_maps() {
            (
                Some(NonlinearRep::init(config.anchor_count, rng)?),
                Some(NonlinearRep::init(config.anchor_count, rng)?),
            )
        } else {
            (None, None)
        };
        let decoder = DecoderParams::init(2 * config.slot_width(), config.gmm_modes, rng)?;
        Ok(PolicyNets {
            encoder1,
            encoder2,
            nonlinear1,
            nonlinear2,
            decoder,
        })
    }

    pub fn encoder(&self, slot: Slot) -> &EncoderParams {
        match slot {
            Slot::One => &self.encoder1,
            Slot::Two => &self.encoder2,
        }
    }

    pub fn nonlinear(&self, slot: Slot) -> Option<&NonlinearRep> {
        match slot {
            Slot::One => self.nonlinear1.as_ref(),
            Slot::Two => self.nonlinear2.as_ref(),
        }
    }

    /// Every trainable tensor in fixed order: encoder 1, encoder 2, their
    /// channel maps (if any), decoder. Optimizer state and checkpoints
    /// index into this order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = self.encoder1.params();
        out.extend(self.encoder2.params());
        if let Some(nl) = &self.nonlinear1 {
            out.extend(nl.params());
        }
        if let Some(nl) = &self.nonlinear2 {
            out.extend(nl.params());
        }
        out.extend(self.decoder.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder1.params_mut();
        out.extend(self.encoder2.params_mut());
        if let Some(nl) = &mut self.nonlinear1 {
            out.extend(nl.params_mut());
        }
        if let Some(nl) = &mut self.nonlinear2 {
            out.extend(nl.params_mut());
        }
        out.extend(self.decoder.params_mut());
        out
    }

    pub fn watched(&self, tape: &mut Tape) -> PolicyNets {
        PolicyNets {
            encoder1: self.encoder1.watched(tape),
            encoder2: self.encoder2.watched(tape),
            nonlinear1: self.nonlinear1.as_ref().map(|nl| nl.watched(tape)),
            nonlinear2: self.nonlinear2.as_ref().map(|nl| nl.watched(tape)),
            decoder: self.decoder.watched(tape),
        }
    }

    pub fn frozen(&self) -> PolicyNets {
        PolicyNets {
            encoder1: self.encoder1.frozen(),
            encoder2: self.encoder2.frozen(),
            nonlinear1: self.nonlinear1.as_ref().map(|nl| nl.frozen()),
            nonlinear2: self.nonlinear2.as_ref().map(|nl| nl.frozen()),
            decoder: self.decoder.frozen(),
        }
    }
}

/// A complete policy: parameters plus the per-slot anchor sets.
#[derive(Debug, Clone)]
pub struct Policy {
    pub config: PolicyConfig,
    pub nets: PolicyNets,
    pub anchors1: AnchorSet,
    pub anchors2: AnchorSet,
}

impl Policy {
    /// Builds a fresh policy. For anchor-based representations both anchor
    /// image lists must match `config.anchor_count`; plain mode ignores
    /// them entirely and may pass empty lists.
    pub fn init(
        config: PolicyConfig,
        anchor_images1: Vec<Tensor>,
        anchor_images2: Vec<Tensor>,
        seed: u64,
    ) -> Result<Policy> {
        config.validate()?;
        if config.rep_mode.uses_anchors() {
            if anchor_images1.len() != config.anchor_count
                || anchor_images2.len() != config.anchor_count
            {
                return Err(Error::config(format!(
                    "expected {} anchor images per slot, got {} and {}",
                    config.anchor_count,
                    anchor_images1.len(),
                    anchor_images2.len()
                )));
            }
        }
        let mut rng = stream(seed, &[salt::INIT]);
        let nets = PolicyNets::init(&config, &mut rng)?;
        let mut policy = Policy {
            config,
            nets,
            anchors1: AnchorSet::new(anchor_images1),
            anchors2: AnchorSet::new(anchor_images2),
        };
        policy.refresh_anchors()?;
        Ok(policy)
    }

    pub fn anchors(&self, slot: Slot) -> &AnchorSet {
        match slot {
            Slot::One => &self.anchors1,
            Slot::Two => &self.anchors2,
        }
    }

    /// Re-embeds both anchor sets under the current encoders. Must run
    /// after any parameter change; training calls it every epoch.
    pub fn refresh_anchors(&mut self) -> Result<()> {
        if !self.config.rep_mode.uses_anchors() {
            return Ok(());
        }
        self.anchors1.refresh(&self.nets.encoder1)?;
        self.anchors2.refresh(&self.nets.encoder2)?;
        Ok(())
    }

    /// Full forward pass under substitute parameters (the training loop
    /// passes tape-watched copies). Returns both pre-representation
    /// latents and the mixture head.
    pub fn forward_parts_with(
        &self,
        nets: &PolicyNets,
        tape: &mut Tape,
        image1: &Tensor,
        image2: &Tensor,
        proprio: &[f64; 3],
    ) -> Result<(Tensor, Tensor, GmmHead)> {
        let z1 = nets.encoder1.encode(tape, image1)?;
        let z2 = nets.encoder2.encode(tape, image2)?;
        let r1 = rep_forward(
            tape,
            &z1,
            self.config.rep_mode,
            &self.anchors1,
            nets.nonlinear1.as_ref(),
        )?;
        let r2 = rep_forward(
            tape,
            &z2,
            self.config.rep_mode,
            &self.anchors2,
            nets.nonlinear2.as_ref(),
        )?;
        let p = Tensor::vector(proprio.to_vec());
        let head = nets.decoder.decode(tape, &r1, &r2, &p)?;
        Ok((z1, z2, head))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        image1: &Tensor,
        image2: &Tensor,
        proprio: &[f64; 3],
    ) -> Result<GmmHead> {
        Ok(self
            .forward_parts_with(&self.nets, tape, image1, image2, proprio)?
            .2)
    }

    /// Deterministic control action for one observation.
    pub fn act(&self, image1: &Tensor, image2: &Tensor, proprio: &[f64; 3]) -> Result<[f64; 3]> {
        let mut tape = Tape::inference();
        let head = self.forward(&mut tape, image1, image2, proprio)?;
        Ok(mean_action(&head))
    }

    /// Embeds an image through one slot's full interface: encoder followed
    /// by that slot's representation layer.
    pub fn interface_embedding(&self, slot: Slot, image: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let z = self.nets.encoder(slot).encode(&mut tape, image)?;
        let r = rep_forward(
            &mut tape,
            &z,
            self.config.rep_mode,
            self.anchors(slot),
            self.nets.nonlinear(slot),
        )?;
        Ok(r.data)
    }

    /// Assembles a policy from `recipient` with `donor_slot`'s vision stack
    /// (encoder and, in nonlinear mode, channel maps) taken from `donor`.
    /// The decoder always comes from `recipient`. The anchor image lists
    /// are the new policy's per-slot anchors; for anchor-based modes they
    /// must be index-matched across slots, one list per camera.
    pub fn stitch(
        recipient: &Policy,
        donor: &Policy,
        donor_slot: Slot,
        anchor_images1: Vec<Tensor>,
        anchor_images2: Vec<Tensor>,
    ) -> Result<Policy> {
        if recipient.config != donor.config {
            return Err(Error::config(format!(
                "policies must agree structurally to be stitched: {:?} vs {:?}",
                recipient.config, donor.config
            )));
        }
        let config = recipient.config;
        let mut nets = recipient.nets.clone();
        match donor_slot {
            Slot::One => {
                nets.encoder1 = donor.nets.encoder1.clone();
                nets.nonlinear1 = donor.nets.nonlinear1.clone();
            }
            Slot::Two => {
                nets.encoder2 = donor.nets.encoder2.clone();
                nets.nonlinear2 = donor.nets.nonlinear2.clone();
            }
        }
        if config.rep_mode.uses_anchors()
            && (anchor_images1.len() != config.anchor_count
                || anchor_images2.len() != config.anchor_count)
        {
            return Err(Error::config(format!(
                "expected {} anchor images per slot, got {} and {}",
                config.anchor_count,
                anchor_images1.len(),
                anchor_images2.len()
            )));
        }
        let mut stitched = Policy {
            config,
            nets,
            anchors1: AnchorSet::new(anchor_images1),
            anchors2: AnchorSet::new(anchor_images2),
        };
        stitched.refresh_anchors()?;
        Ok(stitched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_images(count: usize, salt_v: u64) -> Vec<Tensor> {
        (0..count)
            .map(|k| {
                Tensor::new(
                    &[1, 12, 12],
                    (0..144)
                        .map(|i| ((i as u64 * 7 + k as u64 * 13 + salt_v) % 10) as f64 * 0.1)
                        .collect(),
                )
                .unwrap()
            })
            .collect()
    }

    fn small_config(rep_mode: RepMode) -> PolicyConfig {
        PolicyConfig {
            image_channels: 1,
            image_height: 12,
            image_width: 12,
            latent_dim: 8,
            anchor_count: 4,
            gmm_modes: 2,
            rep_mode,
        }
    }

    #[test]
    fn init_validates_anchor_counts_for_anchor_modes() {
        let cfg = small_config(RepMode::Relative);
        assert!(Policy::init(cfg, test_images(3, 0), test_images(4, 1), 7).is_err());
        assert!(Policy::init(cfg, test_images(4, 0), test_images(4, 1), 7).is_ok());
        let plain = small_config(RepMode::Plain);
        assert!(Policy::init(plain, vec![], vec![], 7).is_ok());
    }

    #[test]
    fn forward_runs_for_every_rep_mode() {
        for mode in [
            RepMode::Plain,
            RepMode::Relative,
            RepMode::MultiSimLinear,
            RepMode::MultiSimNonlinear,
        ] {
            let cfg = small_config(mode);
            let (a1, a2) = if mode.uses_anchors() {
                (test_images(4, 0), test_images(4, 1))
            } else {
                (vec![], vec![])
            };
            let policy = Policy::init(cfg, a1, a2, 3).unwrap();
            let img = &test_images(1, 9)[0];
            let mut tape = Tape::inference();
            let head = policy.forward(&mut tape, img, img, &[0.5, 0.5, 0.6]).unwrap();
            assert_eq!(head.modes(), 2, "mode {mode:?}");
            let a = policy.act(img, img, &[0.5, 0.5, 0.6]).unwrap();
            assert!(a.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn param_count_is_stable_and_ordered() {
        let policy = Policy::init(
            small_config(RepMode::Relative),
            test_images(4, 0),
            test_images(4, 1),
            1,
        )
        .unwrap();
        // 6 tensors per encoder, 12 for the decoder.
        assert_eq!(policy.nets.params().len(), 6 + 6 + 12);
        let nl = Policy::init(
            small_config(RepMode::MultiSimNonlinear),
            test_images(4, 0),
            test_images(4, 1),
            1,
        )
        .unwrap();
        // Plus 8 channel-map tensors per slot.
        assert_eq!(nl.nets.params().len(), 6 + 6 + 8 + 8 + 12);
    }

    #[test]
    fn self_stitch_is_the_identity() {
        let cfg = small_config(RepMode::Relative);
        let policy = Policy::init(cfg, test_images(4, 0), test_images(4, 1), 11).unwrap();
        let stitched = Policy::stitch(
            &policy,
            &policy,
            Slot::Two,
            policy.anchors1.images().to_vec(),
            policy.anchors2.images().to_vec(),
        )
        .unwrap();
        let img = &test_images(1, 5)[0];
        let mut t1 = Tape::inference();
        let mut t2 = Tape::inference();
        let a = policy.forward(&mut t1, img, img, &[0.4, 0.6, 0.5]).unwrap();
        let b = stitched.forward(&mut t2, img, img, &[0.4, 0.6, 0.5]).unwrap();
        assert_eq!(a.logits.data, b.logits.data);
        assert_eq!(a.means.data, b.means.data);
        assert_eq!(a.log_stds.data, b.log_stds.data);
    }

    #[test]
    fn stitch_takes_donor_slot_and_recipient_decoder() {
        let cfg = small_config(RepMode::Relative);
        let p1 = Policy::init(cfg, test_images(4, 0), test_images(4, 1), 1).unwrap();
        let p2 = Policy::init(cfg, test_images(4, 2), test_images(4, 3), 2).unwrap();
        let st = Policy::stitch(
            &p1,
            &p2,
            Slot::Two,
            p1.anchors1.images().to_vec(),
            p2.anchors2.images().to_vec(),
        )
        .unwrap();
        assert_eq!(st.nets.encoder1.conv1_w.data, p1.nets.encoder1.conv1_w.data);
        assert_eq!(st.nets.encoder2.conv1_w.data, p2.nets.encoder2.conv1_w.data);
        assert_eq!(st.nets.decoder.fc1_w.data, p1.nets.decoder.fc1_w.data);
        // Anchors re-embedded under the assembled encoders.
        let (rows2, _) = st.anchors2.embeddings().unwrap();
        let mut tape = Tape::inference();
        let z = p2
            .nets
            .encoder2
            .encode(&mut tape, &st.anchors2.images()[0])
            .unwrap();
        assert_eq!(&rows2[0..8], z.data.as_slice());
    }

    #[test]
    fn stitch_rejects_structural_mismatch() {
        let a = Policy::init(
            small_config(RepMode::Relative),
            test_images(4, 0),
            test_images(4, 1),
            1,
        )
        .unwrap();
        let mut cfg = small_config(RepMode::Relative);
        cfg.latent_dim = 16;
        let b = Policy::init(cfg, test_images(4, 0), test_images(4, 1), 1).unwrap();
        assert!(Policy::stitch(&a, &b, Slot::Two, vec![], vec![]).is_err());
    }

    #[test]
    fn nonlinear_maps_travel_with_their_encoder() {
        let cfg = small_config(RepMode::MultiSimNonlinear);
        let p1 = Policy::init(cfg, test_images(4, 0), test_images(4, 1), 1).unwrap();
        let p2 = Policy::init(cfg, test_images(4, 2), test_images(4, 3), 2).unwrap();
        let st = Policy::stitch(
            &p1,
            &p2,
            Slot::Two,
            p1.anchors1.images().to_vec(),
            p2.anchors2.images().to_vec(),
        )
        .unwrap();
        let w1 = &st.nets.nonlinear1.as_ref().unwrap().weights[0];
        let w2 = &st.nets.nonlinear2.as_ref().unwrap().weights[0];
        assert_eq!(w1.data, p1.nets.nonlinear1.as_ref().unwrap().weights[0].data);
        assert_eq!(w2.data, p2.nets.nonlinear2.as_ref().unwrap().weights[0].data);
    }
}
