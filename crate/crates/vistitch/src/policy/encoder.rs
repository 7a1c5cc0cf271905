//! Convolutional image encoder with spatial-softmax keypoints.
//!
//! Architecture, for a `[C, H, W]` image with H and W divisible by 4:
//! conv 4x4 stride 2 pad 1 to 8 channels, relu, conv 4x4 stride 2 pad 1 to
//! 16 channels, relu, per-channel spatial softmax to 32 expected
//! coordinates, linear map to the latent dimension. The 4x4/stride-2/pad-1
//! combination halves even extents exactly, so no resolution is ever
//! rounded away.

use rand::Rng;
use tapegrad::{Tape, Tensor};

use crate::error::{Error, Result};

pub const CONV1_CHANNELS: usize = 8;
pub const CONV2_CHANNELS: usize = 16;
pub const CONV_KERNEL: usize = 4;
pub const CONV_STRIDE: usize = 2;
pub const CONV_PADDING: usize = 1;

/// Keypoint vector width after spatial softmax: (x, y) per channel.
pub const KEYPOINT_WIDTH: usize = 2 * CONV2_CHANNELS;

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub lin_w: Tensor,
    pub lin_b: Tensor,
    /// Spatial softmax temperature; fixed, not trained.
    pub temperature: f64,
}

/// Kaiming-uniform bound for relu fan-in.
fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    let mut t = Tensor::new(shape, data)?;
    t.requires_grad = true;
    Ok(t)
}

fn zero_param(shape: &[usize]) -> Result<Tensor> {
    let mut t = Tensor::zeros(shape);
    t.requires_grad = true;
    Ok(t)
}

impl EncoderParams {
    /// Validates that two halvings of `(h, w)` are exact.
    pub fn check_image_shape(channels: usize, h: usize, w: usize) -> Result<()> {
        if channels == 0 || h == 0 || w == 0 {
            return Err(Error::config("image shape must be nonzero"));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::config(format!(
                "image extent ({h}x{w}) must be divisible by 4 for two exact stride-2 halvings"
            )));
        }
        Ok(())
    }

    pub fn init(
        channels: usize,
        h: usize,
        w: usize,
        latent_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<EncoderParams> {
        Self::check_image_shape(channels, h, w)?;
        if latent_dim == 0 {
            return Err(Error::config("latent dimension must be positive"));
        }
        let k = CONV_KERNEL;
        Ok(EncoderParams {
            conv1_w: uniform_tensor(
                &[CONV1_CHANNELS, channels, k, k],
                kaiming_bound(channels * k * k),
                rng,
            )?,
            conv1_b: zero_param(&[CONV1_CHANNELS])?,
            conv2_w: uniform_tensor(
                &[CONV2_CHANNELS, CONV1_CHANNELS, k, k],
                kaiming_bound(CONV1_CHANNELS * k * k),
                rng,
            )?,
            conv2_b: zero_param(&[CONV2_CHANNELS])?,
            lin_w: uniform_tensor(&[latent_dim, KEYPOINT_WIDTH], kaiming_bound(KEYPOINT_WIDTH), rng)?,
            lin_b: zero_param(&[latent_dim])?,
            temperature: 1.0,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.lin_w.shape[0]
    }

    pub fn image_channels(&self) -> usize {
        self.conv1_w.shape[1]
    }

    /// Parameters in a fixed, documented order (weights and biases
    /// interleaved, encoder-topological). Checkpoints and optimizers rely
    /// on this order being stable.
    pub fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.lin_w,
            &self.lin_b,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.lin_w,
            &mut self.lin_b,
        ]
    }

    /// Copy with every parameter registered on `tape` as a trainable leaf.
    pub fn watched(&self, tape: &mut Tape) -> EncoderParams {
        EncoderParams {
            conv1_w: tape.watch(&self.conv1_w),
            conv1_b: tape.watch(&self.conv1_b),
            conv2_w: tape.watch(&self.conv2_w),
            conv2_b: tape.watch(&self.conv2_b),
            lin_w: tape.watch(&self.lin_w),
            lin_b: tape.watch(&self.lin_b),
            temperature: self.temperature,
        }
    }

    /// Copy with gradients disabled, for recording tapes that should treat
    /// the encoder as a constant (saliency maps, probes).
    pub fn frozen(&self) -> EncoderParams {
        let off = |t: &Tensor| {
            let mut c = t.clone();
            c.requires_grad = false;
            c
        };
        EncoderParams {
            conv1_w: off(&self.conv1_w),
            conv1_b: off(&self.conv1_b),
            conv2_w: off(&self.conv2_w),
            conv2_b: off(&self.conv2_b),
            lin_w: off(&self.lin_w),
            lin_b: off(&self.lin_b),
            temperature: self.temperature,
        }
    }

    /// Embeds one image into the latent space.
    pub fn encode(&self, tape: &mut Tape, image: &Tensor) -> Result<Tensor> {
        Ok(self.encode_with_activation(tape, image)?.0)
    }

    /// Embeds one image, also returning the post-relu activation of the
    /// second conv block (the saliency-map target).
    pub fn encode_with_activation(
        &self,
        tape: &mut Tape,
        image: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        if image.rank() != 3 || image.shape[0] != self.image_channels() {
            return Err(Error::dim(format!(
                "encoder expects [{}, h, w] images, got {:?}",
                self.image_channels(),
                image.shape
            )));
        }
        let c1 = tape.conv2d(image, &self.conv1_w, &self.conv1_b, CONV_STRIDE, CONV_PADDING)?;
        let h1 = tape.relu(&c1)?;
        let c2 = tape.conv2d(&h1, &self.conv2_w, &self.conv2_b, CONV_STRIDE, CONV_PADDING)?;
        let h2 = tape.relu(&c2)?;
        let kp = tape.spatial_softmax(&h2, self.temperature)?;
        let z = tape.affine(&self.lin_w, &kp, &self.lin_b)?;
        Ok((z, h2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{salt, stream};

    #[test]
    fn shapes_flow_as_documented() {
        let mut rng = stream(1, &[salt::INIT]);
        let enc = EncoderParams::init(1, 24, 24, 32, &mut rng).unwrap();
        let mut tape = Tape::inference();
        let img = Tensor::zeros(&[1, 24, 24]);
        let (z, act) = enc.encode_with_activation(&mut tape, &img).unwrap();
        assert_eq!(z.shape, vec![32]);
        assert_eq!(act.shape, vec![16, 6, 6]);
    }

    #[test]
    fn rejects_bad_image_sizes_and_channel_mismatch() {
        let mut rng = stream(2, &[salt::INIT]);
        assert!(EncoderParams::init(1, 22, 24, 32, &mut rng).is_err());
        let enc = EncoderParams::init(1, 24, 24, 32, &mut rng).unwrap();
        let mut tape = Tape::inference();
        let img = Tensor::zeros(&[3, 24, 24]);
        assert!(enc.encode(&mut tape, &img).is_err());
    }

    #[test]
    fn encode_is_deterministic_and_init_is_seeded() {
        let mut r1 = stream(3, &[salt::INIT]);
        let mut r2 = stream(3, &[salt::INIT]);
        let e1 = EncoderParams::init(1, 12, 12, 8, &mut r1).unwrap();
        let e2 = EncoderParams::init(1, 12, 12, 8, &mut r2).unwrap();
        assert_eq!(e1.conv1_w.data, e2.conv1_w.data);
        assert_eq!(e1.lin_w.data, e2.lin_w.data);

        let img = Tensor::new(
            &[1, 12, 12],
            (0..144).map(|i| (i % 7) as f64 * 0.1).collect(),
        )
        .unwrap();
        let mut tape = Tape::inference();
        let a = e1.encode(&mut tape, &img).unwrap();
        let b = e2.encode(&mut tape, &img).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn gradients_reach_all_parameters() {
        let mut rng = stream(4, &[salt::INIT]);
        let enc = EncoderParams::init(1, 12, 12, 8, &mut rng).unwrap();
        let mut tape = Tape::new();
        let tracked = enc.watched(&mut tape);
        let img = Tensor::new(
            &[1, 12, 12],
            (0..144).map(|i| ((i * 13) % 11) as f64 * 0.09).collect(),
        )
        .unwrap();
        let z = tracked.encode(&mut tape, &img).unwrap();
        let sq = tape.square(&z).unwrap();
        let loss = tape.sum(&sq).unwrap();
        let grads = tape.backward(&loss).unwrap();
        for p in tracked.params() {
            let g = grads.wrt(p).expect("parameter missing from gradients");
            assert!(g.iter().any(|&v| v != 0.0), "all-zero gradient");
        }
    }
}
