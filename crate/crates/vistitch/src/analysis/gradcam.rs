//! Saliency maps for one camera slot of a policy. The map answers
//! "which image regions raised the likelihood the policy assigns to this
//! action": channel weights are the spatially pooled gradients of the
//! action log-likelihood with respect to the slot's final conv
//! activations, the coarse map is the relu of the weighted activation
//! sum, and the result is upsampled back to image resolution.

use tapegrad::{Tape, Tensor};

use crate::error::{Error, Result};
use crate::policy::{gmm_nll, rep_forward, Policy};
use crate::sim::Slot;

/// Saliency map at image resolution, with the coarse activation-grid map
/// it was upsampled from. All values are nonnegative.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub coarse: Vec<f64>,
    pub coarse_height: usize,
    pub coarse_width: usize,
    pub factor: usize,
}

impl Heatmap {
    /// Total heat inside an inclusive-exclusive pixel rectangle, as a
    /// fraction of the whole map. Returns 0 when the map is all zero.
    pub fn mass_fraction(&self, top: usize, left: usize, bottom: usize, right: usize) -> f64 {
        let total: f64 = self.values.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let mut inside = 0.0;
        for r in top..bottom.min(self.height) {
            for c in left..right.min(self.width) {
                inside += self.values[r * self.width + c];
            }
        }
        inside / total
    }
}

/// Integer-factor bilinear upsampling with half-pixel sampling and edge
/// clamping. The interpolation weights landing on each source cell sum
/// to exactly `factor` per axis, so total mass scales by `factor^2`.
pub fn bilinear_upsample(src: &[f64], h: usize, w: usize, factor: usize) -> Result<Vec<f64>> {
    if h == 0 || w == 0 || factor == 0 {
        return Err(Error::dim("upsample needs positive dimensions and factor"));
    }
    if src.len() != h * w {
        return Err(Error::dim("upsample source length does not match its shape"));
    }
    let (oh, ow) = (h * factor, w * factor);
    let f = factor as f64;
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        let y = ((oy as f64 + 0.5) / f - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = y - y0 as f64;
        for ox in 0..ow {
            let x = ((ox as f64 + 0.5) / f - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = x - x0 as f64;
            out[oy * ow + ox] = (1.0 - fy)
                * ((1.0 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1])
                + fy * ((1.0 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1]);
        }
    }
    Ok(out)
}

/// Saliency map for `slot` of `policy` at one observation, scored by the
/// log-likelihood of `action`. The policy's parameters are treated as
/// constants; only the chosen slot's image carries gradient.
pub fn grad_cam(
    policy: &Policy,
    image1: &Tensor,
    image2: &Tensor,
    proprio: &[f64; 3],
    action: &[f64; 3],
    slot: Slot,
) -> Result<Heatmap> {
    let mut tape = Tape::new();
    let nets = policy.nets.frozen();
    let mut focus = match slot {
        Slot::One => image1.clone(),
        Slot::Two => image2.clone(),
    };
    focus.requires_grad = true;
    let focus = tape.watch(&focus);
    let (z_focus, act) = nets.encoder(slot).encode_with_activation(&mut tape, &focus)?;
    let other_slot = match slot {
        Slot::One => Slot::Two,
        Slot::Two => Slot::One,
    };
    let other_image = match slot {
        Slot::One => image2,
        Slot::Two => image1,
    };
    let z_other = nets.encoder(other_slot).encode(&mut tape, other_image)?;
    let rep_of = |tape: &mut Tape, s: Slot, z: &Tensor| {
        rep_forward(
            tape,
            z,
            policy.config.rep_mode,
            policy.anchors(s),
            nets.nonlinear(s),
        )
    };
    let (r1, r2) = match slot {
        Slot::One => (
            rep_of(&mut tape, Slot::One, &z_focus)?,
            rep_of(&mut tape, Slot::Two, &z_other)?,
        ),
        Slot::Two => (
            rep_of(&mut tape, Slot::One, &z_other)?,
            rep_of(&mut tape, Slot::Two, &z_focus)?,
        ),
    };
    let p = Tensor::vector(proprio.to_vec());
    let head = nets.decoder.decode(&mut tape, &r1, &r2, &p)?;
    let nll = gmm_nll(&mut tape, &head, action)?;
    let likelihood = tape.neg(&nll)?;
    let grads = tape.backward(&likelihood)?;
    let grad = grads
        .wrt(&act)
        .ok_or_else(|| Error::config("saliency target activation is not on the tape"))?;

    let (channels, ch, cw) = (act.shape[0], act.shape[1], act.shape[2]);
    let (ih, iw) = (focus.shape[1], focus.shape[2]);
    if ch == 0 || cw == 0 || ih % ch != 0 || iw % cw != 0 || ih / ch != iw / cw {
        return Err(Error::config(format!(
            "activation grid {ch}x{cw} does not divide the {ih}x{iw} image evenly"
        )));
    }
    let factor = ih / ch;
    let plane = ch * cw;
    let mut coarse = vec![0.0; plane];
    for k in 0..channels {
        let alpha: f64 = grad[k * plane..(k + 1) * plane].iter().sum::<f64>() / plane as f64;
        for (cell, a) in coarse.iter_mut().zip(&act.data[k * plane..(k + 1) * plane]) {
            *cell += alpha * a;
        }
    }
    for cell in coarse.iter_mut() {
        *cell = cell.max(0.0);
    }
    let values = bilinear_upsample(&coarse, ch, cw, factor)?;
    Ok(Heatmap {
        values,
        height: ih,
        width: iw,
        coarse,
        coarse_height: ch,
        coarse_width: cw,
        factor,
    })
}
