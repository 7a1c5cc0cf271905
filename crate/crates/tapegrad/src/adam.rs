//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: one pair of moment buffers per parameter, in the order
/// the parameters were registered. The same order must be used on every
/// step.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor], cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            first_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step_count: 0,
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Raw state for checkpointing.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first_moment, &self.second_moment)
    }

    /// Rebuilds a state saved via [`AdamState::moments`].
    pub fn restore(
        cfg: AdamConfig,
        first_moment: Vec<Vec<f64>>,
        second_moment: Vec<Vec<f64>>,
        step_count: u64,
    ) -> Result<Self> {
        if first_moment.len() != second_moment.len() {
            return Err(Error::dim("adam restore: moment lists differ in length"));
        }
        for (m, v) in first_moment.iter().zip(&second_moment) {
            if m.len() != v.len() {
                return Err(Error::dim("adam restore: moment buffers differ in size"));
            }
        }
        Ok(AdamState {
            cfg,
            first_moment,
            second_moment,
            step_count,
        })
    }

    /// One update over all parameters. `grads[i]` must match `params[i]` in
    /// size; both must match the buffers registered at construction.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::dim(format!(
                "adam step: {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t as i32);
        let bc2 = 1.0 - c.beta2.powi(t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
        {
            if p.numel() != m.len() || g.numel() != m.len() {
                return Err(Error::dim(format!(
                    "adam step: param {} grad {} moment {} elements",
                    p.numel(),
                    g.numel(),
                    m.len()
                )));
            }
            for ((pv, &gv), (mv, vv)) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_roughly_lr_times_sign() {
        // with bias correction the first update is lr * g/(|g| + eps)
        let mut p = Tensor::vector(vec![0.0, 1.0]).with_grad();
        let g = Tensor::vector(vec![3.0, -0.25]);
        let cfg = AdamConfig {
            lr: 1e-4,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&[&p], cfg);
        state.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        assert!((p.data[0] + 1e-4).abs() < 1e-9);
        assert!((p.data[1] - (1.0 + 1e-4)).abs() < 1e-9);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn step_rejects_mismatched_shapes() {
        let mut p = Tensor::vector(vec![0.0; 3]).with_grad();
        let bad = Tensor::vector(vec![0.0; 2]);
        let mut state = AdamState::new(&[&p], AdamConfig::default());
        assert!(state.step(&mut [&mut p], std::slice::from_ref(&bad)).is_err());
    }

    #[test]
    fn restore_round_trips() {
        let p = Tensor::vector(vec![1.0, 2.0]).with_grad();
        let mut state = AdamState::new(&[&p], AdamConfig::default());
        let mut pm = p.clone();
        let g = Tensor::vector(vec![0.5, -0.5]);
        state.step(&mut [&mut pm], std::slice::from_ref(&g)).unwrap();
        let (m, v) = state.moments();
        let rebuilt =
            AdamState::restore(state.config(), m.to_vec(), v.to_vec(), state.step_count()).unwrap();
        let mut a = pm.clone();
        let mut b = pm.clone();
        let mut s2 = rebuilt;
        let mut s1 = state;
        s1.step(&mut [&mut a], std::slice::from_ref(&g)).unwrap();
        s2.step(&mut [&mut b], std::slice::from_ref(&g)).unwrap();
        assert_eq!(a.data, b.data);
    }
}
