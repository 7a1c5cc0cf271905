//! Central finite-difference checks for every differentiable op.
//!
//! Each op gets 20 seeded random trials; analytic gradients must match
//! (f(x+h) - f(x-h)) / 2h at h = 1e-5 within 1e-4 relative error. Inputs
//! for kinked ops (relu, abs, clamp, the L1/Linf channels) are sampled away
//! from their kinks, where the finite difference is meaningless.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tapegrad::{SimAnchors, SimKind, Tape, Tensor};

const TRIALS: u64 = 20;
const H: f64 = 1e-5;

fn agree(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-4 * a.abs().max(b.abs()) + 1e-8
}

fn seed_for(name: &str, trial: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ (trial.wrapping_mul(0x9e3779b97f4a7c15))
}

/// Runs the trials. `sample` fills the data for input `idx`; `f` builds a
/// scalar loss from the watched inputs.
fn gradcheck<S, F>(name: &str, shapes: &[&[usize]], sample: S, f: F)
where
    S: Fn(&mut ChaCha8Rng, usize, usize) -> Vec<f64>,
    F: Fn(&mut Tape, &[Tensor]) -> Tensor,
{
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(name, trial));
        let inputs: Vec<Tensor> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let numel = s.iter().product();
                Tensor::new(s, sample(&mut rng, i, numel)).unwrap().with_grad()
            })
            .collect();

        let mut tape = Tape::new();
        let tracked: Vec<Tensor> = inputs.iter().map(|t| tape.watch(t)).collect();
        let loss = f(&mut tape, &tracked);
        let grads = tape.backward(&loss).unwrap();

        for (i, input) in inputs.iter().enumerate() {
            let analytic = grads.grad_of(&tracked[i]).unwrap();
            for e in 0..input.numel() {
                let eval = |delta: f64| -> f64 {
                    let mut shifted: Vec<Tensor> = inputs.clone();
                    shifted[i].data[e] += delta;
                    let mut t = Tape::inference();
                    let watched: Vec<Tensor> = shifted.iter().map(|x| t.watch(x)).collect();
                    f(&mut t, &watched).item().unwrap()
                };
                let fd = (eval(H) - eval(-H)) / (2.0 * H);
                let a = analytic.data[e];
                assert!(
                    agree(a, fd),
                    "{name} trial {trial}: input {i} elem {e}: analytic {a} vs fd {fd}"
                );
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn plain(lo: f64, hi: f64) -> impl Fn(&mut ChaCha8Rng, usize, usize) -> Vec<f64> {
    move |rng, _, n| (0..n).map(|_| uniform(rng, lo, hi)).collect()
}

/// Uniform in [-hi, hi] but at least `margin` away from zero.
fn off_zero(hi: f64, margin: f64) -> impl Fn(&mut ChaCha8Rng, usize, usize) -> Vec<f64> {
    move |rng, _, n| {
        (0..n)
            .map(|_| {
                let mag = uniform(rng, margin, hi);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            })
            .collect()
    }
}

#[test]
fn add_same_shape() {
    gradcheck("add", &[&[2, 3], &[2, 3]], plain(-2.0, 2.0), |t, x| {
        let s = t.add(&x[0], &x[1]).unwrap();
        let s = t.square(&s).unwrap();
        t.sum(&s).unwrap()
    });
}

#[test]
fn add_row_broadcast() {
    gradcheck("add_row", &[&[3, 4], &[1, 4]], plain(-2.0, 2.0), |t, x| {
        let s = t.add(&x[0], &x[1]).unwrap();
        let s = t.square(&s).unwrap();
        t.sum(&s).unwrap()
    });
}

#[test]
fn sub_scalar_broadcast() {
    gradcheck("sub_scalar", &[&[4], &[1]], plain(-2.0, 2.0), |t, x| {
        let s = t.sub(&x[0], &x[1]).unwrap();
        let s = t.square(&s).unwrap();
        t.sum(&s).unwrap()
    });
}

#[test]
fn mul_all_broadcasts() {
    gradcheck("mul", &[&[2, 3], &[2, 3]], plain(-2.0, 2.0), |t, x| {
        let s = t.mul(&x[0], &x[1]).unwrap();
        t.sum(&s).unwrap()
    });
    gradcheck("mul_row", &[&[3, 4], &[1, 4]], plain(-2.0, 2.0), |t, x| {
        let s = t.mul(&x[0], &x[1]).unwrap();
        t.sum(&s).unwrap()
    });
    gradcheck("mul_scalar", &[&[5], &[1]], plain(-2.0, 2.0), |t, x| {
        let s = t.mul(&x[0], &x[1]).unwrap();
        let s = t.square(&s).unwrap();
        t.sum(&s).unwrap()
    });
}

#[test]
fn scalar_constant_ops() {
    gradcheck("addc_mulc_neg", &[&[6]], plain(-2.0, 2.0), |t, x| {
        let a = t.addc(&x[0], 1.7).unwrap();
        let b = t.mulc(&a, -0.8).unwrap();
        let c = t.neg(&b).unwrap();
        let c = t.square(&c).unwrap();
        t.sum(&c).unwrap()
    });
}

#[test]
fn relu_off_kink() {
    gradcheck("relu", &[&[8]], off_zero(2.0, 0.05), |t, x| {
        let y = t.relu(&x[0]).unwrap();
        let y = t.square(&y).unwrap();
        t.sum(&y).unwrap()
    });
}

#[test]
fn abs_off_kink() {
    gradcheck("abs", &[&[8]], off_zero(2.0, 0.05), |t, x| {
        let y = t.abs(&x[0]).unwrap();
        let y = t.square(&y).unwrap();
        t.sum(&y).unwrap()
    });
}

#[test]
fn smooth_unaries() {
    gradcheck("tanh", &[&[6]], plain(-2.0, 2.0), |t, x| {
        let y = t.tanh(&x[0]).unwrap();
        t.sum(&y).unwrap()
    });
    gradcheck("exp", &[&[6]], plain(-2.0, 1.5), |t, x| {
        let y = t.exp(&x[0]).unwrap();
        t.sum(&y).unwrap()
    });
    gradcheck("ln", &[&[6]], plain(0.2, 3.0), |t, x| {
        let y = t.ln(&x[0]).unwrap();
        t.sum(&y).unwrap()
    });
    gradcheck("sqrt", &[&[6]], plain(0.3, 4.0), |t, x| {
        let y = t.sqrt(&x[0]).unwrap();
        t.sum(&y).unwrap()
    });
    gradcheck("square", &[&[6]], plain(-2.0, 2.0), |t, x| {
        let y = t.square(&x[0]).unwrap();
        t.sum(&y).unwrap()
    });
}

#[test]
fn clamp_off_boundaries() {
    // clamp to [-0.5, 0.5]; samples keep 0.05 clear of both boundaries
    let sample = |rng: &mut ChaCha8Rng, _: usize, n: usize| {
        (0..n)
            .map(|_| loop {
                let v = uniform(rng, -1.0, 1.0);
                if (v.abs() - 0.5).abs() > 0.05 {
                    break v;
                }
            })
            .collect()
    };
    gradcheck("clamp", &[&[10]], sample, |t, x| {
        let y = t.clamp(&x[0], -0.5, 0.5).unwrap();
        let y = t.square(&y).unwrap();
        t.sum(&y).unwrap()
    });
}

#[test]
fn matmul_and_transpose() {
    gradcheck("matmul", &[&[3, 4], &[4, 2]], plain(-1.5, 1.5), |t, x| {
        let c = t.matmul(&x[0], &x[1]).unwrap();
        let c = t.square(&c).unwrap();
        t.sum(&c).unwrap()
    });
    gradcheck("transpose", &[&[3, 4], &[4, 3]], plain(-1.5, 1.5), |t, x| {
        let at = t.transpose(&x[0]).unwrap();
        let c = t.mul(&at, &x[1]).unwrap();
        t.sum(&c).unwrap()
    });
}

#[test]
fn affine_layer() {
    gradcheck("affine", &[&[4, 3], &[3], &[4]], plain(-1.5, 1.5), |t, x| {
        let y = t.affine(&x[0], &x[1], &x[2]).unwrap();
        let y = t.square(&y).unwrap();
        t.sum(&y).unwrap()
    });
}

#[test]
fn conv_stride_one() {
    gradcheck(
        "conv_s1",
        &[&[2, 5, 5], &[3, 2, 3, 3], &[3]],
        plain(-1.0, 1.0),
        |t, x| {
            let y = t.conv2d(&x[0], &x[1], &x[2], 1, 1).unwrap();
            let y = t.square(&y).unwrap();
            t.sum(&y).unwrap()
        },
    );
}

#[test]
fn conv_stride_two() {
    gradcheck(
        "conv_s2",
        &[&[2, 6, 6], &[3, 2, 4, 4], &[3]],
        plain(-1.0, 1.0),
        |t, x| {
            let y = t.conv2d(&x[0], &x[1], &x[2], 2, 1).unwrap();
            let y = t.square(&y).unwrap();
            t.sum(&y).unwrap()
        },
    );
}

#[test]
fn spatial_softmax_grid() {
    gradcheck("ssoftmax", &[&[2, 4, 5]], plain(-2.0, 2.0), |t, x| {
        let y = t.spatial_softmax(&x[0], 0.7).unwrap();
        let y = t.square(&y).unwrap();
        t.sum(&y).unwrap()
    });
}

#[test]
fn reductions() {
    gradcheck("logsumexp", &[&[6]], plain(-2.0, 2.0), |t, x| {
        t.logsumexp(&x[0]).unwrap()
    });
    gradcheck("mean", &[&[2, 3]], plain(-2.0, 2.0), |t, x| {
        let y = t.square(&x[0]).unwrap();
        t.mean(&y).unwrap()
    });
}

#[test]
fn shape_plumbing() {
    gradcheck("stack", &[&[3], &[3], &[3]], plain(-2.0, 2.0), |t, x| {
        let s = t.stack(&[&x[0], &x[1], &x[2]]).unwrap();
        let s = t.square(&s).unwrap();
        t.sum(&s).unwrap()
    });
    gradcheck("concat_slice_index", &[&[3], &[4]], plain(-2.0, 2.0), |t, x| {
        let c = t.concat(&[&x[0], &x[1]]).unwrap();
        let sl = t.slice(&c, 1, 5).unwrap();
        let sq = t.square(&sl).unwrap();
        let s = t.sum(&sq).unwrap();
        let one = t.index(&c, 6).unwrap();
        t.add(&s, &one).unwrap()
    });
}

fn fixed_anchors(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<f64> {
    (0..count * dim).map(|_| uniform(rng, -1.5, 1.5)).collect()
}

/// z sampled so that every per-coordinate difference against every centered
/// anchor stays off zero (L1/Linf kinks) and per-anchor Linf argmaxes are
/// unique.
fn kink_free_z(rng: &mut ChaCha8Rng, anchors: &SimAnchors, rows: &[f64]) -> Vec<f64> {
    let d = anchors.dim;
    let count = anchors.count;
    'outer: loop {
        let z: Vec<f64> = (0..d).map(|_| uniform(rng, -2.0, 2.0)).collect();
        let zc: Vec<f64> = z.iter().zip(anchors.mean()).map(|(v, m)| v - m).collect();
        for j in 0..count {
            let mut diffs: Vec<f64> = Vec::with_capacity(d);
            for e in 0..d {
                let c = rows[j * d + e] - anchors.mean()[e];
                let diff = (zc[e] - c).abs();
                if diff < 1e-3 {
                    continue 'outer;
                }
                diffs.push(diff);
            }
            diffs.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if d > 1 && diffs[0] - diffs[1] < 1e-3 {
                continue 'outer;
            }
        }
        return z;
    }
}

#[test]
fn similarity_channels() {
    for (kind, name) in [
        (SimKind::Cos, "sim_cos"),
        (SimKind::L1, "sim_l1"),
        (SimKind::L2, "sim_l2"),
        (SimKind::LInf, "sim_linf"),
    ] {
        for trial in 0..TRIALS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_for(name, trial));
            let rows = fixed_anchors(&mut rng, 4, 3);
            let anchors = SimAnchors::new(&rows, 4, 3).unwrap();
            let z = Tensor::vector(kink_free_z(&mut rng, &anchors, &rows)).with_grad();

            let run = |zt: &Tensor, recording: bool| -> (f64, Option<Vec<f64>>) {
                let mut tape = if recording { Tape::new() } else { Tape::inference() };
                let w = tape.watch(zt);
                let s = tape.sim(&w, kind, &anchors).unwrap();
                let sq = tape.square(&s).unwrap();
                let l = tape.sum(&sq).unwrap();
                if recording {
                    let grads = tape.backward(&l).unwrap();
                    (l.item().unwrap(), Some(grads.grad_of(&w).unwrap().data))
                } else {
                    (l.item().unwrap(), None)
                }
            };

            let (_, analytic) = run(&z, true);
            let analytic = analytic.unwrap();
            for e in 0..z.numel() {
                let mut zp = z.clone();
                zp.data[e] += H;
                let mut zm = z.clone();
                zm.data[e] -= H;
                let fd = (run(&zp, false).0 - run(&zm, false).0) / (2.0 * H);
                assert!(
                    agree(analytic[e], fd),
                    "{name} trial {trial} elem {e}: {} vs {fd}",
                    analytic[e]
                );
            }
        }
    }
}

#[test]
fn layer_norm_gradient() {
    gradcheck("layer_norm", &[&[6]], plain(-2.0, 2.0), |t, x| {
        let y = t.layer_norm(&x[0], 1e-5).unwrap();
        let w = Tensor::vector(vec![0.3, -1.2, 0.7, 0.1, -0.4, 0.9]);
        let y = t.mul(&y, &w).unwrap();
        let y = t.square(&y).unwrap();
        t.sum(&y).unwrap()
    });
}

#[test]
fn composite_chain() {
    // affine -> relu (biased off its kink) -> affine -> logsumexp
    gradcheck(
        "chain",
        &[&[5, 4], &[4], &[5], &[3, 5], &[3]],
        plain(0.2, 1.2),
        |t, x| {
            let h = t.affine(&x[0], &x[1], &x[2]).unwrap();
            let h = t.relu(&h).unwrap();
            let o = t.affine(&x[3], &h, &x[4]).unwrap();
            t.logsumexp(&o).unwrap()
        },
    );
}
