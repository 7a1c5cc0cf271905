//! Plain numeric inner loops shared by the tape operations.
//!
//! Everything here works on flat row-major slices and knows nothing about
//! recording. Loop order keeps the innermost index contiguous on the output
//! so the hot paths vectorize.

use crate::error::{Error, Result};

/// c[m,n] = a[m,k] * b[k,n]
pub fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// c[m,k] = a[m,n] * b[k,n]^T
pub fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            c[i * k + j] = acc;
        }
    }
    c
}

/// c[k,n] = a[m,k]^T * b[m,n]
pub fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for p in 0..m {
        let arow = &a[p * k..(p + 1) * k];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Output spatial extent of a convolution. The division must be exact;
/// silently flooring would desynchronize every shape contract downstream.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::config("conv stride must be positive"));
    }
    let padded = input + 2 * padding;
    if kernel == 0 || kernel > padded {
        return Err(Error::config(format!(
            "conv kernel {kernel} does not fit padded extent {padded}"
        )));
    }
    let span = padded - kernel;
    if span % stride != 0 {
        return Err(Error::config(format!(
            "conv output size is not an integer: ({input} + 2*{padding} - {kernel}) / {stride}"
        )));
    }
    Ok(span / stride + 1)
}

/// Output indices `o` for which `o*stride + k - padding` lands inside
/// `[0, extent)`, clipped to `[0, out_extent)`. Returned as `lo..hi` with
/// `lo <= hi` so the pair always slices.
fn conv_valid_range(
    k: usize,
    stride: usize,
    padding: usize,
    extent: usize,
    out_extent: usize,
) -> (usize, usize) {
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if extent + padding > k {
        ((extent - 1 + padding - k) / stride + 1).min(out_extent)
    } else {
        0
    };
    (lo.min(out_extent), hi.max(lo).min(out_extent))
}

/// Direct convolution, zero padding. input [cin,h,w], kernel [cout,cin,kh,kw],
/// bias [cout], output [cout,oh,ow]. Border handling hoists the padding
/// bounds out of the inner loops, which run over precomputed valid ranges;
/// accumulation order over (ci, u, v) per output cell is unchanged.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Result<(Vec<f64>, usize, usize)> {
    let oh = conv_out_extent(h, kh, stride, padding)?;
    let ow = conv_out_extent(w, kw, stride, padding)?;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        let ochan = &mut out[co * oh * ow..(co + 1) * oh * ow];
        ochan.fill(bias[co]);
        for ci in 0..cin {
            let ichan = &input[ci * h * w..(ci + 1) * h * w];
            let kbase = (co * cin + ci) * kh * kw;
            for u in 0..kh {
                let (oi_lo, oi_hi) = conv_valid_range(u, stride, padding, h, oh);
                for v in 0..kw {
                    let kv = kernel[kbase + u * kw + v];
                    if kv == 0.0 {
                        continue;
                    }
                    let (oj_lo, oj_hi) = conv_valid_range(v, stride, padding, w, ow);
                    for oi in oi_lo..oi_hi {
                        let iy = oi * stride + u - padding;
                        let irow = &ichan[iy * w..(iy + 1) * w];
                        let orow = &mut ochan[oi * ow + oj_lo..oi * ow + oj_hi];
                        let mut ix = oj_lo * stride + v - padding;
                        for ov in orow {
                            *ov += kv * irow[ix];
                            ix += stride;
                        }
                    }
                }
            }
        }
    }
    Ok((out, oh, ow))
}

/// Gradients of `conv2d_forward`. Passing `None` for a gradient slot skips
/// that computation entirely (constant inputs pay nothing).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    gout: &[f64],
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    mut ginput: Option<&mut [f64]>,
    mut gkernel: Option<&mut [f64]>,
    gbias: Option<&mut [f64]>,
) {
    if let Some(gb) = gbias {
        for co in 0..cout {
            let ochan = &gout[co * oh * ow..(co + 1) * oh * ow];
            gb[co] += ochan.iter().sum::<f64>();
        }
    }
    for co in 0..cout {
        let gchan = &gout[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..cin {
            let ichan = &input[ci * h * w..(ci + 1) * h * w];
            let kbase = (co * cin + ci) * kh * kw;
            for u in 0..kh {
                let (oi_lo, oi_hi) = conv_valid_range(u, stride, padding, h, oh);
                for v in 0..kw {
                    let (oj_lo, oj_hi) = conv_valid_range(v, stride, padding, w, ow);
                    let mut kacc = 0.0;
                    let kv = kernel[kbase + u * kw + v];
                    for oi in oi_lo..oi_hi {
                        let iy = oi * stride + u - padding;
                        let grow = &gchan[oi * ow + oj_lo..oi * ow + oj_hi];
                        let ix0 = oj_lo * stride + v - padding;
                        if gkernel.is_some() {
                            let irow = &ichan[iy * w..(iy + 1) * w];
                            let mut ix = ix0;
                            for &gv in grow {
                                kacc += gv * irow[ix];
                                ix += stride;
                            }
                        }
                        if let Some(gi) = ginput.as_deref_mut() {
                            let girow = &mut gi[ci * h * w + iy * w..ci * h * w + (iy + 1) * w];
                            let mut ix = ix0;
                            for &gv in grow {
                                girow[ix] += kv * gv;
                                ix += stride;
                            }
                        }
                    }
                    if let Some(gk) = gkernel.as_deref_mut() {
                        gk[kbase + u * kw + v] += kacc;
                    }
                }
            }
        }
    }
}

/// Pixel-center coordinate grid over [-1, 1]. Built from exact integer
/// ratios so mirrored indices are exact negations of each other.
pub fn unit_coord(index: usize, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        (2.0 * index as f64 - (extent - 1) as f64) / (extent - 1) as f64
    }
}

/// Expected coordinate under `mass`, summed in mirrored pairs so symmetric
/// mass distributions land on 0.0 exactly.
fn paired_expectation(mass: &[f64], extent: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..extent / 2 {
        let k = extent - 1 - j;
        acc += mass[j] * unit_coord(j, extent) + mass[k] * unit_coord(k, extent);
    }
    acc
}

/// Per-channel softmax over the spatial grid followed by the expected (x, y)
/// coordinate. Returns the [2c] output (x then y per channel) and the
/// softmax probabilities, which the backward pass reuses.
pub fn spatial_softmax_forward(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    temperature: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if temperature <= 0.0 {
        return Err(Error::config(format!(
            "spatial softmax temperature must be positive, got {temperature}"
        )));
    }
    let hw = h * w;
    let mut out = vec![0.0; 2 * c];
    let mut probs = vec![0.0; c * hw];
    for ch in 0..c {
        let xchan = &input[ch * hw..(ch + 1) * hw];
        let pchan = &mut probs[ch * hw..(ch + 1) * hw];
        let m = xchan.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (p, &x) in pchan.iter_mut().zip(xchan) {
            *p = ((x - m) / temperature).exp();
            z += *p;
        }
        for p in pchan.iter_mut() {
            *p /= z;
        }
        let mut colmass = vec![0.0; w];
        let mut rowmass = vec![0.0; h];
        for i in 0..h {
            let prow = &pchan[i * w..(i + 1) * w];
            let mut rsum = 0.0;
            for (cm, &p) in colmass.iter_mut().zip(prow) {
                *cm += p;
                rsum += p;
            }
            rowmass[i] = rsum;
        }
        out[2 * ch] = paired_expectation(&colmass, w);
        out[2 * ch + 1] = paired_expectation(&rowmass, h);
    }
    Ok((out, probs))
}

/// d(out)/d(input) for `spatial_softmax_forward`, accumulated into `ginput`.
pub fn spatial_softmax_backward(
    gout: &[f64],
    out: &[f64],
    probs: &[f64],
    c: usize,
    h: usize,
    w: usize,
    temperature: f64,
    ginput: &mut [f64],
) {
    let hw = h * w;
    for ch in 0..c {
        let gx = gout[2 * ch];
        let gy = gout[2 * ch + 1];
        if gx == 0.0 && gy == 0.0 {
            continue;
        }
        let mx = out[2 * ch];
        let my = out[2 * ch + 1];
        let pchan = &probs[ch * hw..(ch + 1) * hw];
        let gchan = &mut ginput[ch * hw..(ch + 1) * hw];
        for i in 0..h {
            let cy = unit_coord(i, h);
            for j in 0..w {
                let cx = unit_coord(j, w);
                gchan[i * w + j] +=
                    pchan[i * w + j] * (gx * (cx - mx) + gy * (cy - my)) / temperature;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent triple-loop reference, deliberately in the naive ijk order.
    fn mm_reference(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    fn pseudo_random(len: usize, seed: u64) -> Vec<f64> {
        // splitmix64, mapped into [-1, 1)
        let mut s = seed;
        (0..len)
            .map(|_| {
                s = s.wrapping_add(0x9e3779b97f4a7c15);
                let mut z = s;
                z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
                z ^= z >> 31;
                (z >> 11) as f64 / (1u64 << 52) as f64 * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn mm_nn_matches_triple_loop_reference() {
        let shapes: Vec<(usize, usize, usize)> = (1..=20)
            .map(|i| (1 + i % 7, 1 + (i * 3) % 8, 1 + (i * 5) % 6))
            .collect();
        for (idx, &(m, k, n)) in shapes.iter().enumerate() {
            let a = pseudo_random(m * k, idx as u64 * 2 + 1);
            let b = pseudo_random(k * n, idx as u64 * 2 + 2);
            let got = mm_nn(&a, &b, m, k, n);
            let want = mm_reference(&a, &b, m, k, n);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12, "shape ({m},{k},{n}): {g} vs {w}");
            }
        }
    }

    #[test]
    fn mm_variants_agree_with_explicit_transposes() {
        let (m, n, k) = (4, 5, 3);
        let a = pseudo_random(m * n, 11);
        let b = pseudo_random(k * n, 12);
        // a * b^T via mm_nn on a materialized transpose
        let mut bt = vec![0.0; n * k];
        for i in 0..k {
            for j in 0..n {
                bt[j * k + i] = b[i * n + j];
            }
        }
        let want = mm_reference(&a, &bt, m, n, k);
        let got = mm_nt(&a, &b, m, n, k);
        assert_eq!(got, want);

        let c = pseudo_random(m * k, 13);
        let d = pseudo_random(m * n, 14);
        let mut ct = vec![0.0; k * m];
        for i in 0..m {
            for j in 0..k {
                ct[j * m + i] = c[i * k + j];
            }
        }
        let want = mm_reference(&ct, &d, k, m, n);
        let got = mm_tn(&c, &d, m, k, n);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv_extent_requires_exact_division() {
        assert_eq!(conv_out_extent(24, 4, 2, 1).unwrap(), 12);
        assert_eq!(conv_out_extent(12, 4, 2, 1).unwrap(), 6);
        assert_eq!(conv_out_extent(3, 2, 1, 0).unwrap(), 2);
        assert!(conv_out_extent(24, 3, 2, 1).is_err());
        assert!(conv_out_extent(5, 0, 1, 0).is_err());
        assert!(conv_out_extent(5, 2, 0, 0).is_err());
    }

    #[test]
    fn conv_forward_hand_example() {
        // 3x3 input, all-ones 2x2 kernel, stride 1, no padding:
        // each output cell is the sum of a 2x2 window.
        let input = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let kernel = [1.0; 4];
        let (out, oh, ow) = conv2d_forward(&input, 1, 3, 3, &kernel, 1, 2, 2, &[0.0], 1, 0).unwrap();
        assert_eq!((oh, ow), (2, 2));
        assert_eq!(out, vec![12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn conv_identity_kernel_with_padding() {
        let input = pseudo_random(2 * 4 * 4, 7);
        // 1x1 kernels picking out each input channel
        let kernel = [1.0, 0.0, 0.0, 1.0];
        let (out, oh, ow) =
            conv2d_forward(&input, 2, 4, 4, &kernel, 2, 1, 1, &[0.0, 0.0], 1, 0).unwrap();
        assert_eq!((oh, ow), (4, 4));
        assert_eq!(out, input);
    }

    #[test]
    fn spatial_softmax_uniform_is_exactly_centered() {
        for (h, w) in [(5, 5), (4, 6), (1, 3)] {
            let input = vec![0.25; h * w];
            let (out, _) = spatial_softmax_forward(&input, 1, h, w, 1.0).unwrap();
            assert_eq!(out, vec![0.0, 0.0], "extent ({h},{w})");
        }
    }

    #[test]
    fn spatial_softmax_cold_spike_hits_the_corner() {
        let mut input = vec![0.0; 25];
        input[0] = 1.0; // top-left of a 5x5 grid
        let (out, _) = spatial_softmax_forward(&input, 1, 5, 5, 1e-3).unwrap();
        assert!((out[0] + 1.0).abs() < 1e-12, "x: {}", out[0]);
        assert!((out[1] + 1.0).abs() < 1e-12, "y: {}", out[1]);
    }

    #[test]
    fn spatial_softmax_shift_invariant() {
        let input = pseudo_random(2 * 4 * 4, 3);
        let shifted: Vec<f64> = input.iter().map(|x| x + 7.5).collect();
        let (a, _) = spatial_softmax_forward(&input, 2, 4, 4, 0.7).unwrap();
        let (b, _) = spatial_softmax_forward(&shifted, 2, 4, 4, 0.7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}
