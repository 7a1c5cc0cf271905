//! Regularization terms added to the behavior-cloning objective.
//!
//! Both penalties operate on pre-representation encoder latents. The
//! covariance penalty discourages statistically entangled latent
//! dimensions over a batch; the norm penalty shrinks latent magnitude.
//! Each has a plain-`f64` twin used as an oracle in tests and reports.

use tapegrad::{Tape, Tensor};

use crate::error::{Error, Result};

/// Unbiased covariance between two columns of a row-major `n x z` batch.
pub fn covariance(rows: &[f64], n: usize, z: usize, k: usize, l: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::config("covariance needs at least two rows"));
    }
    if rows.len() != n * z || k >= z || l >= z {
        return Err(Error::dim("covariance indices out of range"));
    }
    let mean_k = (0..n).map(|i| rows[i * z + k]).sum::<f64>() / n as f64;
    let mean_l = (0..n).map(|i| rows[i * z + l]).sum::<f64>() / n as f64;
    let s: f64 = (0..n)
        .map(|i| (rows[i * z + k] - mean_k) * (rows[i * z + l] - mean_l))
        .sum();
    Ok(s / (n - 1) as f64)
}

/// Mean absolute off-diagonal covariance of an `n x z` batch: the scalar
/// the trainer penalizes, computed without a tape.
pub fn disent_value(rows: &[f64], n: usize, z: usize) -> Result<f64> {
    if z < 2 {
        return Err(Error::config("disentanglement needs at least two latent dimensions"));
    }
    let mut total = 0.0;
    for k in 0..z {
        for l in 0..z {
            if k != l {
                total += covariance(rows, n, z, k, l)?.abs();
            }
        }
    }
    Ok(total / (z * (z - 1)) as f64)
}

/// Norm penalty of an `n x z` batch without a tape:
/// `l1_weight * mean_i ||z_i||_1 + l2_weight * mean_i ||z_i||_2`.
pub fn l1l2_value(rows: &[f64], n: usize, z: usize, l1_weight: f64, l2_weight: f64) -> Result<f64> {
    if n == 0 || rows.len() != n * z {
        return Err(Error::dim("norm penalty batch is empty or misshapen"));
    }
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for row in rows.chunks_exact(z) {
        l1 += row.iter().map(|v| v.abs()).sum::<f64>();
        l2 += row.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let n = n as f64;
    Ok(l1_weight * l1 / n + l2_weight * l2 / n)
}

/// Differentiable mean absolute off-diagonal covariance of a batch of
/// latent rows (shape `[n, z]`, n >= 2, z >= 2).
pub fn disent_penalty(tape: &mut Tape, rows: &Tensor) -> Result<Tensor> {
    if rows.shape.len() != 2 {
        return Err(Error::dim(format!(
            "disentanglement expects a [n, z] batch, got {:?}",
            rows.shape
        )));
    }
    let (n, z) = (rows.shape[0], rows.shape[1]);
    if n < 2 {
        return Err(Error::config("disentanglement needs at least two rows"));
    }
    if z < 2 {
        return Err(Error::config("disentanglement needs at least two latent dimensions"));
    }
    // Column means, expanded back to [n, z] through constant ones matrices.
    let ones_row = Tensor::new(&[1, n], vec![1.0; n])?;
    let ones_col = Tensor::new(&[n, 1], vec![1.0; n])?;
    let sums = tape.matmul(&ones_row, rows)?;
    let means = tape.mulc(&sums, 1.0 / n as f64)?;
    let expanded = tape.matmul(&ones_col, &means)?;
    let centered = tape.sub(rows, &expanded)?;
    let ct = tape.transpose(&centered)?;
    let gram = tape.matmul(&ct, &centered)?;
    let cov = tape.mulc(&gram, 1.0 / (n - 1) as f64)?;
    let abs = tape.abs(&cov)?;
    // Zero the diagonal, then average the z(z-1) remaining cells.
    let mut mask = vec![1.0; z * z];
    for k in 0..z {
        mask[k * z + k] = 0.0;
    }
    let mask = Tensor::new(&[z, z], mask)?;
    let off_diag = tape.mul(&abs, &mask)?;
    let total = tape.sum(&off_diag)?;
    Ok(tape.mulc(&total, 1.0 / (z * (z - 1)) as f64)?)
}

/// Differentiable norm penalty over a batch of latent vectors.
pub fn l1l2_penalty(
    tape: &mut Tape,
    latents: &[&Tensor],
    l1_weight: f64,
    l2_weight: f64,
) -> Result<Tensor> {
    if latents.is_empty() {
        return Err(Error::dim("norm penalty needs at least one latent"));
    }
    let mut l1_terms = Vec::with_capacity(latents.len());
    let mut l2_terms = Vec::with_capacity(latents.len());
    for z in latents {
        let abs = tape.abs(z)?;
        l1_terms.push(tape.sum(&abs)?);
        let sq = tape.square(z)?;
        let ss = tape.sum(&sq)?;
        l2_terms.push(tape.sqrt(&ss)?);
    }
    let l1_refs: Vec<&Tensor> = l1_terms.iter().collect();
    let l2_refs: Vec<&Tensor> = l2_terms.iter().collect();
    let l1_stack = tape.stack(&l1_refs)?;
    let l2_stack = tape.stack(&l2_refs)?;
    let l1_mean = tape.mean(&l1_stack)?;
    let l2_mean = tape.mean(&l2_stack)?;
    let a = tape.mulc(&l1_mean, l1_weight)?;
    let b = tape.mulc(&l2_mean, l2_weight)?;
    Ok(tape.add(&a, &b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tapegrad::AdamConfig;
    use tapegrad::AdamState;

    use crate::rng::{salt, stream};
    use rand::Rng;

    #[test]
    fn covariance_matches_hand_example() {
        // Columns (1,3) and (2,4): ((1-2)(2-3) + (3-2)(4-3)) / 1 = 2.
        let rows = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(covariance(&rows, 2, 2, 0, 1).unwrap(), 2.0);
        assert_eq!(
            covariance(&rows, 2, 2, 0, 1).unwrap(),
            covariance(&rows, 2, 2, 1, 0).unwrap()
        );
        // A constant column covaries with nothing.
        let flat = [5.0, 2.0, 5.0, 4.0, 5.0, 9.0];
        assert_eq!(covariance(&flat, 3, 2, 0, 1).unwrap(), 0.0);
        assert!(covariance(&rows, 1, 4, 0, 1).is_err());
    }

    #[test]
    fn disent_matches_hand_example_on_tape_and_oracle() {
        let rows = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(disent_value(&rows, 2, 2).unwrap(), 2.0);
        let mut tape = Tape::new();
        let t = Tensor::new(&[2, 2], rows.to_vec()).unwrap();
        let p = disent_penalty(&mut tape, &t).unwrap();
        assert!((p.item().unwrap() - 2.0).abs() < 1e-12);
        // Duplicated column: penalty equals the column variance.
        let dup = [1.0, 1.0, 4.0, 4.0, 6.0, 6.0];
        let var = covariance(&dup, 3, 2, 0, 0).unwrap();
        assert!((disent_value(&dup, 3, 2).unwrap() - var.abs()).abs() < 1e-12);
    }

    #[test]
    fn disent_is_shift_invariant_and_small_for_independent_columns() {
        let mut rng = stream(5, &[salt::INIT]);
        let n = 10_000;
        let rows: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = disent_value(&rows, n, 3).unwrap();
        assert!(v < 0.05, "independent columns gave {v}");
        let shifted: Vec<f64> = rows
            .chunks_exact(3)
            .flat_map(|r| [r[0] + 17.0, r[1] - 4.0, r[2] + 0.5])
            .collect();
        let vs = disent_value(&shifted, n, 3).unwrap();
        assert!((v - vs).abs() < 1e-9, "shift changed the penalty: {v} vs {vs}");
    }

    #[test]
    fn l1l2_matches_hand_example() {
        // One vector (3,4): 0.001*7 + 0.001*5 = 0.012.
        assert!((l1l2_value(&[3.0, 4.0], 1, 2, 0.001, 0.001).unwrap() - 0.012).abs() < 1e-15);
        assert_eq!(l1l2_value(&[0.0; 6], 3, 2, 0.001, 0.001).unwrap(), 0.0);
        // Degree-1 homogeneity.
        let v1 = l1l2_value(&[1.0, -2.0, 0.5, 3.0], 2, 2, 0.001, 0.001).unwrap();
        let v3 = l1l2_value(&[3.0, -6.0, 1.5, 9.0], 2, 2, 0.001, 0.001).unwrap();
        assert!((v3 - 3.0 * v1).abs() < 1e-12);
        let mut tape = Tape::new();
        let z = Tensor::vector(vec![3.0, 4.0]);
        let p = l1l2_penalty(&mut tape, &[&z], 0.001, 0.001).unwrap();
        assert!((p.item().unwrap() - 0.012).abs() < 1e-15);
    }

    #[test]
    fn tape_penalties_agree_with_oracles_on_random_batches() {
        let mut rng = stream(77, &[salt::INIT]);
        for _ in 0..20 {
            let (n, z) = (rng.random_range(2..7usize), rng.random_range(2..6usize));
            let rows: Vec<f64> = (0..n * z).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut tape = Tape::new();
            let t = Tensor::new(&[n, z], rows.clone()).unwrap();
            let p = disent_penalty(&mut tape, &t).unwrap().item().unwrap();
            assert!((p - disent_value(&rows, n, z).unwrap()).abs() < 1e-12);
            let vecs: Vec<Tensor> = rows
                .chunks_exact(z)
                .map(|r| Tensor::vector(r.to_vec()))
                .collect();
            let refs: Vec<&Tensor> = vecs.iter().collect();
            let mut tape = Tape::new();
            let q = l1l2_penalty(&mut tape, &refs, 0.001, 0.002).unwrap().item().unwrap();
            assert!((q - l1l2_value(&rows, n, z, 0.001, 0.002).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn minimizing_disent_decorrelates_a_linear_map() -> crate::error::Result<()> {
        // Fixed correlated batch; a trained linear map should drive the mean
        // absolute off-diagonal correlation of its output below 0.05.
        let mut rng = stream(9, &[salt::INIT]);
        let n = 64;
        let d = 4;
        let base: Vec<f64> = (0..n * d)
            .map(|_| rng.random_range(-1.0..1.0f64))
            .collect();
        // Correlate the columns by mixing in a shared factor.
        let mut x = Vec::with_capacity(n * d);
        for i in 0..n {
            let shared = base[i * d];
            for j in 0..d {
                x.push(0.5 * base[i * d + j] + 0.8 * shared);
            }
        }
        let x = Tensor::new(&[n, d], x).unwrap();
        let mut w = Tensor::new(
            &[d, d],
            (0..d * d)
                .map(|k| if k % (d + 1) == 0 { 1.0 } else { 0.02 })
                .collect(),
        )
        .unwrap();
        w.requires_grad = true;
        let mut adam = AdamState::new(&[&w], AdamConfig { lr: 5e-3, ..AdamConfig::default() });
        for _ in 0..2000 {
            let mut tape = Tape::new();
            let wt = tape.watch(&w);
            let wtt = tape.transpose(&wt)?;
            let out = tape.matmul(&x, &wtt)?;
            let loss = disent_penalty(&mut tape, &out)?;
            let grads = tape.backward(&loss)?;
            let g = grads.grad_of(&wt)?;
            adam.step(&mut [&mut w], &[g])?;
        }
        let mut tape = Tape::inference();
        let wt = tape.transpose(&w)?;
        let out = tape.matmul(&x, &wt)?;
        // Mean absolute off-diagonal correlation of the mapped batch.
        let rows = &out.data;
        let mut total = 0.0;
        let mut cells = 0;
        for k in 0..d {
            for l in 0..d {
                if k == l {
                    continue;
                }
                let c = covariance(rows, n, d, k, l)?;
                let vk = covariance(rows, n, d, k, k)?;
                let vl = covariance(rows, n, d, l, l)?;
                total += (c / (vk * vl).sqrt()).abs();
                cells += 1;
            }
        }
        let mean_corr = total / cells as f64;
        assert!(mean_corr < 0.05, "mean |correlation| stayed at {mean_corr}");
        Ok(())
    }
}
