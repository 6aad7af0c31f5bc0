//! Standard full multi-head self-attention, written from scratch in f64 with
//! plain loops. Used as the equivalence oracle for the spatial-reduction
//! attention at reduction ratio 1, where the key/value reduction degenerates
//! to a per-token 1x1 transform followed by layer norm; that transform is
//! folded in here so the two computations share weights exactly.

use pvtscan::model::SrAttention;
use pvtscan::Tensor;

fn to64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

/// y[r, o] = sum_i x[r, i] * w[i, o] + b[o]  (production linear layout)
fn apply_linear(x: &[f64], rows: usize, d_in: usize, d_out: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; rows * d_out];
    for r in 0..rows {
        for o in 0..d_out {
            let mut acc = b[o];
            for i in 0..d_in {
                acc += x[r * d_in + i] * w[i * d_out + o];
            }
            y[r * d_out + o] = acc;
        }
    }
    y
}

/// Full multi-head self-attention over tokens `x` [n, l, d], sharing the
/// given module's weights. The module's kernel-1 reduction convolution is a
/// per-token linear map (conv weight layout [out][in][1][1], i.e. transposed
/// relative to the linear layout), applied with its layer norm to the
/// key/value source before projection. Requires `attn.sr_ratio == 1`.
pub fn full_attention_oracle(attn: &SrAttention, x: &[f64], n: usize, l: usize) -> Result<Vec<f64>, String> {
    if attn.sr_ratio != 1 {
        return Err(format!(
            "full-attention oracle only applies at reduction ratio 1, got {}",
            attn.sr_ratio
        ));
    }
    let d = attn.dim;
    let heads = attn.heads;
    let dh = d / heads;
    if x.len() != n * l * d {
        return Err(format!("input length {} != {}*{}*{}", x.len(), n, l, d));
    }

    let wq = to64(&attn.q.w);
    let bq = to64(&attn.q.b);
    let wk = to64(&attn.k.w);
    let bk = to64(&attn.k.b);
    let wv = to64(&attn.v.w);
    let bv = to64(&attn.v.b);
    let wp = to64(&attn.proj.w);
    let bp = to64(&attn.proj.b);
    let wsr = to64(&attn.sr.w); // [d, d, 1, 1] -> row o holds input weights
    let bsr = to64(&attn.sr.b);
    let gamma = to64(&attn.sr_norm.g);
    let beta = to64(&attn.sr_norm.b);
    let eps = f64::from(attn.sr_norm.eps);

    // key/value source: 1x1 transform per token, then layer norm
    let mut kv_src = vec![0.0; n * l * d];
    for r in 0..n * l {
        for o in 0..d {
            let mut acc = bsr[o];
            for i in 0..d {
                acc += wsr[o * d + i] * x[r * d + i];
            }
            kv_src[r * d + o] = acc;
        }
    }
    for r in 0..n * l {
        let row = &mut kv_src[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gamma[j] + beta[j];
        }
    }

    let q = apply_linear(x, n * l, d, d, &wq, &bq);
    let k = apply_linear(&kv_src, n * l, d, d, &wk, &bk);
    let v = apply_linear(&kv_src, n * l, d, d, &wv, &bv);

    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = vec![0.0; n * l * d];
    for b in 0..n {
        for head in 0..heads {
            let col = head * dh;
            for qi in 0..l {
                // scaled dot products against every key, softmaxed in place
                let mut scores = vec![0.0; l];
                for ki in 0..l {
                    let mut dot = 0.0;
                    for j in 0..dh {
                        dot += q[(b * l + qi) * d + col + j] * k[(b * l + ki) * d + col + j];
                    }
                    scores[ki] = dot * scale;
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                for s in scores.iter_mut() {
                    *s /= total;
                }
                for j in 0..dh {
                    let mut acc = 0.0;
                    for ki in 0..l {
                        acc += scores[ki] * v[(b * l + ki) * d + col + j];
                    }
                    ctx[(b * l + qi) * d + col + j] = acc;
                }
            }
        }
    }
    Ok(apply_linear(&ctx, n * l, d, d, &wp, &bp))
}
