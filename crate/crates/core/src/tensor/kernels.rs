//! Raw f32 compute kernels on plain slices. No tape, no shape objects.
//!
//! All kernels are single-threaded and reduce in row-major index order, so
//! results are bit-reproducible for a given input. Row reductions
//! (layer-norm statistics, softmax sums, means) accumulate in f64.

use std::sync::atomic::{AtomicU64, Ordering};

/// Running count of multiply-accumulates issued by the matmul and conv
/// kernels. Used by tests to compare measured work against flop estimates.
static MAC_COUNT: AtomicU64 = AtomicU64::new(0);

pub fn reset_mac_count() {
    MAC_COUNT.store(0, Ordering::Relaxed);
}

pub fn mac_count() -> u64 {
    MAC_COUNT.load(Ordering::Relaxed)
}

fn record_macs(n: u64) {
    MAC_COUNT.fetch_add(n, Ordering::Relaxed);
}

/// out += a(m×k) · b(k×n). The i,k,j loop order keeps the inner loop
/// contiguous over both `b` and `out`.
pub fn matmul_acc(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    record_macs((m * k * n) as u64);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
}

pub fn transpose2(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Geometry of one conv2d application, shared by forward and backward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kw) / self.stride + 1
    }
}

/// Grouped cross-correlation plus bias, NCHW layout, zero padding.
///
/// Internally lowers each (batch, group) to a patch matrix and multiplies it
/// with the fast matmul kernel, so convolution runs at matmul throughput.
/// Per output element the accumulation order is bias, then (ic, ky, kx) —
/// the same order a direct loop nest would use.
pub fn conv2d_fwd(x: &[f32], w: &[f32], bias: &[f32], d: &ConvDims) -> Vec<f32> {
    let (oh, ow) = (d.out_h(), d.out_w());
    let cpg = d.in_c / d.groups; // input channels per group
    let opg = d.out_c / d.groups;
    let kdim = cpg * d.kh * d.kw;
    let positions = oh * ow;
    let mut out = vec![0.0f32; d.batch * d.out_c * oh * ow];
    // patch matrix, one column per output position: rows follow (ic, ky, kx)
    let mut patches = vec![0.0f32; kdim * positions];
    for b in 0..d.batch {
        for g in 0..d.groups {
            for ic in 0..cpg {
                let x_plane = &x[(b * d.in_c + g * cpg + ic) * d.in_h * d.in_w..];
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let row = &mut patches[((ic * d.kh + ky) * d.kw + kx) * positions..]
                            [..positions];
                        for oy in 0..oh {
                            let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                            let in_row = (iy >= 0 && iy < d.in_h as isize)
                                .then(|| &x_plane[iy as usize * d.in_w..][..d.in_w]);
                            for ox in 0..ow {
                                let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                                row[oy * ow + ox] = match in_row {
                                    Some(xr) if ix >= 0 && ix < d.in_w as isize => {
                                        xr[ix as usize]
                                    }
                                    _ => 0.0,
                                };
                            }
                        }
                    }
                }
            }
            let out_g = &mut out[(b * d.out_c + g * opg) * positions..][..opg * positions];
            for (oc, row) in out_g.chunks_exact_mut(positions).enumerate() {
                row.fill(bias[g * opg + oc]);
            }
            matmul_acc(
                &w[g * opg * kdim..(g + 1) * opg * kdim],
                &patches,
                out_g,
                opg,
                kdim,
                positions,
            );
        }
    }
    out
}

/// Input gradient of conv2d: scatter w·dOut back onto the input grid.
pub fn conv2d_bwd_input(dout: &[f32], w: &[f32], d: &ConvDims) -> Vec<f32> {
    let (oh, ow) = (d.out_h(), d.out_w());
    let cpg = d.in_c / d.groups;
    let opg = d.out_c / d.groups;
    let mut dx = vec![0.0f32; d.batch * d.in_c * d.in_h * d.in_w];
    for b in 0..d.batch {
        for oc in 0..d.out_c {
            let g = oc / opg;
            let w_oc = &w[oc * cpg * d.kh * d.kw..(oc + 1) * cpg * d.kh * d.kw];
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = dout[((b * d.out_c + oc) * oh + oy) * ow + ox];
                    if go == 0.0 {
                        continue;
                    }
                    for ic in 0..cpg {
                        let xin = g * cpg + ic;
                        let dx_plane =
                            &mut dx[(b * d.in_c + xin) * d.in_h * d.in_w..][..d.in_h * d.in_w];
                        for ky in 0..d.kh {
                            let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                            if iy < 0 || iy >= d.in_h as isize {
                                continue;
                            }
                            for kx in 0..d.kw {
                                let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                                if ix < 0 || ix >= d.in_w as isize {
                                    continue;
                                }
                                dx_plane[iy as usize * d.in_w + ix as usize] +=
                                    go * w_oc[(ic * d.kh + ky) * d.kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Weight and bias gradients of conv2d.
pub fn conv2d_bwd_params(x: &[f32], dout: &[f32], d: &ConvDims) -> (Vec<f32>, Vec<f32>) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let cpg = d.in_c / d.groups;
    let opg = d.out_c / d.groups;
    let mut dw = vec![0.0f32; d.out_c * cpg * d.kh * d.kw];
    let mut db = vec![0.0f32; d.out_c];
    for b in 0..d.batch {
        for oc in 0..d.out_c {
            let g = oc / opg;
            let dw_oc = &mut dw[oc * cpg * d.kh * d.kw..(oc + 1) * cpg * d.kh * d.kw];
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = dout[((b * d.out_c + oc) * oh + oy) * ow + ox];
                    db[oc] += go;
                    if go == 0.0 {
                        continue;
                    }
                    for ic in 0..cpg {
                        let xin = g * cpg + ic;
                        let x_plane = &x[(b * d.in_c + xin) * d.in_h * d.in_w..];
                        for ky in 0..d.kh {
                            let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                            if iy < 0 || iy >= d.in_h as isize {
                                continue;
                            }
                            for kx in 0..d.kw {
                                let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                                if ix < 0 || ix >= d.in_w as isize {
                                    continue;
                                }
                                dw_oc[(ic * d.kh + ky) * d.kw + kx] +=
                                    go * x_plane[iy as usize * d.in_w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (dw, db)
}

/// Numerically stable softmax over contiguous rows of length `cols`.
pub fn softmax_rows(x: &[f32], cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for (row, orow) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for (o, &v) in orow.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            sum += f64::from(e);
        }
        let inv = (1.0 / sum) as f32;
        for o in orow.iter_mut() {
            *o *= inv;
        }
    }
    out
}

/// Per-row mean and 1/sqrt(var + eps); population variance over the row.
pub fn row_stats(x: &[f32], cols: usize, eps: f32) -> (Vec<f32>, Vec<f32>) {
    let rows = x.len() / cols;
    let mut mean = vec![0.0f32; rows];
    let mut inv_std = vec![0.0f32; rows];
    for (r, row) in x.chunks_exact(cols).enumerate() {
        let mut sum = 0.0f64;
        for &v in row {
            sum += f64::from(v);
        }
        let mu = sum / cols as f64;
        let mut var = 0.0f64;
        for &v in row {
            let d = f64::from(v) - mu;
            var += d * d;
        }
        var /= cols as f64;
        mean[r] = mu as f32;
        inv_std[r] = (1.0 / (var + f64::from(eps)).sqrt()) as f32;
    }
    (mean, inv_std)
}

pub const GELU_COEF: f32 = 0.797_884_56; // sqrt(2/pi)

/// Tanh-approximate GELU.
pub fn gelu(v: f32) -> f32 {
    0.5 * v * (1.0 + (GELU_COEF * (v + 0.044_715 * v * v * v)).tanh())
}

/// Derivative of the tanh-approximate GELU.
pub fn gelu_grad(v: f32) -> f32 {
    let inner = GELU_COEF * (v + 0.044_715 * v * v * v);
    let t = inner.tanh();
    let d_inner = GELU_COEF * (1.0 + 3.0 * 0.044_715 * v * v);
    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = [1.0, 0.0, 0.0, 1.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        let mut out = [0.0; 4];
        matmul_acc(&a, &b, &mut out, 2, 2, 2);
        assert_eq!(out, b);
    }

    #[test]
    fn conv_output_geometry() {
        let d = ConvDims {
            batch: 1,
            in_c: 1,
            in_h: 9,
            in_w: 9,
            out_c: 1,
            kh: 3,
            kw: 3,
            stride: 2,
            padding: 1,
            groups: 1,
        };
        assert_eq!((d.out_h(), d.out_w()), (5, 5));
    }

    #[test]
    fn mac_counter_tracks_matmul() {
        reset_mac_count();
        let a = vec![1.0; 6];
        let b = vec![1.0; 12];
        let mut out = vec![0.0; 8];
        matmul_acc(&a, &b, &mut out, 2, 3, 4);
        assert_eq!(mac_count(), 24);
    }
}
