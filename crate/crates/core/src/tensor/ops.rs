//! Differentiable tensor operations.
//!
//! Every op validates shapes, computes its forward value through the kernels
//! module, and — when run against a recording tape with any input requiring
//! gradients — pushes a node whose closure accumulates input gradients from
//! the output gradient. Outputs are always freshly allocated and contiguous.

use super::kernels::{self, ConvDims};
use super::tape::{Node, Tape};
use super::Tensor;
use crate::error::{Error, Result};

fn wants_grad(tape: &Tape, inputs: &[&Tensor]) -> bool {
    tape.is_recording() && inputs.iter().any(|t| t.requires_grad())
}

fn output(shape: Vec<usize>, data: Vec<f32>, track: bool) -> Tensor {
    Tensor::raw(shape, data, track)
}

/// Gradient snapshot of a tensor that is known to track gradients.
fn grad_of(t: &Tensor) -> Vec<f32> {
    t.grad().expect("recorded node output lost its gradient buffer")
}

/// c = a · b for rank-2 operands.
pub fn matmul(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::Shape(format!(
            "matmul expects (m,k)x(k,n), got {sa:?} x {sb:?}"
        )));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut data = vec![0.0f32; m * n];
    kernels::matmul_acc(a.data(), b.data(), &mut data, m, k, n);
    let track = wants_grad(tape, &[a, b]);
    let out = output(vec![m, n], data, track);
    if track {
        let (a, b, out_h) = (a.clone(), b.clone(), out.clone());
        tape.push(Node {
            name: "matmul",
            output: out.clone(),
            backward: Box::new(move || {
                let dc = grad_of(&out_h);
                if a.requires_grad() {
                    let bt = kernels::transpose2(b.data(), k, n);
                    let mut da = vec![0.0f32; m * k];
                    kernels::matmul_acc(&dc, &bt, &mut da, m, n, k);
                    a.accumulate_grad(&da);
                }
                if b.requires_grad() {
                    let at = kernels::transpose2(a.data(), m, k);
                    let mut db = vec![0.0f32; k * n];
                    kernels::matmul_acc(&at, &dc, &mut db, k, m, n);
                    b.accumulate_grad(&db);
                }
            }),
        });
    }
    Ok(out)
}

/// Batched matrix product for rank-3 operands with a shared batch extent.
pub fn bmm(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
        return Err(Error::Shape(format!(
            "bmm expects (B,m,k)x(B,k,n), got {sa:?} x {sb:?}"
        )));
    }
    let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
    let mut data = vec![0.0f32; bs * m * n];
    for i in 0..bs {
        kernels::matmul_acc(
            &a.data()[i * m * k..(i + 1) * m * k],
            &b.data()[i * k * n..(i + 1) * k * n],
            &mut data[i * m * n..(i + 1) * m * n],
            m,
            k,
            n,
        );
    }
    let track = wants_grad(tape, &[a, b]);
    let out = output(vec![bs, m, n], data, track);
    if track {
        let (a, b, out_h) = (a.clone(), b.clone(), out.clone());
        tape.push(Node {
            name: "bmm",
            output: out.clone(),
            backward: Box::new(move || {
                let dc = grad_of(&out_h);
                if a.requires_grad() {
                    let mut da = vec![0.0f32; bs * m * k];
                    for i in 0..bs {
                        let bt = kernels::transpose2(&b.data()[i * k * n..(i + 1) * k * n], k, n);
                        kernels::matmul_acc(
                            &dc[i * m * n..(i + 1) * m * n],
                            &bt,
                            &mut da[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    a.accumulate_grad(&da);
                }
                if b.requires_grad() {
                    let mut db = vec![0.0f32; bs * k * n];
                    for i in 0..bs {
                        let at = kernels::transpose2(&a.data()[i * m * k..(i + 1) * m * k], m, k);
                        kernels::matmul_acc(
                            &at,
                            &dc[i * m * n..(i + 1) * m * n],
                            &mut db[i * k * n..(i + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                    b.accumulate_grad(&db);
                }
            }),
        });
    }
    Ok(out)
}

/// Grouped 2-d cross-correlation with bias over NCHW input.
pub fn conv2d(
    tape: &Tape,
    x: &Tensor,
    w: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor> {
    let (sx, sw) = (x.shape(), w.shape());
    if sx.len() != 4 || sw.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects rank-4 input and weight, got {sx:?} and {sw:?}"
        )));
    }
    let (batch, in_c, in_h, in_w) = (sx[0], sx[1], sx[2], sx[3]);
    let (out_c, w_cpg, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
    if groups == 0 || in_c % groups != 0 || out_c % groups != 0 {
        return Err(Error::Shape(format!(
            "conv2d groups {groups} does not divide channels in={in_c} out={out_c}"
        )));
    }
    if w_cpg != in_c / groups {
        return Err(Error::Shape(format!(
            "conv2d weight expects {} channels per group, got {w_cpg}",
            in_c / groups
        )));
    }
    if bias.shape() != [out_c] {
        return Err(Error::Shape(format!(
            "conv2d bias shape {:?} does not match {out_c} output channels",
            bias.shape()
        )));
    }
    if stride == 0 || in_h + 2 * padding < kh || in_w + 2 * padding < kw {
        return Err(Error::Shape(format!(
            "conv2d kernel {kh}x{kw} stride {stride} padding {padding} \
             yields no output for input {in_h}x{in_w}"
        )));
    }
    let dims = ConvDims {
        batch,
        in_c,
        in_h,
        in_w,
        out_c,
        kh,
        kw,
        stride,
        padding,
        groups,
    };
    let (oh, ow) = (dims.out_h(), dims.out_w());
    let data = kernels::conv2d_fwd(x.data(), w.data(), bias.data(), &dims);
    let track = wants_grad(tape, &[x, w, bias]);
    let out = output(vec![batch, out_c, oh, ow], data, track);
    if track {
        let (x, w, bias, out_h) = (x.clone(), w.clone(), bias.clone(), out.clone());
        tape.push(Node {
            name: "conv2d",
            output: out.clone(),
            backward: Box::new(move || {
                let dy = grad_of(&out_h);
                if x.requires_grad() {
                    x.accumulate_grad(&kernels::conv2d_bwd_input(&dy, w.data(), &dims));
                }
                if w.requires_grad() || bias.requires_grad() {
                    let (dw, db) = kernels::conv2d_bwd_params(x.data(), &dy, &dims);
                    if w.requires_grad() {
                        w.accumulate_grad(&dw);
                    }
                    if bias.requires_grad() {
                        bias.accumulate_grad(&db);
                    }
                }
            }),
        });
    }
    Ok(out)
}

/// Normalize over the last axis to zero mean and unit variance, then apply
/// the affine scale-shift.
pub fn layer_norm(
    tape: &Tape,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<Tensor> {
    let dim = *x.shape().last().ok_or_else(|| {
        Error::Shape("layer_norm requires a tensor of rank >= 1".into())
    })?;
    if gamma.shape() != [dim] || beta.shape() != [dim] {
        return Err(Error::Shape(format!(
            "layer_norm over width {dim} got gamma {:?}, beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let (mean, inv_std) = kernels::row_stats(x.data(), dim, eps);
    let mut data = vec![0.0f32; x.numel()];
    for (r, (row, orow)) in x
        .data()
        .chunks_exact(dim)
        .zip(data.chunks_exact_mut(dim))
        .enumerate()
    {
        for (j, (&v, o)) in row.iter().zip(orow.iter_mut()).enumerate() {
            *o = (v - mean[r]) * inv_std[r] * gamma.data()[j] + beta.data()[j];
        }
    }
    let track = wants_grad(tape, &[x, gamma, beta]);
    let out = output(x.shape().to_vec(), data, track);
    if track {
        let (x, gamma, beta, out_h) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
        tape.push(Node {
            name: "layer_norm",
            output: out.clone(),
            backward: Box::new(move || {
                let dy = grad_of(&out_h);
                let rows = x.numel() / dim;
                let mut dx = vec![0.0f32; x.numel()];
                let mut dgamma = vec![0.0f32; dim];
                let mut dbeta = vec![0.0f32; dim];
                for r in 0..rows {
                    let xr = &x.data()[r * dim..(r + 1) * dim];
                    let dyr = &dy[r * dim..(r + 1) * dim];
                    // g = gamma .* dy in normalized coordinates
                    let mut g_sum = 0.0f64;
                    let mut gx_sum = 0.0f64;
                    for j in 0..dim {
                        let xhat = (xr[j] - mean[r]) * inv_std[r];
                        let g = gamma.data()[j] * dyr[j];
                        g_sum += f64::from(g);
                        gx_sum += f64::from(g) * f64::from(xhat);
                        dgamma[j] += dyr[j] * xhat;
                        dbeta[j] += dyr[j];
                    }
                    let g_mean = (g_sum / dim as f64) as f32;
                    let gx_mean = (gx_sum / dim as f64) as f32;
                    for j in 0..dim {
                        let xhat = (xr[j] - mean[r]) * inv_std[r];
                        let g = gamma.data()[j] * dyr[j];
                        dx[r * dim + j] = inv_std[r] * (g - g_mean - xhat * gx_mean);
                    }
                }
                if x.requires_grad() {
                    x.accumulate_grad(&dx);
                }
                if gamma.requires_grad() {
                    gamma.accumulate_grad(&dgamma);
                }
                if beta.requires_grad() {
                    beta.accumulate_grad(&dbeta);
                }
            }),
        });
    }
    Ok(out)
}

/// Softmax along `axis`, computed with max-subtraction.
pub fn softmax(tape: &Tape, x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::Shape(format!(
            "softmax axis {axis} out of range for shape {shape:?}"
        )));
    }
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let data = if inner == 1 {
        kernels::softmax_rows(x.data(), axis_len)
    } else {
        let outer: usize = shape[..axis].iter().product();
        let mut data = vec![0.0f32; x.numel()];
        let mut row = vec![0.0f32; axis_len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                for (j, r) in row.iter_mut().enumerate() {
                    *r = x.data()[base + j * inner];
                }
                let sm = kernels::softmax_rows(&row, axis_len);
                for (j, &v) in sm.iter().enumerate() {
                    data[base + j * inner] = v;
                }
            }
        }
        data
    };
    let track = wants_grad(tape, &[x]);
    let out = output(shape.to_vec(), data, track);
    if track {
        let (x, out_h) = (x.clone(), out.clone());
        let shape = shape.to_vec();
        tape.push(Node {
            name: "softmax",
            output: out.clone(),
            backward: Box::new(move || {
                let dy = grad_of(&out_h);
                let y = out_h.data();
                let axis_len = shape[axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..axis].iter().product();
                let mut dx = vec![0.0f32; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * axis_len * inner + i;
                        let mut dot = 0.0f64;
                        for j in 0..axis_len {
                            let idx = base + j * inner;
                            dot += f64::from(dy[idx]) * f64::from(y[idx]);
                        }
                        let dot = dot as f32;
                        for j in 0..axis_len {
                            let idx = base + j * inner;
                            dx[idx] = y[idx] * (dy[idx] - dot);
                        }
                    }
                }
                x.accumulate_grad(&dx);
            }),
        });
    }
    Ok(out)
}

/// Elementwise tanh-approximate GELU.
pub fn gelu(tape: &Tape, x: &Tensor) -> Tensor {
    let data: Vec<f32> = x.data().iter().map(|&v| kernels::gelu(v)).collect();
    let track = wants_grad(tape, &[x]);
    let out = output(x.shape().to_vec(), data, track);
    if track {
        let (x, out_h) = (x.clone(), out.clone());
        tape.push(Node {
            name: "gelu",
            output: out.clone(),
            backward: Box::new(move || {
                let dy = grad_of(&out_h);
                let dx: Vec<f32> = x
                    .data()
                    .iter()
                    .zip(&dy)
                    .map(|(&v, &d)| kernels::gelu_grad(v) * d)
                    .collect();
                x.accumulate_grad(&dx);
            }),
        });
    }
    out
}

/// Mean of squared differences over all elements.
pub fn mse_loss(tape: &Tape, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "mse_loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.numel();
    let mut sum = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = f64::from(p) - f64::from(t);
        sum += d * d;
    }
    let track = wants_grad(tape, &[pred, target]);
    let out = output(vec![1], vec![(sum / n as f64) as f32], track);
    if track {
        let (pred, target, out_h) = (pred.clone(), target.clone(), out.clone());
        tape.push(Node {
            name: "mse_loss",
            output: out.clone(),
            backward: Box::new(move || {
                let dl = grad_of(&out_h)[0];
                let scale = 2.0 * dl / n as f32;
                if pred.requires_grad() {
                    let dp: Vec<f32> = pred
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&p, &t)| scale * (p - t))
                        .collect();
                    pred.accumulate_grad(&dp);
                }
                if target.requires_grad() {
                    let dt: Vec<f32> = pred
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&p, &t)| -scale * (p - t))
                        .collect();
                    target.accumulate_grad(&dt);
                }
            }),
        });
    }
    Ok(out)
}

/// Elementwise sum of two same-shaped tensors.
pub fn add(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "add shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data: Vec<f32> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    let track = wants_grad(tape, &[a, b]);
    let out = output(a.shape().to_vec(), data, track);
    if track {
        let (a, b, out_h) = (a.clone(), b.clone(), out.clone());
        tape.push(Node {
            name: "add",
            output: out.clone(),
            backward: Box::new(move || {
                let dy = grad_of(&out_h);
                if a.requires_grad() {
                    a.accumulate_grad(&dy);
                }
                if b.requires_grad() {
                    b.accumulate_grad(&dy);
                }
            }),
        });
    }
    Ok(out)
}

/// Broadcast-add a width-D bias over the last axis.
pub fn bias_add(tape: &Tape, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let dim = *x.shape().last().unwrap_or(&0);
    if bias.shape() != [dim] || dim == 0 {
        return Err(Error::Shape(format!(
            "bias_add bias {:?} does not match last axis of {:?}",
            bias.shape(),
            x.shape()
        )));
    }
    let mut data = vec![0.0f32; x.numel()];
    for (row, orow) in x.data().chunks_exact(dim).zip(data.chunks_exact_mut(dim)) {
        for ((o, &v), &b) in orow.iter_mut().zip(row).zip(bias.data()) {
            *o = v + b;
        }
    }
    let track = wants_grad(tape, &[x, bias]);
    let out = output(x.shape().to_vec(), data, track);
    if track {
        let (x, bias, out_h) = (x.clone(), bias.clone(), out.clone());
        tape.push(Node {
            name: "bias_add",
            output: out.clone(),
            backward: Box::new(move || {
                let dy = grad_of(&out_h);
                if x.requires_grad() {
                    x.accumulate_grad(&dy);
                }
                if bias.requires_grad() {
                    let mut db = vec![0.0f32; dim];
                    for row in dy.chunks_exact(dim) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    bias.accumulate_grad(&db);
                }
            }),
        });
    }
    Ok(out)
}

/// Multiply every element by a constant.
pub fn scale(tape: &Tape, x: &Tensor, factor: f32) -> Tensor {
    let data: Vec<f32> = x.data().iter().map(|&v| v * factor).collect();
    let track = wants_grad(tape, &[x]);
    let out = output(x.shape().to_vec(), data, track);
    if track {
        let (x, out_h) = (x.clone(), out.clone());
        tape.push(Node {
            name: "scale",
            output: out.clone(),
            backward: Box::new(move || {
                let dx: Vec<f32> = grad_of(&out_h).iter().map(|&d| d * factor).collect();
                x.accumulate_grad(&dx);
            }),
        });
    }
    out
}

/// Reinterpret the buffer under a new shape with the same element count.
pub fn reshape(tape: &Tape, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let numel: usize = shape.iter().product();
    if numel != x.numel() || shape.iter().any(|&e| e == 0) {
        return Err(Error::Shape(format!(
            "cannot reshape {:?} into {shape:?}",
            x.shape()
        )));
    }
    let track = wants_grad(tape, &[x]);
    let out = output(shape.to_vec(), x.data().to_vec(), track);
    if track {
        let (x, out_h) = (x.clone(), out.clone());
        tape.push(Node {
            name: "reshape",
            output: out.clone(),
            backward: Box::new(move || {
                x.accumulate_grad(&grad_of(&out_h));
            }),
        });
    }
    Ok(out)
}

fn permuted_data(x: &Tensor, axes: &[usize]) -> Vec<f32> {
    let in_shape = x.shape();
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let out_strides_in: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut data = vec![0.0f32; x.numel()];
    let mut coords = vec![0usize; rank];
    let mut in_off = 0usize;
    for slot in data.iter_mut() {
        *slot = x.data()[in_off];
        // odometer increment over the output coordinates
        for d in (0..rank).rev() {
            coords[d] += 1;
            in_off += out_strides_in[d];
            if coords[d] < out_shape[d] {
                break;
            }
            in_off -= out_strides_in[d] * out_shape[d];
            coords[d] = 0;
        }
    }
    data
}

/// Reorder axes; `axes[d]` names the input axis that becomes output axis `d`.
pub fn permute(tape: &Tape, x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = x.shape().len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::Shape(format!(
            "permute axes {axes:?} is not a permutation of 0..{rank}"
        )));
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
    let data = permuted_data(x, axes);
    let track = wants_grad(tape, &[x]);
    let out = output(out_shape, data, track);
    if track {
        let mut inverse = vec![0usize; rank];
        for (d, &a) in axes.iter().enumerate() {
            inverse[a] = d;
        }
        let (x, out_h) = (x.clone(), out.clone());
        tape.push(Node {
            name: "permute",
            output: out.clone(),
            backward: Box::new(move || {
                let dy = Tensor::raw(out_h.shape().to_vec(), grad_of(&out_h), false);
                x.accumulate_grad(&permuted_data(&dy, &inverse));
            }),
        });
    }
    Ok(out)
}

/// Average a [N, L, D] token tensor over its token axis, giving [N, D].
pub fn mean_tokens(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "mean_tokens expects (N,L,D), got {shape:?}"
        )));
    }
    let (n, l, d) = (shape[0], shape[1], shape[2]);
    let mut data = vec![0.0f32; n * d];
    for i in 0..n {
        let mut acc = vec![0.0f64; d];
        for t in 0..l {
            let row = &x.data()[(i * l + t) * d..(i * l + t + 1) * d];
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += f64::from(v);
            }
        }
        for (o, a) in data[i * d..(i + 1) * d].iter_mut().zip(acc) {
            *o = (a / l as f64) as f32;
        }
    }
    let track = wants_grad(tape, &[x]);
    let out = output(vec![n, d], data, track);
    if track {
        let (x, out_h) = (x.clone(), out.clone());
        tape.push(Node {
            name: "mean_tokens",
            output: out.clone(),
            backward: Box::new(move || {
                let dy = grad_of(&out_h);
                let inv = 1.0 / l as f32;
                let mut dx = vec![0.0f32; x.numel()];
                for i in 0..n {
                    for t in 0..l {
                        let dst = &mut dx[(i * l + t) * d..(i * l + t + 1) * d];
                        for (o, &g) in dst.iter_mut().zip(&dy[i * d..(i + 1) * d]) {
                            *o = g * inv;
                        }
                    }
                }
                x.accumulate_grad(&dx);
            }),
        });
    }
    Ok(out)
}

/// Sum of all elements as a scalar tensor.
pub fn sum_all(tape: &Tape, x: &Tensor) -> Tensor {
    let mut sum = 0.0f64;
    for &v in x.data() {
        sum += f64::from(v);
    }
    let track = wants_grad(tape, &[x]);
    let out = output(vec![1], vec![sum as f32], track);
    if track {
        let (x, out_h) = (x.clone(), out.clone());
        tape.push(Node {
            name: "sum_all",
            output: out.clone(),
            backward: Box::new(move || {
                let d = grad_of(&out_h)[0];
                x.accumulate_grad(&vec![d; x.numel()]);
            }),
        });
    }
    out
}

/// Fully-connected layer over the last axis: reshape to rows, multiply by a
/// (D_in, D_out) weight, add bias, restore the leading shape.
pub fn linear(tape: &Tape, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d_in = *x.shape().last().ok_or_else(|| {
        Error::Shape("linear requires a tensor of rank >= 1".into())
    })?;
    if w.shape().len() != 2 || w.shape()[0] != d_in {
        return Err(Error::Shape(format!(
            "linear weight {:?} does not accept inputs of width {d_in}",
            w.shape()
        )));
    }
    let d_out = w.shape()[1];
    let rows = x.numel() / d_in;
    let flat = reshape(tape, x, &[rows, d_in])?;
    let y = matmul(tape, &flat, w)?;
    let y = bias_add(tape, &y, b)?;
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = d_out;
    reshape(tape, &y, &out_shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tape::backward;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_case() {
        let tape = Tape::disabled();
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let c = matmul(&tape, &eye, &b).unwrap();
        assert_eq!(c.data(), b.data());
    }

    #[test]
    fn matmul_row_times_column() {
        let tape = Tape::disabled();
        let a = t(&[1, 2], &[1.0, 2.0]);
        let b = t(&[2, 1], &[3.0, 4.0]);
        let c = matmul(&tape, &a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_rejects_mismatch_with_diagnostic() {
        let tape = Tape::disabled();
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        let err = matmul(&tape, &a, &b).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"), "{err}");
    }

    #[test]
    fn conv2d_ones_kernel_sums_window() {
        let tape = Tape::disabled();
        let x = t(&[1, 1, 3, 3], &[1.0; 9]);
        let w = t(&[1, 1, 3, 3], &[1.0; 9]);
        let b = t(&[1], &[0.0]);
        let y = conv2d(&tape, &x, &w, &b, 1, 0, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv2d_identity_kernel_preserves_input() {
        let tape = Tape::disabled();
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 1, 1], &[1.0]);
        let b = t(&[1], &[0.0]);
        let y = conv2d(&tape, &x, &w, &b, 1, 0, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv2d_rejects_bad_groups() {
        let tape = Tape::disabled();
        let x = t(&[1, 3, 4, 4], &[0.0; 48]);
        let w = t(&[2, 1, 3, 3], &[0.0; 18]);
        let b = t(&[2], &[0.0; 2]);
        assert!(conv2d(&tape, &x, &w, &b, 1, 1, 2).is_err());
    }

    #[test]
    fn conv2d_rejects_vanishing_output() {
        let tape = Tape::disabled();
        let x = t(&[1, 1, 2, 2], &[0.0; 4]);
        let w = t(&[1, 1, 5, 5], &[0.0; 25]);
        let b = t(&[1], &[0.0]);
        assert!(conv2d(&tape, &x, &w, &b, 1, 0, 1).is_err());
    }

    #[test]
    fn layer_norm_constant_row_maps_to_beta() {
        let tape = Tape::disabled();
        let x = t(&[1, 3], &[1.0, 1.0, 1.0]);
        let gamma = t(&[3], &[1.0; 3]);
        let beta = t(&[3], &[0.5, -0.5, 0.0]);
        let y = layer_norm(&tape, &x, &gamma, &beta, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.5, -0.5, 0.0]);
    }

    #[test]
    fn layer_norm_unit_variance_row_is_fixed_point() {
        let tape = Tape::disabled();
        let x = t(&[1, 2], &[-1.0, 1.0]);
        let gamma = t(&[2], &[1.0; 2]);
        let beta = t(&[2], &[0.0; 2]);
        let y = layer_norm(&tape, &x, &gamma, &beta, 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-5);
        assert!((y.data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn softmax_symmetry_and_extremes() {
        let tape = Tape::disabled();
        let y = softmax(&tape, &t(&[2], &[0.0, 0.0]), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax(&tape, &t(&[2], &[1000.0, 1000.0]), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax(&tape, &t(&[2], &[0.0, 3.0f32.ln()]), 0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-6);
        assert!((y.data()[1] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn softmax_inner_axis_matches_last_axis_route() {
        let tape = Tape::disabled();
        let x = t(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let along_rows = softmax(&tape, &x, 0).unwrap();
        let xt = permute(&tape, &x, &[1, 0]).unwrap();
        let expect = softmax(&tape, &xt, 1).unwrap();
        let back = permute(&tape, &expect, &[1, 0]).unwrap();
        for (a, b) in along_rows.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn gelu_fixed_points() {
        let tape = Tape::disabled();
        let y = gelu(&tape, &t(&[2], &[0.0, 10.0]));
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 10.0).abs() < 1e-3);
    }

    #[test]
    fn mse_matches_hand_arithmetic() {
        let tape = Tape::disabled();
        let zero = mse_loss(&tape, &t(&[2], &[1.0, -1.0]), &t(&[2], &[1.0, -1.0])).unwrap();
        assert_eq!(zero.item().unwrap(), 0.0);
        let four = mse_loss(&tape, &t(&[2], &[1.0, -1.0]), &t(&[2], &[-1.0, 1.0])).unwrap();
        assert_eq!(four.item().unwrap(), 4.0);
    }

    #[test]
    fn sum_all_gradient_is_ones() {
        let tape = Tape::new();
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_grad();
        let loss = sum_all(&tape, &x);
        backward(&loss, &tape).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn scalar_weight_mse_gradient_closed_form() {
        // loss = mse(w*x, y) for scalar w: dw = mean(2 x (w x - y))
        let tape = Tape::new();
        let w = t(&[1, 1], &[0.7]).with_grad();
        let x = t(&[1, 3], &[1.0, 2.0, 3.0]);
        let y = t(&[1, 3], &[0.5, 1.0, -1.0]);
        let pred = matmul(&tape, &w, &x).unwrap();
        let loss = mse_loss(&tape, &pred, &y).unwrap();
        backward(&loss, &tape).unwrap();
        let expect: f32 = (0..3)
            .map(|i| 2.0 * x.data()[i] * (0.7 * x.data()[i] - y.data()[i]))
            .sum::<f32>()
            / 3.0;
        let got = w.grad().unwrap()[0];
        assert!((got - expect).abs() < 1e-5, "{got} vs {expect}");
    }

    #[test]
    fn shared_input_accumulates_both_paths() {
        // z = sum(x + x) => dz/dx = 2
        let tape = Tape::new();
        let x = t(&[2], &[1.0, 2.0]).with_grad();
        let y = add(&tape, &x, &x).unwrap();
        let z = sum_all(&tape, &y);
        backward(&z, &tape).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn permute_roundtrip_restores_layout() {
        let tape = Tape::disabled();
        let x = t(&[2, 3, 4], &(0..24).map(|v| v as f32).collect::<Vec<_>>());
        let p = permute(&tape, &x, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[1, 0, 2]), x.at(&[0, 2, 1]));
        let back = permute(&tape, &p, &[1, 2, 0]).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn linear_shapes_and_bias() {
        let tape = Tape::disabled();
        let x = t(&[2, 2, 3], &[0.0; 12]);
        let w = t(&[3, 4], &[0.0; 12]);
        let b = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        let y = linear(&tape, &x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[2, 2, 4]);
        assert_eq!(&y.data()[..4], &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn mean_tokens_averages_middle_axis() {
        let tape = Tape::disabled();
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = mean_tokens(&tape, &x).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[2.0, 3.0]);
    }
}
