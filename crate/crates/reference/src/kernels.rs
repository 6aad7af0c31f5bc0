//! Naive f64 math written for clarity, not speed.

/// c[m,n] = a[m,k] * b[k,n], textbook triple loop.
pub fn matmul64(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
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

/// Dimensions for the naive convolution below.
#[derive(Clone, Copy)]
pub struct Conv64Dims {
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

impl Conv64Dims {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kh) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kw) / self.stride + 1
    }
}

/// Grouped 2-d cross-correlation over NCHW, seven explicit loops,
/// zero padding handled by bounds checks.
pub fn conv2d64(x: &[f64], w: &[f64], bias: &[f64], d: &Conv64Dims) -> Vec<f64> {
    let (oh, ow) = (d.out_h(), d.out_w());
    let cpg_in = d.in_c / d.groups;
    let cpg_out = d.out_c / d.groups;
    let mut out = vec![0.0; d.batch * d.out_c * oh * ow];
    for b in 0..d.batch {
        for oc in 0..d.out_c {
            let g = oc / cpg_out;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc];
                    for ic_local in 0..cpg_in {
                        let ic = g * cpg_in + ic_local;
                        for ky in 0..d.kh {
                            for kx in 0..d.kw {
                                let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                                let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                                if iy < 0
                                    || ix < 0
                                    || iy >= d.in_h as isize
                                    || ix >= d.in_w as isize
                                {
                                    continue;
                                }
                                let xi = ((b * d.in_c + ic) * d.in_h + iy as usize) * d.in_w
                                    + ix as usize;
                                let wi = ((oc * cpg_in + ic_local) * d.kh + ky) * d.kw + kx;
                                acc += x[xi] * w[wi];
                            }
                        }
                    }
                    out[((b * d.out_c + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Row-wise layer norm with affine parameters over the final axis.
pub fn layer_norm64(x: &[f64], gamma: &[f64], beta: &[f64], dim: usize, eps: f64) -> Vec<f64> {
    assert_eq!(x.len() % dim, 0);
    let mut out = vec![0.0; x.len()];
    for (row, orow) in x.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (j, (&v, o)) in row.iter().zip(orow.iter_mut()).enumerate() {
            *o = (v - mean) * inv * gamma[j] + beta[j];
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax64(x: &[f64], cols: usize) -> Vec<f64> {
    assert_eq!(x.len() % cols, 0);
    let mut out = vec![0.0; x.len()];
    for (row, orow) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Tanh-form GELU, matching the production approximation but in f64.
pub fn gelu64(v: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * v * (1.0 + (c * (v + 0.044715 * v * v * v)).tanh())
}

/// Mean squared error over flattened slices.
pub fn mse64(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

/// Standard normal CDF via adaptive Simpson quadrature of the density from
/// zero, exploiting symmetry. Accurate to well below 1e-10 on |z| <= 8.
pub fn normal_cdf(z: f64) -> f64 {
    if z < 0.0 {
        return 1.0 - normal_cdf(-z);
    }
    if z > 12.0 {
        return 1.0;
    }
    fn density(t: f64) -> f64 {
        (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
    fn simpson(a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (density(a) + 4.0 * density(0.5 * (a + b)) + density(b))
    }
    fn adaptive(a: f64, b: f64, whole: f64, depth: u32) -> f64 {
        let mid = 0.5 * (a + b);
        let left = simpson(a, mid);
        let right = simpson(mid, b);
        if depth == 0 || (left + right - whole).abs() < 1e-13 {
            left + right + (left + right - whole) / 15.0
        } else {
            adaptive(a, mid, left, depth - 1) + adaptive(mid, b, right, depth - 1)
        }
    }
    0.5 + adaptive(0.0, z, simpson(0.0, z), 40)
}

/// Central finite difference of `f` at `x[i]`, step `h`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xs = x.to_vec();
    xs[i] = x[i] + h;
    let up = f(&xs);
    xs[i] = x[i] - h;
    let down = f(&xs);
    (up - down) / (2.0 * h)
}
