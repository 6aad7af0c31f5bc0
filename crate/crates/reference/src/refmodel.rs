//! An f64 mirror of the pyramid backbone, built from a production model's
//! named parameters and driven entirely by the naive kernels in this crate.
//!
//! Finite differences through this forward pass are numerically clean
//! (f64 everywhere), so it serves as the oracle for the composed gradient
//! check and as an independent second implementation of the architecture.

use std::collections::BTreeMap;

use pvtscan::model::config::{PvtConfig, STAGES};
use pvtscan::model::PvtModel;

use crate::kernels::{conv2d64, gelu64, layer_norm64, matmul64, mse64, softmax64, Conv64Dims};

pub struct RefModel {
    pub config: PvtConfig,
    pub params: BTreeMap<String, Vec<f64>>,
}

fn linear64(x: &[f64], rows: usize, w: &[f64], b: &[f64], d_in: usize, d_out: usize) -> Vec<f64> {
    let mut y = matmul64(x, w, rows, d_in, d_out);
    for row in y.chunks_exact_mut(d_out) {
        for (v, &bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    y
}

/// [n, l, d] -> [n, d, l] (token rows to channel planes and back).
fn transpose_ld(x: &[f64], n: usize, l: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for i in 0..l {
            for j in 0..d {
                out[(b * d + j) * l + i] = x[(b * l + i) * d + j];
            }
        }
    }
    out
}

impl RefModel {
    pub fn from_model(model: &PvtModel) -> RefModel {
        let params = model
            .named_params()
            .into_iter()
            .map(|(name, tensor)| {
                (name, tensor.data().iter().map(|&v| f64::from(v)).collect())
            })
            .collect();
        RefModel {
            config: model.config.clone(),
            params,
        }
    }

    pub fn param(&self, name: &str) -> &[f64] {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("reference model has no parameter {name}"))
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Vec<f64> {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("reference model has no parameter {name}"))
    }

    fn norm(&self, prefix: &str, x: &[f64], dim: usize) -> Vec<f64> {
        layer_norm64(
            x,
            self.param(&format!("{prefix}.gamma")),
            self.param(&format!("{prefix}.beta")),
            dim,
            f64::from(self.config.ln_eps),
        )
    }

    fn attention(
        &self,
        prefix: &str,
        x: &[f64],
        n: usize,
        h: usize,
        w: usize,
        dim: usize,
        heads: usize,
        sr_ratio: usize,
    ) -> Vec<f64> {
        let l = h * w;
        let dh = dim / heads;
        let q = linear64(
            x,
            n * l,
            self.param(&format!("{prefix}.q.weight")),
            self.param(&format!("{prefix}.q.bias")),
            dim,
            dim,
        );

        // spatial reduction of the key/value source
        let grid = transpose_ld(x, n, l, dim);
        let dims = Conv64Dims {
            batch: n,
            in_c: dim,
            in_h: h,
            in_w: w,
            out_c: dim,
            kh: sr_ratio,
            kw: sr_ratio,
            stride: sr_ratio,
            padding: 0,
            groups: 1,
        };
        let red = conv2d64(
            &grid,
            self.param(&format!("{prefix}.sr.weight")),
            self.param(&format!("{prefix}.sr.bias")),
            &dims,
        );
        let (rh, rw) = (dims.out_h(), dims.out_w());
        let lk = rh * rw;
        // [n, d, lk] -> [n, lk, d]
        let mut red_tokens = vec![0.0; n * lk * dim];
        for b in 0..n {
            for j in 0..dim {
                for i in 0..lk {
                    red_tokens[(b * lk + i) * dim + j] = red[(b * dim + j) * lk + i];
                }
            }
        }
        let red_tokens = self.norm(&format!("{prefix}.srnorm"), &red_tokens, dim);

        let k = linear64(
            &red_tokens,
            n * lk,
            self.param(&format!("{prefix}.k.weight")),
            self.param(&format!("{prefix}.k.bias")),
            dim,
            dim,
        );
        let v = linear64(
            &red_tokens,
            n * lk,
            self.param(&format!("{prefix}.v.weight")),
            self.param(&format!("{prefix}.v.bias")),
            dim,
            dim,
        );

        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = vec![0.0; n * l * dim];
        for b in 0..n {
            for head in 0..heads {
                let col = head * dh;
                // gather the head's submatrices
                let mut qh = vec![0.0; l * dh];
                for i in 0..l {
                    qh[i * dh..(i + 1) * dh]
                        .copy_from_slice(&q[(b * l + i) * dim + col..(b * l + i) * dim + col + dh]);
                }
                let mut kht = vec![0.0; dh * lk]; // transposed: [dh, lk]
                let mut vh = vec![0.0; lk * dh];
                for i in 0..lk {
                    for j in 0..dh {
                        kht[j * lk + i] = k[(b * lk + i) * dim + col + j];
                    }
                    vh[i * dh..(i + 1) * dh]
                        .copy_from_slice(&v[(b * lk + i) * dim + col..(b * lk + i) * dim + col + dh]);
                }
                let mut scores = matmul64(&qh, &kht, l, dh, lk);
                for s in scores.iter_mut() {
                    *s *= scale;
                }
                let probs = softmax64(&scores, lk);
                let ctxh = matmul64(&probs, &vh, l, lk, dh);
                for i in 0..l {
                    ctx[(b * l + i) * dim + col..(b * l + i) * dim + col + dh]
                        .copy_from_slice(&ctxh[i * dh..(i + 1) * dh]);
                }
            }
        }
        linear64(
            &ctx,
            n * l,
            self.param(&format!("{prefix}.proj.weight")),
            self.param(&format!("{prefix}.proj.bias")),
            dim,
            dim,
        )
    }

    fn conv_ffn(
        &self,
        prefix: &str,
        x: &[f64],
        n: usize,
        h: usize,
        w: usize,
        dim: usize,
        mlp_ratio: usize,
    ) -> Vec<f64> {
        let l = h * w;
        let hidden = dim * mlp_ratio;
        let y = linear64(
            x,
            n * l,
            self.param(&format!("{prefix}.fc1.weight")),
            self.param(&format!("{prefix}.fc1.bias")),
            dim,
            hidden,
        );
        let grid = transpose_ld(&y, n, l, hidden);
        let dims = Conv64Dims {
            batch: n,
            in_c: hidden,
            in_h: h,
            in_w: w,
            out_c: hidden,
            kh: 3,
            kw: 3,
            stride: 1,
            padding: 1,
            groups: hidden,
        };
        let grid = conv2d64(
            &grid,
            self.param(&format!("{prefix}.dw.weight")),
            self.param(&format!("{prefix}.dw.bias")),
            &dims,
        );
        // back to tokens, then GELU
        let mut y = vec![0.0; n * l * hidden];
        for b in 0..n {
            for j in 0..hidden {
                for i in 0..l {
                    y[(b * l + i) * hidden + j] = gelu64(grid[(b * hidden + j) * l + i]);
                }
            }
        }
        linear64(
            &y,
            n * l,
            self.param(&format!("{prefix}.fc2.weight")),
            self.param(&format!("{prefix}.fc2.bias")),
            hidden,
            dim,
        )
    }

    /// Scores [n], mirroring the production forward pass.
    pub fn forward_scores(&self, x: &[f64], n: usize) -> Vec<f64> {
        let res = self.config.input_resolution;
        assert_eq!(x.len(), n * self.config.input_channels * res * res);
        let mut map = x.to_vec();
        let mut in_c = self.config.input_channels;
        let mut side = res;
        let mut tokens = Vec::new();
        let mut dim = 0;
        for stage in 0..STAGES {
            dim = self.config.embed_dims[stage];
            let kernel = self.config.patch_kernels[stage];
            let dims = Conv64Dims {
                batch: n,
                in_c,
                in_h: side,
                in_w: side,
                out_c: dim,
                kh: kernel,
                kw: kernel,
                stride: self.config.patch_strides[stage],
                padding: kernel / 2,
                groups: 1,
            };
            let embedded = conv2d64(
                &map,
                self.param(&format!("stage{stage}.embed.conv.weight")),
                self.param(&format!("stage{stage}.embed.conv.bias")),
                &dims,
            );
            side = dims.out_h();
            let l = side * side;
            // [n, d, l] -> [n, l, d]
            let mut toks = vec![0.0; n * l * dim];
            for b in 0..n {
                for j in 0..dim {
                    for i in 0..l {
                        toks[(b * l + i) * dim + j] = embedded[(b * dim + j) * l + i];
                    }
                }
            }
            tokens = self.norm(&format!("stage{stage}.embed.norm"), &toks, dim);

            for block in 0..self.config.depths[stage] {
                let prefix = format!("stage{stage}.block{block}");
                let a = self.norm(&format!("{prefix}.norm1"), &tokens, dim);
                let a = self.attention(
                    &format!("{prefix}.attn"),
                    &a,
                    n,
                    side,
                    side,
                    dim,
                    self.config.num_heads[stage],
                    self.config.sr_ratios[stage],
                );
                for (t, d) in tokens.iter_mut().zip(&a) {
                    *t += d;
                }
                let f = self.norm(&format!("{prefix}.norm2"), &tokens, dim);
                let f = self.conv_ffn(
                    &format!("{prefix}.ffn"),
                    &f,
                    n,
                    side,
                    side,
                    dim,
                    self.config.mlp_ratios[stage],
                );
                for (t, d) in tokens.iter_mut().zip(&f) {
                    *t += d;
                }
            }
            map = transpose_ld(&tokens, n, side * side, dim);
            in_c = dim;
        }

        let l = side * side;
        let tokens = self.norm("norm", &tokens, dim);
        let mut pooled = vec![0.0; n * dim];
        for b in 0..n {
            for i in 0..l {
                for j in 0..dim {
                    pooled[b * dim + j] += tokens[(b * l + i) * dim + j];
                }
            }
            for j in 0..dim {
                pooled[b * dim + j] /= l as f64;
            }
        }
        let scores = linear64(
            &pooled,
            n,
            self.param("head.weight"),
            self.param("head.bias"),
            dim,
            1,
        );
        scores
    }

    /// MSE of the scores against per-image targets.
    pub fn forward_loss(&self, x: &[f64], n: usize, targets: &[f64]) -> f64 {
        let scores = self.forward_scores(x, n);
        mse64(&scores, targets)
    }
}
