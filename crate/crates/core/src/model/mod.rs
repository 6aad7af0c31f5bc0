//! Four-stage pyramid vision transformer with a scalar regression head.
//!
//! Stage = overlapping patch embedding + a stack of pre-norm transformer
//! blocks (spatial-reduction attention and convolutional feed-forward),
//! then the token sequence is reshaped back to a spatial grid for the next
//! stage. After stage four: layer norm, global token average, linear head,
//! one unbounded score per image — the sign encodes the class.

pub mod config;

use rand_chacha::ChaCha8Rng;

pub use config::{PvtConfig, STAGES};

use crate::error::{Error, Result};
use crate::rng::{normal, stream, trunc_normal};
use crate::tensor::ops;
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;

/// Multiply-accumulate based cost estimate for one attention layer,
/// expressed in flops (2 per multiply-add). Only matmul/conv terms count;
/// softmax and normalization are linear and omitted.
#[derive(Debug, Clone, Copy)]
pub struct AttnFlops {
    /// QK^T score matrix plus attention-weighted value aggregation.
    pub score_av: u64,
    /// Query/key/value/output projections and the reduction convolution.
    pub projections: u64,
}

impl AttnFlops {
    pub fn total(&self) -> u64 {
        self.score_av + self.projections
    }
}

/// Cost of `sr_attention` on L tokens of width D at reduction ratio R,
/// batch 1. Head count does not change the total.
pub fn count_flops_attention(l: usize, d: usize, r: usize) -> AttnFlops {
    let (l, d) = (l as u64, d as u64);
    let lk = l / (r as u64 * r as u64);
    AttnFlops {
        score_av: 2 * l * lk * d * 2,
        // q (l*d^2) + reduction conv (lk*d^2*r^2 = l*d^2) + k,v (lk*d^2
        // each) + output projection (l*d^2)
        projections: 2 * d * d * (3 * l + 2 * lk),
    }
}

fn init_linear_weight(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Tensor {
    let data: Vec<f32> = (0..d_in * d_out).map(|_| trunc_normal(rng, 0.02)).collect();
    Tensor::raw(vec![d_in, d_out], data, true)
}

fn init_conv_weight(rng: &mut ChaCha8Rng, shape: [usize; 4], groups: usize) -> Tensor {
    // fan-out scaling: kernel area times output channels per group
    let fan_out = shape[2] * shape[3] * shape[0] / groups;
    let std = (2.0 / fan_out as f64).sqrt();
    let data: Vec<f32> = (0..shape.iter().product::<usize>())
        .map(|_| (normal(rng) * std) as f32)
        .collect();
    Tensor::raw(shape.to_vec(), data, true)
}

fn zeros_param(n: usize) -> Tensor {
    Tensor::raw(vec![n], vec![0.0; n], true)
}

fn ones_param(n: usize) -> Tensor {
    Tensor::raw(vec![n], vec![1.0; n], true)
}

pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Linear {
        Linear {
            w: init_linear_weight(rng, d_in, d_out),
            b: zeros_param(d_out),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        ops::linear(tape, x, &self.w, &self.b)
    }

    fn visit(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.w.clone()));
        out.push((format!("{prefix}.bias"), self.b.clone()));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }
}

pub struct Conv {
    pub w: Tensor,
    pub b: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Conv {
        Conv {
            w: init_conv_weight(rng, [out_c, in_c / groups, kernel, kernel], groups),
            b: zeros_param(out_c),
            stride,
            padding,
            groups,
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        ops::conv2d(tape, x, &self.w, &self.b, self.stride, self.padding, self.groups)
    }

    fn visit(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.w.clone()));
        out.push((format!("{prefix}.bias"), self.b.clone()));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }
}

pub struct Norm {
    pub g: Tensor,
    pub b: Tensor,
    pub eps: f32,
}

impl Norm {
    pub fn new(dim: usize, eps: f32) -> Norm {
        Norm {
            g: ones_param(dim),
            b: zeros_param(dim),
            eps,
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        ops::layer_norm(tape, x, &self.g, &self.b, self.eps)
    }

    fn visit(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.gamma"), self.g.clone()));
        out.push((format!("{prefix}.beta"), self.b.clone()));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.g);
        out.push(&mut self.b);
    }
}

/// Strided overlapping convolution that tokenizes a spatial map, then
/// layer-normalizes the tokens.
pub struct PatchEmbed {
    pub conv: Conv,
    pub norm: Norm,
}

impl PatchEmbed {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_c: usize,
        dim: usize,
        kernel: usize,
        stride: usize,
        eps: f32,
    ) -> PatchEmbed {
        PatchEmbed {
            conv: Conv::new(rng, in_c, dim, kernel, stride, kernel / 2, 1),
            norm: Norm::new(dim, eps),
        }
    }

    /// (tokens [N, H'W', D], H', W')
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<(Tensor, usize, usize)> {
        let y = self.conv.forward(tape, x)?;
        let (n, d, h, w) = (y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]);
        let flat = ops::reshape(tape, &y, &[n, d, h * w])?;
        let tokens = ops::permute(tape, &flat, &[0, 2, 1])?;
        Ok((self.norm.forward(tape, &tokens)?, h, w))
    }

    fn visit(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.conv.visit(&format!("{prefix}.conv"), out);
        self.norm.visit(&format!("{prefix}.norm"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.conv.visit_mut(out);
        self.norm.visit_mut(out);
    }
}

/// Multi-head attention whose keys and values come from a spatially reduced
/// copy of the token grid: a kernel-R stride-R convolution (1x1 at R = 1)
/// followed by layer norm.
pub struct SrAttention {
    pub dim: usize,
    pub heads: usize,
    pub sr_ratio: usize,
    pub q: Linear,
    pub sr: Conv,
    pub sr_norm: Norm,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
}

impl SrAttention {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize, sr_ratio: usize, eps: f32) -> SrAttention {
        SrAttention {
            dim,
            heads,
            sr_ratio,
            q: Linear::new(rng, dim, dim),
            sr: Conv::new(rng, dim, dim, sr_ratio, sr_ratio, 0, 1),
            sr_norm: Norm::new(dim, eps),
            k: Linear::new(rng, dim, dim),
            v: Linear::new(rng, dim, dim),
            proj: Linear::new(rng, dim, dim),
        }
    }

    /// Split [N, L, D] into per-head rows [N*heads, L, D/heads].
    fn split_heads(&self, tape: &Tape, x: &Tensor, n: usize, l: usize) -> Result<Tensor> {
        let dh = self.dim / self.heads;
        let y = ops::reshape(tape, x, &[n, l, self.heads, dh])?;
        let y = ops::permute(tape, &y, &[0, 2, 1, 3])?;
        ops::reshape(tape, &y, &[n * self.heads, l, dh])
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        Ok(self.forward_with_probs(tape, x, h, w)?.0)
    }

    /// Returns the block output and the attention probability tensor
    /// [N*heads, L, L_kv] (rows sum to 1).
    pub fn forward_with_probs(
        &self,
        tape: &Tape,
        x: &Tensor,
        h: usize,
        w: usize,
    ) -> Result<(Tensor, Tensor)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[2] != self.dim {
            return Err(Error::Shape(format!(
                "attention expects (N,L,{}), got {shape:?}",
                self.dim
            )));
        }
        let (n, l) = (shape[0], shape[1]);
        if l != h * w {
            return Err(Error::Shape(format!(
                "token count {l} does not match grid {h}x{w}"
            )));
        }
        if h % self.sr_ratio != 0 || w % self.sr_ratio != 0 {
            return Err(Error::Shape(format!(
                "reduction ratio {} does not divide grid {h}x{w}",
                self.sr_ratio
            )));
        }
        let dh = self.dim / self.heads;

        let q = self.q.forward(tape, x)?;
        let q = self.split_heads(tape, &q, n, l)?;

        // reduce the token grid for keys/values
        let grid = ops::permute(tape, x, &[0, 2, 1])?;
        let grid = ops::reshape(tape, &grid, &[n, self.dim, h, w])?;
        let red = self.sr.forward(tape, &grid)?;
        let (rh, rw) = (red.shape()[2], red.shape()[3]);
        let lk = rh * rw;
        let red = ops::reshape(tape, &red, &[n, self.dim, lk])?;
        let red = ops::permute(tape, &red, &[0, 2, 1])?;
        let red = self.sr_norm.forward(tape, &red)?;

        let k = self.k.forward(tape, &red)?;
        let k = self.split_heads(tape, &k, n, lk)?;
        let v = self.v.forward(tape, &red)?;
        let v = self.split_heads(tape, &v, n, lk)?;

        let kt = ops::permute(tape, &k, &[0, 2, 1])?;
        let scores = ops::bmm(tape, &q, &kt)?;
        let scores = ops::scale(tape, &scores, 1.0 / (dh as f32).sqrt());
        let probs = ops::softmax(tape, &scores, 2)?;
        let ctx = ops::bmm(tape, &probs, &v)?;

        // merge heads back to [N, L, D]
        let ctx = ops::reshape(tape, &ctx, &[n, self.heads, l, dh])?;
        let ctx = ops::permute(tape, &ctx, &[0, 2, 1, 3])?;
        let ctx = ops::reshape(tape, &ctx, &[n, l, self.dim])?;
        Ok((self.proj.forward(tape, &ctx)?, probs))
    }

    fn visit(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.q.visit(&format!("{prefix}.q"), out);
        self.sr.visit(&format!("{prefix}.sr"), out);
        self.sr_norm.visit(&format!("{prefix}.srnorm"), out);
        self.k.visit(&format!("{prefix}.k"), out);
        self.v.visit(&format!("{prefix}.v"), out);
        self.proj.visit(&format!("{prefix}.proj"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.q.visit_mut(out);
        self.sr.visit_mut(out);
        self.sr_norm.visit_mut(out);
        self.k.visit_mut(out);
        self.v.visit_mut(out);
        self.proj.visit_mut(out);
    }
}

/// Feed-forward with a 3x3 depthwise convolution on the token grid between
/// the expansion linear and the GELU.
pub struct ConvFfn {
    pub hidden: usize,
    pub fc1: Linear,
    pub dw: Conv,
    pub fc2: Linear,
}

impl ConvFfn {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, mlp_ratio: usize) -> ConvFfn {
        let hidden = dim * mlp_ratio;
        ConvFfn {
            hidden,
            fc1: Linear::new(rng, dim, hidden),
            dw: Conv::new(rng, hidden, hidden, 3, 1, 1, hidden),
            fc2: Linear::new(rng, hidden, dim),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let shape = x.shape();
        let (n, l) = (shape[0], shape[1]);
        if l != h * w {
            return Err(Error::Shape(format!(
                "token count {l} does not match grid {h}x{w}"
            )));
        }
        let y = self.fc1.forward(tape, x)?;
        let grid = ops::permute(tape, &y, &[0, 2, 1])?;
        let grid = ops::reshape(tape, &grid, &[n, self.hidden, h, w])?;
        let grid = self.dw.forward(tape, &grid)?;
        let y = ops::reshape(tape, &grid, &[n, self.hidden, l])?;
        let y = ops::permute(tape, &y, &[0, 2, 1])?;
        let y = ops::gelu(tape, &y);
        self.fc2.forward(tape, &y)
    }

    fn visit(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.fc1.visit(&format!("{prefix}.fc1"), out);
        self.dw.visit(&format!("{prefix}.dw"), out);
        self.fc2.visit(&format!("{prefix}.fc2"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.fc1.visit_mut(out);
        self.dw.visit_mut(out);
        self.fc2.visit_mut(out);
    }
}

/// Pre-norm residual block: x + attn(LN(x)); then x + ffn(LN(x)).
pub struct Block {
    pub norm1: Norm,
    pub attn: SrAttention,
    pub norm2: Norm,
    pub ffn: ConvFfn,
}

impl Block {
    pub fn new(
        rng: &mut ChaCha8Rng,
        dim: usize,
        heads: usize,
        sr_ratio: usize,
        mlp_ratio: usize,
        eps: f32,
    ) -> Block {
        Block {
            norm1: Norm::new(dim, eps),
            attn: SrAttention::new(rng, dim, heads, sr_ratio, eps),
            norm2: Norm::new(dim, eps),
            ffn: ConvFfn::new(rng, dim, mlp_ratio),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let a = self.norm1.forward(tape, x)?;
        let a = self.attn.forward(tape, &a, h, w)?;
        let x = ops::add(tape, x, &a)?;
        let f = self.norm2.forward(tape, &x)?;
        let f = self.ffn.forward(tape, &f, h, w)?;
        ops::add(tape, &x, &f)
    }

    fn visit(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.norm1.visit(&format!("{prefix}.norm1"), out);
        self.attn.visit(&format!("{prefix}.attn"), out);
        self.norm2.visit(&format!("{prefix}.norm2"), out);
        self.ffn.visit(&format!("{prefix}.ffn"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.norm1.visit_mut(out);
        self.attn.visit_mut(out);
        self.norm2.visit_mut(out);
        self.ffn.visit_mut(out);
    }
}

pub struct Stage {
    pub embed: PatchEmbed,
    pub blocks: Vec<Block>,
}

impl Stage {
    /// (feature map [N, D, H', W'], H', W')
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<(Tensor, usize, usize)> {
        let (mut tokens, h, w) = self.embed.forward(tape, x)?;
        for block in &self.blocks {
            tokens = block.forward(tape, &tokens, h, w)?;
        }
        let n = tokens.shape()[0];
        let d = tokens.shape()[2];
        let grid = ops::permute(tape, &tokens, &[0, 2, 1])?;
        let grid = ops::reshape(tape, &grid, &[n, d, h, w])?;
        Ok((grid, h, w))
    }

    fn visit(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.embed.visit(&format!("{prefix}.embed"), out);
        for (i, block) in self.blocks.iter().enumerate() {
            block.visit(&format!("{prefix}.block{i}"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.embed.visit_mut(out);
        for block in &mut self.blocks {
            block.visit_mut(out);
        }
    }
}

pub struct PvtModel {
    pub config: PvtConfig,
    pub stages: Vec<Stage>,
    pub norm: Norm,
    pub head: Linear,
}

impl PvtModel {
    /// Build and initialize from a validated config; weights are a pure
    /// function of the seed.
    pub fn new(config: PvtConfig, seed: u64) -> Result<PvtModel> {
        config.validate()?;
        let mut rng = stream(seed, "model-init");
        let mut stages = Vec::with_capacity(STAGES);
        let mut in_c = config.input_channels;
        for i in 0..STAGES {
            let dim = config.embed_dims[i];
            let embed = PatchEmbed::new(
                &mut rng,
                in_c,
                dim,
                config.patch_kernels[i],
                config.patch_strides[i],
                config.ln_eps,
            );
            let blocks = (0..config.depths[i])
                .map(|_| {
                    Block::new(
                        &mut rng,
                        dim,
                        config.num_heads[i],
                        config.sr_ratios[i],
                        config.mlp_ratios[i],
                        config.ln_eps,
                    )
                })
                .collect();
            stages.push(Stage { embed, blocks });
            in_c = dim;
        }
        let last = config.embed_dims[STAGES - 1];
        let norm = Norm::new(last, config.ln_eps);
        let head = Linear::new(&mut rng, last, 1);
        Ok(PvtModel {
            config,
            stages,
            norm,
            head,
        })
    }

    /// The four per-stage feature maps [N, D_i, H_i, W_i].
    pub fn forward_features(&self, tape: &Tape, x: &Tensor) -> Result<Vec<Tensor>> {
        let shape = x.shape();
        let res = self.config.input_resolution;
        if shape.len() != 4
            || shape[1] != self.config.input_channels
            || shape[2] != res
            || shape[3] != res
        {
            return Err(Error::Shape(format!(
                "model built for {}x{res}x{res} input, got {shape:?}",
                self.config.input_channels
            )));
        }
        let mut maps = Vec::with_capacity(STAGES);
        let mut x = x.clone();
        for stage in &self.stages {
            let (map, _, _) = stage.forward(tape, &x)?;
            x = map.clone();
            maps.push(map);
        }
        Ok(maps)
    }

    /// One score per image, shape [N]. Sign encodes the class.
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let maps = self.forward_features(tape, x)?;
        let last = maps.last().expect("four stages");
        let (n, d, h, w) = (
            last.shape()[0],
            last.shape()[1],
            last.shape()[2],
            last.shape()[3],
        );
        let tokens = ops::reshape(tape, last, &[n, d, h * w])?;
        let tokens = ops::permute(tape, &tokens, &[0, 2, 1])?;
        let tokens = self.norm.forward(tape, &tokens)?;
        let pooled = ops::mean_tokens(
            tape,
            &ops::reshape(tape, &tokens, &[n, h * w, d])?,
        )?;
        let scores = self.head.forward(tape, &pooled)?;
        ops::reshape(tape, &scores, &[n])
    }

    /// Every parameter with a stable name, in traversal order. The order
    /// matches `params_mut` element for element.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            stage.visit(&format!("stage{i}"), &mut out);
        }
        self.norm.visit("norm", &mut out);
        self.head.visit("head", &mut out);
        out
    }

    /// Mutable slots for the optimizer, in `named_params` order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for stage in &mut self.stages {
            stage.visit_mut(&mut out);
        }
        self.norm.visit_mut(&mut out);
        self.head.visit_mut(&mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replace every parameter from named checkpoint entries. Entry set and
    /// shapes must match the model exactly.
    pub fn load_state(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        let names: Vec<(String, Vec<usize>)> = self
            .named_params()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        let mut by_name: std::collections::HashMap<&str, &Tensor> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut slots = self.params_mut();
        for (slot, (name, shape)) in slots.iter_mut().zip(&names) {
            let entry = by_name.remove(name.as_str()).ok_or_else(|| {
                Error::Format(format!("checkpoint is missing parameter {name}"))
            })?;
            if entry.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "checkpoint parameter {name} has shape {:?}, model expects {shape:?}",
                    entry.shape()
                )));
            }
            **slot = Tensor::raw(shape.clone(), entry.data().to_vec(), true);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Format(format!(
                "checkpoint contains unknown parameter {extra}"
            )));
        }
        Ok(())
    }
}
