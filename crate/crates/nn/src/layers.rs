//! Transformer building blocks on top of [`Tape`].
//!
//! Sequences are `tokens × features` matrices. Encoder layers are pre-norm
//! (`x + attn(ln(x))`, then `x + ff(ln(x))`), so zeroing the two output
//! projections of a layer turns it into the identity.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `x · W + b` with `W: in × out` and `b: 1 × out`.
pub fn affine(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_row(y, b),
        None => Ok(y),
    }
}

/// Row-wise layer normalization with a learned scale and shift.
pub fn layer_norm(tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let n = tape.layer_norm_rows(x);
    let s = tape.mul_row(n, gamma)?;
    tape.add_row(s, beta)
}

pub fn gelu(tape: &mut Tape, x: Var) -> Var {
    tape.gelu(x)
}

/// Multi-head scaled dot-product self-attention.
///
/// `wqkv: d × 3d` packs the query, key and value projections column-wise;
/// head `h` uses columns `[h·dh, (h+1)·dh)` of each block.
pub fn self_attention(
    tape: &mut Tape,
    x: Var,
    heads: usize,
    wqkv: Var,
    bqkv: Option<Var>,
    wo: Var,
    bo: Option<Var>,
) -> Result<Var> {
    let d = tape.value(x).cols();
    if heads == 0 || d % heads != 0 {
        return Err(NnError::Shape(format!("{d} features not divisible by {heads} heads")));
    }
    if tape.value(wqkv).shape() != [d, 3 * d] {
        return Err(NnError::Shape(format!(
            "wqkv {:?}, expected [{d}, {}]",
            tape.value(wqkv).shape(),
            3 * d
        )));
    }
    let dh = d / heads;
    let qkv = affine(tape, x, wqkv, bqkv)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = tape.slice_cols(qkv, h * dh, dh)?;
        let k = tape.slice_cols(qkv, d + h * dh, dh)?;
        let v = tape.slice_cols(qkv, 2 * d + h * dh, dh)?;
        let logits = tape.matmul_t(q, k)?;
        let logits = tape.scale(logits, scale);
        let attn = tape.softmax_rows(logits);
        outs.push(tape.matmul(attn, v)?);
    }
    let merged = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    affine(tape, merged, wo, bo)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    /// Gaussian init with std `gain / sqrt(in)`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let std = gain / (in_features as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::randn(&[in_features, out_features], std, rng),
        );
        let bias = Some(store.add(format!("{name}.bias"), Tensor::zeros(&[1, out_features])));
        Self { weight, bias, in_features, out_features }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        affine(tape, x, w, b)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).scale_assign(0.0);
        if let Some(b) = self.bias {
            store.get_mut(b).scale_assign(0.0);
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[1, features], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[1, features]));
        Self { gamma, beta }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        layer_norm(tape, x, g, b)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub qkv: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        let qkv = Linear::new(store, &format!("{name}.qkv"), d_model, 3 * d_model, 1.0, rng);
        let out = Linear::new(store, &format!("{name}.out"), d_model, d_model, 1.0, rng);
        Self { heads, qkv, out }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let wqkv = tape.param(store, self.qkv.weight);
        let bqkv = self.qkv.bias.map(|b| tape.param(store, b));
        let wo = tape.param(store, self.out.weight);
        let bo = self.out.bias.map(|b| tape.param(store, b));
        self_attention(tape, x, self.heads, wqkv, bqkv, wo, bo)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d_model),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d_model, heads, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d_model),
            ff1: Linear::new(store, &format!("{name}.ff1"), d_model, d_ff, 1.0, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), d_ff, d_model, 1.0, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.norm1.forward(tape, store, x)?;
        let h = self.attn.forward(tape, store, h)?;
        let x = tape.add(x, h)?;
        let h = self.norm2.forward(tape, store, x)?;
        let h = self.ff1.forward(tape, store, h)?;
        let h = tape.gelu(h);
        let h = self.ff2.forward(tape, store, h)?;
        tape.add(x, h)
    }

    /// Zeroes both residual branches so the layer maps `x` to `x`.
    pub fn make_identity(&self, store: &mut ParamStore) {
        self.attn.out.zero(store);
        self.ff2.zero(store);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
}

/// A stack of pre-norm encoder layers. No final normalization; callers add
/// one when they need it.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: EncoderConfig,
        rng: &mut R,
    ) -> Self {
        let layers = (0..config.layers)
            .map(|i| {
                EncoderLayer::new(
                    store,
                    &format!("{name}.layer{i}"),
                    config.d_model,
                    config.heads,
                    config.d_ff,
                    rng,
                )
            })
            .collect();
        Self { config, layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(tape, store, x)?;
        }
        Ok(x)
    }

    pub fn make_identity(&self, store: &mut ParamStore) {
        for layer in &self.layers {
            layer.make_identity(store);
        }
    }
}
