//! Transformer clean-sample predictor.
//!
//! Token layout (rows of the sequence):
//! `[x_t state tokens (35) | condition tokens (35) | timestep token]`, where
//! the state tokens of either block are 16 left pose tokens, the left shape
//! token, 16 right pose tokens, the right shape token and the relative
//! translation token, in flat-vector order. The output is read from the
//! x_t block and added to a per-dimension gated copy of the condition; the
//! gate starts at zero.

use duohand_nn::layers::Linear;
use duohand_nn::rng::{derive, seeded};
use duohand_nn::{Encoder, EncoderConfig, LayerNorm, ParamId, ParamStore, Tape, Tensor, Var, WeightsFile};

use super::Denoiser;
use crate::error::{CoreError, Result};
use crate::hand::{NUM_JOINTS, SHAPE_DIM};
use crate::state::{Normalizer, StateVector, STATE_DIM};

/// Tokens per state block.
pub const STATE_TOKENS: usize = 2 * (NUM_JOINTS + 1) + 1;
pub const TOKENS: usize = 2 * STATE_TOKENS + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    /// Sinusoidal timestep features fed to the timestep MLP (even).
    pub time_features: usize,
    pub t_max: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { d_model: 128, heads: 4, layers: 4, d_ff: 256, time_features: 64, t_max: 1000 }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_ff == 0 || self.time_features == 0 || self.time_features % 2 != 0 || self.t_max < 2 {
            return Err(CoreError::Config("d_ff, time_features (even) and t_max >= 2 required".into()));
        }
        Ok(())
    }

    fn to_tensor(self) -> Tensor {
        Tensor::row(&[
            self.d_model as f64,
            self.heads as f64,
            self.layers as f64,
            self.d_ff as f64,
            self.time_features as f64,
            self.t_max as f64,
        ])
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        let d = t.data();
        if d.len() != 6 || d.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(CoreError::Corpus("malformed denoiser config record".into()));
        }
        let cfg = Self {
            d_model: d[0] as usize,
            heads: d[1] as usize,
            layers: d[2] as usize,
            d_ff: d[3] as usize,
            time_features: d[4] as usize,
            t_max: d[5] as usize,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
struct StateEmbedding {
    pose: Linear,
    shape: Linear,
    rel: Linear,
}

impl StateEmbedding {
    fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut duohand_nn::rng::Rng) -> Self {
        Self {
            pose: Linear::new(store, &format!("{name}.pose"), 3, d, 1.0, rng),
            shape: Linear::new(store, &format!("{name}.shape"), SHAPE_DIM, d, 1.0, rng),
            rel: Linear::new(store, &format!("{name}.rel"), 3, d, 1.0, rng),
        }
    }

    /// `STATE_TOKENS × d` embedding of a flat state.
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: &StateVector) -> Result<Var> {
        let mut rows = Vec::with_capacity(5);
        let mut offset = 0;
        for _hand in 0..2 {
            let pose = Tensor::from_rows(NUM_JOINTS, 3, x[offset..offset + 3 * NUM_JOINTS].to_vec())?;
            offset += 3 * NUM_JOINTS;
            let pose = tape.leaf(pose);
            rows.push(self.pose.forward(tape, store, pose)?);
            let shape = tape.leaf(Tensor::row(&x[offset..offset + SHAPE_DIM]));
            offset += SHAPE_DIM;
            rows.push(self.shape.forward(tape, store, shape)?);
        }
        let rel = tape.leaf(Tensor::row(&x[offset..offset + 3]));
        rows.push(self.rel.forward(tape, store, rel)?);
        Ok(tape.concat_rows(&rows)?)
    }
}

/// Sinusoidal features of a timestep: `[sin(t·ω_k), cos(t·ω_k)]` with
/// `ω_k = 10000^(−k/half)`.
pub fn timestep_features(t: usize, count: usize) -> Vec<f64> {
    let half = count / 2;
    let mut out = vec![0.0; count];
    for k in 0..half {
        let w = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let a = t as f64 * w;
        out[k] = a.sin();
        out[half + k] = a.cos();
    }
    out
}

#[derive(Clone, Debug)]
pub struct TransformerDenoiser {
    pub config: DenoiserConfig,
    pub store: ParamStore,
    x_embed: StateEmbedding,
    c_embed: StateEmbedding,
    time1: Linear,
    time2: Linear,
    position: ParamId,
    encoder: Encoder,
    final_norm: LayerNorm,
    out_pose: Linear,
    out_shape: Linear,
    out_rel: Linear,
    gate: ParamId,
}

impl TransformerDenoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut rng = seeded(derive(seed, 0xD1FF));
        let mut store = ParamStore::new();
        let x_embed = StateEmbedding::new(&mut store, "embed.x", d, &mut rng);
        let c_embed = StateEmbedding::new(&mut store, "embed.c", d, &mut rng);
        let time1 = Linear::new(&mut store, "time.fc1", config.time_features, d, 1.0, &mut rng);
        let time2 = Linear::new(&mut store, "time.fc2", d, d, 1.0, &mut rng);
        let position = store.add("position", Tensor::randn(&[TOKENS, d], 0.02, &mut rng));
        let encoder = Encoder::new(
            &mut store,
            "encoder",
            EncoderConfig { d_model: d, heads: config.heads, layers: config.layers, d_ff: config.d_ff },
            &mut rng,
        );
        let final_norm = LayerNorm::new(&mut store, "final_norm", d);
        // Small heads keep the untrained prediction near zero.
        let out_pose = Linear::new(&mut store, "out.pose", d, 3, 0.1, &mut rng);
        let out_shape = Linear::new(&mut store, "out.shape", d, SHAPE_DIM, 0.1, &mut rng);
        let out_rel = Linear::new(&mut store, "out.rel", d, 3, 0.1, &mut rng);
        let gate = store.add("gate", Tensor::zeros(&[1, STATE_DIM]));
        Ok(Self {
            config,
            store,
            x_embed,
            c_embed,
            time1,
            time2,
            position,
            encoder,
            final_norm,
            out_pose,
            out_shape,
            out_rel,
            gate,
        })
    }

    /// Records the forward pass on `tape`; returns the `1 × 109` prediction.
    pub fn forward(&self, tape: &mut Tape, x_t: &StateVector, t: usize, cond: &StateVector) -> Result<Var> {
        let store = &self.store;
        let xs = self.x_embed.forward(tape, store, x_t)?;
        let cs = self.c_embed.forward(tape, store, cond)?;
        let tf = tape.leaf(Tensor::row(&timestep_features(t, self.config.time_features)));
        let h = self.time1.forward(tape, store, tf)?;
        let h = tape.gelu(h);
        let te = self.time2.forward(tape, store, h)?;
        let seq = tape.concat_rows(&[xs, cs, te])?;
        let pos = tape.param(store, self.position);
        let seq = tape.add(seq, pos)?;
        let h = self.encoder.forward(tape, store, seq)?;
        let h = self.final_norm.forward(tape, store, h)?;

        let mut parts = Vec::with_capacity(5);
        let mut row = 0;
        for _hand in 0..2 {
            let pose = tape.slice_rows(h, row, NUM_JOINTS)?;
            let pose = self.out_pose.forward(tape, store, pose)?;
            parts.push(tape.reshape(pose, 1, 3 * NUM_JOINTS)?);
            row += NUM_JOINTS;
            let shape = tape.slice_rows(h, row, 1)?;
            parts.push(self.out_shape.forward(tape, store, shape)?);
            row += 1;
        }
        let rel = tape.slice_rows(h, row, 1)?;
        parts.push(self.out_rel.forward(tape, store, rel)?);
        let head = tape.concat_cols(&parts)?;

        let c = tape.leaf(Tensor::row(cond));
        let g = tape.param(store, self.gate);
        let skip = tape.mul(c, g)?;
        Ok(tape.add(head, skip)?)
    }

    /// Serializes parameters, architecture and the state normalization.
    pub fn to_weights(&self, normalizer: &Normalizer) -> WeightsFile {
        let mut w = WeightsFile::from_store(&self.store);
        w.push("meta.config", self.config.to_tensor());
        w.push("meta.norm_mean", Tensor::row(&normalizer.mean));
        w.push("meta.norm_std", Tensor::row(&normalizer.std));
        w
    }

    pub fn from_weights(weights: &WeightsFile) -> Result<(Self, Normalizer)> {
        let config = DenoiserConfig::from_tensor(weights.require("meta.config")?)?;
        let mut model = Self::new(config, 0)?;
        model.store.load_from(weights.iter().filter(|(name, _)| !name.starts_with("meta.")))?;
        let row = |name: &str| -> Result<StateVector> {
            let t = weights.require(name)?;
            t.data()
                .try_into()
                .map_err(|_| CoreError::Corpus(format!("{name} must hold {STATE_DIM} values")))
        };
        let normalizer = Normalizer { mean: row("meta.norm_mean")?, std: row("meta.norm_std")? };
        if normalizer.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(CoreError::Corpus("normalization std must be positive".into()));
        }
        Ok((model, normalizer))
    }
}

impl Denoiser for TransformerDenoiser {
    fn predict(&self, x_t: &StateVector, t: usize, cond: &StateVector) -> Result<StateVector> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x_t, t, cond)?;
        let data = tape.value(out).data();
        let out: StateVector = data.try_into().expect("head emits STATE_DIM values");
        if out.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Numerical(format!("denoiser produced non-finite output at t = {t}")));
        }
        Ok(out)
    }
}
