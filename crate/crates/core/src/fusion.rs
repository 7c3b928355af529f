//! Feature-level fusion of the 2D priors and the distillation of prior
//! tokens from rendered grids.
//!
//! Token sets are `tokens × features` tensors. The three prior token sets
//! (keypoint, segmentation, depth) are averaged and projected to the image
//! width, appended to the image tokens, run through an encoder, and the
//! result is truncated back to the image length.

use duohand_nn::layers::Linear;
use duohand_nn::rng::{derive, seeded};
use duohand_nn::{Adam, AdamConfig, Encoder, EncoderConfig, LayerNorm, ParamId, ParamStore, Tape, Tensor, Var};
use rand::seq::SliceRandom;

use crate::corpus::sha256_hex;
use crate::error::{CoreError, Result};
use crate::exec::Execution;
use crate::hand::HandModel;
use crate::render::{depth_range, Grid, PriorMaps, RenderConfig};
use crate::state::TwoHandState;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionConfig {
    /// `l`, image tokens.
    pub image_tokens: usize,
    /// `d`, image token width.
    pub image_dim: usize,
    /// `l_p`, tokens per prior; a square number of patches.
    pub prior_tokens: usize,
    /// `d_p`, prior token width.
    pub prior_dim: usize,
    pub heads: usize,
    pub integrate_layers: usize,
    pub prior_layers: usize,
    pub d_ff: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            image_tokens: 49,
            image_dim: 128,
            prior_tokens: 16,
            prior_dim: 64,
            heads: 4,
            integrate_layers: 2,
            prior_layers: 2,
            d_ff: 256,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let side = self.patches_per_side();
        if self.image_tokens == 0 || self.prior_tokens == 0 || side * side != self.prior_tokens {
            return Err(CoreError::Config(format!(
                "need l > 0 and a square l_p, got l = {}, l_p = {}",
                self.image_tokens, self.prior_tokens
            )));
        }
        for (name, d) in [("d", self.image_dim), ("d_p", self.prior_dim)] {
            if d == 0 || self.heads == 0 || d % self.heads != 0 {
                return Err(CoreError::Config(format!("{name} = {d} not divisible by {} heads", self.heads)));
            }
        }
        if self.d_ff == 0 {
            return Err(CoreError::Config("d_ff must be positive".into()));
        }
        Ok(())
    }

    pub fn patches_per_side(&self) -> usize {
        (self.prior_tokens as f64).sqrt().round() as usize
    }
}

/// Elementwise mean of three equally shaped tensors. Each element sums its
/// three terms in sorted order, so the result does not depend on argument
/// order down to the bit.
pub fn symmetric_mean(a: &Tensor, b: &Tensor, c: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() || a.shape() != c.shape() {
        return Err(CoreError::Shape(format!(
            "prior shapes {:?}, {:?}, {:?}",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(c.data())
        .map(|((&x, &y), &z)| {
            let mut v = [x, y, z];
            v.sort_by(f64::total_cmp);
            (v[0] + v[1] + v[2]) / 3.0
        })
        .collect();
    Ok(Tensor::new(a.shape().to_vec(), data)?)
}

/// Prior projection and integration encoder.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub config: FusionConfig,
    pub store: ParamStore,
    pub proj: Linear,
    pub encoder: Encoder,
}

impl Fusion {
    pub fn new(config: FusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(derive(seed, 0xF05E));
        let mut store = ParamStore::new();
        let proj = Linear::new(&mut store, "fusion.proj", config.prior_dim, config.image_dim, 1.0, &mut rng);
        let encoder = Encoder::new(
            &mut store,
            "fusion.encoder",
            EncoderConfig {
                d_model: config.image_dim,
                heads: config.heads,
                layers: config.integrate_layers,
                d_ff: config.d_ff,
            },
            &mut rng,
        );
        Ok(Self { config, store, proj, encoder })
    }

    /// `F_a = proj((F_k + F_s + F_d) / 3)`.
    pub fn fuse_priors(&self, fk: &Tensor, fs: &Tensor, fd: &Tensor) -> Result<Tensor> {
        let mean = symmetric_mean(fk, fs, fd)?;
        let mut tape = Tape::new();
        let x = tape.leaf(mean);
        let y = self.proj.forward(&mut tape, &self.store, x)?;
        Ok(tape.value(y).clone())
    }

    /// Encoder over `⟨F_i, F_a⟩`, keeping the first `l` output tokens.
    pub fn integrate_on_tape(&self, tape: &mut Tape, fi: Var, fa: Var) -> Result<Var> {
        let l = tape.value(fi).rows();
        let seq = tape.concat_rows(&[fi, fa])?;
        let out = self.encoder.forward(tape, &self.store, seq)?;
        Ok(tape.slice_rows(out, 0, l)?)
    }

    pub fn integrate(&self, fi: &Tensor, fa: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (fi, fa) = (tape.leaf(fi.clone()), tape.leaf(fa.clone()));
        let out = self.integrate_on_tape(&mut tape, fi, fa)?;
        Ok(tape.value(out).clone())
    }

    /// Both stages at once.
    pub fn run(&self, fi: &Tensor, priors: &[Tensor; 3]) -> Result<FeatureBundle> {
        let fa = self.fuse_priors(&priors[0], &priors[1], &priors[2])?;
        let f = self.integrate(fi, &fa)?;
        Ok(FeatureBundle {
            image: fi.clone(),
            keypoint: priors[0].clone(),
            segmentation: priors[1].clone(),
            depth: priors[2].clone(),
            fused: fa,
            integrated: f,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub image: Tensor,
    pub keypoint: Tensor,
    pub segmentation: Tensor,
    pub depth: Tensor,
    pub fused: Tensor,
    pub integrated: Tensor,
}

impl FeatureBundle {
    pub fn image_len(&self) -> usize {
        self.image.rows()
    }
}

/// Keypoint, silhouette and depth rasters scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorInputs {
    pub grids: [Grid<f64>; 3],
}

/// Keypoint blob width in pixels.
const KEYPOINT_SIGMA_PX: f64 = 1.0;

impl PriorInputs {
    pub fn from_maps(maps: &PriorMaps) -> Self {
        let sil = maps.merged_silhouette();
        let (w, h) = (sil.width, sil.height);

        let mut kp = Grid::filled(w, h, 0.0);
        for p in maps.keypoints_left.iter().chain(&maps.keypoints_right) {
            for row in 0..h {
                for col in 0..w {
                    let dx = col as f64 + 0.5 - p[0];
                    let dy = row as f64 + 0.5 - p[1];
                    let v = (-(dx * dx + dy * dy) / (2.0 * KEYPOINT_SIGMA_PX * KEYPOINT_SIGMA_PX)).exp();
                    if v > kp.get(row, col) {
                        kp.set(row, col, v);
                    }
                }
            }
        }

        let silhouette = Grid { width: w, height: h, data: sil.data.iter().map(|&b| b as u8 as f64).collect() };

        let depth = maps.merged_depth();
        let (near, far) = depth_range(&depth).unwrap_or((0.0, 1.0));
        let span = if far > near { far - near } else { 1.0 };
        let depth = Grid {
            width: w,
            height: h,
            data: depth
                .data
                .iter()
                .map(|&d| if d.is_finite() { 1.0 - 0.9 * (d - near) / span } else { 0.0 })
                .collect(),
        };
        Self { grids: [kp, silhouette, depth] }
    }

    /// Digest of the three grids' raw values.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::new();
        for g in &self.grids {
            bytes.extend_from_slice(&(g.width as u64).to_le_bytes());
            bytes.extend_from_slice(&(g.height as u64).to_le_bytes());
            for v in &g.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        sha256_hex(&bytes)
    }

    /// `side² × patch²` matrix of row-major patches of grid `k`.
    fn patches(&self, k: usize, side: usize) -> Result<Tensor> {
        let g = &self.grids[k];
        if g.width != g.height || g.width % side != 0 {
            return Err(CoreError::Shape(format!(
                "{}x{} grid cannot be cut into {side}x{side} patches",
                g.width, g.height
            )));
        }
        let p = g.width / side;
        let mut data = Vec::with_capacity(g.width * g.height);
        for pr in 0..side {
            for pc in 0..side {
                for r in 0..p {
                    for c in 0..p {
                        data.push(g.get(pr * p + r, pc * p + c));
                    }
                }
            }
        }
        Ok(Tensor::from_rows(side * side, p * p, data)?)
    }
}

#[derive(Clone, Debug)]
struct PriorBranch {
    patch: Linear,
    position: ParamId,
    encoder: Encoder,
    norm: LayerNorm,
    head: Linear,
}

/// Patch embedding plus a small encoder per prior. Teachers and the
/// student share this architecture and differ in seed and head scale.
#[derive(Clone, Debug)]
pub struct PriorNet {
    pub config: FusionConfig,
    pub resolution: usize,
    pub store: ParamStore,
    branches: Vec<PriorBranch>,
}

pub const PRIOR_NAMES: [&str; 3] = ["keypoint", "segmentation", "depth"];

impl PriorNet {
    pub fn new(config: FusionConfig, resolution: usize, seed: u64, head_gain: f64) -> Result<Self> {
        config.validate()?;
        let side = config.patches_per_side();
        if resolution == 0 || resolution % side != 0 {
            return Err(CoreError::Config(format!(
                "resolution {resolution} is not a multiple of {side} patches"
            )));
        }
        let p = resolution / side;
        let d = config.prior_dim;
        let mut rng = seeded(derive(seed, 0x7EAC));
        let mut store = ParamStore::new();
        let branches = PRIOR_NAMES
            .iter()
            .map(|name| PriorBranch {
                patch: Linear::new(&mut store, &format!("{name}.patch"), p * p, d, 1.0, &mut rng),
                position: store.add(format!("{name}.position"), Tensor::randn(&[config.prior_tokens, d], 0.02, &mut rng)),
                encoder: Encoder::new(
                    &mut store,
                    &format!("{name}.encoder"),
                    EncoderConfig { d_model: d, heads: config.heads, layers: config.prior_layers, d_ff: 2 * d },
                    &mut rng,
                ),
                norm: LayerNorm::new(&mut store, &format!("{name}.norm"), d),
                head: Linear::new(&mut store, &format!("{name}.head"), d, d, head_gain, &mut rng),
            })
            .collect();
        Ok(Self { config, resolution, store, branches })
    }

    /// A frozen stand-in for a pretrained prior encoder.
    pub fn teacher(config: FusionConfig, resolution: usize, seed: u64) -> Result<Self> {
        Self::new(config, resolution, seed, 1.0)
    }

    /// Starts with near-zero outputs.
    pub fn student(config: FusionConfig, resolution: usize, seed: u64) -> Result<Self> {
        Self::new(config, resolution, seed, 0.01)
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &PriorInputs) -> Result<[Var; 3]> {
        let side = self.config.patches_per_side();
        let mut out = Vec::with_capacity(3);
        for (k, b) in self.branches.iter().enumerate() {
            let x = tape.leaf(inputs.patches(k, side)?);
            let h = b.patch.forward(tape, &self.store, x)?;
            let pos = tape.param(&self.store, b.position);
            let h = tape.add(h, pos)?;
            let h = b.encoder.forward(tape, &self.store, h)?;
            let h = b.norm.forward(tape, &self.store, h)?;
            out.push(b.head.forward(tape, &self.store, h)?);
        }
        Ok([out[0], out[1], out[2]])
    }

    pub fn predict(&self, inputs: &PriorInputs) -> Result<[Tensor; 3]> {
        let mut tape = Tape::new();
        let vars = self.forward(&mut tape, inputs)?;
        Ok(vars.map(|v| tape.value(v).clone()))
    }

    /// Takes over every parameter of a same-architecture network.
    pub fn copy_from(&mut self, other: &PriorNet) -> Result<()> {
        Ok(self.store.load_from(other.store.iter())?)
    }
}

/// One distillation example: rendered inputs and the teacher's tokens.
#[derive(Clone, Debug)]
pub struct DistillSample {
    pub inputs: PriorInputs,
    pub targets: [Tensor; 3],
}

impl DistillSample {
    pub fn new(inputs: PriorInputs, teacher: &PriorNet) -> Result<Self> {
        let targets = teacher.predict(&inputs)?;
        Ok(Self { inputs, targets })
    }
}

fn sample_loss(student: &PriorNet, s: &DistillSample, with_grads: bool) -> Result<(f64, Option<Vec<Tensor>>)> {
    let mut tape = Tape::new();
    let preds = student.forward(&mut tape, &s.inputs)?;
    let mut terms = Vec::with_capacity(3);
    for (p, t) in preds.iter().zip(&s.targets) {
        let t = tape.leaf(t.clone());
        terms.push(tape.mse(*p, t)?);
    }
    let cat = tape.concat_cols(&terms)?;
    let sum = tape.sum(cat);
    let loss = tape.scale(sum, 1.0 / 3.0);
    let value = tape.value(loss).data()[0];
    let grads = if with_grads { Some(tape.backward(loss)?.for_params(&tape, &student.store)) } else { None };
    Ok((value, grads))
}

/// Mean squared error over all prior tokens, averaged over samples.
pub fn distill_loss(student: &PriorNet, samples: &[DistillSample], exec: Execution) -> Result<f64> {
    let losses = exec.try_map(samples.len(), |k| sample_loss(student, &samples[k], false).map(|r| r.0))?;
    Ok(losses.iter().sum::<f64>() / samples.len().max(1) as f64)
}

/// One optimizer step on the batch's mean distillation loss. Per-sample
/// gradients are accumulated in batch order.
pub fn distill_step(student: &mut PriorNet, adam: &mut Adam, batch: &[DistillSample], exec: Execution) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::Shape("empty distillation batch".into()));
    }
    let frozen: &PriorNet = student;
    let per = exec.try_map(batch.len(), |k| sample_loss(frozen, &batch[k], true))?;
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut acc: Option<Vec<Tensor>> = None;
    for (loss, grads) in per {
        total += loss;
        let grads = grads.expect("requested");
        match acc.as_mut() {
            None => acc = Some(grads),
            Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
        }
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(CoreError::Numerical(format!("distillation loss became {loss}")));
    }
    let mut grads = acc.expect("non-empty batch");
    grads.iter_mut().for_each(|g| g.scale_assign(1.0 / n));
    adam.step(&mut student.store, &grads);
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 8, lr: 1e-3, seed: 3 }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::Config("distillation batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::Config(format!("distillation lr {} must be > 0", self.lr)));
        }
        Ok(())
    }
}

/// Renders each state in its canonical view and builds the prior inputs.
pub fn render_inputs(
    states: &[TwoHandState],
    model: &HandModel,
    render: &RenderConfig,
    exec: Execution,
) -> Result<Vec<PriorInputs>> {
    exec.try_map(states.len(), |k| {
        let cam = render.camera(&states[k], model)?;
        Ok(PriorInputs::from_maps(&PriorMaps::render(&states[k], model, &cam)))
    })
}

/// Distills a seeded teacher into a fresh student on `inputs`. Batches
/// cycle through a seeded shuffle, reshuffled every pass. `on_step` sees
/// every step's batch loss. Returns `(student, teacher)`.
pub fn train_distillation(
    inputs: Vec<PriorInputs>,
    config: FusionConfig,
    resolution: usize,
    cfg: &DistillConfig,
    exec: Execution,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(PriorNet, PriorNet)> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(CoreError::Degenerate("no distillation inputs".into()));
    }
    let teacher = PriorNet::teacher(config, resolution, derive(cfg.seed, 1))?;
    let mut student = PriorNet::student(config, resolution, derive(cfg.seed, 2))?;
    let samples: Vec<DistillSample> = {
        let targets = exec.try_map(inputs.len(), |k| teacher.predict(&inputs[k]))?;
        inputs.into_iter().zip(targets).map(|(inputs, targets)| DistillSample { inputs, targets }).collect()
    };
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..Default::default() }, &student.store);
    let mut rng = seeded(derive(cfg.seed, 3));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(samples[order[cursor]].clone());
            cursor += 1;
        }
        let loss = distill_step(&mut student, &mut adam, &batch, exec)?;
        on_step(step, loss);
    }
    Ok((student, teacher))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(FusionConfig::default().validate().is_ok());
        assert!(FusionConfig { prior_tokens: 15, ..Default::default() }.validate().is_err());
        assert!(FusionConfig { heads: 3, ..Default::default() }.validate().is_err());
        assert!(PriorNet::student(FusionConfig::default(), 30, 1).is_err());
    }

    #[test]
    fn symmetric_mean_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        assert!(symmetric_mean(&a, &a, &b).is_err());
    }
}
