use duohand_nn::rng::{derive, seeded};
use duohand_nn::{Adam, AdamConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{DenoiserConfig, TransformerDenoiser};
use super::{q_sample, NoiseSchedule};
use crate::error::{CoreError, Result};
use crate::exec::Execution;
use crate::state::{Normalizer, StateVector};
use crate::synth::CorpusRecord;

/// Normalized `(x0, condition)` pairs.
pub struct TrainBatch<'a> {
    pub x0: &'a [StateVector],
    pub cond: &'a [StateVector],
}

/// One optimizer step on the clean-sample regression loss, averaged over
/// dimensions and batch. Timesteps (uniform on `[1, T]`) and noise are drawn
/// from `rng` sample by sample in batch order; per-sample gradients are
/// summed in batch order whatever the execution mode.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut TransformerDenoiser,
    adam: &mut Adam,
    batch: TrainBatch<'_>,
    schedule: &NoiseSchedule,
    rng: &mut R,
    exec: Execution,
) -> Result<f64> {
    let n = batch.x0.len();
    if n == 0 || n != batch.cond.len() {
        return Err(CoreError::Shape(format!(
            "batch has {} targets and {} conditions",
            n,
            batch.cond.len()
        )));
    }
    let t_max = schedule.steps();
    let inputs: Vec<(usize, StateVector)> = batch
        .x0
        .iter()
        .map(|x0| {
            let t = rng.random_range(1..=t_max);
            let noise: Vec<f64> = (0..x0.len()).map(|_| StandardNormal.sample(rng)).collect();
            let xt = q_sample(x0, t, &noise, schedule)?;
            Ok((t, xt.try_into().expect("state length preserved")))
        })
        .collect::<Result<_>>()?;

    let frozen: &TransformerDenoiser = model;
    let per_sample = exec.try_map(n, |k| -> Result<(f64, Vec<Tensor>)> {
        let (t, xt) = &inputs[k];
        let mut tape = Tape::new();
        let pred = frozen.forward(&mut tape, xt, *t, &batch.cond[k])?;
        let target = tape.leaf(Tensor::row(&batch.x0[k]));
        let loss = tape.mse(pred, target)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], grads.for_params(&tape, &frozen.store)))
    })?;

    let mut total = 0.0;
    let mut acc: Option<Vec<Tensor>> = None;
    for (loss, grads) in per_sample {
        total += loss;
        match acc.as_mut() {
            None => acc = Some(grads),
            Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
        }
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(CoreError::Numerical(format!("training loss became {loss}")));
    }
    let mut grads = acc.expect("non-empty batch");
    grads.iter_mut().for_each(|g| g.scale_assign(1.0 / n as f64));
    adam.step(&mut model.store, &grads);
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 32, lr: 1e-3, weight_decay: 0.0, seed: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(CoreError::Config("lr must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// Floor for per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

/// Normalization fitted on both the clean targets and the penetrated
/// conditions. Several clean dimensions are constant (off-axis components
/// of finger joints), so clean-only statistics would blow up the
/// conditions' perturbations in those dimensions.
pub fn fit_normalizer(records: &[CorpusRecord]) -> Result<Normalizer> {
    let samples: Vec<StateVector> =
        records.iter().flat_map(|r| [r.clean.to_vector(), r.penetrated.to_vector()]).collect();
    Normalizer::fit(&samples, STD_FLOOR)
}

/// Trains a fresh denoiser on `records`. Batches walk a seeded shuffle of
/// the records, reshuffled every epoch. `on_step` sees every step's loss.
pub fn train_diffusion(
    records: &[CorpusRecord],
    model_cfg: DenoiserConfig,
    cfg: &TrainConfig,
    exec: Execution,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(TransformerDenoiser, Normalizer)> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(CoreError::Degenerate("no training records".into()));
    }
    let schedule = NoiseSchedule::cosine(model_cfg.t_max)?;
    let normalizer = fit_normalizer(records)?;
    let x0: Vec<StateVector> = records.iter().map(|r| normalizer.encode(&r.clean.to_vector())).collect();
    let cond: Vec<StateVector> = records.iter().map(|r| normalizer.encode(&r.penetrated.to_vector())).collect();

    let mut model = TransformerDenoiser::new(model_cfg, cfg.seed)?;
    let mut adam = Adam::new(
        AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() },
        &model.store,
    );
    let mut order_rng = seeded(derive(cfg.seed, 1));
    let mut noise_rng = seeded(derive(cfg.seed, 2));
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut cursor = order.len();
    let (mut bx, mut bc) = (Vec::with_capacity(cfg.batch_size), Vec::with_capacity(cfg.batch_size));
    for step in 0..cfg.steps {
        bx.clear();
        bc.clear();
        while bx.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            bx.push(x0[order[cursor]]);
            bc.push(cond[order[cursor]]);
            cursor += 1;
        }
        let loss = train_step(&mut model, &mut adam, TrainBatch { x0: &bx, cond: &bc }, &schedule, &mut noise_rng, exec)?;
        on_step(step, loss);
    }
    Ok((model, normalizer))
}
