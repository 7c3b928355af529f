use nalgebra::Vector3;
use rand_distr::{Distribution, StandardNormal};

use super::{ddim_step, ddim_timesteps, Denoiser, NoiseSchedule};
use crate::collision::{detect_collisions, pair_loss, CollisionConfig, CollisionSet, PosedPair};
use crate::error::{CoreError, Result};
use crate::hand::{HandMesh, HandModel};
use crate::state::{Normalizer, StateVector, TwoHandState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceConfig {
    /// Step size in normalized state units.
    pub lambda: f64,
    pub n_grad_iters: usize,
    pub ddim_steps: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA, n_grad_iters: 3, ddim_steps: 50 }
    }
}

/// Default guidance step, tuned on the validation split; see the README.
pub const DEFAULT_LAMBDA: f64 = 3e-5;

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CoreError::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.ddim_steps == 0 {
            return Err(CoreError::Config("ddim_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Everything a sampling run reads but does not own.
#[derive(Clone, Copy)]
pub struct SamplerContext<'a> {
    pub model: &'a HandModel,
    pub collision: &'a CollisionConfig,
    pub normalizer: &'a Normalizer,
    pub schedule: &'a NoiseSchedule,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub t: usize,
    /// Pairs in the three frozen sets (refined–refined, refined left vs
    /// condition right, condition left vs refined right).
    pub pairs: [usize; 3],
    /// Guidance loss before the first and after each inner iteration.
    pub losses: Vec<f64>,
    /// Inner iterations skipped because the gradient was not finite.
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub state: TwoHandState,
    pub steps: Vec<StepLog>,
}

/// Collision objective of a refined estimate against itself and against
/// the fixed condition meshes.
pub struct GuidanceObjective<'a> {
    model: &'a HandModel,
    cfg: &'a CollisionConfig,
    cond_left: HandMesh,
    cond_right: HandMesh,
    left_root: Vector3<f64>,
}

impl<'a> GuidanceObjective<'a> {
    pub fn new(cond: &TwoHandState, model: &'a HandModel, cfg: &'a CollisionConfig) -> Self {
        let posed = PosedPair::new(cond, model);
        Self {
            model,
            cfg,
            cond_left: posed.left,
            cond_right: posed.right,
            left_root: cond.left.root_translation,
        }
    }

    /// Raw state for a flat vector, rooted like the condition.
    pub fn state(&self, raw: &StateVector) -> TwoHandState {
        TwoHandState::from_vector(raw, self.left_root)
    }

    pub fn freeze(&self, state: &TwoHandState) -> [CollisionSet; 3] {
        let posed = PosedPair::new(state, self.model);
        [
            detect_collisions(&posed.left, &posed.right, self.cfg),
            detect_collisions(&posed.left, &self.cond_right, self.cfg),
            detect_collisions(&self.cond_left, &posed.right, self.cfg),
        ]
    }

    pub fn loss(&self, state: &TwoHandState, sets: &[CollisionSet; 3]) -> f64 {
        let posed = PosedPair::new(state, self.model);
        self.eval(&posed, sets, None)
    }

    /// Loss and raw-unit gradient over the flat state.
    pub fn loss_grad(&self, state: &TwoHandState, sets: &[CollisionSet; 3]) -> (f64, StateVector) {
        let posed = PosedPair::new(state, self.model);
        let mut gl = vec![Vector3::zeros(); posed.left.vertices.len()];
        let mut gr = vec![Vector3::zeros(); posed.right.vertices.len()];
        let loss = self.eval(&posed, sets, Some((&mut gl, &mut gr)));
        (loss, posed.backprop(state, self.model, &gl, &gr))
    }

    fn eval(
        &self,
        posed: &PosedPair,
        sets: &[CollisionSet; 3],
        grads: Option<(&mut [Vector3<f64>], &mut [Vector3<f64>])>,
    ) -> f64 {
        let (l, r) = (&posed.left.vertices, &posed.right.vertices);
        match grads {
            None => {
                pair_loss(l, r, &sets[0], self.cfg, None, None)
                    + pair_loss(l, &self.cond_right.vertices, &sets[1], self.cfg, None, None)
                    + pair_loss(&self.cond_left.vertices, r, &sets[2], self.cfg, None, None)
            }
            Some((gl, gr)) => {
                pair_loss(l, r, &sets[0], self.cfg, Some(gl), Some(gr))
                    + pair_loss(l, &self.cond_right.vertices, &sets[1], self.cfg, Some(gl), None)
                    + pair_loss(&self.cond_left.vertices, r, &sets[2], self.cfg, None, Some(gr))
            }
        }
    }

    /// `n_iters` descent steps of size `lambda` on a normalized estimate,
    /// with the pair sets frozen at the incoming estimate.
    pub fn descend(&self, z: &mut StateVector, normalizer: &Normalizer, lambda: f64, n_iters: usize, t: usize) -> StepLog {
        let state = self.state(&normalizer.decode(z));
        let sets = self.freeze(&state);
        let pairs = [sets[0].len(), sets[1].len(), sets[2].len()];
        let mut losses = Vec::with_capacity(n_iters + 1);
        let mut skipped = 0;
        if sets.iter().all(|s| s.is_empty()) {
            losses.push(0.0);
            return StepLog { t, pairs, losses, skipped };
        }
        let mut current = state;
        for _ in 0..n_iters {
            let (loss, grad) = self.loss_grad(&current, &sets);
            losses.push(loss);
            let g = normalizer.encode_gradient(&grad);
            if g.iter().any(|v| !v.is_finite()) {
                skipped += 1;
                continue;
            }
            if lambda != 0.0 {
                z.iter_mut().zip(&g).for_each(|(z, g)| *z -= lambda * g);
                current = self.state(&normalizer.decode(z));
            }
        }
        losses.push(self.loss(&current, &sets));
        StepLog { t, pairs, losses, skipped }
    }
}

/// Starting noise of a sampling run.
pub fn initial_noise(seed: u64) -> StateVector {
    let mut rng = duohand_nn::rng::seeded(seed);
    std::array::from_fn(|_| StandardNormal.sample(&mut rng))
}

/// DDIM sampling conditioned on a penetrated state. With `guidance` set,
/// each clean-sample estimate is first moved down the collision objective.
pub fn sample(
    cond: &TwoHandState,
    denoiser: &dyn Denoiser,
    ctx: SamplerContext<'_>,
    ddim_steps: usize,
    guidance: Option<(f64, usize)>,
    seed: u64,
) -> Result<SampleOutput> {
    let ts = ddim_timesteps(ctx.schedule.steps(), ddim_steps)?;
    let c = ctx.normalizer.encode(&cond.to_vector());
    let objective = guidance.map(|_| GuidanceObjective::new(cond, ctx.model, ctx.collision));
    let mut x = initial_noise(seed);
    let mut logs = Vec::new();
    for (k, &t) in ts.iter().enumerate() {
        let mut x0 = denoiser.predict(&x, t, &c)?;
        if let Some(bad) = x0.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::Numerical(format!(
                "denoiser output dimension {bad} is not finite at t = {t}"
            )));
        }
        if let (Some(obj), Some((lambda, iters))) = (&objective, guidance) {
            logs.push(obj.descend(&mut x0, ctx.normalizer, lambda, iters, t));
        }
        let t_prev = ts.get(k + 1).copied().unwrap_or(0);
        let next = ddim_step(&x, &x0, t, t_prev, ctx.schedule);
        x = next.try_into().expect("state length preserved");
    }
    let raw = ctx.normalizer.decode(&x);
    let state = TwoHandState::from_vector(&raw, cond.left.root_translation).sanitized();
    Ok(SampleOutput { state, steps: logs })
}

pub fn guided_sample(
    cond: &TwoHandState,
    denoiser: &dyn Denoiser,
    ctx: SamplerContext<'_>,
    guidance: &GuidanceConfig,
    seed: u64,
) -> Result<SampleOutput> {
    guidance.validate()?;
    sample(cond, denoiser, ctx, guidance.ddim_steps, Some((guidance.lambda, guidance.n_grad_iters)), seed)
}

pub fn unguided_sample(
    cond: &TwoHandState,
    denoiser: &dyn Denoiser,
    ctx: SamplerContext<'_>,
    ddim_steps: usize,
    seed: u64,
) -> Result<SampleOutput> {
    sample(cond, denoiser, ctx, ddim_steps, None, seed)
}
