//! The inference gate and per-sample refinement.

use std::fmt::Write as _;

use crate::collision::{detect_collisions, penetration_depth, CollisionConfig, PosedPair};
use crate::diffusion::{guided_sample, Denoiser, GuidanceConfig, NoiseSchedule, SamplerContext, StepLog};
use crate::error::Result;
use crate::exec::Execution;
use crate::hand::HandModel;
use crate::render::{PriorMaps, RenderConfig};
use crate::state::{Normalizer, TwoHandState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateDecision {
    pub iou: f64,
    pub penetration_depth: f64,
    pub collision_pairs: usize,
    pub penetrating: bool,
    pub refine: bool,
}

/// Silhouette overlap in the canonical view and 3D penetration; refine
/// only when both are present.
pub fn gate(state: &TwoHandState, model: &HandModel, collision: &CollisionConfig, render: &RenderConfig) -> Result<GateDecision> {
    let cam = render.camera(state, model)?;
    let iou = PriorMaps::render(state, model, &cam).iou();
    let posed = PosedPair::new(state, model);
    let collision_pairs = detect_collisions(&posed.left, &posed.right, collision).len();
    let depth = penetration_depth(&posed.left, &posed.right);
    let penetrating = depth > 0.0;
    Ok(GateDecision { iou, penetration_depth: depth, collision_pairs, penetrating, refine: iou > 0.0 && penetrating })
}

/// Everything refinement needs besides the sample.
#[derive(Clone, Copy)]
pub struct Refiner<'a> {
    pub model: &'a HandModel,
    pub collision: &'a CollisionConfig,
    pub render: &'a RenderConfig,
    pub denoiser: &'a dyn Denoiser,
    pub normalizer: &'a Normalizer,
    pub schedule: &'a NoiseSchedule,
    pub guidance: &'a GuidanceConfig,
}

#[derive(Clone, Debug)]
pub struct RefineLog {
    pub id: u64,
    pub seed: u64,
    pub gate: GateDecision,
    pub steps: Vec<StepLog>,
}

impl RefineLog {
    pub fn to_text(&self) -> String {
        let g = &self.gate;
        let mut s = format!(
            "record {} seed {} iou {:.17e} depth {:.17e} pairs {} refine {}\n",
            self.id, self.seed, g.iou, g.penetration_depth, g.collision_pairs, g.refine
        );
        for st in &self.steps {
            let losses: Vec<String> = st.losses.iter().map(|l| format!("{l:.17e}")).collect();
            let _ = writeln!(
                s,
                "  t {} pairs {} {} {} skipped {} loss {}",
                st.t,
                st.pairs[0],
                st.pairs[1],
                st.pairs[2],
                st.skipped,
                losses.join(" ")
            );
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct Refined {
    pub state: TwoHandState,
    pub log: RefineLog,
}

/// Guided diffusion for gated-in samples; everything else is returned as
/// is, without a round trip through the normalized encoding.
pub fn refine(state: &TwoHandState, id: u64, seed: u64, r: &Refiner<'_>) -> Result<Refined> {
    let gate = gate(state, r.model, r.collision, r.render)?;
    if !gate.refine {
        return Ok(Refined { state: state.clone(), log: RefineLog { id, seed, gate, steps: Vec::new() } });
    }
    let ctx = SamplerContext {
        model: r.model,
        collision: r.collision,
        normalizer: r.normalizer,
        schedule: r.schedule,
    };
    let out = guided_sample(state, r.denoiser, ctx, r.guidance, seed)?;
    Ok(Refined { state: out.state, log: RefineLog { id, seed, gate, steps: out.steps } })
}

/// Refines `(id, state)` pairs independently; sample `k` uses
/// `seeds[k]`. Output order follows input order.
pub fn refine_all(samples: &[(u64, TwoHandState)], seeds: &[u64], r: &Refiner<'_>, exec: Execution) -> Result<Vec<Refined>> {
    assert_eq!(samples.len(), seeds.len(), "one seed per sample");
    exec.try_map(samples.len(), |k| refine(&samples[k].1, samples[k].0, seeds[k], r))
}
