//! Quick oracle checks runnable from the binary. The full suites live in
//! the crates' tests; these cover one case per family.

use duohand_core::collision::{
    collision_loss_grad, collision_loss_on_set, detect_collisions_brute_force, detect_collisions_with, gmof,
    gmof_derivative, CollisionConfig, PosedPair,
};
use duohand_core::config::Config;
use duohand_core::diffusion::NoiseSchedule;
use duohand_core::fusion::symmetric_mean;
use duohand_core::hand::HandModel;
use duohand_core::metrics::{mpjpe, split_error, VIEW_AXIS};
use duohand_core::state::{TwoHandState, STATE_DIM};
use duohand_core::synth::{generate_record, SynthConfig};
use duohand_core::Execution;
use duohand_nn::{rng::seeded, Tensor};
use nalgebra::Vector3;

use crate::provenance::Provenance;
use crate::{CliError, CliResult};

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check { name, passed, detail: detail.into() }
}

/// Central difference of the frozen-set loss over one state coordinate.
pub fn finite_difference(
    state: &TwoHandState,
    model: &HandModel,
    cfg: &CollisionConfig,
    set: &duohand_core::collision::CollisionSet,
    k: usize,
    h: f64,
) -> f64 {
    let v = state.to_vector();
    let root = state.left.root_translation;
    let at = |delta: f64| {
        let mut w = v;
        w[k] += delta;
        collision_loss_on_set(&TwoHandState::from_vector(&w, root), model, cfg, set)
    };
    // Fourth-order stencil.
    (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
}

pub fn checks(exec: Execution) -> Vec<Check> {
    let mut out = Vec::new();
    let rho = 5.0_f64;
    let r2 = rho * rho;
    out.push(check(
        "gmof analytics",
        gmof(0.0, rho) == 0.0 && gmof(r2, rho) == r2 / 2.0 && (gmof(1e6 * r2, rho) - r2).abs() <= 1e-5 * r2,
        "",
    ));
    out.push(check("gmof slope", gmof_derivative(0.0, rho) == 1.0, ""));

    let model = HandModel::standard();
    let synth = SynthConfig::default();
    let cfg = CollisionConfig::default();
    let records: Vec<_> = (0..4).filter_map(|i| generate_record(99, i, &model, &synth).ok()).collect();
    let mut same = records.len() == 4;
    for r in &records {
        let p = PosedPair::new(&r.penetrated, &model);
        same &= detect_collisions_with(&p.left, &p.right, &cfg, exec) == detect_collisions_brute_force(&p.left, &p.right, &cfg);
    }
    out.push(check("grid detection equals brute force", same, format!("{} states", records.len())));

    let mut worst: f64 = 0.0;
    for r in records.iter().take(2) {
        let (_, grad, set) = collision_loss_grad(&r.penetrated, &model, &cfg);
        for (k, g) in grad.iter().enumerate().take(STATE_DIM) {
            if g.abs() > 1e-8 {
                let fd = finite_difference(&r.penetrated, &model, &cfg, &set, k, 1e-4);
                worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()));
            }
        }
    }
    out.push(check("collision gradient vs finite differences", worst <= 1e-4, format!("worst relative {worst:.2e}")));

    let schedule = NoiseSchedule::cosine(1000);
    let decreasing = schedule.as_ref().is_ok_and(|s| s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    out.push(check("cosine schedule strictly decreasing", decreasing, ""));

    let gt: Vec<Vector3<f64>> = (0..21).map(|i| Vector3::new(i as f64, (i * i) as f64, 1.0)).collect();
    let mut pred = gt.clone();
    pred[5].x += 3.0;
    let e = mpjpe(&pred, &gt).unwrap_or(f64::NAN);
    out.push(check("mpjpe single-joint displacement", e == 3.0 / 21.0, format!("{e}")));
    let (xy, z) = split_error(&Vector3::new(3.0, 4.0, 12.0), &VIEW_AXIS);
    out.push(check("xy/z split", (xy, z) == (5.0, 12.0), format!("{xy} {z}")));

    let mut rng = seeded(5);
    let t: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[4, 6], 1.0, &mut rng)).collect();
    let a = symmetric_mean(&t[0], &t[1], &t[2]);
    let b = symmetric_mean(&t[2], &t[0], &t[1]);
    let perm = matches!((a, b), (Ok(a), Ok(b)) if a == b);
    out.push(check("prior fusion permutation invariance", perm, ""));
    out
}

pub(crate) fn run(_cfg: &Config, exec: Execution) -> CliResult<Provenance> {
    let results = checks(exec);
    let mut failed = 0;
    for c in &results {
        let status = if c.passed { "ok  " } else { "FAIL" };
        println!("{status} {}{}", c.name, if c.detail.is_empty() { String::new() } else { format!(" ({})", c.detail) });
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} of {} self-checks failed", results.len())));
    }
    Ok(Provenance::default())
}
