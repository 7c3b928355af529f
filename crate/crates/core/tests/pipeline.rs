use duohand_core::collision::{CollisionConfig, PosedPair};
use duohand_core::diffusion::{
    fit_normalizer, unguided_sample, CopyCondition, GuidanceConfig, NoiseSchedule, OracleDenoiser, SamplerContext,
};
use duohand_core::hand::HandModel;
use duohand_core::metrics::VIEW_AXIS;
use duohand_core::pipeline::{gate, refine, refine_all, Refiner};
use duohand_core::render::RenderConfig;
use duohand_core::state::TwoHandState;
use duohand_core::synth::{generate_corpus, SynthConfig};
use duohand_core::Execution;
use nalgebra::Vector3;

fn shifted(s: &TwoHandState, by: Vector3<f64>) -> TwoHandState {
    let mut s = s.clone();
    s.right.root_translation += by;
    s
}

#[test]
fn separated_hands_are_gated_out() {
    let model = HandModel::standard();
    let r = &generate_corpus(70, 0..1, &model, &SynthConfig::default(), Execution::Sequential).unwrap()[0];
    let far = shifted(&r.penetrated, Vector3::new(500.0, 0.0, 0.0));
    let g = gate(&far, &model, &CollisionConfig::default(), &RenderConfig::default()).unwrap();
    assert_eq!(g.iou, 0.0);
    assert!(!g.penetrating && !g.refine);
}

/// Moving one hand along the view axis keeps the silhouettes overlapping
/// and removes the 3D contact.
#[test]
fn overlap_without_penetration_is_gated_out() {
    let model = HandModel::standard();
    let recs = generate_corpus(71, 0..5, &model, &SynthConfig::default(), Execution::Sequential).unwrap();
    let render = RenderConfig::default();
    let mut checked = 0;
    for r in &recs {
        let apart = shifted(&r.penetrated, VIEW_AXIS * 300.0);
        let g = gate(&apart, &model, &CollisionConfig::default(), &render).unwrap();
        assert!(!g.penetrating && !g.refine);
        if g.iou > 0.0 {
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn every_penetrated_test_record_triggers_refinement() {
    let model = HandModel::standard();
    let cfg = SynthConfig::default();
    let test = generate_corpus(7, 5500..5700, &model, &cfg, Execution::Parallel).unwrap();
    let (collision, render) = (CollisionConfig::default(), RenderConfig::default());
    let decisions = Execution::Parallel
        .try_map(test.len(), |k| gate(&test[k].penetrated, &model, &collision, &render))
        .unwrap();
    for (r, g) in test.iter().zip(&decisions) {
        assert!(g.refine, "record {}: iou {} depth {}", r.id, g.iou, g.penetration_depth);
        assert_eq!(g.penetration_depth, r.penetration_depth);
    }
}

struct Fixture {
    model: HandModel,
    collision: CollisionConfig,
    render: RenderConfig,
    schedule: NoiseSchedule,
    records: Vec<duohand_core::synth::CorpusRecord>,
}

fn fixture() -> Fixture {
    let model = HandModel::standard();
    let records = generate_corpus(72, 0..4, &model, &SynthConfig::default(), Execution::Parallel).unwrap();
    Fixture {
        model,
        collision: CollisionConfig::default(),
        render: RenderConfig::default(),
        schedule: NoiseSchedule::cosine(1000).unwrap(),
        records,
    }
}

#[test]
fn gated_out_samples_pass_through_bit_exactly() {
    let f = fixture();
    let norm = fit_normalizer(&f.records).unwrap();
    let denoiser = OracleDenoiser([0.0; 109]);
    let guidance = GuidanceConfig { lambda: 1e-6, n_grad_iters: 3, ddim_steps: 10 };
    let r = Refiner {
        model: &f.model,
        collision: &f.collision,
        render: &f.render,
        denoiser: &denoiser,
        normalizer: &norm,
        schedule: &f.schedule,
        guidance: &guidance,
    };
    for rec in &f.records {
        let out = refine(&rec.clean, rec.id, 3, &r).unwrap();
        assert!(!out.log.gate.refine);
        assert!(out.log.steps.is_empty());
        assert_eq!(out.state, rec.clean);
        assert_eq!(out.state.to_vector().map(f64::to_bits), rec.clean.to_vector().map(f64::to_bits));

        let moved = refine(&rec.penetrated, rec.id, 3, &r).unwrap();
        assert!(moved.log.gate.refine);
        assert_ne!(moved.state, rec.penetrated);
        let (a, b) = (PosedPair::new(&moved.state, &f.model), PosedPair::new(&rec.penetrated, &f.model));
        assert_eq!(a.left.faces, b.left.faces);
        assert_eq!(a.right.faces, b.right.faces);
    }
}

#[test]
fn zero_lambda_refinement_equals_unguided_sampling() {
    let f = fixture();
    let norm = fit_normalizer(&f.records).unwrap();
    let guidance = GuidanceConfig { lambda: 0.0, n_grad_iters: 3, ddim_steps: 10 };
    let r = Refiner {
        model: &f.model,
        collision: &f.collision,
        render: &f.render,
        denoiser: &CopyCondition,
        normalizer: &norm,
        schedule: &f.schedule,
        guidance: &guidance,
    };
    let ctx = SamplerContext { model: &f.model, collision: &f.collision, normalizer: &norm, schedule: &f.schedule };
    for rec in &f.records {
        let refined = refine(&rec.penetrated, rec.id, 11, &r).unwrap();
        let plain = unguided_sample(&rec.penetrated, &CopyCondition, ctx, 10, 11).unwrap();
        assert_eq!(refined.state, plain.state);
        assert_eq!(refined.log.steps.len(), 10);
    }
}

#[test]
fn batch_refinement_is_deterministic_and_order_preserving() {
    let f = fixture();
    let norm = fit_normalizer(&f.records).unwrap();
    let guidance = GuidanceConfig { lambda: 1e-6, n_grad_iters: 2, ddim_steps: 5 };
    let r = Refiner {
        model: &f.model,
        collision: &f.collision,
        render: &f.render,
        denoiser: &CopyCondition,
        normalizer: &norm,
        schedule: &f.schedule,
        guidance: &guidance,
    };
    let samples: Vec<_> = f.records.iter().map(|rec| (rec.id, rec.penetrated.clone())).collect();
    let seeds: Vec<u64> = (0..samples.len() as u64).map(|k| 100 + k).collect();
    let seq = refine_all(&samples, &seeds, &r, Execution::Sequential).unwrap();
    let par = duohand_core::exec::with_jobs(3, |e| refine_all(&samples, &seeds, &r, e)).unwrap();
    for ((a, b), (id, _)) in seq.iter().zip(&par).zip(&samples) {
        assert_eq!(a.state, b.state);
        assert_eq!(a.log.to_text(), b.log.to_text());
        assert_eq!(a.log.id, *id);
    }
    let single = refine(&samples[2].1, samples[2].0, seeds[2], &r).unwrap();
    assert_eq!(single.state, seq[2].state);
}
