use duohand_core::collision::{
    collision_loss, collision_loss_grad, collision_loss_on_set, detect_collisions, detect_collisions_brute_force,
    detect_collisions_with, gmof, gmof_derivative, pair_loss, penetration_depth, state_collisions, CollisionConfig,
    CollisionPair, CollisionSet, PosedPair,
};
use duohand_core::hand::HandModel;
use duohand_core::primitives::{max_edge_length, planar_patch, uv_sphere};
use duohand_core::state::{TwoHandState, REL_TRANS};
use duohand_core::synth::{generate_record, SynthConfig};
use duohand_core::Execution;
use nalgebra::{Rotation3, Vector3};

fn penetrating_states(seed: u64, n: u64) -> Vec<TwoHandState> {
    let model = HandModel::standard();
    (0..n).map(|i| generate_record(seed, i, &model, &SynthConfig::default()).unwrap().penetrated).collect()
}

#[test]
fn separated_hands_have_no_pairs_loss_or_gradient() {
    let model = HandModel::standard();
    let mut s = penetrating_states(3, 1).remove(0);
    s.right.root_translation += Vector3::new(1000.0, 0.0, 0.0);
    let cfg = CollisionConfig::default();
    assert!(state_collisions(&s, &model, &cfg).is_empty());
    assert_eq!(collision_loss(&s, &model, &cfg), 0.0);
    let (loss, grad, _) = collision_loss_grad(&s, &model, &cfg);
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn overlapping_spheres_match_brute_force() {
    let a = uv_sphere(Vector3::zeros(), 20.0, 24, 16);
    let b = uv_sphere(Vector3::new(36.0, 1.0, -2.0), 20.0, 24, 16);
    let cfg = CollisionConfig::default();
    let fast = detect_collisions(&a, &b, &cfg);
    assert!(!fast.is_empty());
    assert_eq!(fast, detect_collisions_brute_force(&a, &b, &cfg));
    for p in &fast.pairs {
        assert!(p.distance_sq < cfg.d_threshold * cfg.d_threshold);
        assert!(p.normal_cos < cfg.cos_theta_threshold);
    }
    assert!(fast.pairs.windows(2).all(|w| (w[0].i, w[0].j) < (w[1].i, w[1].j)));
}

#[test]
fn parallel_patches_with_equal_normals_do_not_collide() {
    let a = planar_patch(Vector3::zeros(), 20.0, 10);
    let b = planar_patch(Vector3::new(0.0, 0.0, 1.0), 20.0, 10);
    let cfg = CollisionConfig::default();
    assert!(detect_collisions(&a, &b, &cfg).is_empty());
    assert!(detect_collisions_brute_force(&a, &b, &cfg).is_empty());
}

#[test]
fn swapping_meshes_transposes_the_set() {
    let model = HandModel::standard();
    let cfg = CollisionConfig::default();
    for s in penetrating_states(5, 5) {
        let p = PosedPair::new(&s, &model);
        let ab = detect_collisions(&p.left, &p.right, &cfg);
        let ba = detect_collisions(&p.right, &p.left, &cfg);
        assert_eq!(ab.transposed(), ba);
    }
}

#[test]
fn parallel_detection_matches_sequential() {
    let model = HandModel::standard();
    let cfg = CollisionConfig::default();
    for s in penetrating_states(6, 3) {
        let p = PosedPair::new(&s, &model);
        assert_eq!(
            detect_collisions_with(&p.left, &p.right, &cfg, Execution::Parallel),
            detect_collisions_with(&p.left, &p.right, &cfg, Execution::Sequential)
        );
    }
}

#[test]
fn loss_is_invariant_under_common_rigid_motion() {
    let model = HandModel::standard();
    let cfg = CollisionConfig::default();
    let s = penetrating_states(8, 1).remove(0);
    let p = PosedPair::new(&s, &model);
    let set = detect_collisions(&p.left, &p.right, &cfg);
    let loss = pair_loss(&p.left.vertices, &p.right.vertices, &set, &cfg, None, None);
    let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
    let shift = Vector3::new(40.0, -7.0, 12.0);
    let moved = |m: &duohand_core::hand::HandMesh| {
        let mut m = m.clone();
        m.vertices.iter_mut().for_each(|v| *v = rot * *v + shift);
        m.normals.iter_mut().for_each(|n| *n = rot * *n);
        m
    };
    let (l, r) = (moved(&p.left), moved(&p.right));
    let set2 = detect_collisions(&l, &r, &cfg);
    assert_eq!(set.len(), set2.len());
    let loss2 = pair_loss(&l.vertices, &r.vertices, &set2, &cfg, None, None);
    assert!((loss - loss2).abs() <= 1e-9 * loss.max(1.0), "{loss} vs {loss2}");
}

#[test]
fn loss_equals_brute_force_set_and_scalar_sum() {
    let model = HandModel::standard();
    let cfg = CollisionConfig::default();
    for s in penetrating_states(9, 5) {
        let p = PosedPair::new(&s, &model);
        let set = detect_collisions_brute_force(&p.left, &p.right, &cfg);
        let oracle: f64 = set
            .pairs
            .iter()
            .map(|q| gmof((p.left.vertices[q.i as usize] - p.right.vertices[q.j as usize]).norm_squared(), cfg.rho))
            .sum();
        let loss = collision_loss(&s, &model, &cfg);
        assert!((loss - oracle).abs() <= 1e-9 * oracle.max(1.0));
    }
}

#[test]
fn single_pair_translation_gradient_follows_the_chain_rule() {
    // Hand-derived: x = |a - b|², b moves with the relative translation, so
    // dL/dt = gmof'(x) · 2 (b - a).
    let model = HandModel::standard();
    let cfg = CollisionConfig::default();
    let s = penetrating_states(10, 1).remove(0);
    let p = PosedPair::new(&s, &model);
    let full = detect_collisions(&p.left, &p.right, &cfg);
    let one = CollisionSet { pairs: vec![full.pairs[0]] };
    let CollisionPair { i, j, .. } = one.pairs[0];
    let (a, b) = (p.left.vertices[i as usize], p.right.vertices[j as usize]);
    let x = (a - b).norm_squared();
    let expected = (b - a) * (2.0 * gmof_derivative(x, cfg.rho));

    let mut gl = vec![Vector3::zeros(); p.left.vertices.len()];
    let mut gr = vec![Vector3::zeros(); p.right.vertices.len()];
    let loss = pair_loss(&p.left.vertices, &p.right.vertices, &one, &cfg, Some(&mut gl), Some(&mut gr));
    assert_eq!(loss, gmof(x, cfg.rho));
    let grad = p.backprop(&s, &model, &gl, &gr);
    for k in 0..3 {
        assert!((grad[REL_TRANS + k] - expected[k]).abs() <= 1e-12 * expected.norm().max(1.0));
    }
}

#[test]
fn gradient_matches_central_differences_on_frozen_set() {
    let model = HandModel::standard();
    let cfg = CollisionConfig::default();
    let h = 1e-5;
    let mut checked = 0;
    for s in penetrating_states(12, 4) {
        let (_, grad, set) = collision_loss_grad(&s, &model, &cfg);
        let v = s.to_vector();
        let root = s.left.root_translation;
        for (k, g) in grad.iter().enumerate() {
            if g.abs() <= 1e-8 {
                continue;
            }
            let at = |d: f64| {
                let mut w = v;
                w[k] += d;
                collision_loss_on_set(&TwoHandState::from_vector(&w, root), &model, &cfg, &set)
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let rel = (g - fd).abs() / g.abs().max(fd.abs());
            assert!(rel < 1e-4, "coordinate {k}: analytic {g} vs fd {fd}");
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn overlapping_sphere_depth_within_one_edge() {
    let r = 20.0;
    for delta in [2.0, 5.0, 8.0] {
        let a = uv_sphere(Vector3::zeros(), r, 32, 24);
        let b = uv_sphere(Vector3::new(2.0 * r - delta, 0.0, 0.0), r, 32, 24);
        let edge = max_edge_length(&a).max(max_edge_length(&b));
        let d = penetration_depth(&a, &b);
        assert!((d - delta).abs() <= edge, "delta {delta}: depth {d}, edge {edge}");
    }
}

#[test]
fn disjoint_and_self_depth() {
    let a = uv_sphere(Vector3::zeros(), 10.0, 16, 12);
    let b = uv_sphere(Vector3::new(30.0, 0.0, 0.0), 10.0, 16, 12);
    assert_eq!(penetration_depth(&a, &b), 0.0);
    // Surface vertices are on, not strictly behind, their own face planes.
    let d = penetration_depth(&a, &a);
    assert!(d <= max_edge_length(&a), "{d}");
}
