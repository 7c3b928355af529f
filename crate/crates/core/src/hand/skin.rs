//! Forward kinematics, one-hot skinning, and the matching reverse pass from
//! vertex gradients back to pose, shape and root translation.

use nalgebra::{Matrix3, Vector3};

use super::model::{
    HandModel, HandParams, NUM_JOINTS, NUM_KEYPOINTS, NUM_TIPS, POSE_DIM, SHAPE_DIM, TIP_PARENTS,
};
use super::rotation::{axis_angle_jacobian, axis_angle_to_matrix};

/// An affine map `x ↦ linear · x + translation`. For left hands the linear
/// part carries the x-reflection, so it is orthogonal with determinant −1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointTransform {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl JointTransform {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.linear * p + self.translation
    }
}

/// Intermediate values of forward kinematics in right-handed hand space
/// (before mirroring and root translation).
#[derive(Clone, Debug)]
pub struct FkCache {
    pub local_rotations: [Matrix3<f64>; NUM_JOINTS],
    pub offsets: [Vector3<f64>; NUM_JOINTS],
    pub hand_rotations: [Matrix3<f64>; NUM_JOINTS],
    pub hand_translations: [Vector3<f64>; NUM_JOINTS],
}

#[derive(Clone, Debug)]
pub struct Kinematics {
    pub transforms: [JointTransform; NUM_JOINTS],
    /// 16 joint origins followed by 5 fingertips, world millimeters.
    pub keypoints: [Vector3<f64>; NUM_KEYPOINTS],
    pub cache: FkCache,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Vec<Vector3<f64>>,
    pub bone: Vec<usize>,
}

pub fn forward_kinematics(params: &HandParams, model: &HandModel) -> Kinematics {
    let tree = &model.tree;
    let local_rotations: [Matrix3<f64>; NUM_JOINTS] =
        std::array::from_fn(|j| axis_angle_to_matrix(&params.joint_axis_angle(j)));
    let offsets: [Vector3<f64>; NUM_JOINTS] = std::array::from_fn(|j| tree.offsets[j].eval(&params.shape));
    let mut hand_rotations = [Matrix3::identity(); NUM_JOINTS];
    let mut hand_translations = [Vector3::zeros(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        match tree.parents[j] {
            None => {
                hand_rotations[j] = local_rotations[j];
                hand_translations[j] = offsets[j];
            }
            Some(p) => {
                hand_rotations[j] = hand_rotations[p] * local_rotations[j];
                hand_translations[j] = hand_rotations[p] * offsets[j] + hand_translations[p];
            }
        }
    }
    let reflect = params.chirality.reflection();
    let transforms = std::array::from_fn(|j| JointTransform {
        linear: reflect * hand_rotations[j],
        translation: reflect * hand_translations[j] + params.root_translation,
    });
    let mut keypoints = [Vector3::zeros(); NUM_KEYPOINTS];
    for j in 0..NUM_JOINTS {
        keypoints[j] = transforms[j].translation;
    }
    for t in 0..NUM_TIPS {
        let tip = tree.tip_offsets[t].eval(&params.shape);
        keypoints[NUM_JOINTS + t] = transforms[TIP_PARENTS[t]].apply(&tip);
    }
    Kinematics {
        transforms,
        keypoints,
        cache: FkCache { local_rotations, offsets, hand_rotations, hand_translations },
    }
}

pub fn keypoints(params: &HandParams, model: &HandModel) -> [Vector3<f64>; NUM_KEYPOINTS] {
    forward_kinematics(params, model).keypoints
}

/// Area-weighted vertex normals, normalized. Isolated vertices get +z.
pub fn vertex_normals(vertices: &[Vector3<f64>], faces: &[[u32; 3]]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| i as usize);
        let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        acc[a] += n;
        acc[b] += n;
        acc[c] += n;
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 { n / len } else { Vector3::z() }
        })
        .collect()
}

/// Posed mesh with one-hot skinning. Left hands reverse the face winding so
/// normals stay outward after mirroring.
pub fn skin(params: &HandParams, model: &HandModel) -> HandMesh {
    let kin = forward_kinematics(params, model);
    skin_with(params, model, &kin)
}

pub fn skin_with(params: &HandParams, model: &HandModel, kin: &Kinematics) -> HandMesh {
    let tpl = &model.template;
    let vertices: Vec<Vector3<f64>> = tpl
        .local
        .iter()
        .zip(&tpl.bone)
        .map(|(l, &b)| kin.transforms[b].apply(&l.eval(&params.shape)))
        .collect();
    let faces: Vec<[u32; 3]> = match params.chirality {
        super::Chirality::Right => tpl.faces.clone(),
        super::Chirality::Left => tpl.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
    };
    let normals = vertex_normals(&vertices, &faces);
    HandMesh { vertices, faces, normals, bone: tpl.bone.clone() }
}

/// Gradient of a scalar with respect to one hand's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HandGradient {
    pub pose: [f64; POSE_DIM],
    pub shape: [f64; SHAPE_DIM],
    pub root_translation: Vector3<f64>,
}

impl HandGradient {
    pub fn zero() -> Self {
        Self { pose: [0.0; POSE_DIM], shape: [0.0; SHAPE_DIM], root_translation: Vector3::zeros() }
    }
}

fn outer(a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
    a * b.transpose()
}

/// Reverse pass of [`skin`]: given `∂L/∂v` for every vertex, returns
/// `∂L/∂(pose, shape, root_translation)`.
pub fn backprop_vertex_gradients(
    params: &HandParams,
    model: &HandModel,
    kin: &Kinematics,
    vertex_grads: &[Vector3<f64>],
) -> HandGradient {
    let tpl = &model.template;
    let tree = &model.tree;
    let cache = &kin.cache;
    let reflect = params.chirality.reflection();
    let mut out = HandGradient::zero();

    let mut g_rot = [Matrix3::zeros(); NUM_JOINTS];
    let mut g_trans = [Vector3::zeros(); NUM_JOINTS];
    for ((local, &b), gv) in tpl.local.iter().zip(&tpl.bone).zip(vertex_grads) {
        if gv.x == 0.0 && gv.y == 0.0 && gv.z == 0.0 {
            continue;
        }
        out.root_translation += gv;
        let gh = reflect * gv;
        let l = local.eval(&params.shape);
        g_rot[b] += outer(&gh, &l);
        g_trans[b] += gh;
        let g_local = cache.hand_rotations[b].transpose() * gh;
        for (k, c) in local.coef.iter().enumerate() {
            out.shape[k] += c.dot(&g_local);
        }
    }

    for j in (0..NUM_JOINTS).rev() {
        let g_local_rot = match tree.parents[j] {
            None => g_rot[j],
            Some(p) => {
                let rp = cache.hand_rotations[p];
                let gr = g_rot[j];
                let gt = g_trans[j];
                g_rot[p] += gr * cache.local_rotations[j].transpose() + outer(&gt, &cache.offsets[j]);
                g_trans[p] += gt;
                let g_offset = rp.transpose() * gt;
                for (k, c) in tree.offsets[j].coef.iter().enumerate() {
                    out.shape[k] += c.dot(&g_offset);
                }
                rp.transpose() * gr
            }
        };
        let jac = axis_angle_jacobian(&params.joint_axis_angle(j));
        for k in 0..3 {
            out.pose[3 * j + k] = jac[k].component_mul(&g_local_rot).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::{Chirality, Tessellation};
    use rand::Rng;

    fn random_params(rng: &mut impl Rng, chirality: Chirality) -> HandParams {
        let mut p = HandParams::rest(chirality);
        for v in p.pose.iter_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
        for s in p.shape.iter_mut() {
            *s = rng.random_range(0.8..1.25);
        }
        p.root_translation = Vector3::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
            rng.random_range(-50.0..50.0),
        );
        p
    }

    #[test]
    fn rest_pose_keypoints_accumulate_offsets() {
        let model = HandModel::standard();
        let p = HandParams::rest(Chirality::Right);
        let kp = keypoints(&p, &model);
        let unit = [1.0; SHAPE_DIM];
        for j in 0..NUM_JOINTS {
            let mut expected = Vector3::zeros();
            let mut k = Some(j);
            while let Some(i) = k {
                expected += model.tree.offsets[i].eval(&unit);
                k = model.tree.parents[i];
            }
            assert!((kp[j] - expected).norm() < 1e-12, "joint {j}");
        }
    }

    #[test]
    fn root_translation_shifts_everything() {
        let model = HandModel::standard();
        let mut rng = duohand_nn::rng::seeded(3);
        let mut p = random_params(&mut rng, Chirality::Left);
        let before = keypoints(&p, &model);
        let t = Vector3::new(10.0, -7.5, 3.25);
        p.root_translation += t;
        let after = keypoints(&p, &model);
        for (a, b) in before.iter().zip(&after) {
            assert!((b - a - t).norm() < 1e-12);
        }
    }

    #[test]
    fn rest_skin_is_template_exactly() {
        let model = HandModel::standard();
        let rest = HandParams::rest(Chirality::Right);
        let mesh = skin(&rest, &model);
        let origins = keypoints(&rest, &model);
        let unit = [1.0; SHAPE_DIM];
        for ((v, l), &b) in mesh.vertices.iter().zip(&model.template.local).zip(&model.template.bone) {
            assert_eq!(*v, l.eval(&unit) + origins[b]);
        }
    }

    #[test]
    fn global_rotation_is_rigid_motion_of_template() {
        let model = HandModel::standard();
        let mut p = HandParams::rest(Chirality::Right);
        let aa = Vector3::new(0.3, -1.1, 0.7);
        p.set_joint_axis_angle(0, &aa);
        p.root_translation = Vector3::new(5.0, 6.0, -7.0);
        let r = axis_angle_to_matrix(&aa);
        let mesh = skin(&p, &model);
        let origins = keypoints(&HandParams::rest(Chirality::Right), &model);
        let unit = [1.0; SHAPE_DIM];
        for ((v, l), &b) in mesh.vertices.iter().zip(&model.template.local).zip(&model.template.bone) {
            let expected = r * (l.eval(&unit) + origins[b]) + p.root_translation;
            assert!((v - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn left_hand_is_mirror_of_right() {
        let model = HandModel::standard();
        let mut rng = duohand_nn::rng::seeded(8);
        let right = random_params(&mut rng, Chirality::Right);
        let left = right.mirrored();
        let mr = skin(&right, &model);
        let ml = skin(&left, &model);
        for (a, b) in mr.vertices.iter().zip(&ml.vertices) {
            assert!((Vector3::new(-a.x, a.y, a.z) - b).norm() < 1e-12);
        }
        for (a, b) in mr.normals.iter().zip(&ml.normals) {
            assert!((Vector3::new(-a.x, a.y, a.z) - b).norm() < 1e-12);
        }
    }

    #[test]
    fn normals_are_unit_and_outward() {
        let model = HandModel::new(Tessellation { capsule_u: 10, capsule_v: 8 }).unwrap();
        let rest = HandParams::rest(Chirality::Right);
        let mesh = skin(&rest, &model);
        let origins = keypoints(&rest, &model);
        let unit = [1.0; SHAPE_DIM];
        for (i, n) in mesh.normals.iter().enumerate() {
            assert!((n.norm() - 1.0).abs() < 1e-12);
            let b = mesh.bone[i];
            let cap = &model.tree.capsules[b];
            let (s, e) = (cap.start.eval(&unit) + origins[b], cap.end.eval(&unit) + origins[b]);
            // Closest point on the capsule segment.
            let d = e - s;
            let t = ((mesh.vertices[i] - s).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
            let radial = mesh.vertices[i] - (s + d * t);
            assert!(n.dot(&radial) > 0.0, "vertex {i}");
        }
    }
}
