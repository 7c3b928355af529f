//! Procedural two-hand model: kinematic tree, axis-angle joints, one-hot
//! linear blend skinning over a capsule template.

mod model;
mod rotation;
mod skin;

use std::io::Write;

pub use model::{
    shape, CapsuleSpec, Chirality, HandModel, HandParams, HandTemplate, KinematicTree, ShapeLinear3,
    ShapeScalar, Tessellation, NUM_JOINTS, PALM_NORMAL, NUM_KEYPOINTS, NUM_TIPS, PARENTS, POSE_DIM, SHAPE_DIM,
    SHAPE_MAX, SHAPE_MIN, TIP_PARENTS,
};
pub use rotation::{axis_angle_jacobian, axis_angle_to_matrix, canonicalize_axis_angle, skew};
pub use skin::{
    backprop_vertex_gradients, forward_kinematics, keypoints, skin, skin_with, vertex_normals,
    FkCache, HandGradient, HandMesh, JointTransform, Kinematics,
};

/// Wavefront OBJ: `v x y z` in millimeters, then 1-based `f i j k`.
pub fn write_obj<W: Write>(mesh: &HandMesh, mut out: W) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn obj_is_one_based() {
        let mesh = HandMesh {
            vertices: vec![nalgebra::Vector3::new(0.0, 1.5, -2.0); 3],
            faces: vec![[0, 1, 2]],
            normals: vec![nalgebra::Vector3::z(); 3],
            bone: vec![0; 3],
        };
        let mut buf = Vec::new();
        write_obj(&mesh, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("v 0 1.5 -2"));
        assert_eq!(text.lines().last(), Some("f 1 2 3"));
    }
}
