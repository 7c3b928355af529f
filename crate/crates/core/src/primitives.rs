//! Closed test meshes with the same layout as a skinned hand.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::hand::{vertex_normals, HandMesh};

/// Latitude-longitude sphere: two poles plus `rings × segments` vertices,
/// outward winding, a single bone.
pub fn uv_sphere(center: Vector3<f64>, radius: f64, segments: usize, rings: usize) -> HandMesh {
    let mut vertices = vec![center - Vector3::z() * radius];
    for r in 0..rings {
        let lat = -PI / 2.0 + PI * (r + 1) as f64 / (rings + 1) as f64;
        for s in 0..segments {
            let lon = 2.0 * PI * s as f64 / segments as f64;
            let dir = Vector3::new(lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin());
            vertices.push(center + dir * radius);
        }
    }
    vertices.push(center + Vector3::z() * radius);
    let ring = |r: usize, s: usize| (1 + r * segments + s % segments) as u32;
    let south = 0u32;
    let north = (1 + rings * segments) as u32;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([south, ring(0, s + 1), ring(0, s)]);
        faces.push([north, ring(rings - 1, s), ring(rings - 1, s + 1)]);
    }
    for r in 0..rings - 1 {
        for s in 0..segments {
            faces.push([ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)]);
            faces.push([ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)]);
        }
    }
    let normals = vertex_normals(&vertices, &faces);
    let bone = vec![0; vertices.len()];
    HandMesh { vertices, faces, normals, bone }
}

/// Flat `n × n` grid of squares in the plane `z = height`, normals `+z`.
pub fn planar_patch(origin: Vector3<f64>, size: f64, n: usize) -> HandMesh {
    let mut vertices = Vec::new();
    for r in 0..=n {
        for c in 0..=n {
            let step = size / n as f64;
            vertices.push(origin + Vector3::new(c as f64 * step, r as f64 * step, 0.0));
        }
    }
    let idx = |r: usize, c: usize| (r * (n + 1) + c) as u32;
    let mut faces = Vec::new();
    for r in 0..n {
        for c in 0..n {
            faces.push([idx(r, c), idx(r, c + 1), idx(r + 1, c + 1)]);
            faces.push([idx(r, c), idx(r + 1, c + 1), idx(r + 1, c)]);
        }
    }
    let normals = vertex_normals(&vertices, &faces);
    let bone = vec![0; vertices.len()];
    HandMesh { vertices, faces, normals, bone }
}

/// Longest edge of any face.
pub fn max_edge_length(mesh: &HandMesh) -> f64 {
    mesh.faces
        .iter()
        .flat_map(|f| {
            let v = f.map(|i| mesh.vertices[i as usize]);
            [(v[0] - v[1]).norm(), (v[1] - v[2]).norm(), (v[2] - v[0]).norm()]
        })
        .fold(0.0, f64::max)
}
