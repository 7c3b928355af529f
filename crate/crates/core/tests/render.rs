use duohand_core::hand::{vertex_normals, HandMesh, HandModel};
use duohand_core::primitives::uv_sphere;
use duohand_core::render::{
    project_keypoints, rasterize, silhouette_iou, write_pgm_depth, write_pgm_mask, Camera, Grid, Mask, PriorMaps,
    RenderConfig,
};
use duohand_core::synth::{generate_record, SynthConfig};
use duohand_nn::rng::seeded;
use nalgebra::{Matrix2x4, Vector3, Vector4};
use rand::Rng;

fn mesh(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>) -> HandMesh {
    let normals = vertex_normals(&vertices, &faces);
    let bone = vec![0; vertices.len()];
    HandMesh { vertices, faces, normals, bone }
}

/// 64 px over 64 mm centered at the origin: 1 mm per pixel.
fn unit_camera() -> Camera {
    Camera::looking_down_z(Vector3::zeros(), 64.0, 64)
}

#[test]
fn window_center_maps_to_raster_center() {
    let cam = unit_camera();
    let (x, y, _) = cam.project(&Vector3::new(0.0, 0.0, 5.0));
    assert_eq!((x, y), (32.0, 32.0));
    let (x2, y2, _) = cam.project(&Vector3::new(64.0, 0.0, 5.0));
    assert_eq!((x2 - x, y2 - y), (64.0, 0.0));
}

#[test]
fn projection_matches_affine_matrix() {
    let cam = Camera::looking_down_z(Vector3::new(3.0, -7.0, 2.0), 120.0, 48);
    let sx = cam.width_px as f64 / cam.width_mm;
    let sy = cam.height_px as f64 / cam.height_mm;
    let c = cam.center;
    let m = Matrix2x4::new(
        sx, 0.0, 0.0, 24.0 - sx * c.x, //
        0.0, -sy, 0.0, 24.0 + sy * c.y,
    );
    let mut rng = seeded(4);
    let mut kp = [Vector3::zeros(); 21];
    for k in kp.iter_mut() {
        *k = Vector3::new(rng.random_range(-200.0..200.0), rng.random_range(-200.0..200.0), rng.random_range(-50.0..50.0));
    }
    let px = project_keypoints(&kp, &cam);
    for (p, k) in px.iter().zip(&kp) {
        let o = m * Vector4::new(k.x, k.y, k.z, 1.0);
        assert!((p[0] - o[0]).abs() < 1e-9 && (p[1] - o[1]).abs() < 1e-9);
    }
}

#[test]
fn left_half_triangle_pixel_count() {
    // Raster corners (0,0), (0,64), (32,64); the hypotenuse is y = 2x.
    let tri = mesh(
        vec![Vector3::new(-32.0, 32.0, 0.0), Vector3::new(-32.0, -32.0, 0.0), Vector3::new(0.0, -32.0, 0.0)],
        vec![[0, 1, 2]],
    );
    let r = rasterize(&tri, &unit_camera());
    // Pixel (row, col) is covered when its center satisfies y >= 2x, i.e.
    // 2r + 1 >= 4c + 2 in integers; no center lies on an edge.
    let mut expected = 0;
    for row in 0..64i64 {
        for col in 0..64i64 {
            if 2 * row + 1 >= 4 * col + 2 {
                expected += 1;
                assert!(r.silhouette.get(row as usize, col as usize));
            }
        }
    }
    assert_eq!(r.silhouette.count(), expected);
}

#[test]
fn nearest_depth_wins() {
    let square = |z: f64, base: u32| {
        let v = vec![
            Vector3::new(-10.0, -10.0, z),
            Vector3::new(10.0, -10.0, z),
            Vector3::new(10.0, 10.0, z),
        ];
        (v, [base, base + 1, base + 2])
    };
    // Looking down −z, depth is the distance below the window plane.
    let (mut v, f0) = square(-10.0, 0);
    let (v2, f1) = square(-20.0, 3);
    v.extend(v2);
    for faces in [vec![f0, f1], vec![f1, f0]] {
        let r = rasterize(&mesh(v.clone(), faces), &unit_camera());
        assert_eq!(r.depth.get(32, 38), 10.0);
    }
}

#[test]
fn empty_mesh_renders_nothing() {
    let r = rasterize(&mesh(Vec::new(), Vec::new()), &unit_camera());
    assert_eq!(r.silhouette.count(), 0);
    assert!(r.depth.data.iter().all(|d| *d == f64::INFINITY));
}

fn rect_mask(c0: usize, c1: usize) -> Mask {
    let mut m = Grid::filled(16, 16, false);
    for row in 4..12 {
        for col in c0..c1 {
            m.set(row, col, true);
        }
    }
    m
}

#[test]
fn iou_cases() {
    let a = rect_mask(0, 8);
    assert_eq!(silhouette_iou(&a, &a).unwrap(), 1.0);
    assert_eq!(silhouette_iou(&a, &rect_mask(8, 16)).unwrap(), 0.0);
    assert_eq!(silhouette_iou(&a, &rect_mask(4, 12)).unwrap(), 1.0 / 3.0);
    let empty = Grid::filled(16, 16, false);
    assert_eq!(silhouette_iou(&empty, &empty).unwrap(), 0.0);
    assert!(silhouette_iou(&a, &Grid::filled(8, 16, false)).is_err());
}

#[test]
fn whole_pixel_translation_shifts_the_silhouette() {
    let cam = unit_camera();
    let a = uv_sphere(Vector3::new(-3.2, 1.1, -5.0), 12.0, 20, 14);
    let mut b = a.clone();
    let (dx, dy) = (5usize, 3usize);
    b.vertices.iter_mut().for_each(|v| *v += Vector3::new(dx as f64, -(dy as f64), 0.0));
    let ra = rasterize(&a, &cam);
    let rb = rasterize(&b, &cam);
    for row in 0..64 - dy {
        for col in 0..64 - dx {
            assert_eq!(ra.silhouette.get(row, col), rb.silhouette.get(row + dy, col + dx));
        }
    }
}

#[test]
fn silhouette_matches_finite_depth_and_depth_is_bounded() {
    let model = HandModel::standard();
    let s = generate_record(21, 0, &model, &SynthConfig::default()).unwrap().penetrated;
    let cam = RenderConfig::default().camera(&s, &model).unwrap();
    let maps = PriorMaps::render(&s, &model, &cam);
    let posed = duohand_core::collision::PosedPair::new(&s, &model);
    for (r, m) in [(&maps.left, &posed.left), (&maps.right, &posed.right)] {
        let min_depth = m.vertices.iter().map(|v| cam.project(v).2).fold(f64::INFINITY, f64::min);
        for (sil, d) in r.silhouette.data.iter().zip(&r.depth.data) {
            assert_eq!(*sil, d.is_finite());
            assert!(*d >= min_depth - 1e-6);
        }
        assert!(r.silhouette.count() > 0);
    }
}

#[test]
fn pgm_headers() {
    let mask = rect_mask(0, 8);
    let mut out = Vec::new();
    write_pgm_mask(&mask, &mut out).unwrap();
    assert!(out.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(out.len(), b"P5\n16 16\n255\n".len() + 256);

    let mut depth = Grid::filled(4, 4, f64::INFINITY);
    depth.set(1, 1, 10.0);
    let mut out = Vec::new();
    write_pgm_depth(&depth, 0.0, 20.0, &mut out).unwrap();
    let header = "P5\n# depth_mm near=0 far=20 empty=0\n4 4\n65535\n";
    assert!(out.starts_with(header.as_bytes()));
    let px = &out[header.len()..];
    assert_eq!(px.len(), 32);
    assert_eq!(u16::from_be_bytes([px[10], px[11]]), 32768);
    assert_eq!(u16::from_be_bytes([px[0], px[1]]), 0);
}
