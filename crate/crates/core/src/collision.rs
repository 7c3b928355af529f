//! Hybrid distance-orientation collision detection between two meshes, the
//! robust Geman-McClure collision loss and its gradient, and penetration
//! depth.
//!
//! A vertex pair `(i, j)` collides when `‖a_i − b_j‖² < d²` and the vertex
//! normals face each other, `n_i · n_j < cos θ`. Gradients treat the set of
//! colliding pairs as fixed and flow only through the pair distances.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{CoreError, Result};
use crate::exec::Execution;
use crate::hand::{backprop_vertex_gradients, forward_kinematics, skin_with, HandMesh, HandModel};
use crate::state::{state_gradient, StateVector, TwoHandState};

/// Which robust penalty to apply to squared pair distances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GmofForm {
    /// `ρ²x / (x + ρ²)`: bounded, increasing, slope 1 at zero.
    #[default]
    Standard,
    /// `x / (x − ρ)` with the denominator kept at least [`AS_PRINTED_EPS`]
    /// away from zero. Singular and unbounded below near `x = ρ`; kept only
    /// for comparison runs.
    AsPrinted,
}

pub const AS_PRINTED_EPS: f64 = 1e-6;

impl std::str::FromStr for GmofForm {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(GmofForm::Standard),
            "as_printed" => Ok(GmofForm::AsPrinted),
            other => Err(CoreError::Config(format!(
                "unknown gmof form `{other}` (expected standard or as_printed)"
            ))),
        }
    }
}

impl std::fmt::Display for GmofForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GmofForm::Standard => "standard",
            GmofForm::AsPrinted => "as_printed",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionConfig {
    /// Millimeters; pairs closer than this are candidates.
    pub d_threshold: f64,
    pub cos_theta_threshold: f64,
    /// Millimeters.
    pub rho: f64,
    pub form: GmofForm,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self { d_threshold: 4.0, cos_theta_threshold: -0.5, rho: 5.0, form: GmofForm::Standard }
    }
}

impl CollisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_threshold > 0.0 && self.d_threshold.is_finite()) {
            return Err(CoreError::Config(format!("d_threshold {} must be > 0", self.d_threshold)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(CoreError::Config(format!("rho {} must be > 0", self.rho)));
        }
        if !(-1.0..=1.0).contains(&self.cos_theta_threshold) {
            return Err(CoreError::Config(format!(
                "cos_theta_threshold {} outside [-1, 1]",
                self.cos_theta_threshold
            )));
        }
        Ok(())
    }

    pub fn penalty(&self, x: f64) -> f64 {
        match self.form {
            GmofForm::Standard => gmof(x, self.rho),
            GmofForm::AsPrinted => x / guarded(x - self.rho),
        }
    }

    /// Derivative of [`Self::penalty`] with respect to the squared distance.
    pub fn penalty_derivative(&self, x: f64) -> f64 {
        match self.form {
            GmofForm::Standard => gmof_derivative(x, self.rho),
            GmofForm::AsPrinted => {
                let d = guarded(x - self.rho);
                -self.rho / (d * d)
            }
        }
    }
}

fn guarded(d: f64) -> f64 {
    if d.abs() >= AS_PRINTED_EPS {
        d
    } else if d < 0.0 {
        -AS_PRINTED_EPS
    } else {
        AS_PRINTED_EPS
    }
}

/// Geman-McClure penalty of a squared distance `x`: `ρ²x / (x + ρ²)`.
pub fn gmof(x: f64, rho: f64) -> f64 {
    let r2 = rho * rho;
    r2 * x / (x + r2)
}

/// `d gmof / dx = ρ⁴ / (x + ρ²)²`, equal to 1 at `x = 0`.
pub fn gmof_derivative(x: f64, rho: f64) -> f64 {
    let r2 = rho * rho;
    let s = r2 / (x + r2);
    s * s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionPair {
    /// Vertex in mesh A.
    pub i: u32,
    /// Vertex in mesh B.
    pub j: u32,
    pub distance_sq: f64,
    pub normal_cos: f64,
}

/// Colliding pairs sorted by `(i, j)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CollisionSet {
    pub pairs: Vec<CollisionPair>,
}

impl CollisionSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The same pairs seen from mesh B, re-sorted.
    pub fn transposed(&self) -> Self {
        let mut pairs: Vec<CollisionPair> =
            self.pairs.iter().map(|p| CollisionPair { i: p.j, j: p.i, ..*p }).collect();
        pairs.sort_by_key(|p| (p.i, p.j));
        Self { pairs }
    }
}

fn test_pair(a: &HandMesh, b: &HandMesh, i: usize, j: usize, cfg: &CollisionConfig) -> Option<CollisionPair> {
    let distance_sq = (a.vertices[i] - b.vertices[j]).norm_squared();
    if distance_sq >= cfg.d_threshold * cfg.d_threshold {
        return None;
    }
    let normal_cos = a.normals[i].dot(&b.normals[j]);
    if normal_cos >= cfg.cos_theta_threshold {
        return None;
    }
    Some(CollisionPair { i: i as u32, j: j as u32, distance_sq, normal_cos })
}

/// Reference O(N·M) enumeration.
pub fn detect_collisions_brute_force(a: &HandMesh, b: &HandMesh, cfg: &CollisionConfig) -> CollisionSet {
    let mut pairs = Vec::new();
    for i in 0..a.vertices.len() {
        for j in 0..b.vertices.len() {
            pairs.extend(test_pair(a, b, i, j, cfg));
        }
    }
    CollisionSet { pairs }
}

pub fn detect_collisions(a: &HandMesh, b: &HandMesh, cfg: &CollisionConfig) -> CollisionSet {
    detect_collisions_with(a, b, cfg, Execution::Sequential)
}

const QUERY_CHUNK: usize = 128;

/// Hash-grid detection with cell size `d_threshold`: every pair closer than
/// the threshold lies in the same or an adjacent cell. Queries over mesh A
/// run in chunks that may execute in parallel; chunk results are
/// concatenated in order, so the output matches the sequential path.
pub fn detect_collisions_with(
    a: &HandMesh,
    b: &HandMesh,
    cfg: &CollisionConfig,
    exec: Execution,
) -> CollisionSet {
    let cell = cfg.d_threshold;
    let key = |p: &Vector3<f64>| -> [i64; 3] {
        [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64]
    };
    let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    for (j, p) in b.vertices.iter().enumerate() {
        grid.entry(key(p)).or_default().push(j as u32);
    }
    let chunks = a.vertices.len().div_ceil(QUERY_CHUNK);
    let parts = exec.map(chunks, |c| {
        let mut out = Vec::new();
        let mut candidates = Vec::new();
        for i in c * QUERY_CHUNK..((c + 1) * QUERY_CHUNK).min(a.vertices.len()) {
            let [x, y, z] = key(&a.vertices[i]);
            candidates.clear();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(js) = grid.get(&[x + dx, y + dy, z + dz]) {
                            candidates.extend_from_slice(js);
                        }
                    }
                }
            }
            candidates.sort_unstable();
            out.extend(candidates.iter().filter_map(|&j| test_pair(a, b, i, j as usize, cfg)));
        }
        out
    });
    CollisionSet { pairs: parts.concat() }
}

/// Sum of penalties over a fixed pair set evaluated at the given vertex
/// positions. When gradient buffers are given, `∂loss/∂vertex` is added to
/// them.
pub fn pair_loss(
    a: &[Vector3<f64>],
    b: &[Vector3<f64>],
    set: &CollisionSet,
    cfg: &CollisionConfig,
    mut grad_a: Option<&mut [Vector3<f64>]>,
    mut grad_b: Option<&mut [Vector3<f64>]>,
) -> f64 {
    let mut loss = 0.0;
    for p in &set.pairs {
        let (i, j) = (p.i as usize, p.j as usize);
        let d = a[i] - b[j];
        let x = d.norm_squared();
        loss += cfg.penalty(x);
        if grad_a.is_none() && grad_b.is_none() {
            continue;
        }
        let g = d * (2.0 * cfg.penalty_derivative(x));
        if let Some(ga) = grad_a.as_deref_mut() {
            ga[i] += g;
        }
        if let Some(gb) = grad_b.as_deref_mut() {
            gb[j] -= g;
        }
    }
    loss
}

/// Skinned meshes of both hands, with kinematics kept for the reverse pass.
pub struct PosedPair {
    pub left: HandMesh,
    pub right: HandMesh,
    left_kin: crate::hand::Kinematics,
    right_kin: crate::hand::Kinematics,
}

impl PosedPair {
    pub fn new(state: &TwoHandState, model: &HandModel) -> Self {
        let left_kin = forward_kinematics(&state.left, model);
        let right_kin = forward_kinematics(&state.right, model);
        Self {
            left: skin_with(&state.left, model, &left_kin),
            right: skin_with(&state.right, model, &right_kin),
            left_kin,
            right_kin,
        }
    }

    pub fn left_keypoints(&self) -> [Vector3<f64>; crate::hand::NUM_KEYPOINTS] {
        self.left_kin.keypoints
    }

    pub fn right_keypoints(&self) -> [Vector3<f64>; crate::hand::NUM_KEYPOINTS] {
        self.right_kin.keypoints
    }

    /// Flat-state gradient from per-vertex gradients on each hand.
    pub fn backprop(
        &self,
        state: &TwoHandState,
        model: &HandModel,
        grad_left: &[Vector3<f64>],
        grad_right: &[Vector3<f64>],
    ) -> StateVector {
        let gl = backprop_vertex_gradients(&state.left, model, &self.left_kin, grad_left);
        let gr = backprop_vertex_gradients(&state.right, model, &self.right_kin, grad_right);
        state_gradient(&gl, &gr)
    }
}

/// Left-versus-right collision set of a state.
pub fn state_collisions(state: &TwoHandState, model: &HandModel, cfg: &CollisionConfig) -> CollisionSet {
    let posed = PosedPair::new(state, model);
    detect_collisions(&posed.left, &posed.right, cfg)
}

pub fn collision_loss(state: &TwoHandState, model: &HandModel, cfg: &CollisionConfig) -> f64 {
    let posed = PosedPair::new(state, model);
    let set = detect_collisions(&posed.left, &posed.right, cfg);
    pair_loss(&posed.left.vertices, &posed.right.vertices, &set, cfg, None, None)
}

/// Loss over a fixed left-right pair set at `state`.
pub fn collision_loss_on_set(
    state: &TwoHandState,
    model: &HandModel,
    cfg: &CollisionConfig,
    set: &CollisionSet,
) -> f64 {
    let posed = PosedPair::new(state, model);
    pair_loss(&posed.left.vertices, &posed.right.vertices, set, cfg, None, None)
}

/// Loss and its gradient over the flat state with the pair set frozen at
/// `state`. Returns the set alongside so callers can re-evaluate on it.
pub fn collision_loss_grad(
    state: &TwoHandState,
    model: &HandModel,
    cfg: &CollisionConfig,
) -> (f64, StateVector, CollisionSet) {
    let posed = PosedPair::new(state, model);
    let set = detect_collisions(&posed.left, &posed.right, cfg);
    let mut gl = vec![Vector3::zeros(); posed.left.vertices.len()];
    let mut gr = vec![Vector3::zeros(); posed.right.vertices.len()];
    let loss = pair_loss(
        &posed.left.vertices,
        &posed.right.vertices,
        &set,
        cfg,
        Some(&mut gl),
        Some(&mut gr),
    );
    let grad = posed.backprop(state, model, &gl, &gr);
    (loss, grad, set)
}

/// Point-inside classification against a mesh's convex pieces (faces
/// grouped by bone), each held as outward face planes plus a bounding box.
#[derive(Clone, Debug)]
pub struct InsideTest {
    parts: Vec<ConvexPart>,
}

#[derive(Clone, Debug)]
struct ConvexPart {
    planes: Vec<(Vector3<f64>, f64)>,
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl InsideTest {
    pub fn new(mesh: &HandMesh) -> Self {
        let mut by_bone: Vec<(usize, ConvexPart)> = Vec::new();
        for f in &mesh.faces {
            let [p0, p1, p2] = f.map(|i| mesh.vertices[i as usize]);
            let bone = mesh.bone[f[0] as usize];
            let idx = match by_bone.iter().position(|(b, _)| *b == bone) {
                Some(idx) => idx,
                None => {
                    by_bone.push((
                        bone,
                        ConvexPart {
                            planes: Vec::new(),
                            min: Vector3::repeat(f64::INFINITY),
                            max: Vector3::repeat(f64::NEG_INFINITY),
                        },
                    ));
                    by_bone.len() - 1
                }
            };
            let part = &mut by_bone[idx].1;
            for p in [p0, p1, p2] {
                part.min = part.min.inf(&p);
                part.max = part.max.sup(&p);
            }
            let n = (p1 - p0).cross(&(p2 - p0));
            let len = n.norm();
            if len > 0.0 {
                let n = n / len;
                part.planes.push((n, n.dot(&p0)));
            }
        }
        Self { parts: by_bone.into_iter().map(|(_, p)| p).collect() }
    }

    /// The test for the same mesh moved by `t`.
    pub fn translated(&self, t: &Vector3<f64>) -> Self {
        let parts = self
            .parts
            .iter()
            .map(|p| ConvexPart {
                planes: p.planes.iter().map(|(n, off)| (*n, off + n.dot(t))).collect(),
                min: p.min + t,
                max: p.max + t,
            })
            .collect();
        Self { parts }
    }

    /// Strictly behind every face plane of at least one part.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.parts.iter().any(|part| part.clearance(p).is_some())
    }

    /// Largest distance from `p` to the nearest face plane over the parts
    /// that contain it, or `None` when `p` is outside every part.
    pub fn depth(&self, p: &Vector3<f64>) -> Option<f64> {
        self.parts.iter().filter_map(|part| part.clearance(p)).reduce(f64::max)
    }
}

impl ConvexPart {
    /// Distance to the nearest face plane when strictly inside.
    fn clearance(&self, p: &Vector3<f64>) -> Option<f64> {
        let in_box = p.x > self.min.x
            && p.y > self.min.y
            && p.z > self.min.z
            && p.x < self.max.x
            && p.y < self.max.y
            && p.z < self.max.z;
        if !in_box || self.planes.is_empty() {
            return None;
        }
        let mut nearest = f64::INFINITY;
        for (n, off) in &self.planes {
            let d = off - n.dot(p);
            if d <= 0.0 {
                return None;
            }
            nearest = nearest.min(d);
        }
        Some(nearest)
    }
}

fn one_sided_depth(a: &HandMesh, b: &HandMesh, b_parts: &InsideTest) -> f64 {
    let mut depth: f64 = 0.0;
    for v in &a.vertices {
        if let Some(plane) = b_parts.depth(v) {
            let nearest = b.vertices.iter().map(|w| (v - w).norm_squared()).fold(f64::INFINITY, f64::min);
            depth = depth.max(plane.min(nearest.sqrt()));
        }
    }
    depth
}

/// Largest distance by which a vertex of one mesh lies inside the other.
///
/// A vertex counts as inside when it is strictly behind every face plane of
/// one of the other mesh's per-bone convex pieces. Its depth is the smaller
/// of the distance to the nearest face plane of the deepest containing piece
/// and the distance to the nearest vertex of the other mesh. Zero when no
/// vertex is inside.
pub fn penetration_depth(a: &HandMesh, b: &HandMesh) -> f64 {
    penetration_depth_with(a, &InsideTest::new(a), b, &InsideTest::new(b))
}

pub fn penetration_depth_with(a: &HandMesh, a_in: &InsideTest, b: &HandMesh, b_in: &InsideTest) -> f64 {
    one_sided_depth(a, b, b_in).max(one_sided_depth(b, a, a_in))
}

/// Whether any vertex of either mesh is inside the other. Stops at the
/// first hit.
pub fn penetrates(a: &HandMesh, b: &HandMesh) -> bool {
    penetrates_with(a, &InsideTest::new(a), b, &InsideTest::new(b))
}

pub fn penetrates_with(a: &HandMesh, a_in: &InsideTest, b: &HandMesh, b_in: &InsideTest) -> bool {
    a.vertices.iter().any(|v| b_in.contains(v)) || b.vertices.iter().any(|v| a_in.contains(v))
}

pub fn state_penetration_depth(state: &TwoHandState, model: &HandModel) -> f64 {
    let posed = PosedPair::new(state, model);
    penetration_depth(&posed.left, &posed.right)
}
