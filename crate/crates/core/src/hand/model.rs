//! Hand parameters, the procedural kinematic tree, and the capsule template
//! mesh that stands in for a learned hand model.
//!
//! Hand space for a right hand: wrist at the origin, fingers along +y, palm
//! facing +x, thumb on the −z side. A left hand is the x-mirror of the right
//! hand built from the same parameters, so two rest hands face each other.
//! Palm-to-palm poses along any axis then need wrist rotations well short of
//! a half turn, away from the axis-angle wrap at `|ω| = π`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{CoreError, Result};

pub const NUM_JOINTS: usize = 16;
pub const NUM_KEYPOINTS: usize = 21;
pub const NUM_TIPS: usize = 5;
pub const POSE_DIM: usize = 3 * NUM_JOINTS;
pub const SHAPE_DIM: usize = 5;

/// Outward palm direction of a right hand in hand space.
pub const PALM_NORMAL: Vector3<f64> = Vector3::new(1.0, 0.0, 0.0);

pub const SHAPE_MIN: f64 = 0.5;
pub const SHAPE_MAX: f64 = 2.0;

/// Index of each shape multiplier.
pub mod shape {
    pub const FINGER_LENGTH: usize = 0;
    pub const FINGER_RADIUS: usize = 1;
    pub const PALM_WIDTH: usize = 2;
    pub const PALM_LENGTH: usize = 3;
    pub const PALM_THICKNESS: usize = 4;
}

/// Joint order: wrist, then (base, middle, distal) for thumb, index,
/// middle, ring, pinky.
pub const PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(0),
    Some(4),
    Some(5),
    Some(0),
    Some(7),
    Some(8),
    Some(0),
    Some(10),
    Some(11),
    Some(0),
    Some(13),
    Some(14),
];

/// Distal joint carrying each fingertip.
pub const TIP_PARENTS: [usize; NUM_TIPS] = [3, 6, 9, 12, 15];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Chirality {
    Left,
    Right,
}

impl Chirality {
    pub fn mirrored(self) -> Self {
        match self {
            Chirality::Left => Chirality::Right,
            Chirality::Right => Chirality::Left,
        }
    }

    /// Linear map from right-handed hand space to world orientation.
    pub fn reflection(self) -> Matrix3<f64> {
        match self {
            Chirality::Right => Matrix3::identity(),
            Chirality::Left => Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandParams {
    pub chirality: Chirality,
    /// Axis-angle per joint, radians; joint 0 is the global wrist rotation.
    pub pose: [f64; POSE_DIM],
    /// Multipliers, see [`shape`].
    pub shape: [f64; SHAPE_DIM],
    /// Millimeters.
    pub root_translation: Vector3<f64>,
}

impl HandParams {
    pub fn rest(chirality: Chirality) -> Self {
        Self {
            chirality,
            pose: [0.0; POSE_DIM],
            shape: [1.0; SHAPE_DIM],
            root_translation: Vector3::zeros(),
        }
    }

    pub fn joint_axis_angle(&self, joint: usize) -> Vector3<f64> {
        Vector3::new(self.pose[3 * joint], self.pose[3 * joint + 1], self.pose[3 * joint + 2])
    }

    pub fn set_joint_axis_angle(&mut self, joint: usize, aa: &Vector3<f64>) {
        self.pose[3 * joint..3 * joint + 3].copy_from_slice(aa.as_slice());
    }

    pub fn validate(&self) -> Result<()> {
        if !self.pose.iter().all(|v| v.is_finite())
            || !self.root_translation.iter().all(|v| v.is_finite())
        {
            return Err(CoreError::InvalidParams("non-finite pose or translation".into()));
        }
        if let Some(s) = self.shape.iter().find(|s| !(SHAPE_MIN..=SHAPE_MAX).contains(*s)) {
            return Err(CoreError::InvalidParams(format!(
                "shape multiplier {s} outside [{SHAPE_MIN}, {SHAPE_MAX}]"
            )));
        }
        Ok(())
    }

    /// Rewrites every joint rotation into its `|ω| < π` representative.
    pub fn canonicalize(&mut self) {
        for j in 0..NUM_JOINTS {
            let c = super::rotation::canonicalize_axis_angle(&self.joint_axis_angle(j));
            self.set_joint_axis_angle(j, &c);
        }
    }

    /// The other hand whose mesh is the x-mirror of this one. Pose and shape
    /// are shared by construction; only the root translation reflects.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        out.chirality = self.chirality.mirrored();
        out.root_translation.x = -self.root_translation.x;
        out
    }
}

/// A vector whose value is linear in the five shape multipliers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeLinear3 {
    pub coef: [Vector3<f64>; SHAPE_DIM],
}

impl ShapeLinear3 {
    pub fn zero() -> Self {
        Self { coef: [Vector3::zeros(); SHAPE_DIM] }
    }

    /// `(x, y, z)` scaled by the palm width, length and thickness respectively.
    fn palm(x: f64, y: f64, z: f64) -> Self {
        let mut out = Self::zero();
        out.coef[shape::PALM_WIDTH].x = x;
        out.coef[shape::PALM_LENGTH].y = y;
        out.coef[shape::PALM_THICKNESS].z = z;
        out
    }

    fn single(index: usize, v: Vector3<f64>) -> Self {
        let mut out = Self::zero();
        out.coef[index] = v;
        out
    }

    pub fn eval(&self, shape: &[f64; SHAPE_DIM]) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        for (c, s) in self.coef.iter().zip(shape) {
            v += c * *s;
        }
        v
    }
}

/// A scalar linear in one shape multiplier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeScalar {
    pub index: usize,
    pub base: f64,
}

impl ShapeScalar {
    pub fn eval(&self, shape: &[f64; SHAPE_DIM]) -> f64 {
        self.base * shape[self.index]
    }
}

/// Geometry of the capsule rigidly attached to one joint, in that joint's
/// frame. Cross-sections are ellipses with semi-axes `radius1` along `e1`
/// and `radius2` along `e2`; end caps are half-ellipsoids with semi-axis
/// `cap_radius` along the capsule axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapsuleSpec {
    pub start: ShapeLinear3,
    pub end: ShapeLinear3,
    pub axis: Vector3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub radius1: ShapeScalar,
    pub radius2: ShapeScalar,
    pub cap_radius: ShapeScalar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicTree {
    pub parents: [Option<usize>; NUM_JOINTS],
    /// Joint origin in the parent frame (zero for the wrist).
    pub offsets: [ShapeLinear3; NUM_JOINTS],
    /// Fingertip position in the frame of [`TIP_PARENTS`].
    pub tip_offsets: [ShapeLinear3; NUM_TIPS],
    pub capsules: [CapsuleSpec; NUM_JOINTS],
}

struct FingerSpec {
    base: (f64, f64, f64),
    direction: (f64, f64, f64),
    lengths: [f64; 3],
    radii: [f64; 3],
}

const FINGERS: [FingerSpec; 5] = [
    FingerSpec { base: (20.0, 22.0, 4.0), direction: (0.65, 0.75, 0.1), lengths: [38.0, 30.0, 24.0], radii: [10.0, 9.0, 8.5] },
    FingerSpec { base: (24.0, 82.0, 0.0), direction: (0.07, 1.0, 0.0), lengths: [40.0, 24.0, 21.0], radii: [8.5, 8.0, 7.5] },
    FingerSpec { base: (3.0, 86.0, 0.0), direction: (0.0, 1.0, 0.0), lengths: [44.0, 27.0, 22.0], radii: [9.0, 8.5, 7.8] },
    FingerSpec { base: (-16.0, 81.0, 0.0), direction: (-0.06, 1.0, 0.0), lengths: [41.0, 26.0, 21.0], radii: [8.5, 8.0, 7.4] },
    FingerSpec { base: (-33.0, 72.0, 0.0), direction: (-0.13, 1.0, 0.0), lengths: [32.0, 20.0, 19.0], radii: [7.5, 7.0, 6.6] },
];

/// Quarter turn about +y taking the palm-up design frame to hand space,
/// written out so it is exact.
fn design_to_hand() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0)
}

fn perpendicular_frame(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if axis.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let e2 = axis.cross(&helper).cross(axis).normalize();
    let e1 = axis.cross(&e2);
    (e1, e2)
}

impl KinematicTree {
    pub fn standard() -> Self {
        let mut offsets = [ShapeLinear3::zero(); NUM_JOINTS];
        let mut tip_offsets = [ShapeLinear3::zero(); NUM_TIPS];
        let palm_axis = Vector3::y();
        let palm = CapsuleSpec {
            start: ShapeLinear3::palm(-4.0, 20.0, 0.0),
            end: ShapeLinear3::palm(-4.0, 64.0, 0.0),
            axis: palm_axis,
            e1: Vector3::x(),
            e2: Vector3::z(),
            radius1: ShapeScalar { index: shape::PALM_WIDTH, base: 36.0 },
            radius2: ShapeScalar { index: shape::PALM_THICKNESS, base: 12.0 },
            cap_radius: ShapeScalar { index: shape::PALM_LENGTH, base: 16.0 },
        };
        let mut capsules = [palm; NUM_JOINTS];

        for (f, spec) in FINGERS.iter().enumerate() {
            let first = 1 + 3 * f;
            let (bx, by, bz) = spec.base;
            offsets[first] = ShapeLinear3::palm(bx, by, bz);
            let (dx, dy, dz) = spec.direction;
            let dir = Vector3::new(dx, dy, dz).normalize();
            let (e1, e2) = perpendicular_frame(&dir);
            for seg in 0..3 {
                let bone_end = ShapeLinear3::single(shape::FINGER_LENGTH, dir * spec.lengths[seg]);
                if seg < 2 {
                    offsets[first + seg + 1] = bone_end;
                } else {
                    tip_offsets[f] = bone_end;
                }
                let r = ShapeScalar { index: shape::FINGER_RADIUS, base: spec.radii[seg] };
                capsules[first + seg] = CapsuleSpec {
                    start: ShapeLinear3::zero(),
                    end: bone_end,
                    axis: dir,
                    e1,
                    e2,
                    radius1: r,
                    radius2: r,
                    cap_radius: r,
                };
            }
        }
        // The tables above are laid out palm-up (+z) with the thumb on +x;
        // turn them into hand space.
        let q = design_to_hand();
        let turn = |v: &mut ShapeLinear3| v.coef.iter_mut().for_each(|c| *c = q * *c);
        offsets.iter_mut().for_each(turn);
        tip_offsets.iter_mut().for_each(turn);
        for c in capsules.iter_mut() {
            turn(&mut c.start);
            turn(&mut c.end);
            c.axis = q * c.axis;
            c.e1 = q * c.e1;
            c.e2 = q * c.e2;
        }
        Self { parents: PARENTS, offsets, tip_offsets, capsules }
    }

    /// Axis about which positive rotation curls finger `f` (0 = thumb)
    /// toward the palm side, in the frame of its base joint's parent.
    pub fn flexion_axis(&self, finger: usize) -> Vector3<f64> {
        self.capsules[1 + 3 * finger].axis.cross(&PALM_NORMAL).normalize()
    }

    /// Capsule radii at the given shape, one per bone.
    pub fn capsule_radii(&self, shape: &[f64; SHAPE_DIM]) -> [f64; NUM_JOINTS] {
        std::array::from_fn(|j| {
            let c = &self.capsules[j];
            c.radius1.eval(shape).max(c.radius2.eval(shape))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tessellation {
    /// Vertices around each ring.
    pub capsule_u: usize,
    /// Rings per capsule, split between the two end caps.
    pub capsule_v: usize,
}

impl Default for Tessellation {
    fn default() -> Self {
        Self { capsule_u: 8, capsule_v: 6 }
    }
}

impl Tessellation {
    pub fn validate(&self) -> Result<()> {
        if self.capsule_u < 3 || self.capsule_v < 2 {
            return Err(CoreError::Config(format!(
                "tessellation {}x{} too coarse (need u >= 3, v >= 2)",
                self.capsule_u, self.capsule_v
            )));
        }
        Ok(())
    }

    pub fn vertices_per_capsule(&self) -> usize {
        self.capsule_u * self.capsule_v + 2
    }

    pub fn faces_per_capsule(&self) -> usize {
        2 * self.capsule_u * self.capsule_v
    }
}

/// Rest geometry of a right hand: per-vertex local positions (linear in the
/// shape multipliers), one-hot bone assignment, and outward-wound faces.
#[derive(Clone, Debug)]
pub struct HandTemplate {
    pub tessellation: Tessellation,
    pub local: Vec<ShapeLinear3>,
    pub bone: Vec<usize>,
    pub faces: Vec<[u32; 3]>,
}

impl HandTemplate {
    pub fn build(tree: &KinematicTree, tessellation: Tessellation) -> Result<Self> {
        tessellation.validate()?;
        let Tessellation { capsule_u: u, capsule_v: v } = tessellation;
        let unit = [1.0; SHAPE_DIM];
        let mut local = Vec::with_capacity(NUM_JOINTS * tessellation.vertices_per_capsule());
        let mut bone = Vec::with_capacity(local.capacity());
        let mut faces = Vec::with_capacity(NUM_JOINTS * tessellation.faces_per_capsule());

        let bottom_rings = v / 2;
        let top_rings = v - bottom_rings;
        for (j, cap) in tree.capsules.iter().enumerate() {
            let base = local.len() as u32;
            let point = |center: &ShapeLinear3, lat: f64, lon: f64| {
                let mut p = *center;
                let (s, c) = lat.sin_cos();
                p.coef[cap.cap_radius.index] += cap.axis * (cap.cap_radius.base * s);
                p.coef[cap.radius1.index] += cap.e1 * (cap.radius1.base * c * lon.cos());
                p.coef[cap.radius2.index] += cap.e2 * (cap.radius2.base * c * lon.sin());
                p
            };
            local.push(point(&cap.start, -PI / 2.0, 0.0));
            for k in 0..v {
                let (center, lat) = if k < bottom_rings {
                    (&cap.start, -PI / 2.0 + (k + 1) as f64 * (PI / 2.0) / bottom_rings as f64)
                } else {
                    (&cap.end, (k - bottom_rings) as f64 * (PI / 2.0) / top_rings as f64)
                };
                for i in 0..u {
                    local.push(point(center, lat, 2.0 * PI * i as f64 / u as f64));
                }
            }
            local.push(point(&cap.end, PI / 2.0, 0.0));
            bone.extend(std::iter::repeat_n(j, tessellation.vertices_per_capsule()));

            let ring = |k: usize, i: usize| base + 1 + (k * u + i % u) as u32;
            let south = base;
            let north = base + 1 + (u * v) as u32;
            let mut tris = Vec::with_capacity(tessellation.faces_per_capsule());
            for i in 0..u {
                tris.push([south, ring(0, i), ring(0, i + 1)]);
                tris.push([north, ring(v - 1, i + 1), ring(v - 1, i)]);
            }
            for k in 0..v - 1 {
                for i in 0..u {
                    tris.push([ring(k, i), ring(k + 1, i + 1), ring(k, i + 1)]);
                    tris.push([ring(k, i), ring(k + 1, i), ring(k + 1, i + 1)]);
                }
            }
            // Orient every face away from the capsule's interior point.
            let interior = (cap.start.eval(&unit) + cap.end.eval(&unit)) * 0.5;
            for mut t in tris {
                let p: [Vector3<f64>; 3] = std::array::from_fn(|a| local[t[a] as usize].eval(&unit));
                let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
                let centroid = (p[0] + p[1] + p[2]) / 3.0;
                if n.dot(&(centroid - interior)) < 0.0 {
                    t.swap(1, 2);
                }
                faces.push(t);
            }
        }
        Ok(Self { tessellation, local, bone, faces })
    }

    pub fn num_vertices(&self) -> usize {
        self.local.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }
}

/// Kinematic tree plus its tessellated template; everything needed to pose
/// and skin a hand.
#[derive(Clone, Debug)]
pub struct HandModel {
    pub tree: KinematicTree,
    pub template: HandTemplate,
}

impl HandModel {
    pub fn new(tessellation: Tessellation) -> Result<Self> {
        let tree = KinematicTree::standard();
        let template = HandTemplate::build(&tree, tessellation)?;
        Ok(Self { tree, template })
    }

    pub fn standard() -> Self {
        Self::new(Tessellation::default()).expect("default tessellation is valid")
    }
}

impl Default for HandModel {
    fn default() -> Self {
        Self::standard()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parents_precede_children() {
        for (j, p) in PARENTS.iter().enumerate() {
            match p {
                None => assert_eq!(j, 0),
                Some(p) => assert!(*p < j),
            }
        }
    }

    #[test]
    fn offsets_scale_linearly_with_shape() {
        let tree = KinematicTree::standard();
        let unit = [1.0; SHAPE_DIM];
        let mut long = unit;
        long[shape::FINGER_LENGTH] = 1.5;
        for j in [2, 3, 5, 6, 8, 9, 11, 12, 14, 15] {
            let a = tree.offsets[j].eval(&unit);
            let b = tree.offsets[j].eval(&long);
            assert!((b - a * 1.5).norm() < 1e-12);
        }
        let mut wide = unit;
        wide[shape::PALM_WIDTH] = 2.0;
        let a = tree.offsets[4].eval(&unit);
        let b = tree.offsets[4].eval(&wide);
        assert_eq!(b.z, 2.0 * a.z);
        assert_eq!(b.y, a.y);
        assert_eq!(b.x, a.x);
    }

    #[test]
    fn flexion_turns_fingers_toward_the_palm() {
        let tree = KinematicTree::standard();
        for f in 0..5 {
            let dir = tree.capsules[1 + 3 * f].axis;
            let bent = crate::hand::axis_angle_to_matrix(&(tree.flexion_axis(f) * 0.5)) * dir;
            assert!(bent.dot(&PALM_NORMAL) > dir.dot(&PALM_NORMAL));
        }
    }

    #[test]
    fn template_counts_follow_tessellation() {
        for (u, v) in [(8, 6), (5, 2), (12, 9)] {
            let tess = Tessellation { capsule_u: u, capsule_v: v };
            let model = HandModel::new(tess).unwrap();
            assert_eq!(model.template.num_vertices(), NUM_JOINTS * (u * v + 2));
            assert_eq!(model.template.num_faces(), NUM_JOINTS * 2 * u * v);
            let n = model.template.num_vertices() as u32;
            assert!(model.template.faces.iter().flatten().all(|&i| i < n));
        }
        assert!(HandModel::new(Tessellation { capsule_u: 2, capsule_v: 6 }).is_err());
    }

    #[test]
    fn shape_validation() {
        let mut p = HandParams::rest(Chirality::Right);
        assert!(p.validate().is_ok());
        p.shape[2] = 2.5;
        assert!(p.validate().is_err());
        p.shape[2] = 1.0;
        p.pose[7] = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn mirroring_twice_is_identity() {
        let mut p = HandParams::rest(Chirality::Right);
        p.root_translation = Vector3::new(3.0, -4.0, 5.0);
        p.pose[4] = 0.3;
        assert_eq!(p.mirrored().mirrored(), p);
        assert_eq!(p.mirrored().chirality, Chirality::Left);
    }
}
