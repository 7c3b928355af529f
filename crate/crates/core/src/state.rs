//! Two-hand states and their flat 109-dimensional encoding.
//!
//! Layout: `[left pose 48, left shape 5, right pose 48, right shape 5,
//! relative translation 3]`, where the relative translation is the right
//! root minus the left root in millimeters. The left root itself is not
//! part of the vector; decoding takes it as an argument.

use nalgebra::Vector3;

use crate::error::{CoreError, Result};
use crate::hand::{Chirality, HandGradient, HandParams, POSE_DIM, SHAPE_DIM};

pub const STATE_DIM: usize = 2 * (POSE_DIM + SHAPE_DIM) + 3;

pub const LEFT_POSE: usize = 0;
pub const LEFT_SHAPE: usize = POSE_DIM;
pub const RIGHT_POSE: usize = POSE_DIM + SHAPE_DIM;
pub const RIGHT_SHAPE: usize = 2 * POSE_DIM + SHAPE_DIM;
pub const REL_TRANS: usize = 2 * (POSE_DIM + SHAPE_DIM);

pub type StateVector = [f64; STATE_DIM];

#[derive(Clone, Debug, PartialEq)]
pub struct TwoHandState {
    pub left: HandParams,
    pub right: HandParams,
}

impl TwoHandState {
    pub fn new(left: HandParams, right: HandParams) -> Result<Self> {
        if left.chirality != Chirality::Left || right.chirality != Chirality::Right {
            return Err(CoreError::InvalidParams("expected a (left, right) hand pair".into()));
        }
        Ok(Self { left, right })
    }

    /// Right root minus left root, millimeters.
    pub fn relative_translation(&self) -> Vector3<f64> {
        self.right.root_translation - self.left.root_translation
    }

    pub fn validate(&self) -> Result<()> {
        if self.left.chirality != Chirality::Left || self.right.chirality != Chirality::Right {
            return Err(CoreError::InvalidParams("expected a (left, right) hand pair".into()));
        }
        self.left.validate()?;
        self.right.validate()
    }

    pub fn to_vector(&self) -> StateVector {
        let mut v = [0.0; STATE_DIM];
        v[LEFT_POSE..LEFT_SHAPE].copy_from_slice(&self.left.pose);
        v[LEFT_SHAPE..RIGHT_POSE].copy_from_slice(&self.left.shape);
        v[RIGHT_POSE..RIGHT_SHAPE].copy_from_slice(&self.right.pose);
        v[RIGHT_SHAPE..REL_TRANS].copy_from_slice(&self.right.shape);
        v[REL_TRANS..].copy_from_slice(self.relative_translation().as_slice());
        v
    }

    pub fn from_vector(v: &StateVector, left_root: Vector3<f64>) -> Self {
        let mut left = HandParams::rest(Chirality::Left);
        let mut right = HandParams::rest(Chirality::Right);
        left.pose.copy_from_slice(&v[LEFT_POSE..LEFT_SHAPE]);
        left.shape.copy_from_slice(&v[LEFT_SHAPE..RIGHT_POSE]);
        right.pose.copy_from_slice(&v[RIGHT_POSE..RIGHT_SHAPE]);
        right.shape.copy_from_slice(&v[RIGHT_SHAPE..REL_TRANS]);
        left.root_translation = left_root;
        right.root_translation = left_root + Vector3::new(v[REL_TRANS], v[REL_TRANS + 1], v[REL_TRANS + 2]);
        Self { left, right }
    }

    /// Same state with both roots shifted so the left root is at the origin.
    pub fn left_rooted(&self) -> Self {
        Self::from_vector(&self.to_vector(), Vector3::zeros())
    }

    /// Canonical axis-angle per joint and shape clamped to its valid range.
    pub fn sanitized(&self) -> Self {
        let mut out = self.clone();
        for hand in [&mut out.left, &mut out.right] {
            hand.canonicalize();
            for s in hand.shape.iter_mut() {
                *s = s.clamp(crate::hand::SHAPE_MIN, crate::hand::SHAPE_MAX);
            }
        }
        out
    }
}

/// Gradient over the flat state from per-hand gradients. The left root is
/// held fixed, so the relative translation moves only the right hand.
pub fn state_gradient(left: &HandGradient, right: &HandGradient) -> StateVector {
    let mut g = [0.0; STATE_DIM];
    g[LEFT_POSE..LEFT_SHAPE].copy_from_slice(&left.pose);
    g[LEFT_SHAPE..RIGHT_POSE].copy_from_slice(&left.shape);
    g[RIGHT_POSE..RIGHT_SHAPE].copy_from_slice(&right.pose);
    g[RIGHT_SHAPE..REL_TRANS].copy_from_slice(&right.shape);
    g[REL_TRANS..].copy_from_slice(right.root_translation.as_slice());
    g
}

/// Per-dimension standardization fitted on a training corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: StateVector,
    pub std: StateVector,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self { mean: [0.0; STATE_DIM], std: [1.0; STATE_DIM] }
    }

    /// Mean and population standard deviation per dimension, with the
    /// standard deviation floored at `std_floor` for near-constant dimensions.
    pub fn fit(samples: &[StateVector], std_floor: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::Degenerate("cannot fit normalization on zero samples".into()));
        }
        let n = samples.len() as f64;
        let mut mean = [0.0; STATE_DIM];
        for s in samples {
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; STATE_DIM];
        for s in samples {
            for ((v, x), m) in var.iter_mut().zip(s).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.map(|v| (v / n).sqrt().max(std_floor));
        Ok(Self { mean, std })
    }

    pub fn encode(&self, x: &StateVector) -> StateVector {
        std::array::from_fn(|i| (x[i] - self.mean[i]) / self.std[i])
    }

    pub fn decode(&self, z: &StateVector) -> StateVector {
        std::array::from_fn(|i| z[i] * self.std[i] + self.mean[i])
    }

    /// Chain rule for a gradient taken in raw units, expressed in encoded units.
    pub fn encode_gradient(&self, g: &StateVector) -> StateVector {
        std::array::from_fn(|i| g[i] * self.std[i])
    }
}
