//! Pose-error metrics: root-aligned joint and vertex errors, relative-root
//! error, Procrustes-aligned variants, and image-plane/depth splits, plus
//! penetration statistics.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::collision::{detect_collisions, penetration_depth, CollisionConfig, PosedPair};
use crate::error::{CoreError, Result};
use crate::exec::Execution;
use crate::hand::HandModel;
use crate::state::TwoHandState;

/// Index of the root joint (the wrist) in a keypoint list.
pub const ROOT: usize = 0;

fn check_counts(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(CoreError::Shape(format!("{} predicted vs {} reference points", pred.len(), gt.len())));
    }
    Ok(())
}

fn mean_distance(pred: impl Iterator<Item = Vector3<f64>>, gt: impl Iterator<Item = Vector3<f64>>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.zip(gt) {
        sum += (p - g).norm();
        n += 1;
    }
    sum / n as f64
}

/// Mean point error after translating each set so its root is at the
/// origin. `pred_root`/`gt_root` are the root joints of each set.
pub fn root_aligned_error(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    pred_root: &Vector3<f64>,
    gt_root: &Vector3<f64>,
) -> Result<f64> {
    check_counts(pred, gt)?;
    Ok(mean_distance(pred.iter().map(|p| p - pred_root), gt.iter().map(|g| g - gt_root)))
}

/// Root-aligned mean per-joint position error; the root is joint 0.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    check_counts(pred, gt)?;
    root_aligned_error(pred, gt, &pred[ROOT], &gt[ROOT])
}

/// Error of the right root relative to the left root.
pub fn mrrpe(
    pred_left_root: &Vector3<f64>,
    pred_right_root: &Vector3<f64>,
    gt_left_root: &Vector3<f64>,
    gt_right_root: &Vector3<f64>,
) -> f64 {
    ((pred_right_root - pred_left_root) - (gt_right_root - gt_left_root)).norm()
}

/// Similarity transform `x ↦ s·R·x + t` with `det R = +1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Least-squares similarity taking `pred` onto `gt` (orthogonal Procrustes
/// with scale, reflections excluded).
pub fn procrustes(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Similarity> {
    check_counts(pred, gt)?;
    let n = pred.len() as f64;
    let mu_p = pred.iter().sum::<Vector3<f64>>() / n;
    let mu_g = gt.iter().sum::<Vector3<f64>>() / n;
    let mut var_p = 0.0;
    let mut cov = Matrix3::zeros();
    for (p, g) in pred.iter().zip(gt) {
        let dp = p - mu_p;
        var_p += dp.norm_squared();
        cov += (g - mu_g) * dp.transpose();
    }
    var_p /= n;
    cov /= n;
    let spread_g = gt.iter().map(|g| (g - mu_g).norm_squared()).sum::<f64>();
    if var_p <= 0.0 || spread_g <= 0.0 {
        return Err(CoreError::Degenerate("Procrustes on coincident points".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(CoreError::Numerical("SVD did not converge".into())),
    };
    let d = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = u * s * v_t;
    let trace = svd.singular_values[0] + svd.singular_values[1] + d * svd.singular_values[2];
    let scale = trace / var_p;
    let translation = mu_g - rotation * mu_p * scale;
    Ok(Similarity { scale, rotation, translation })
}

/// Mean point error after Procrustes alignment of `pred` onto `gt`.
pub fn pa_error(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    let sim = procrustes(pred, gt)?;
    Ok(mean_distance(pred.iter().map(|p| sim.apply(p)), gt.iter().copied()))
}

pub fn pa_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    pa_error(pred, gt)
}

/// Mean in-plane and along-view error magnitudes after root alignment.
/// `view` must be a unit vector.
pub fn xy_z_split(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    pred_root: &Vector3<f64>,
    gt_root: &Vector3<f64>,
    view: &Vector3<f64>,
) -> Result<(f64, f64)> {
    check_counts(pred, gt)?;
    let (mut xy, mut z) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        let (exy, ez) = split_error(&((p - pred_root) - (g - gt_root)), view);
        xy += exy;
        z += ez;
    }
    let n = pred.len() as f64;
    Ok((xy / n, z / n))
}

/// Magnitudes of the components of `e` perpendicular and parallel to `view`.
pub fn split_error(e: &Vector3<f64>, view: &Vector3<f64>) -> (f64, f64) {
    let along = e.dot(view);
    let perp = e - view * along;
    (perp.norm(), along.abs())
}

/// Per-sample metrics of a predicted two-hand state against ground truth.
/// Each hand is root-aligned (and Procrustes-aligned) on its own; two-hand
/// values are means over both hands.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleMetrics {
    pub mpjpe: f64,
    pub mpvpe: f64,
    pub mrrpe: f64,
    pub pa_mpjpe: f64,
    pub pa_mpvpe: f64,
    pub mpjpe_xy: f64,
    pub mpjpe_z: f64,
    pub mpvpe_xy: f64,
    pub mpvpe_z: f64,
    pub penetration_depth: f64,
    pub collision_pairs: f64,
}

/// Camera viewing direction used for the XY/Z split.
pub const VIEW_AXIS: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

pub fn evaluate_sample(
    pred: &TwoHandState,
    gt: &TwoHandState,
    model: &HandModel,
    collision: &CollisionConfig,
) -> Result<SampleMetrics> {
    let p = PosedPair::new(pred, model);
    let g = PosedPair::new(gt, model);
    let hands = [
        (p.left_keypoints(), &p.left.vertices, g.left_keypoints(), &g.left.vertices),
        (p.right_keypoints(), &p.right.vertices, g.right_keypoints(), &g.right.vertices),
    ];
    let mut m = SampleMetrics::default();
    for (pk, pv, gk, gv) in &hands {
        let (pr, gr) = (pk[ROOT], gk[ROOT]);
        m.mpjpe += mpjpe(pk, gk)? / 2.0;
        m.mpvpe += root_aligned_error(pv, gv, &pr, &gr)? / 2.0;
        m.pa_mpjpe += pa_error(pk, gk)? / 2.0;
        m.pa_mpvpe += pa_error(pv, gv)? / 2.0;
        let (jxy, jz) = xy_z_split(pk, gk, &pr, &gr, &VIEW_AXIS)?;
        let (vxy, vz) = xy_z_split(pv, gv, &pr, &gr, &VIEW_AXIS)?;
        m.mpjpe_xy += jxy / 2.0;
        m.mpjpe_z += jz / 2.0;
        m.mpvpe_xy += vxy / 2.0;
        m.mpvpe_z += vz / 2.0;
    }
    m.mrrpe = mrrpe(
        &p.left_keypoints()[ROOT],
        &p.right_keypoints()[ROOT],
        &g.left_keypoints()[ROOT],
        &g.right_keypoints()[ROOT],
    );
    m.penetration_depth = penetration_depth(&p.left, &p.right);
    m.collision_pairs = detect_collisions(&p.left, &p.right, collision).len() as f64;
    Ok(m)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub mpjpe: f64,
    pub mpvpe: f64,
    pub mrrpe: f64,
    pub pa_mpjpe: f64,
    pub pa_mpvpe: f64,
    pub mpjpe_xy: f64,
    pub mpjpe_z: f64,
    pub mpvpe_xy: f64,
    pub mpvpe_z: f64,
    pub penetration_depth_mean: f64,
    pub collision_pair_count_mean: f64,
    pub samples: usize,
}

impl MetricReport {
    /// Means over samples, summed in index order.
    pub fn aggregate(samples: &[SampleMetrics]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self::default();
        }
        let mean = |f: fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / n as f64;
        Self {
            mpjpe: mean(|s| s.mpjpe),
            mpvpe: mean(|s| s.mpvpe),
            mrrpe: mean(|s| s.mrrpe),
            pa_mpjpe: mean(|s| s.pa_mpjpe),
            pa_mpvpe: mean(|s| s.pa_mpvpe),
            mpjpe_xy: mean(|s| s.mpjpe_xy),
            mpjpe_z: mean(|s| s.mpjpe_z),
            mpvpe_xy: mean(|s| s.mpvpe_xy),
            mpvpe_z: mean(|s| s.mpvpe_z),
            penetration_depth_mean: mean(|s| s.penetration_depth),
            collision_pair_count_mean: mean(|s| s.collision_pairs),
            samples: n,
        }
    }

    pub fn entries(&self) -> [(&'static str, f64); 11] {
        [
            ("mpjpe", self.mpjpe),
            ("mpvpe", self.mpvpe),
            ("mrrpe", self.mrrpe),
            ("pa_mpjpe", self.pa_mpjpe),
            ("pa_mpvpe", self.pa_mpvpe),
            ("mpjpe_xy", self.mpjpe_xy),
            ("mpjpe_z", self.mpjpe_z),
            ("mpvpe_xy", self.mpvpe_xy),
            ("mpvpe_z", self.mpvpe_z),
            ("penetration_depth_mean", self.penetration_depth_mean),
            ("collision_pair_count_mean", self.collision_pair_count_mean),
        ]
    }

    /// `key = value` lines with round-trippable floats.
    pub fn to_key_values(&self) -> String {
        let mut out = format!("samples = {}\n", self.samples);
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v:.17e}");
        }
        out
    }

    pub fn parse_key_values(text: &str) -> Result<Self> {
        let mut r = Self::default();
        let mut seen = 0usize;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Corpus(format!("report line without `=`: {line}")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|e| CoreError::Corpus(format!("{k}: {e}")));
            let slot = match k {
                "samples" => {
                    r.samples = v.parse().map_err(|e| CoreError::Corpus(format!("samples: {e}")))?;
                    seen += 1;
                    continue;
                }
                "mpjpe" => &mut r.mpjpe,
                "mpvpe" => &mut r.mpvpe,
                "mrrpe" => &mut r.mrrpe,
                "pa_mpjpe" => &mut r.pa_mpjpe,
                "pa_mpvpe" => &mut r.pa_mpvpe,
                "mpjpe_xy" => &mut r.mpjpe_xy,
                "mpjpe_z" => &mut r.mpjpe_z,
                "mpvpe_xy" => &mut r.mpvpe_xy,
                "mpvpe_z" => &mut r.mpvpe_z,
                "penetration_depth_mean" => &mut r.penetration_depth_mean,
                "collision_pair_count_mean" => &mut r.collision_pair_count_mean,
                other => return Err(CoreError::Corpus(format!("unknown report key `{other}`"))),
            };
            *slot = num(v)?;
            seen += 1;
        }
        if seen != 12 {
            return Err(CoreError::Corpus(format!("report has {seen} of 12 keys")));
        }
        Ok(r)
    }

    /// Aligned plain-text table, millimeters.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<28}{:>14}\n", "metric", "value");
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k:<28}{v:>14.4}");
        }
        let _ = writeln!(out, "{:<28}{:>14}", "samples", self.samples);
        out
    }
}

/// Metrics of `preds[i]` against `gts[i]`, aggregated in index order.
pub fn evaluate(
    preds: &[TwoHandState],
    gts: &[TwoHandState],
    model: &HandModel,
    collision: &CollisionConfig,
    exec: Execution,
) -> Result<MetricReport> {
    if preds.len() != gts.len() {
        return Err(CoreError::Shape(format!("{} predictions vs {} references", preds.len(), gts.len())));
    }
    let samples = exec.try_map(preds.len(), |i| evaluate_sample(&preds[i], &gts[i], model, collision))?;
    Ok(MetricReport::aggregate(&samples))
}
