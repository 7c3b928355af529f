//! Axis-angle rotations: Rodrigues' formula, its Jacobian, and the
//! canonical `|ω| < π` representative.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

// Below this angle the trigonometric coefficients switch to Taylor series.
const SERIES_ANGLE: f64 = 1e-2;

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// `(sin θ / θ, (1 - cos θ) / θ²)`
fn rodrigues_coefficients(theta: f64) -> (f64, f64) {
    if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    }
}

/// Rotation matrix of an axis-angle vector. Defined for any norm; the zero
/// vector maps to the identity.
pub fn axis_angle_to_matrix(aa: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b) = rodrigues_coefficients(aa.norm());
    let k = skew(aa);
    Matrix3::identity() + k * a + k * k * b
}

/// `∂R/∂ω_k` for k = 0, 1, 2.
pub fn axis_angle_jacobian(aa: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta = aa.norm();
    let (a, b) = rodrigues_coefficients(theta);
    // c = a'(θ)/θ, d = b'(θ)/θ
    let (c, d) = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        (
            -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
        )
    } else {
        let (s, co) = theta.sin_cos();
        (
            (theta * co - s) / theta.powi(3),
            (theta * s - 2.0 * (1.0 - co)) / theta.powi(4),
        )
    };
    let k = skew(aa);
    let k2 = k * k;
    std::array::from_fn(|i| {
        let e = skew(&Vector3::ith(i, 1.0));
        k * (c * aa[i]) + e * a + k2 * (d * aa[i]) + (e * k + k * e) * b
    })
}

/// Maps an axis-angle vector to the equivalent one with norm below π by
/// reducing the angle modulo 2π and flipping the axis when needed. A norm of
/// exactly π is kept as is.
pub fn canonicalize_axis_angle(aa: &Vector3<f64>) -> Vector3<f64> {
    let theta = aa.norm();
    if theta <= PI || !theta.is_finite() {
        return *aa;
    }
    let axis = aa / theta;
    let mut reduced = theta % (2.0 * PI);
    if reduced > PI {
        reduced -= 2.0 * PI;
    }
    axis * reduced
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Hamilton quaternion `(w, x, y, z)`.
    type Quat = [f64; 4];

    fn quat_from_axis_angle(aa: &Vector3<f64>) -> Quat {
        let theta = aa.norm();
        if theta == 0.0 {
            return [1.0, 0.0, 0.0, 0.0];
        }
        let s = (theta / 2.0).sin() / theta;
        [(theta / 2.0).cos(), aa.x * s, aa.y * s, aa.z * s]
    }

    fn quat_mul(p: Quat, q: Quat) -> Quat {
        [
            p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
            p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
            p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
            p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0],
        ]
    }

    /// Rotates `v` as `q v q*` and reads the matrix column by column.
    fn quat_oracle_matrix(aa: &Vector3<f64>) -> Matrix3<f64> {
        let q = quat_from_axis_angle(aa);
        let conj = [q[0], -q[1], -q[2], -q[3]];
        let mut m = Matrix3::zeros();
        for col in 0..3 {
            let mut v = [0.0; 4];
            v[col + 1] = 1.0;
            let r = quat_mul(quat_mul(q, v), conj);
            for row in 0..3 {
                m[(row, col)] = r[row + 1];
            }
        }
        m
    }

    #[test]
    fn zero_vector_is_identity() {
        assert_eq!(axis_angle_to_matrix(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn half_turn_about_x() {
        let r = axis_angle_to_matrix(&Vector3::new(PI, 0.0, 0.0));
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        assert!((r - expected).abs().max() < 1e-15);
    }

    #[test]
    fn matches_quaternion_oracle() {
        let mut rng = duohand_nn::rng::seeded(101);
        for _ in 0..100 {
            let aa = Vector3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
            );
            let r = axis_angle_to_matrix(&aa);
            assert!((r - quat_oracle_matrix(&aa)).abs().max() < 1e-10);
            assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = duohand_nn::rng::seeded(7);
        let mut cases: Vec<Vector3<f64>> = (0..50)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect();
        cases.push(Vector3::zeros());
        cases.push(Vector3::new(3e-3, -2e-3, 1e-3));
        for aa in cases {
            let jac = axis_angle_jacobian(&aa);
            for k in 0..3 {
                let h = 1e-6;
                let mut plus = aa;
                plus[k] += h;
                let mut minus = aa;
                minus[k] -= h;
                let fd = (axis_angle_to_matrix(&plus) - axis_angle_to_matrix(&minus)) / (2.0 * h);
                assert!((jac[k] - fd).abs().max() < 1e-8, "aa {aa:?} k {k}");
            }
        }
    }

    #[test]
    fn canonical_form_preserves_rotation() {
        let mut rng = duohand_nn::rng::seeded(9);
        for _ in 0..200 {
            let aa = Vector3::new(
                rng.random_range(-12.0..12.0),
                rng.random_range(-12.0..12.0),
                rng.random_range(-12.0..12.0),
            );
            let c = canonicalize_axis_angle(&aa);
            assert!(c.norm() <= PI + 1e-12);
            let diff = axis_angle_to_matrix(&aa) - axis_angle_to_matrix(&c);
            assert!(diff.abs().max() < 1e-9);
        }
    }
}
