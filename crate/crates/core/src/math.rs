//! Closed-form rotation, covariance, and spherical-harmonic math.
//!
//! Every forward function that the rasterizer differentiates through has a
//! matching `*_backward` that maps an upstream gradient on its output to a
//! gradient on its input.

use nalgebra::{Matrix3, Vector3};

/// Degree-0 spherical harmonic constant used by the reference 3DGS exporter.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
/// Degree-1 spherical harmonic constant.
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

/// Raw normals shorter than this fall back to world up.
pub const NORMAL_EPS: f64 = 1e-8;

/// `sh[k][channel]`: `k = 0` is the DC term, `k = 1..=3` the degree-1 terms.
pub type ShCoeffs = [[f64; 3]; 4];

pub fn world_up() -> Vector3<f64> {
    Vector3::z()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Normalizes a raw normal, substituting world up for near-zero input.
pub fn normalize_or_up(raw: &Vector3<f64>) -> Vector3<f64> {
    let len = raw.norm();
    if len < NORMAL_EPS {
        world_up()
    } else {
        raw / len
    }
}

pub fn normalize_or_up_backward(raw: &Vector3<f64>, grad: &Vector3<f64>) -> Vector3<f64> {
    let len = raw.norm();
    if len < NORMAL_EPS {
        return Vector3::zeros();
    }
    let n = raw / len;
    (grad - n * n.dot(grad)) / len
}

/// Rotation whose local z-axis is the unit normal `n`, i.e. `R * e_z = n`.
///
/// This is the Rodrigues rotation about `z x n` by `acos(n . z)`, written in
/// its rational form `I + [v]x + [v]x^2 / (1 + c)` with `v = z x n`,
/// `c = n . z`. Normals parallel to `-z` map to a half turn about x.
pub fn normal_to_rotation(n: &Vector3<f64>) -> Matrix3<f64> {
    let (nx, ny, c) = (n.x, n.y, n.z);
    let sin2 = nx * nx + ny * ny;
    if sin2.sqrt() < NORMAL_EPS && c < 0.0 {
        return Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    }
    let k = rodrigues_k(sin2, c);
    Matrix3::new(
        1.0 - k * nx * nx,
        -k * nx * ny,
        nx,
        -k * nx * ny,
        1.0 - k * ny * ny,
        ny,
        -nx,
        -ny,
        c,
    )
}

// 1 / (1 + c); rewritten as (1 - c) / sin^2 on the lower hemisphere where
// 1 + c cancels catastrophically.
#[inline]
fn rodrigues_k(sin2: f64, c: f64) -> f64 {
    if c >= 0.0 {
        1.0 / (1.0 + c)
    } else {
        (1.0 - c) / sin2
    }
}

/// Gradient of `normal_to_rotation` with respect to the three components of
/// `n`, treating the rational form as a function on R^3.
pub fn normal_to_rotation_backward(n: &Vector3<f64>, grad: &Matrix3<f64>) -> Vector3<f64> {
    let (nx, ny, c) = (n.x, n.y, n.z);
    let sin2 = nx * nx + ny * ny;
    if sin2.sqrt() < NORMAL_EPS && c < 0.0 {
        return Vector3::zeros();
    }
    let k = rodrigues_k(sin2, c);
    let g = grad;
    let off = g[(0, 1)] + g[(1, 0)];
    let dx = g[(0, 0)] * (-2.0 * k * nx) + off * (-k * ny) + g[(0, 2)] - g[(2, 0)];
    let dy = g[(1, 1)] * (-2.0 * k * ny) + off * (-k * nx) + g[(1, 2)] - g[(2, 1)];
    let dz = k * k * (g[(0, 0)] * nx * nx + off * nx * ny + g[(1, 1)] * ny * ny) + g[(2, 2)];
    Vector3::new(dx, dy, dz)
}

/// `R diag(s^2) R^T`.
pub fn covariance_from(r: &Matrix3<f64>, s: &Vector3<f64>) -> Matrix3<f64> {
    let m = r * Matrix3::from_diagonal(&s.component_mul(s));
    let sigma = m * r.transpose();
    (sigma + sigma.transpose()) * 0.5
}

/// Given `dL/dSigma` (symmetric), returns `(dL/dR, dL/ds)`.
pub fn covariance_backward(
    r: &Matrix3<f64>,
    s: &Vector3<f64>,
    grad_sigma: &Matrix3<f64>,
) -> (Matrix3<f64>, Vector3<f64>) {
    let gs = (grad_sigma + grad_sigma.transpose()) * 0.5;
    let d = Matrix3::from_diagonal(&s.component_mul(s));
    let grad_r = gs * r * d * 2.0;
    let inner = r.transpose() * gs * r;
    let grad_s = Vector3::new(
        2.0 * s.x * inner[(0, 0)],
        2.0 * s.y * inner[(1, 1)],
        2.0 * s.z * inner[(2, 2)],
    );
    (grad_r, grad_s)
}

/// Normalizes `(w, x, y, z)`; a zero quaternion maps to identity.
pub fn quat_normalize(q: &[f64; 4]) -> [f64; 4] {
    let len = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if len < NORMAL_EPS {
        [1.0, 0.0, 0.0, 0.0]
    } else {
        [q[0] / len, q[1] / len, q[2] / len, q[3] / len]
    }
}

/// Rotation matrix of a `(w, x, y, z)` quaternion, normalized internally.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = quat_normalize(q);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Gradient of `quat_to_matrix` with respect to the raw (unnormalized) quaternion.
pub fn quat_to_matrix_backward(q_raw: &[f64; 4], grad: &Matrix3<f64>) -> [f64; 4] {
    let len = q_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if len < NORMAL_EPS {
        return [0.0; 4];
    }
    let q = [q_raw[0] / len, q_raw[1] / len, q_raw[2] / len, q_raw[3] / len];
    let [w, x, y, z] = q;
    let g = grad;
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gq = [gw, gx, gy, gz];
    let dot: f64 = gq.iter().zip(q.iter()).map(|(a, b)| a * b).sum();
    [
        (gq[0] - q[0] * dot) / len,
        (gq[1] - q[1] * dot) / len,
        (gq[2] - q[2] * dot) / len,
        (gq[3] - q[3] * dot) / len,
    ]
}

/// Unit `(w, x, y, z)` quaternion of a rotation matrix (Shepperd's method).
pub fn matrix_to_quat(r: &Matrix3<f64>) -> [f64; 4] {
    let tr = r.trace();
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        ]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        ]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    quat_normalize(&q)
}

/// Flips the sign so that `w >= 0` (`q` and `-q` are the same rotation).
pub fn quat_canonical(q: &[f64; 4]) -> [f64; 4] {
    if q[0] < 0.0 {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        *q
    }
}

fn sh_basis(dir: &Vector3<f64>, degree: u8) -> [f64; 4] {
    if degree == 0 {
        [SH_C0, 0.0, 0.0, 0.0]
    } else {
        [SH_C0, -SH_C1 * dir.y, SH_C1 * dir.z, -SH_C1 * dir.x]
    }
}

/// Color before the `[0, 1]` clamp.
pub fn sh_unclamped(sh: &ShCoeffs, dir: &Vector3<f64>, degree: u8) -> Vector3<f64> {
    let basis = sh_basis(dir, degree);
    let mut out = Vector3::repeat(0.5);
    for (b, coeff) in basis.iter().zip(sh.iter()) {
        for c in 0..3 {
            out[c] += b * coeff[c];
        }
    }
    out
}

pub fn sh_evaluate(sh: &ShCoeffs, dir: &Vector3<f64>, degree: u8) -> Vector3<f64> {
    sh_unclamped(sh, dir, degree).map(|v| v.clamp(0.0, 1.0))
}

/// Backward of [`sh_evaluate`]: returns `(dL/dsh, dL/ddir)`. Clamped channels
/// pass no gradient.
pub fn sh_backward(
    sh: &ShCoeffs,
    dir: &Vector3<f64>,
    degree: u8,
    grad_color: &Vector3<f64>,
) -> (ShCoeffs, Vector3<f64>) {
    let raw = sh_unclamped(sh, dir, degree);
    let mut g = *grad_color;
    for c in 0..3 {
        if raw[c] < 0.0 || raw[c] > 1.0 {
            g[c] = 0.0;
        }
    }
    let basis = sh_basis(dir, degree);
    let mut grad_sh = [[0.0; 3]; 4];
    for (k, b) in basis.iter().enumerate() {
        for c in 0..3 {
            grad_sh[k][c] = b * g[c];
        }
    }
    let mut grad_dir = Vector3::zeros();
    if degree >= 1 {
        for c in 0..3 {
            grad_dir.x += -SH_C1 * sh[3][c] * g[c];
            grad_dir.y += -SH_C1 * sh[1][c] * g[c];
            grad_dir.z += SH_C1 * sh[2][c] * g[c];
        }
    }
    (grad_sh, grad_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Axis-angle Rodrigues, written out independently of the rational form.
    fn rodrigues_oracle(n: &Vector3<f64>) -> Matrix3<f64> {
        let z = Vector3::z();
        let axis = n.cross(&z);
        if axis.norm() < 1e-12 {
            return if n.z > 0.0 {
                Matrix3::identity()
            } else {
                Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
            };
        }
        let a = axis.normalize();
        let theta = -n.dot(&z).clamp(-1.0, 1.0).acos();
        let k = Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
        Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos())
    }

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn normal_to_rotation_examples() {
        assert_eq!(normal_to_rotation(&Vector3::z()), Matrix3::identity());
        assert_eq!(
            normal_to_rotation(&-Vector3::z()),
            Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
        );
        let r = normal_to_rotation(&Vector3::x());
        let expected = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0);
        assert_relative_eq!(r, expected, epsilon = 1e-12);
        assert_relative_eq!(r.column(2).into_owned(), Vector3::x(), epsilon = 1e-12);
    }

    #[test]
    fn normal_to_rotation_matches_axis_angle_rodrigues() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let n = random_unit(&mut rng);
            let r = normal_to_rotation(&n);
            assert_relative_eq!(r, rodrigues_oracle(&n), epsilon = 1e-9);
        }
    }

    #[test]
    fn normal_to_rotation_postconditions_near_south_pole() {
        for eps in [1e-3, 1e-5, 1e-7] {
            let n = Vector3::new(eps, -0.5 * eps, -1.0).normalize();
            let r = normal_to_rotation(&n);
            let err = (r.transpose() * r - Matrix3::identity()).abs().max();
            assert!(err < 1e-6, "orthonormality {err} at eps {eps}");
            assert!((r * Vector3::z() - n).norm() < 1e-6);
            assert!((r.determinant() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rotation_continuity_away_from_poles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 2000 {
            let n = random_unit(&mut rng);
            let d = random_unit(&mut rng) * 0.9e-4;
            let n2 = (n + d).normalize();
            let angle_from_axis = |v: &Vector3<f64>| v.z.abs().clamp(-1.0, 1.0).acos();
            if angle_from_axis(&n) < 1e-2 || angle_from_axis(&n2) < 1e-2 {
                continue;
            }
            let diff = (normal_to_rotation(&n) - normal_to_rotation(&n2)).abs().max();
            assert!(diff < 1e-2);
            checked += 1;
        }
    }

    #[test]
    fn normal_to_rotation_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = random_unit(&mut rng) * 1.3;
            let g = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let f = |v: &Vector3<f64>| normal_to_rotation(&normalize_or_up(v)).component_mul(&g).sum();
            let analytic = normalize_or_up_backward(
                &n,
                &normal_to_rotation_backward(&normalize_or_up(&n), &g),
            );
            for i in 0..3 {
                let h = 1e-6;
                let mut a = n;
                let mut b = n;
                a[i] += h;
                b[i] -= h;
                let fd = (f(&a) - f(&b)) / (2.0 * h);
                assert!((fd - analytic[i]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn covariance_examples() {
        let i = Matrix3::identity();
        assert_eq!(covariance_from(&i, &Vector3::new(1.0, 1.0, 1.0)), i);
        assert_eq!(
            covariance_from(&i, &Vector3::new(2.0, 1.0, 1.0)),
            Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))
        );
        let rz = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let sigma = covariance_from(&rz, &Vector3::new(2.0, 1.0, 1.0));
        // Direct product oracle: columns of Rz scaled by s^2.
        let direct = rz * Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)) * rz.transpose();
        assert_relative_eq!(sigma, direct, epsilon = 1e-15);
        assert_relative_eq!(
            sigma,
            Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)),
            epsilon = 1e-15
        );
    }

    #[test]
    fn sh_examples() {
        let zero = [[0.0; 3]; 4];
        let dir = Vector3::new(0.0, 0.6, 0.8);
        assert_eq!(sh_evaluate(&zero, &dir, 0), Vector3::repeat(0.5));
        let dc = 0.5 / 0.28209479;
        let sh = [[dc; 3], [0.0; 3], [0.0; 3], [0.0; 3]];
        assert_relative_eq!(sh_evaluate(&sh, &dir, 0), Vector3::repeat(1.0), epsilon = 1e-7);

        let lin = [[0.0; 3], [0.1, 0.2, -0.1], [0.05, -0.3, 0.2], [0.3, 0.1, 0.0]];
        let d = Vector3::new(0.3, -0.4, 0.5).normalize();
        let a = sh_unclamped(&lin, &d, 1) - Vector3::repeat(0.5);
        let b = sh_unclamped(&lin, &-d, 1) - Vector3::repeat(0.5);
        assert_relative_eq!(a, -b, epsilon = 1e-15);
    }

    #[test]
    fn quaternion_examples() {
        assert_eq!(quat_to_matrix(&[1.0, 0.0, 0.0, 0.0]), Matrix3::identity());
        let h = 0.5f64.sqrt();
        let r = quat_to_matrix(&[h, 0.0, 0.0, h]);
        let rz = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, rz, epsilon = 1e-15);
    }

    #[test]
    fn quaternion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let q = quat_normalize(&[
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]);
            let back = matrix_to_quat(&quat_to_matrix(&q));
            let plus = (0..4).map(|i| (q[i] - back[i]).abs()).fold(0.0, f64::max);
            let minus = (0..4).map(|i| (q[i] + back[i]).abs()).fold(0.0, f64::max);
            worst = worst.max(plus.min(minus));
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn quaternion_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let q = [
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ];
            let g = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let analytic = quat_to_matrix_backward(&q, &g);
            for i in 0..4 {
                let h = 1e-6;
                let mut a = q;
                let mut b = q;
                a[i] += h;
                b[i] -= h;
                let fd = (quat_to_matrix(&a).component_mul(&g).sum()
                    - quat_to_matrix(&b).component_mul(&g).sum())
                    / (2.0 * h);
                assert!((fd - analytic[i]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn zero_normal_falls_back_to_up() {
        assert_eq!(normalize_or_up(&Vector3::new(1e-9, 0.0, 0.0)), Vector3::z());
        assert_eq!(
            normalize_or_up_backward(&Vector3::zeros(), &Vector3::new(1.0, 2.0, 3.0)),
            Vector3::zeros()
        );
    }

    proptest! {
        #[test]
        fn covariance_eigenvalues_are_squared_scales(
            q in prop::array::uniform4(-1.0f64..1.0),
            s in prop::array::uniform3(0.05f64..3.0),
        ) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let r = quat_to_matrix(&q);
            let s = Vector3::from(s);
            let sigma = covariance_from(&r, &s);
            prop_assert!((sigma - sigma.transpose()).abs().max() < 1e-9);
            let mut eig: Vec<f64> = sigma.symmetric_eigenvalues().iter().copied().collect();
            let mut sq: Vec<f64> = s.iter().map(|v| v * v).collect();
            eig.sort_by(f64::total_cmp);
            sq.sort_by(f64::total_cmp);
            let min_s2 = sq[0];
            for (a, b) in eig.iter().zip(sq.iter()) {
                prop_assert!((a - b).abs() < 1e-6 * b.max(1.0));
                prop_assert!(*a >= min_s2 * (1.0 - 1e-6));
            }
        }

        #[test]
        fn sh_degree_zero_ignores_direction(
            dc in prop::array::uniform3(-2.0f64..2.0),
            d in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let v = Vector3::from(d);
            prop_assume!(v.norm() > 1e-3);
            let sh = [dc, [0.3; 3], [-0.2; 3], [0.1; 3]];
            prop_assert_eq!(sh_evaluate(&sh, &v.normalize(), 0), sh_evaluate(&sh, &Vector3::z(), 0));
        }
    }
}
