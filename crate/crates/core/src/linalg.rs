//! Small dense 3×3 helpers shared by the constitutive, registration and
//! substructuring code.

use nalgebra::{DVector, Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const POLAR_TOL: f64 = 1e-10;
const POLAR_MAX_ITERS: usize = 100;

/// Skew-symmetric cross-product matrix `[w]_×`.
pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Axial vector of the skew part of `m`, i.e. `w` with `[w]_× = (m - mᵀ)/2`.
pub fn axial(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

pub fn sym(m: &Mat3) -> Mat3 {
    0.5 * (m + m.transpose())
}

/// Rodrigues formula for `exp([w]_×)`.
pub fn exp_so3(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let (a, b) = if theta2 < 1e-12 {
        // sin θ/θ and (1 - cos θ)/θ² to fourth order
        (1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + a * k + b * (k * k)
}

/// Rotation vector of a rotation matrix (inverse of [`exp_so3`] on angles in `[0, π]`).
pub fn log_so3(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let v = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-6 {
        return 0.5 * (1.0 + theta * theta / 6.0) * v;
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return (theta / (2.0 * theta.sin())) * v;
    }
    // near π: axis from the symmetric part, R + I = 2 a aᵀ
    let b = (r + Mat3::identity()) * 0.5;
    let col = (0..3)
        .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vec3 = b.column(col).into();
    axis /= axis.norm();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    theta * axis
}

/// Orthogonal factor of the polar decomposition `F = R S`.
///
/// Scaled Newton iteration `R ← (γR + R⁻ᵀ/γ)/2` when `det F > 0`; otherwise
/// the closest proper rotation built from the SVD.
pub fn polar_rotation(f: &Mat3) -> Mat3 {
    if f.determinant() <= 0.0 {
        return svd_rotation(f);
    }
    let mut r = *f;
    for _ in 0..POLAR_MAX_ITERS {
        let Some(inv) = r.try_inverse() else {
            return svd_rotation(f);
        };
        let inv_t = inv.transpose();
        let gamma = (inv.norm() / r.norm()).sqrt();
        let next = 0.5 * (gamma * r + inv_t / gamma);
        let delta = (next - r).norm();
        r = next;
        if delta < POLAR_TOL {
            break;
        }
    }
    r
}

fn svd_rotation(f: &Mat3) -> Mat3 {
    let svd = f.svd(true, true);
    let u = svd.u.unwrap_or_else(Mat3::identity);
    let v_t = svd.v_t.unwrap_or_else(Mat3::identity);
    let d = (u * v_t).determinant().signum();
    let d = if d == 0.0 { 1.0 } else { d };
    u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t
}

/// Node `i` of a flat 3n vector.
#[inline]
pub fn node_vec(v: &DVector<f64>, i: usize) -> Vec3 {
    Vec3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2])
}

#[inline]
pub fn set_node_vec(v: &mut DVector<f64>, i: usize, x: &Vec3) {
    v[3 * i] = x.x;
    v[3 * i + 1] = x.y;
    v[3 * i + 2] = x.z;
}

#[inline]
pub fn add_node_vec(v: &mut DVector<f64>, i: usize, x: &Vec3) {
    v[3 * i] += x.x;
    v[3 * i + 1] += x.y;
    v[3 * i + 2] += x.z;
}

/// Largest per-node displacement magnitude of a flat 3n vector.
pub fn max_node_norm(v: &DVector<f64>) -> f64 {
    (0..v.len() / 3).map(|i| node_vec(v, i).norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skew_axial_round_trip() {
        let w = Vec3::new(0.3, -1.2, 2.0);
        assert!((axial(&skew(&w)) - w).norm() < 1e-15);
    }

    #[test]
    fn exp_log_round_trip() {
        for w in [
            Vec3::new(0.1, 0.2, -0.3),
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::new(1e-9, 0.0, 0.0),
            Vec3::new(0.0, std::f64::consts::PI - 1e-8, 0.0),
        ] {
            let r = exp_so3(&w);
            assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-12);
            assert!((log_so3(&r) - w).norm() < 1e-7, "{w:?}");
        }
    }

    #[test]
    fn polar_recovers_rotation() {
        let r = exp_so3(&Vec3::new(0.4, -0.7, 0.2));
        let s = Mat3::new(2.0, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 0.5);
        let got = polar_rotation(&(r * s));
        assert!((got - r).norm() < 1e-9);
    }

    #[test]
    fn polar_of_reflection_is_proper() {
        let f = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -0.5));
        let r = polar_rotation(&f);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }
}
