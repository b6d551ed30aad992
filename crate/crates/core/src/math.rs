//! Small numeric helpers shared across modules.

#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a (not necessarily unit) quaternion stored as `[w, x, y, z]`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
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

/// Back-propagates a gradient on the rotation matrix to the raw quaternion,
/// including the normalization step of [`quat_to_matrix`].
pub fn quat_to_matrix_backward(q: [f64; 4], grad_r: &Matrix3<f64>) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let g = grad_r;
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gu = [dw, dx, dy, dz];
    let u = [w, x, y, z];
    let dot: f64 = (0..4).map(|i| gu[i] * u[i]).sum();
    [
        (gu[0] - dot * u[0]) / n,
        (gu[1] - dot * u[1]) / n,
        (gu[2] - dot * u[2]) / n,
        (gu[3] - dot * u[3]) / n,
    ]
}

/// Hamilton product `a ⊗ b` on `[w, x, y, z]` arrays.
pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Gradient of `a ⊗ b` with respect to `b`, given the gradient on the product.
/// Left multiplication by `a` is linear in `b`, so this is the transpose of that map.
pub fn quat_mul_backward_rhs(a: [f64; 4], grad: [f64; 4]) -> [f64; 4] {
    let conj = [a[0], -a[1], -a[2], -a[3]];
    quat_mul(conj, grad)
}

pub fn quat_to_array(q: &UnitQuaternion<f64>) -> [f64; 4] {
    let c = q.quaternion().coords;
    [c[3], c[0], c[1], c[2]]
}

pub fn array_to_quat(q: [f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

pub fn quat_norm(q: [f64; 4]) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    /// Tight box around `points`, grown by `margin` on every side.
    pub fn around<'a, I>(points: I, margin: f64) -> Option<Self>
    where
        I: IntoIterator<Item = &'a Vector3<f64>>,
    {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut min, mut max) = (first, first);
        for p in it {
            min = min.inf(p);
            max = max.sup(p);
        }
        let m = Vector3::repeat(margin);
        Some(Self { min: min - m, max: max + m })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quat_matrix_matches_nalgebra() {
        let q = [0.3, -0.5, 0.7, 0.2];
        let r = quat_to_matrix(q);
        let uq = array_to_quat(q);
        assert!((r - uq.to_rotation_matrix().into_inner()).abs().max() < 1e-14);
    }

    #[test]
    fn quat_backward_matches_finite_differences() {
        let q = [0.9, -0.2, 0.35, 0.4];
        let g = Matrix3::new(0.3, -1.0, 0.2, 0.5, 0.1, -0.7, 0.9, 0.4, -0.3);
        let analytic = quat_to_matrix_backward(q, &g);
        let f = |q: [f64; 4]| quat_to_matrix(q).component_mul(&g).sum();
        for k in 0..4 {
            let h = 1e-6;
            let mut a = q;
            let mut b = q;
            a[k] += h;
            b[k] -= h;
            let fd = (f(a) - f(b)) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-8, "{k}: {fd} vs {}", analytic[k]);
        }
    }

    #[test]
    fn quat_mul_matches_nalgebra() {
        let a = [0.5, 0.5, -0.5, 0.5];
        let b = [0.9, 0.1, 0.3, -0.2];
        let p = quat_mul(a, b);
        let n = array_to_quat(a).into_inner() * Quaternion::new(b[0], b[1], b[2], b[3]);
        assert!((p[0] - n.w).abs() < 1e-15 && (p[1] - n.i).abs() < 1e-15);
        assert!((p[2] - n.j).abs() < 1e-15 && (p[3] - n.k).abs() < 1e-15);
    }
}
