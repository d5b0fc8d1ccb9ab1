//! Small scalar/quaternion helpers shared by activation and its backward.

use crate::Mat3;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Rotation matrix from a unit quaternion (w, x, y, z).
pub fn rotation_from_unit_quat(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    Mat3::new(
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

/// dR/dq_k for a unit quaternion, in (w, x, y, z) order.
pub fn rotation_quat_jacobian(q: [f64; 4]) -> [Mat3; 4] {
    let [w, x, y, z] = q;
    let dw = Mat3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dx = Mat3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dy = Mat3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dz = Mat3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    [dw, dx, dy, dz]
}

/// Chain a gradient w.r.t. the normalized quaternion back to the raw one.
///
/// With q_hat = q / |q|, the Jacobian is (I - q_hat q_hat^T) / |q|.
pub fn normalize_quat_backward(raw_norm: f64, q_hat: [f64; 4], d_q_hat: [f64; 4]) -> [f64; 4] {
    let dot: f64 = (0..4).map(|i| q_hat[i] * d_q_hat[i]).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (d_q_hat[i] - q_hat[i] * dot) / raw_norm;
    }
    out
}
