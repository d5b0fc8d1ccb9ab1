//! Gaussian parameterization, activations, and covariance construction.
//!
//! Raw parameters are stored unconstrained (log scales, opacity logit,
//! raw quaternion, raw color) so that additive deformation deltas keep
//! the activated values valid.

use crate::error::{Error, Result};
use crate::math::{rotation_from_unit_quat, sigmoid};
use crate::{Mat3, Vec3};

/// Raw per-Gaussian parameters.
///
/// `lineage_id` is assigned at creation and copied unchanged when the
/// partition engine replicates a Gaussian, so one lineage always maps to
/// exactly one active instance per timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Vec3,
    /// Raw quaternion (w, x, y, z); normalized on activation.
    pub rot: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    /// Raw RGB; clamped to [0, 1] on activation.
    pub color: Vec3,
    pub lineage_id: u64,
}

/// Activated (render-ready) Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivatedGaussian {
    pub mu: Vec3,
    /// Orthonormal rotation matrix.
    pub rotation: Mat3,
    /// Positive per-axis scales (the diagonal of S).
    pub scale: Vec3,
    /// Opacity in (0, 1).
    pub alpha: f64,
    /// RGB in [0, 1].
    pub rgb: Vec3,
    pub lineage_id: u64,
}

/// Apply all activations: quaternion normalization, exp on scales,
/// sigmoid on opacity, clamp on color.
pub fn activate(params: &GaussianParams) -> Result<ActivatedGaussian> {
    let norm = params.rot.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::DegenerateRotation { norm });
    }
    let q_hat: [f64; 4] = std::array::from_fn(|i| params.rot[i] / norm);
    Ok(ActivatedGaussian {
        mu: params.mu,
        rotation: rotation_from_unit_quat(q_hat),
        scale: params.log_scale.map(f64::exp),
        alpha: sigmoid(params.opacity_logit),
        rgb: params.color.map(|c| c.clamp(0.0, 1.0)),
        lineage_id: params.lineage_id,
    })
}

/// 3D covariance Sigma = R diag(s^2) R^T; symmetric positive definite.
pub fn covariance(ag: &ActivatedGaussian) -> Mat3 {
    let d = Mat3::from_diagonal(&ag.scale.map(|s| s * s));
    ag.rotation * d * ag.rotation.transpose()
}
