//! Analytic gradients for the orthographic splat renderer.
//!
//! Per pixel the forward pass is
//!
//!   C = sum_i c_i a'_i T_i + bg * T_N,   T_i = prod_{j<i} (1 - a'_j)
//!   a'_i = min(alpha_i * g_i, 0.999)
//!   g_i  = exp(-0.5 d^T Cov^-1 d),  d = x - mean2d_i
//!
//! The compositing recurrence is backpropagated with a reverse scan over
//! the composited prefix, seeding the transmittance cotangent with the
//! background term. Skip decisions (footprint, min-alpha, early stop) and
//! the 0.999 clamp are treated as constants: the same prefix is recomputed
//! here and the clamped splat's local chain gets zero gradient.
//!
//! From the 2D grads the chain continues through projection and
//! activation to the raw parameters:
//!
//!   mean2d = ppu * J mu + center             (J = top 2 rows of view_rot)
//!   cov2d  = ppu^2 * J Sigma J^T + 0.3 I
//!   Sigma  = R diag(s^2) R^T
//!   dL/dR  = (G + G^T) R diag(s^2),  dL/ds_k = 2 s_k (R^T G R)_kk
//!
//! with G = dL/dSigma in the unconstrained-matrix convention (symmetric
//! cotangents carry half the off-diagonal weight in each mirror entry, so
//! Frobenius pairings stay exact).

use super::{
    canonical_order, pixel_center, prepare_splats, project, OrthoCamera, RenderOptions,
    ALPHA_CLAMP, FOOTPRINT_MAHALANOBIS_SQ, MIN_SPLAT_ALPHA, TRANSMITTANCE_EPS,
};
use crate::error::{Error, Result};
use crate::gaussian::{activate, GaussianParams};
use crate::image::Image;
use crate::math::{normalize_quat_backward, rotation_quat_jacobian};
use crate::parallel;
use crate::{Mat2, Mat3, Vec2, Vec3};

/// Loss gradient w.r.t. one Gaussian's raw parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrad {
    pub mu: Vec3,
    pub rot: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub color: Vec3,
}

impl GaussianGrad {
    pub fn zeros() -> Self {
        Self {
            mu: Vec3::zeros(),
            rot: [0.0; 4],
            log_scale: Vec3::zeros(),
            opacity_logit: 0.0,
            color: Vec3::zeros(),
        }
    }

    pub fn add_assign(&mut self, other: &GaussianGrad) {
        self.mu += other.mu;
        for k in 0..4 {
            self.rot[k] += other.rot[k];
        }
        self.log_scale += other.log_scale;
        self.opacity_logit += other.opacity_logit;
        self.color += other.color;
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().all(|v| v.is_finite())
            && self.rot.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.color.iter().all(|v| v.is_finite())
    }
}

/// Splat-level gradient slots, accumulated per pixel.
#[derive(Clone)]
struct SplatGrad2D {
    d_mean2d: Vec2,
    /// Unconstrained-matrix cotangent of cov2d.
    d_cov2d: Mat2,
    d_alpha: f64,
    d_rgb: Vec3,
}

impl SplatGrad2D {
    fn zeros() -> Self {
        Self {
            d_mean2d: Vec2::zeros(),
            d_cov2d: Mat2::zeros(),
            d_alpha: 0.0,
            d_rgb: Vec3::zeros(),
        }
    }

    fn add_assign(&mut self, o: &SplatGrad2D) {
        self.d_mean2d += o.d_mean2d;
        self.d_cov2d += o.d_cov2d;
        self.d_alpha += o.d_alpha;
        self.d_rgb += o.d_rgb;
    }
}

/// Composited-prefix entry retained for the reverse scan.
struct PrefixEntry {
    splat: usize,
    g: f64,
    a_eff: f64,
    saturated: bool,
    t_before: f64,
    offset: Vec2,
}

/// Gradients of a scalar loss w.r.t. every raw Gaussian parameter, given
/// the loss cotangent on the rendered image. Forward intermediates are
/// recomputed; the prefix must therefore mirror the forward loop exactly.
pub fn render_backward(
    params: &[GaussianParams],
    cam: &OrthoCamera,
    background: Vec3,
    d_image: &Image,
    opts: &RenderOptions,
) -> Result<Vec<GaussianGrad>> {
    if d_image.width() != cam.width || d_image.height() != cam.height {
        return Err(Error::DimensionMismatch(format!(
            "cotangent image {}x{} vs camera {}x{}",
            d_image.width(),
            d_image.height(),
            cam.width,
            cam.height
        )));
    }

    let activated = params
        .iter()
        .map(activate)
        .collect::<Result<Vec<_>>>()?;
    let splats: Vec<_> = activated.iter().map(|ag| project(ag, cam)).collect();
    let prepared = prepare_splats(&splats)?;
    let order = canonical_order(&splats);
    let cutoffs = opts.cutoffs;
    let n = splats.len();

    // Per-row partial gradients, folded in row order so the reduction is
    // deterministic under any thread count.
    let row_grads = parallel::map_indexed(cam.height, |y| {
        let mut grads = vec![SplatGrad2D::zeros(); n];
        let mut prefix: Vec<PrefixEntry> = Vec::with_capacity(n);
        for x in 0..cam.width {
            let px = pixel_center(x, y);
            let d_out = d_image.pixel(x, y);
            if d_out == Vec3::zeros() {
                continue;
            }

            // Recompute the composited prefix exactly as in the forward.
            prefix.clear();
            let mut t = 1.0;
            for &i in &order {
                let s = &prepared[i];
                let d = px - s.mean2d;
                let mahal = d.dot(&(s.inv_cov * d));
                if cutoffs && mahal > FOOTPRINT_MAHALANOBIS_SQ {
                    continue;
                }
                let g = (-0.5 * mahal).exp();
                let raw = s.alpha * g;
                let saturated = raw > ALPHA_CLAMP;
                let a_eff = if saturated { ALPHA_CLAMP } else { raw };
                if cutoffs && a_eff < MIN_SPLAT_ALPHA {
                    continue;
                }
                prefix.push(PrefixEntry {
                    splat: i,
                    g,
                    a_eff,
                    saturated,
                    t_before: t,
                    offset: d,
                });
                t *= 1.0 - a_eff;
                if cutoffs && t < TRANSMITTANCE_EPS {
                    break;
                }
            }

            // Reverse scan. g_t_next holds dL/dT_{i+1}; the background
            // term C += bg * T_N seeds it.
            let mut g_t_next = d_out.dot(&background);
            for e in prefix.iter().rev() {
                let s = &prepared[e.splat];
                let slot = &mut grads[e.splat];
                let color_dot = d_out.dot(&s.rgb);

                slot.d_rgb += d_out * (e.a_eff * e.t_before);

                // dL/da' = direct compositing term + transmittance chain.
                let d_a_eff = color_dot * e.t_before - g_t_next * e.t_before;
                if !e.saturated {
                    slot.d_alpha += d_a_eff * e.g;
                    let d_g = d_a_eff * s.alpha;
                    // dg/dmean2d = g * Cov^-1 d; dg/dCov = 0.5 g u u^T.
                    let u = s.inv_cov * e.offset;
                    slot.d_mean2d += u * (e.g * d_g);
                    slot.d_cov2d += (u * u.transpose()) * (0.5 * e.g * d_g);
                }

                g_t_next = color_dot * e.a_eff + g_t_next * (1.0 - e.a_eff);
            }
        }
        grads
    });

    let mut grads2d = vec![SplatGrad2D::zeros(); n];
    for row in &row_grads {
        for (acc, g) in grads2d.iter_mut().zip(row) {
            acc.add_assign(g);
        }
    }

    // Chain through projection and activation to the raw parameters.
    let ppu = cam.pixels_per_unit;
    let j = cam.view_rot.fixed_view::<2, 3>(0, 0).into_owned();
    let out = (0..n)
        .map(|i| {
            let g2 = &grads2d[i];
            let ag = &activated[i];
            let p = &params[i];

            // mean2d = ppu * J mu + center.
            let mu = (j.transpose() * g2.d_mean2d) * ppu;

            // cov2d = ppu^2 J Sigma J^T + 0.3 I.
            let g_sigma: Mat3 = (j.transpose() * g2.d_cov2d * j) * (ppu * ppu);

            let s2 = ag.scale.map(|s| s * s);
            let d_mat = Mat3::from_diagonal(&s2);
            let d_r = (g_sigma + g_sigma.transpose()) * ag.rotation * d_mat;
            let rtgr = ag.rotation.transpose() * g_sigma * ag.rotation;
            // dL/dlog_s_k = dL/ds_k * s_k = 2 s_k^2 (R^T G R)_kk.
            let log_scale = Vec3::new(
                2.0 * s2.x * rtgr[(0, 0)],
                2.0 * s2.y * rtgr[(1, 1)],
                2.0 * s2.z * rtgr[(2, 2)],
            );

            let norm = p.rot.iter().map(|v| v * v).sum::<f64>().sqrt();
            let q_hat: [f64; 4] = std::array::from_fn(|k| p.rot[k] / norm);
            let jac = rotation_quat_jacobian(q_hat);
            let d_q_hat: [f64; 4] =
                std::array::from_fn(|k| d_r.component_mul(&jac[k]).sum());
            let rot = normalize_quat_backward(norm, q_hat, d_q_hat);

            let opacity_logit = g2.d_alpha * ag.alpha * (1.0 - ag.alpha);

            // Clamp: gradient passes only strictly inside (0, 1).
            let color = Vec3::new(
                if p.color.x > 0.0 && p.color.x < 1.0 { g2.d_rgb.x } else { 0.0 },
                if p.color.y > 0.0 && p.color.y < 1.0 { g2.d_rgb.y } else { 0.0 },
                if p.color.z > 0.0 && p.color.z < 1.0 { g2.d_rgb.z } else { 0.0 },
            );

            GaussianGrad {
                mu,
                rot,
                log_scale,
                opacity_logit,
                color,
            }
        })
        .collect();

    Ok(out)
}
