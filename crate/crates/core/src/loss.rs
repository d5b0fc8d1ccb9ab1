//! Reconstruction and cross-frame consistency losses.
//!
//! The cross-frame loss compares two renders of the same frame near a
//! partition boundary: the active set at t and the active set of the
//! neighboring segment (at t'), both deformed to time t. A weighted
//! combination L_cross = 0.5 * L_current + L_gt stitches the segments
//! together while anchoring the neighbor to the ground truth.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::partition::{active_set, Cloud, NetworkRegistry};
use crate::pipeline;
use crate::render::{OrthoCamera, RenderOptions};
use crate::Vec3;

/// Mean absolute difference over all pixels and channels.
pub fn l1_loss(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::DimensionMismatch(format!(
            "l1 over {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let n = (a.width() * a.height() * 3) as f64;
    let sum: f64 = a
        .pixels()
        .zip(b.pixels())
        .map(|(pa, pb)| (pa - pb).abs().sum())
        .sum();
    Ok(sum / n)
}

/// L1 loss plus its gradient w.r.t. the first image.
/// dL/db is the negation of the returned image.
pub fn l1_backward(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let loss = l1_loss(a, b)?;
    let n = (a.width() * a.height() * 3) as f64;
    let mut grad = Image::new(a.width(), a.height());
    for y in 0..a.height() {
        for x in 0..a.width() {
            let d = a.pixel(x, y) - b.pixel(x, y);
            *grad.pixel_mut(x, y) = d.map(|v| {
                if v > 0.0 {
                    1.0 / n
                } else if v < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                }
            });
        }
    }
    Ok((loss, grad))
}

/// Frames within this distance of a partition boundary receive the
/// cross-frame loss.
pub const BOUNDARY_WINDOW_RADIUS: u32 = 5;

/// The distinct partition boundaries (split midpoints) of the current
/// tree, with the frame-window radius.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryWindow {
    boundaries: Vec<u32>,
    pub radius: u32,
}

impl BoundaryWindow {
    pub fn new(mut boundaries: Vec<u32>) -> Self {
        boundaries.sort_unstable();
        boundaries.dedup();
        Self {
            boundaries,
            radius: BOUNDARY_WINDOW_RADIUS,
        }
    }

    /// Every segment start strictly inside (0, T) is a split midpoint.
    pub fn from_cloud(cloud: &Cloud) -> Self {
        let bounds = cloud
            .instances
            .iter()
            .map(|inst| inst.segment.range.start)
            .filter(|&s| s > 0)
            .collect();
        Self::new(bounds)
    }

    pub fn boundaries(&self) -> &[u32] {
        &self.boundaries
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }
}

/// The partner frame t' for the cross-frame loss: the nearest frame on
/// the far side of the nearest boundary within the window, or None.
/// Equidistant boundaries break toward the smaller one.
pub fn boundary_partner(t: u32, window: &BoundaryWindow) -> Option<u32> {
    let mut best: Option<(u32, u32)> = None; // (distance, boundary)
    for &b in &window.boundaries {
        let d = t.abs_diff(b);
        if d <= window.radius && best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, b));
        }
    }
    let (_, b) = best?;
    // t < b: first frame of the right segment; t >= b (t is in the right
    // segment by half-open ranges): last frame of the left segment.
    Some(if t < b { b } else { b - 1 })
}

/// Per-step loss bookkeeping.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossReport {
    pub l_main: f64,
    pub l_current: f64,
    pub l_gt: f64,
    pub l_cross: f64,
    pub total: f64,
}

/// Value-level cross-frame consistency loss at frame t with partner t'.
///
/// Renders I_t(G_t, V) and I_t(G_t', V) — the neighbor set deformed by
/// its own networks evaluated at time t — and returns
/// (L_current, L_gt, L_cross) with L_cross = 0.5 L_current + L_gt.
pub fn cross_frame_loss(
    cloud: &Cloud,
    nets: &NetworkRegistry,
    t: u32,
    t_partner: u32,
    cam: &OrthoCamera,
    background: Vec3,
    gt_image: &Image,
) -> Result<(f64, f64, f64)> {
    let current = active_set(cloud, t)?;
    let neighbor = active_set(cloud, t_partner)?;
    let opts = RenderOptions::default();
    let img_current =
        pipeline::render_members_at(cloud, nets, &current, t, cam, background, &opts)?;
    let img_neighbor =
        pipeline::render_members_at(cloud, nets, &neighbor, t, cam, background, &opts)?;
    let l_current = l1_loss(&img_current, &img_neighbor)?;
    let l_gt = l1_loss(&img_neighbor, gt_image)?;
    Ok((l_current, l_gt, 0.5 * l_current + l_gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn l1_of_identical_images_is_zero() {
        let img = Image::from_fill(4, 4, Vec3::new(0.3, 0.6, 0.9));
        assert_eq!(l1_loss(&img, &img).unwrap(), 0.0);
    }

    #[test]
    fn l1_of_constant_offset() {
        let a = Image::new(5, 3);
        let b = Image::from_fill(5, 3, Vec3::new(0.5, 0.5, 0.5));
        assert_relative_eq!(l1_loss(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn l1_matches_elementwise_oracle() {
        let mut a = Image::new(4, 4);
        let mut b = Image::new(4, 4);
        let mut k = 0.0f64;
        for p in a.pixels_mut() {
            *p = Vec3::new(k, 2.0 * k, -k);
            k += 0.013;
        }
        k = 0.5;
        for p in b.pixels_mut() {
            *p = Vec3::new(-k, k, 0.3 * k);
            k -= 0.021;
        }
        let mut oracle = 0.0;
        for y in 0..4 {
            for x in 0..4 {
                for c in 0..3 {
                    oracle += (a.pixel(x, y)[c] - b.pixel(x, y)[c]).abs();
                }
            }
        }
        oracle /= 48.0;
        assert_eq!(l1_loss(&a, &b).unwrap(), oracle);
    }

    #[test]
    fn l1_rejects_size_mismatch() {
        let a = Image::new(4, 4);
        let b = Image::new(4, 5);
        assert!(matches!(
            l1_loss(&a, &b),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn l1_backward_finite_difference() {
        let mut a = Image::new(3, 3);
        let mut b = Image::new(3, 3);
        let mut k = 0.0f64;
        for p in a.pixels_mut() {
            *p = Vec3::new(k.sin(), k.cos(), k * 0.1);
            k += 1.0;
        }
        // Offsets picked so no |a - b| falls within the FD step of zero.
        for p in b.pixels_mut() {
            *p = Vec3::new(0.21, 0.43, 0.57);
        }
        let (_, grad) = l1_backward(&a, &b).unwrap();
        let h = 1e-7;
        for y in 0..3 {
            for x in 0..3 {
                for c in 0..3 {
                    let mut ap = a.clone();
                    ap.pixel_mut(x, y)[c] += h;
                    let mut am = a.clone();
                    am.pixel_mut(x, y)[c] -= h;
                    let fd = (l1_loss(&ap, &b).unwrap() - l1_loss(&am, &b).unwrap()) / (2.0 * h);
                    assert_relative_eq!(grad.pixel(x, y)[c], fd, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn no_boundaries_means_no_partner() {
        let w = BoundaryWindow::new(vec![]);
        for t in 0..200 {
            assert_eq!(boundary_partner(t, &w), None);
        }
    }

    #[test]
    fn partner_across_nearest_boundary() {
        let w = BoundaryWindow::new(vec![150]);
        // Two frames left of the boundary: partner is the first frame of
        // the right segment.
        assert_eq!(boundary_partner(148, &w), Some(150));
        // On or right of the boundary: last frame of the left segment.
        assert_eq!(boundary_partner(150, &w), Some(149));
        assert_eq!(boundary_partner(153, &w), Some(149));
    }

    #[test]
    fn partner_outside_window_is_none() {
        let w = BoundaryWindow::new(vec![150]);
        assert_eq!(boundary_partner(160, &w), None);
        assert_eq!(boundary_partner(144, &w), None);
        assert_eq!(boundary_partner(155, &w), Some(149));
        assert_eq!(boundary_partner(145, &w), Some(150));
    }

    #[test]
    fn equidistant_boundaries_break_low() {
        let w = BoundaryWindow::new(vec![30, 60, 40]);
        // t = 35 is 5 from both 30 and 40: picks 30, t >= 30 so t' = 29.
        assert_eq!(boundary_partner(35, &w), Some(29));
    }

    #[test]
    fn cross_combination_arithmetic() {
        // L_current = 0.2, L_gt = 0.3 -> L_cross = 0.4.
        assert_relative_eq!(0.5 * 0.2 + 0.3, 0.4);
    }
}
