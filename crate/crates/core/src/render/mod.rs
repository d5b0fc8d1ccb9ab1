//! Differentiable orthographic splatting.
//!
//! Gaussians are projected with a linear (orthographic) Jacobian, sorted
//! by (depth, lineage_id), and alpha-composited front to back:
//!
//!   C = sum_i c_i a'_i prod_{j<i} (1 - a'_j) + background * T_final
//!
//! with a'_i = min(alpha_i * g_i, 0.999) and g_i the 2D Gaussian falloff.
//! The linear Jacobian avoids the EWA perspective approximation, so the
//! analytic backward pass in [`backward`] is exact and finite-difference
//! checkable.

mod backward;

pub use backward::{render_backward, GaussianGrad};

use crate::error::{Error, Result};
use crate::gaussian::{activate, covariance, ActivatedGaussian, GaussianParams};
use crate::image::Image;
use crate::parallel;
use crate::{Mat2, Mat3, Vec2, Vec3};

/// Diagonal regularization added to the projected 2x2 covariance (px^2).
pub const COV2D_REGULARIZATION: f64 = 0.3;
/// Per-pixel opacity clamp; gradients are zero when the clamp is active.
pub const ALPHA_CLAMP: f64 = 0.999;
/// Splats contributing less than this per-pixel opacity are skipped.
pub const MIN_SPLAT_ALPHA: f64 = 1.0 / 255.0;
/// Squared Mahalanobis footprint cutoff (3 sigma).
pub const FOOTPRINT_MAHALANOBIS_SQ: f64 = 9.0;
/// Front-to-back accumulation stops below this transmittance.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;

/// Orthographic camera: view rotation + translation, then a uniform
/// world-to-pixel scale about the image center.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoCamera {
    pub view_rot: Mat3,
    pub view_trans: Vec3,
    pub pixels_per_unit: f64,
    pub width: usize,
    pub height: usize,
}

impl OrthoCamera {
    pub fn validate(&self) -> Result<()> {
        let rtr = self.view_rot.transpose() * self.view_rot;
        if (rtr - Mat3::identity()).abs().max() > 1e-6 {
            return Err(Error::Config("camera view_rot not orthonormal".into()));
        }
        if !(self.pixels_per_unit > 0.0) {
            return Err(Error::Config("camera pixels_per_unit must be positive".into()));
        }
        Ok(())
    }

    fn center(&self) -> Vec2 {
        Vec2::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }
}

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    /// Pixel coordinates of the projected mean.
    pub mean2d: Vec2,
    /// 2x2 SPD covariance in px^2, regularized.
    pub cov2d: Mat2,
    /// View-space z, used only for the compositing order.
    pub depth: f64,
    pub alpha: f64,
    pub rgb: Vec3,
    pub lineage_id: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    /// Apply the footprint / min-alpha / early-termination cutoffs.
    /// Disabled by oracle tests that compare against the exact sum.
    pub cutoffs: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { cutoffs: true }
    }
}

impl RenderOptions {
    pub fn exact() -> Self {
        Self { cutoffs: false }
    }
}

/// Orthographic projection of one activated Gaussian.
///
/// View point p = view_rot * mu + view_trans; the image position depends
/// only on (p.x, p.y), so translating mu along the view z-axis changes
/// depth but never the splat's 2D footprint.
pub fn project(ag: &ActivatedGaussian, cam: &OrthoCamera) -> Splat2D {
    let p = cam.view_rot * ag.mu + cam.view_trans;
    let ppu = cam.pixels_per_unit;
    let mean2d = Vec2::new(ppu * p.x, ppu * p.y) + cam.center();

    let sigma = covariance(ag);
    let j = cam.view_rot.fixed_view::<2, 3>(0, 0);
    let cov2d =
        (j * sigma * j.transpose()) * (ppu * ppu) + Mat2::identity() * COV2D_REGULARIZATION;

    Splat2D {
        mean2d,
        cov2d,
        depth: p.z,
        alpha: ag.alpha,
        rgb: ag.rgb,
        lineage_id: ag.lineage_id,
    }
}

/// Canonical compositing order: ascending (depth, lineage_id), so any
/// permutation of the input renders identically.
pub fn canonical_order(splats: &[Splat2D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .total_cmp(&splats[b].depth)
            .then(splats[a].lineage_id.cmp(&splats[b].lineage_id))
    });
    order
}

pub(crate) struct PreparedSplat {
    pub mean2d: Vec2,
    pub inv_cov: Mat2,
    pub alpha: f64,
    pub rgb: Vec3,
}

pub(crate) fn prepare_splats(splats: &[Splat2D]) -> Result<Vec<PreparedSplat>> {
    splats
        .iter()
        .map(|s| {
            let det = s.cov2d.determinant();
            if !(det > 0.0) || !det.is_finite() {
                return Err(Error::SingularCovariance { det });
            }
            let inv_cov = Mat2::new(
                s.cov2d[(1, 1)] / det,
                -s.cov2d[(0, 1)] / det,
                -s.cov2d[(1, 0)] / det,
                s.cov2d[(0, 0)] / det,
            );
            Ok(PreparedSplat {
                mean2d: s.mean2d,
                inv_cov,
                alpha: s.alpha,
                rgb: s.rgb,
            })
        })
        .collect()
}

#[inline]
pub(crate) fn pixel_center(x: usize, y: usize) -> Vec2 {
    Vec2::new(x as f64 + 0.5, y as f64 + 0.5)
}

/// Alpha-composite the splats over the background.
pub fn render(
    splats: &[Splat2D],
    cam: &OrthoCamera,
    background: Vec3,
    opts: &RenderOptions,
) -> Result<Image> {
    let prepared = prepare_splats(splats)?;
    let order = canonical_order(splats);
    let cutoffs = opts.cutoffs;

    let rows = parallel::map_indexed(cam.height, |y| {
        let mut row = Vec::with_capacity(cam.width);
        for x in 0..cam.width {
            let px = pixel_center(x, y);
            let mut color = Vec3::zeros();
            let mut t = 1.0;
            for &i in &order {
                let s = &prepared[i];
                let d = px - s.mean2d;
                let mahal = d.dot(&(s.inv_cov * d));
                if cutoffs && mahal > FOOTPRINT_MAHALANOBIS_SQ {
                    continue;
                }
                let g = (-0.5 * mahal).exp();
                let a_eff = (s.alpha * g).min(ALPHA_CLAMP);
                if cutoffs && a_eff < MIN_SPLAT_ALPHA {
                    continue;
                }
                color += s.rgb * (a_eff * t);
                t *= 1.0 - a_eff;
                if cutoffs && t < TRANSMITTANCE_EPS {
                    break;
                }
            }
            row.push(color + background * t);
        }
        row
    });

    Ok(Image::from_rows(cam.width, cam.height, rows))
}

/// Activate, project, and render raw Gaussian parameters.
pub fn render_params(
    params: &[GaussianParams],
    cam: &OrthoCamera,
    background: Vec3,
    opts: &RenderOptions,
) -> Result<Image> {
    let splats = params
        .iter()
        .map(|p| Ok(project(&activate(p)?, cam)))
        .collect::<Result<Vec<_>>>()?;
    render(&splats, cam, background, opts)
}


#[cfg(test)]
mod tests {
    use super::test_scenes::*;
    use super::*;
    use crate::gaussian::activate;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plain_splat(mean2d: Vec2, depth: f64, alpha: f64, rgb: Vec3, lineage: u64) -> Splat2D {
        Splat2D {
            mean2d,
            cov2d: Mat2::identity() * 2.0,
            depth,
            alpha,
            rgb,
            lineage_id: lineage,
        }
    }

    #[test]
    fn identity_view_projects_to_center() {
        let cam = identity_camera(16, 12, 10.0);
        let ag = activate(&GaussianParams {
            mu: Vec3::new(0.0, 0.0, 5.0),
            rot: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vec3::zeros(),
            opacity_logit: 0.0,
            color: Vec3::zeros(),
            lineage_id: 0,
        })
        .unwrap();
        let s = project(&ag, &cam);
        assert_eq!(s.mean2d, Vec2::new(8.0, 6.0));
        assert_eq!(s.depth, 5.0);
    }

    #[test]
    fn projected_covariance_identity_sigma() {
        // Sigma = I, ppu = 10: cov2d = 100 I + 0.3 I. Oracle: J Sigma J^T
        // computed directly.
        let cam = identity_camera(8, 8, 10.0);
        let ag = activate(&GaussianParams {
            mu: Vec3::zeros(),
            rot: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vec3::zeros(),
            opacity_logit: 0.0,
            color: Vec3::zeros(),
            lineage_id: 0,
        })
        .unwrap();
        let s = project(&ag, &cam);
        let j = cam.view_rot.fixed_view::<2, 3>(0, 0);
        let oracle = (j * covariance(&ag) * j.transpose()) * 100.0
            + Mat2::identity() * COV2D_REGULARIZATION;
        assert_relative_eq!(s.cov2d, oracle, epsilon = 1e-12);
        assert_relative_eq!(s.cov2d, Mat2::identity() * 100.3, epsilon = 1e-12);
    }

    #[test]
    fn depth_translation_changes_depth_only() {
        let cam = identity_camera(8, 8, 10.0);
        let mut p = GaussianParams {
            mu: Vec3::new(0.2, -0.1, 3.0),
            rot: [0.8, 0.1, -0.3, 0.2],
            log_scale: Vec3::new(-0.5, 0.2, 0.0),
            opacity_logit: 0.3,
            color: Vec3::new(0.5, 0.5, 0.5),
            lineage_id: 0,
        };
        let s1 = project(&activate(&p).unwrap(), &cam);
        p.mu.z += 7.5;
        let s2 = project(&activate(&p).unwrap(), &cam);
        assert_eq!(s1.mean2d, s2.mean2d);
        assert_eq!(s1.cov2d, s2.cov2d);
        assert_relative_eq!(s2.depth - s1.depth, 7.5);
    }

    #[test]
    fn empty_scene_renders_background() {
        let cam = identity_camera(4, 3, 10.0);
        let bg = Vec3::new(0.2, 0.4, 0.6);
        let img = render(&[], &cam, bg, &RenderOptions::default()).unwrap();
        for p in img.pixels() {
            assert_eq!(*p, bg);
        }
    }

    #[test]
    fn single_splat_at_center() {
        // g = 1 at the splat's own center: pixel = 0.999 red + 0.001 bg.
        let cam = identity_camera(8, 8, 1.0);
        let px = pixel_center(3, 4);
        let s = plain_splat(px, 1.0, 0.999, Vec3::new(1.0, 0.0, 0.0), 0);
        let bg = Vec3::new(0.0, 0.0, 1.0);
        let img = render(&[s], &cam, bg, &RenderOptions::exact()).unwrap();
        let got = img.pixel(3, 4);
        assert_relative_eq!(got.x, 0.999, epsilon = 1e-12);
        assert_relative_eq!(got.z, 0.001, epsilon = 1e-12);
    }

    #[test]
    fn two_coincident_splats_hand_expansion() {
        // a'_1 = a'_2 = 0.5 at their shared center:
        // C = 0.5 c1 + 0.25 c2 + 0.25 bg.
        let cam = identity_camera(9, 9, 1.0);
        let px = pixel_center(4, 4);
        let c1 = Vec3::new(1.0, 0.0, 0.0);
        let c2 = Vec3::new(0.0, 1.0, 0.0);
        let bg = Vec3::new(0.0, 0.0, 1.0);
        let splats = vec![
            plain_splat(px, 1.0, 0.5, c1, 0),
            plain_splat(px, 2.0, 0.5, c2, 1),
        ];
        let img = render(&splats, &cam, bg, &RenderOptions::exact()).unwrap();
        let got = img.pixel(4, 4);
        assert_relative_eq!(got, 0.5 * c1 + 0.25 * c2 + 0.25 * bg, epsilon = 1e-12);
    }

    #[test]
    fn randomized_scene_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cam = identity_camera(12, 12, 8.0);
        let bg = Vec3::new(0.1, 0.2, 0.3);
        for _ in 0..20 {
            let params = random_params(&mut rng, 5, 0.6);
            let splats: Vec<Splat2D> = params
                .iter()
                .map(|p| project(&activate(p).unwrap(), &cam))
                .collect();
            let img = render(&splats, &cam, bg, &RenderOptions::exact()).unwrap();
            for y in 0..cam.height {
                for x in 0..cam.width {
                    let oracle = brute_force_pixel(&splats, pixel_center(x, y), bg);
                    let got = img.pixel(x, y);
                    for c in 0..3 {
                        assert!(
                            (got[c] - oracle[c]).abs() < 1e-6,
                            "pixel ({x},{y}) channel {c}: {} vs {}",
                            got[c],
                            oracle[c]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = identity_camera(16, 16, 8.0);
        let params = random_params(&mut rng, 8, 0.8);
        let splats: Vec<Splat2D> = params
            .iter()
            .map(|p| project(&activate(p).unwrap(), &cam))
            .collect();
        let a = render(&splats, &cam, Vec3::zeros(), &RenderOptions::default()).unwrap();
        let b = render(&splats, &cam, Vec3::zeros(), &RenderOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn permutation_invariance(seed in 0u64..1000, swap_a in 0usize..6, swap_b in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cam = identity_camera(8, 8, 6.0);
            let params = random_params(&mut rng, 6, 0.5);
            let mut splats: Vec<Splat2D> = params
                .iter()
                .map(|p| project(&activate(p).unwrap(), &cam))
                .collect();
            let img1 = render(&splats, &cam, Vec3::zeros(), &RenderOptions::default()).unwrap();
            splats.swap(swap_a, swap_b);
            splats.reverse();
            let img2 = render(&splats, &cam, Vec3::zeros(), &RenderOptions::default()).unwrap();
            prop_assert_eq!(img1, img2);
        }
    }
}
