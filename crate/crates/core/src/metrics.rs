//! PSNR and SSIM image-quality metrics, plus an optional D-SSIM training
//! loss with an analytic backward pass.

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio in dB for images on the [0, 1] range.
/// Identical images are capped at 100 dB.
pub fn psnr(a: &Image, gt: &Image) -> Result<f64> {
    if !a.same_size(gt) {
        return Err(Error::DimensionMismatch(format!(
            "psnr over {}x{} vs {}x{}",
            a.width(),
            a.height(),
            gt.width(),
            gt.height()
        )));
    }
    let n = (a.width() * a.height() * 3) as f64;
    let mse: f64 = a
        .pixels()
        .zip(gt.pixels())
        .map(|(pa, pb)| (pa - pb).map(|v| v * v).sum())
        .sum::<f64>()
        / n;
    if mse <= 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(100.0))
}

/// PSNR restricted to a pixel rectangle (used for the high-dynamic crop).
pub fn psnr_crop(
    a: &Image,
    gt: &Image,
    x0: usize,
    y0: usize,
    width: usize,
    height: usize,
) -> Result<f64> {
    if !a.same_size(gt) {
        return Err(Error::DimensionMismatch("psnr_crop size".into()));
    }
    if x0 + width > a.width() || y0 + height > a.height() || width == 0 || height == 0 {
        return Err(Error::Config("crop outside image bounds".into()));
    }
    let mut mse = 0.0;
    for y in y0..y0 + height {
        for x in x0..x0 + width {
            mse += (a.pixel(x, y) - gt.pixel(x, y)).map(|v| v * v).sum();
        }
    }
    mse /= (width * height * 3) as f64;
    if mse <= 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(100.0))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for dy in -half..=half {
        for dx in -half..=half {
            let r2 = (dx * dx + dy * dy) as f64;
            w.push((-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

struct WindowStats {
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn window_stats(
    a: &Image,
    b: &Image,
    cx: usize,
    cy: usize,
    ch: usize,
    w: &[f64],
) -> WindowStats {
    let half = SSIM_WINDOW / 2;
    let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut k = 0;
    for dy in 0..SSIM_WINDOW {
        for dx in 0..SSIM_WINDOW {
            let x = cx + dx - half;
            let y = cy + dy - half;
            let va = a.pixel(x, y)[ch];
            let vb = b.pixel(x, y)[ch];
            let wk = w[k];
            mx += wk * va;
            my += wk * vb;
            mxx += wk * va * va;
            myy += wk * vb * vb;
            mxy += wk * va * vb;
            k += 1;
        }
    }
    WindowStats {
        mu_x: mx,
        mu_y: my,
        var_x: mxx - mx * mx,
        var_y: myy - my * my,
        cov: mxy - mx * my,
    }
}

fn check_ssim_size(a: &Image, gt: &Image) -> Result<()> {
    if !a.same_size(gt) {
        return Err(Error::DimensionMismatch("ssim size".into()));
    }
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::ImageTooSmallForSsim {
            width: a.width(),
            height: a.height(),
        });
    }
    Ok(())
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// computed per channel and averaged; borders handled by valid-window
/// cropping.
pub fn ssim(a: &Image, gt: &Image) -> Result<f64> {
    check_ssim_size(a, gt)?;
    let w = gaussian_window();
    let half = SSIM_WINDOW / 2;
    let mut total = 0.0;
    let mut count = 0usize;
    for cy in half..a.height() - half {
        for cx in half..a.width() - half {
            for ch in 0..3 {
                let s = window_stats(a, gt, cx, cy, ch, &w);
                let l = (2.0 * s.mu_x * s.mu_y + SSIM_C1) / (s.mu_x * s.mu_x + s.mu_y * s.mu_y + SSIM_C1);
                let cs = (2.0 * s.cov + SSIM_C2) / (s.var_x + s.var_y + SSIM_C2);
                total += l * cs;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// D-SSIM loss (1 - ssim) / 2 with its gradient w.r.t. the first image.
pub fn dssim_backward(a: &Image, gt: &Image) -> Result<(f64, Image)> {
    check_ssim_size(a, gt)?;
    let w = gaussian_window();
    let half = SSIM_WINDOW / 2;
    let positions = (a.height() - 2 * half) * (a.width() - 2 * half) * 3;
    let scale = -0.5 / positions as f64; // d dssim / d ssim_p, averaged

    let mut grad = Image::new(a.width(), a.height());
    let mut total = 0.0;
    for cy in half..a.height() - half {
        for cx in half..a.width() - half {
            for ch in 0..3 {
                let s = window_stats(a, gt, cx, cy, ch, &w);
                let a1 = 2.0 * s.mu_x * s.mu_y + SSIM_C1;
                let a2 = 2.0 * s.cov + SSIM_C2;
                let b1 = s.mu_x * s.mu_x + s.mu_y * s.mu_y + SSIM_C1;
                let b2 = s.var_x + s.var_y + SSIM_C2;
                let ssim_p = (a1 * a2) / (b1 * b2);
                total += ssim_p;

                // d ssim / d x_k = w_k [ 2 mu_y A2/(B1 B2) + 2 (y_k - mu_y) A1/(B1 B2)
                //                        - 2 mu_x S/B1 - 2 (x_k - mu_x) S/B2 ].
                let c_mu = 2.0 * s.mu_y * a2 / (b1 * b2) - 2.0 * s.mu_x * ssim_p / b1;
                let c_y = 2.0 * a1 / (b1 * b2);
                let c_x = -2.0 * ssim_p / b2;
                let mut k = 0;
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let x = cx + dx - half;
                        let y = cy + dy - half;
                        let va = a.pixel(x, y)[ch];
                        let vb = gt.pixel(x, y)[ch];
                        let d = w[k] * (c_mu + c_y * (vb - s.mu_y) + c_x * (va - s.mu_x));
                        grad.pixel_mut(x, y)[ch] += scale * d;
                        k += 1;
                    }
                }
            }
        }
    }
    let mean_ssim = total / positions as f64;
    Ok(((1.0 - mean_ssim) / 2.0, grad))
}
