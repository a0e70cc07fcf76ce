//! Image distance metrics.
//!
//! All metrics compare tone-mapped values on a continuous 0..255 scale:
//! each linear sample is clamped, pushed through the sRGB transfer, and
//! scaled by 255 without quantizing. Distances therefore match what a
//! viewer of the saved 8-bit files would see, while staying smooth
//! enough to train against.

use serde::Serialize;
use thiserror::Error;

use crate::color::linear_to_srgb;
use crate::raster::{ImageBuffer, CHANNELS, LUMA_WEIGHTS};

pub const TONE_SCALE: f64 = 255.0;
/// PSNR is capped here; identical images report the cap exactly.
pub const PSNR_CAP_DB: f64 = 100.0;
/// SSIM window side; images smaller than this cannot be scored.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * TONE_SCALE) * (0.01 * TONE_SCALE);
const SSIM_C2: f64 = (0.03 * TONE_SCALE) * (0.03 * TONE_SCALE);

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmallForSsim(usize, usize),
}

fn check_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), MetricError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricError::SizeMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    Ok(())
}

fn tone255(v: f64) -> f64 {
    linear_to_srgb(v.clamp(0.0, 1.0)) * TONE_SCALE
}

/// Mean absolute tone difference over all channels.
pub fn l1_distance(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let n = a.data().len() as f64;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (tone255(x) - tone255(y)).abs())
        .sum();
    Ok(sum / n)
}

/// Root mean squared tone difference over all channels.
pub fn l2_distance(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    Ok(mse(a, b)?.sqrt())
}

fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let n = a.data().len() as f64;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = tone255(x) - tone255(y);
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (TONE_SCALE * TONE_SCALE / mse).log10()).min(PSNR_CAP_DB))
}

/// The distance the training stack optimizes and thresholds against:
/// mean absolute tone difference. Callers compare images they built to
/// the same dimensions, so a mismatch is a bug, not an input error.
pub fn oracle_distance(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    l1_distance(a, b).expect("oracle_distance needs same-size images")
}

/// Mean structural similarity over tone-scale luma, 11x11 Gaussian
/// windows (sigma 1.5), valid positions only.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmallForSsim(w, h));
    }
    let la = luma_map(a);
    let lb = luma_map(b);
    let maps: [Vec<f64>; 5] = [
        la.clone(),
        lb.clone(),
        la.iter().map(|v| v * v).collect(),
        lb.iter().map(|v| v * v).collect(),
        la.iter().zip(&lb).map(|(x, y)| x * y).collect(),
    ];
    let kernel = gaussian_kernel();
    let blurred: Vec<Vec<f64>> = maps
        .iter()
        .map(|m| convolve_valid(m, w, h, &kernel))
        .collect();
    let out_len = (w - SSIM_WINDOW + 1) * (h - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for i in 0..out_len {
        let (ma, mb) = (blurred[0][i], blurred[1][i]);
        let va = blurred[2][i] - ma * ma;
        let vb = blurred[3][i] - mb * mb;
        let cov = blurred[4][i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / out_len as f64)
}

fn luma_map(img: &ImageBuffer) -> Vec<f64> {
    img.data()
        .chunks_exact(CHANNELS)
        .map(|p| {
            LUMA_WEIGHTS[0] * tone255(p[0])
                + LUMA_WEIGHTS[1] * tone255(p[1])
                + LUMA_WEIGHTS[2] * tone255(p[2])
        })
        .collect()
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode convolution with a symmetric 1-D kernel,
/// horizontal then vertical.
fn convolve_valid(map: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for row in 0..h {
        for col in 0..ow {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * map[row * w + col + k];
            }
            horiz[row * ow + col] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for row in 0..oh {
        for col in 0..ow {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * horiz[(row + k) * ow + col];
            }
            out[row * ow + col] = acc;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub l1: f64,
    pub l2: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// All four metrics at once; fails if sizes differ or the images are
/// too small for SSIM.
pub fn report(a: &ImageBuffer, b: &ImageBuffer) -> Result<MetricReport, MetricError> {
    Ok(MetricReport {
        l1: l1_distance(a, b)?,
        l2: l2_distance(a, b)?,
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}
