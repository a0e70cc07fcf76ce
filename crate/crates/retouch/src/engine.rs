//! The rendering pipeline: applies an [`EditProgram`] to an image.
//!
//! Stage order is fixed and mirrors canonical program order:
//!
//! 1. linear domain: white balance (temperature, tint), exposure
//! 2. encode to tone domain (clamp, sRGB transfer)
//! 3. tone domain: contrast, highlights/shadows, whites/blacks,
//!    tone curve, per-band HSL, vibrance, saturation
//! 4. decode back to linear
//! 5. local ops, each blended by its mask weight
//! 6. final clamp to [0, 1]
//!
//! Stages without a corresponding op are skipped entirely; when no tone
//! stage is present the encode/decode round trip is skipped too, and an
//! empty program returns a bitwise copy of the input.
//!
//! Every pixel is processed independently, so the pipeline is a pure
//! per-pixel map. Large images split by row across the rayon pool with
//! an order-preserving collect; outputs are bitwise identical for any
//! thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{hsl_to_rgb, linear_to_srgb, rgb_to_hsl, srgb_to_linear};
use crate::dsl::{EditOp, EditProgram, HslField, LocalParam, MaskSpec, ScalarParam};
use crate::raster::{ImageBuffer, CHANNELS};
use crate::seed::fnv1a_bytes;

/// Images at or above this pixel count are processed row-parallel.
/// The cutoff is on image size, never on the thread count, so the
/// split is the same no matter where the pool runs.
const PARALLEL_PIXEL_THRESHOLD: usize = 16384;

/// Tuning constants of the pipeline. These are semantics, not style:
/// two builds only render identically if their constants match, so the
/// set is serializable and carries a fingerprint for version banners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConstants {
    /// Tone shift at full highlights slider, before the headroom taper.
    pub highlight_strength: f64,
    /// Tone shift at full shadows slider.
    pub shadow_strength: f64,
    /// Multiplicative boost at full whites slider.
    pub whites_strength: f64,
    /// Additive lift at full blacks slider.
    pub blacks_strength: f64,
    /// Stops applied to the red/blue (temperature) and green (tint)
    /// channels at a full slider.
    pub wb_half_stops: f64,
    /// Half-width of the triangular HSL band weight, degrees.
    pub hsl_band_half_width_deg: f64,
    /// Hue rotation at a full hue slider inside its band, degrees.
    pub hsl_max_hue_shift_deg: f64,
    /// Luminance shift at a full lum slider.
    pub hsl_lum_strength: f64,
    /// Band center hues, in [`crate::dsl::HslBand::ALL`] order.
    pub band_centers_deg: [f64; 8],
}

impl Default for PipelineConstants {
    fn default() -> Self {
        Self {
            highlight_strength: 0.5,
            shadow_strength: 0.5,
            whites_strength: 0.25,
            blacks_strength: 0.15,
            wb_half_stops: 0.5,
            hsl_band_half_width_deg: 45.0,
            hsl_max_hue_shift_deg: 30.0,
            hsl_lum_strength: 0.25,
            band_centers_deg: [0.0, 30.0, 60.0, 120.0, 180.0, 240.0, 280.0, 320.0],
        }
    }
}

impl PipelineConstants {
    /// Stable 64-bit digest of the constant set. Shown by `--version`
    /// so rendered outputs can be traced to the semantics that made
    /// them.
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("constants serialize");
        fnv1a_bytes(json.as_bytes())
    }
}

/// Hermite smoothstep: 0 at `e0`, 1 at `e1`, clamped outside.
pub fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Monotone cubic interpolant through tone-curve control points,
/// built with the Fritsch-Carlson slope limiter so the rendered curve
/// never overshoots or reverses between knots.
#[derive(Clone, Debug)]
pub struct ToneCurve {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl ToneCurve {
    /// Builds from validated control points (strictly increasing x in
    /// [0, 1]). Implicit (0,0) and (1,1) endpoints are added when the
    /// point set does not already reach the domain edges.
    pub fn new(points: &[(f64, f64)]) -> Self {
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len() + 2);
        if points.first().map_or(true, |p| p.0 > 0.0) {
            pts.push((0.0, 0.0));
        }
        pts.extend_from_slice(points);
        if points.last().map_or(true, |p| p.0 < 1.0) {
            pts.push((1.0, 1.0));
        }

        let n = pts.len();
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let sec: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();

        let mut ds = vec![0.0; n];
        if n == 2 {
            ds[0] = sec[0];
            ds[1] = sec[0];
        } else {
            for i in 1..n - 1 {
                // Weighted harmonic mean of adjacent secants; zero on a
                // sign change. This keeps each segment monotone.
                if sec[i - 1] * sec[i] <= 0.0 {
                    ds[i] = 0.0;
                } else {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    ds[i] = (w1 + w2) / (w1 / sec[i - 1] + w2 / sec[i]);
                }
            }
            ds[0] = endpoint_slope(h[0], h[1], sec[0], sec[1]);
            ds[n - 1] = endpoint_slope(h[n - 2], h[n - 3], sec[n - 2], sec[n - 3]);
        }
        Self { xs, ys, ds }
    }

    /// Curve value at `t`; input and output both clamped to [0, 1].
    pub fn eval(&self, t: f64) -> f64 {
        let t = clamp01(t);
        let n = self.xs.len();
        // Right-open segment lookup; t == 1 falls in the last segment.
        let seg = self.xs[1..n - 1].partition_point(|&x| x <= t);
        let (x0, x1) = (self.xs[seg], self.xs[seg + 1]);
        let (y0, y1) = (self.ys[seg], self.ys[seg + 1]);
        let (d0, d1) = (self.ds[seg], self.ds[seg + 1]);
        let h = x1 - x0;
        let u = (t - x0) / h;
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        clamp01(h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1)
    }
}

/// One-sided three-point slope estimate at a boundary knot, with the
/// Fritsch-Carlson shape guards.
fn endpoint_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d * s0 <= 0.0 {
        0.0
    } else if s0 * s1 <= 0.0 && d.abs() > 3.0 * s0.abs() {
        3.0 * s0
    } else {
        d
    }
}

/// Mask weight at a point in normalized image coordinates.
pub fn mask_weight(mask: &MaskSpec, x: f64, y: f64) -> f64 {
    match *mask {
        MaskSpec::Radial { cx, cy, radius, feather } => {
            let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            let inner = radius * (1.0 - feather);
            if d <= inner {
                1.0
            } else if d >= radius {
                0.0
            } else {
                1.0 - smoothstep(inner, radius, d)
            }
        }
        MaskSpec::Linear { x0, y0, x1, y1 } => {
            let dx = x1 - x0;
            let dy = y1 - y0;
            let len2 = dx * dx + dy * dy;
            (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0)
        }
    }
}

struct LocalPlan {
    mask: MaskSpec,
    /// (red gain, blue gain) from the local temperature slider.
    temp_gains: Option<(f64, f64)>,
    exposure_gain: Option<f64>,
    /// Saturation factor 1 + v/100.
    saturation: Option<f64>,
}

/// Everything `execute` needs per pixel, precomputed once per call.
struct StagePlan {
    consts: PipelineConstants,
    wb_gains: Option<[f64; 3]>,
    exposure_gain: Option<f64>,
    contrast_slope: Option<f64>,
    highlights: Option<f64>,
    shadows: Option<f64>,
    whites: Option<f64>,
    blacks: Option<f64>,
    curve: Option<ToneCurve>,
    /// (band center, field, value/100) in canonical program order.
    hsl_ops: Vec<(f64, HslField, f64)>,
    vibrance: Option<f64>,
    saturation: Option<f64>,
    locals: Vec<LocalPlan>,
}

impl StagePlan {
    fn build(program: &EditProgram, consts: &PipelineConstants) -> Self {
        let mut plan = StagePlan {
            consts: consts.clone(),
            wb_gains: None,
            exposure_gain: None,
            contrast_slope: None,
            highlights: None,
            shadows: None,
            whites: None,
            blacks: None,
            curve: None,
            hsl_ops: Vec::new(),
            vibrance: None,
            saturation: None,
            locals: Vec::new(),
        };
        let mut temperature = None;
        let mut tint = None;
        for op in program.ops() {
            match op {
                EditOp::Scalar { param, value } => match param {
                    ScalarParam::Temperature => temperature = Some(*value),
                    ScalarParam::Tint => tint = Some(*value),
                    ScalarParam::Exposure => plan.exposure_gain = Some((*value).exp2()),
                    ScalarParam::Contrast => plan.contrast_slope = Some(1.0 + value / 100.0),
                    ScalarParam::Highlights => plan.highlights = Some(value / 100.0),
                    ScalarParam::Shadows => plan.shadows = Some(value / 100.0),
                    ScalarParam::Whites => plan.whites = Some(value / 100.0),
                    ScalarParam::Blacks => plan.blacks = Some(value / 100.0),
                    ScalarParam::Vibrance => plan.vibrance = Some(value / 100.0),
                    ScalarParam::Saturation => plan.saturation = Some(value / 100.0),
                },
                EditOp::ToneCurve { points } => plan.curve = Some(ToneCurve::new(points)),
                EditOp::Hsl { band, field, value } => {
                    let center = consts.band_centers_deg[crate::dsl::HslBand::ALL
                        .iter()
                        .position(|b| b == band)
                        .unwrap()];
                    plan.hsl_ops.push((center, *field, value / 100.0));
                }
                EditOp::Local { mask, params, .. } => {
                    let mut lp = LocalPlan {
                        mask: *mask,
                        temp_gains: None,
                        exposure_gain: None,
                        saturation: None,
                    };
                    for (param, value) in params {
                        match param {
                            LocalParam::Temperature => {
                                let stops = consts.wb_half_stops * value / 100.0;
                                lp.temp_gains = Some((stops.exp2(), (-stops).exp2()));
                            }
                            LocalParam::Exposure => lp.exposure_gain = Some((*value).exp2()),
                            LocalParam::Saturation => lp.saturation = Some(1.0 + value / 100.0),
                        }
                    }
                    plan.locals.push(lp);
                }
            }
        }
        if temperature.is_some() || tint.is_some() {
            let t_stops = consts.wb_half_stops * temperature.unwrap_or(0.0) / 100.0;
            let m_stops = consts.wb_half_stops * tint.unwrap_or(0.0) / 100.0;
            plan.wb_gains = Some([t_stops.exp2(), (-m_stops).exp2(), (-t_stops).exp2()]);
        }
        plan
    }

    fn has_tone_stage(&self) -> bool {
        self.contrast_slope.is_some()
            || self.highlights.is_some()
            || self.shadows.is_some()
            || self.whites.is_some()
            || self.blacks.is_some()
            || self.curve.is_some()
            || !self.hsl_ops.is_empty()
            || self.vibrance.is_some()
            || self.saturation.is_some()
    }

    fn apply_pixel(&self, px: f64, py: f64, mut rgb: [f64; 3], tone: bool) -> [f64; 3] {
        let c = &self.consts;
        if let Some(g) = self.wb_gains {
            rgb = [rgb[0] * g[0], rgb[1] * g[1], rgb[2] * g[2]];
        }
        if let Some(g) = self.exposure_gain {
            rgb = rgb.map(|v| v * g);
        }

        if tone {
            let mut t = rgb.map(|v| linear_to_srgb(clamp01(v)));
            if let Some(slope) = self.contrast_slope {
                t = t.map(|v| clamp01(0.5 + (v - 0.5) * slope));
            }
            if self.highlights.is_some() || self.shadows.is_some() {
                let hi = self.highlights.unwrap_or(0.0);
                let sh = self.shadows.unwrap_or(0.0);
                t = t.map(|v| {
                    let w_hi = smoothstep(0.5, 1.0, v);
                    let w_sh = 1.0 - smoothstep(0.0, 0.5, v);
                    clamp01(
                        v + c.highlight_strength * hi * w_hi * (1.0 - v)
                            + c.shadow_strength * sh * w_sh * (1.0 - v),
                    )
                });
            }
            if self.whites.is_some() || self.blacks.is_some() {
                let wh = self.whites.unwrap_or(0.0);
                let bl = self.blacks.unwrap_or(0.0);
                t = t.map(|v| {
                    let w_hi = smoothstep(0.5, 1.0, v);
                    let w_sh = 1.0 - smoothstep(0.0, 0.5, v);
                    clamp01(v * (1.0 + c.whites_strength * wh * w_hi) + c.blacks_strength * bl * w_sh)
                });
            }
            if let Some(curve) = &self.curve {
                t = t.map(|v| curve.eval(v));
            }
            if !self.hsl_ops.is_empty() || self.vibrance.is_some() || self.saturation.is_some() {
                let (mut h, mut s, mut l) = rgb_to_hsl(t[0], t[1], t[2]);
                for &(center, field, value) in &self.hsl_ops {
                    // Weight from the current hue: earlier band ops see
                    // the image as already rotated.
                    let w = band_weight(h, center, c.hsl_band_half_width_deg);
                    if w > 0.0 {
                        match field {
                            HslField::Hue => {
                                h = (h + w * value * c.hsl_max_hue_shift_deg).rem_euclid(360.0);
                            }
                            HslField::Sat => s = clamp01(s * (1.0 + w * value)),
                            HslField::Lum => l = clamp01(l + w * c.hsl_lum_strength * value),
                        }
                    }
                }
                if let Some(v) = self.vibrance {
                    // Tapered boost: weaker on already-saturated color.
                    s = clamp01(s * (1.0 + v * (1.0 - s)));
                }
                if let Some(v) = self.saturation {
                    s = clamp01(s * (1.0 + v));
                }
                let (r, g, b) = hsl_to_rgb(h, s, l);
                t = [r, g, b];
            }
            rgb = t.map(srgb_to_linear);
        }

        for local in &self.locals {
            let w = mask_weight(&local.mask, px, py);
            if w > 0.0 {
                let mut e = rgb;
                if let Some((gr, gb)) = local.temp_gains {
                    e[0] *= gr;
                    e[2] *= gb;
                }
                if let Some(g) = local.exposure_gain {
                    e = e.map(|v| v * g);
                }
                if let Some(factor) = local.saturation {
                    let t = e.map(|v| linear_to_srgb(clamp01(v)));
                    let (h, s, l) = rgb_to_hsl(t[0], t[1], t[2]);
                    let (r, g, b) = hsl_to_rgb(h, clamp01(s * factor), l);
                    e = [srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b)];
                }
                rgb = [
                    rgb[0] + w * (e[0] - rgb[0]),
                    rgb[1] + w * (e[1] - rgb[1]),
                    rgb[2] + w * (e[2] - rgb[2]),
                ];
            }
        }

        rgb.map(clamp01)
    }
}

/// Triangular band weight around `center` with circular hue distance.
fn band_weight(hue: f64, center: f64, half_width: f64) -> f64 {
    let mut dist = (hue - center).rem_euclid(360.0);
    if dist > 180.0 {
        dist = 360.0 - dist;
    }
    (1.0 - dist / half_width).max(0.0)
}

/// Renders `program` onto `img` with the default constants.
pub fn execute(img: &ImageBuffer, program: &EditProgram) -> ImageBuffer {
    execute_with(img, program, &PipelineConstants::default())
}

/// Renders `program` onto `img`. Pure per-pixel map; the output is
/// clamped to [0, 1] and bitwise independent of the rayon thread count.
pub fn execute_with(
    img: &ImageBuffer,
    program: &EditProgram,
    consts: &PipelineConstants,
) -> ImageBuffer {
    if program.is_empty() {
        return img.clone();
    }
    let plan = StagePlan::build(program, consts);
    let tone = plan.has_tone_stage();
    let width = img.width();
    let height = img.height();
    let inv_w = 1.0 / width as f64;
    let inv_h = 1.0 / height as f64;
    let row_len = width * CHANNELS;

    let process_row = |(row, chunk): (usize, &[f64])| -> Vec<f64> {
        let py = (row as f64 + 0.5) * inv_h;
        let mut out = Vec::with_capacity(row_len);
        for (col, pix) in chunk.chunks_exact(CHANNELS).enumerate() {
            let px = (col as f64 + 0.5) * inv_w;
            let rgb = plan.apply_pixel(px, py, [pix[0], pix[1], pix[2]], tone);
            out.extend_from_slice(&rgb);
        }
        out
    };

    let rows: Vec<Vec<f64>> = if img.pixel_count() >= PARALLEL_PIXEL_THRESHOLD {
        img.data()
            .par_chunks_exact(row_len)
            .enumerate()
            .map(process_row)
            .collect()
    } else {
        img.data()
            .chunks_exact(row_len)
            .enumerate()
            .map(process_row)
            .collect()
    };
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    ImageBuffer::from_data(width, height, data).expect("pipeline output is finite")
}
