//! Image container in linear light, summary statistics computed in the
//! sRGB tone domain, and 8-bit PPM (binary P6) / PNG file I/O.
//!
//! Files are 8-bit; the working representation is f64 linear light.
//! Quantization on save rounds half up, so a save/load round trip moves a
//! sample by at most half an 8-bit step in tone space.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{linear_to_srgb, rgb_to_hsl, srgb_to_linear};

pub const CHANNELS: usize = 3;

/// Rec. 709 luma weights, applied to tone-domain (sRGB-encoded) values.
pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Luma at or above this fraction counts as clipped high; at or below
/// one minus it, clipped low.
const CLIP_HIGH: f64 = 0.99;
const CLIP_LOW: f64 = 0.01;

pub const HIST_BINS: usize = 8;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image header: {0}")]
    CorruptHeader(String),
    #[error("corrupt image payload: {0}")]
    CorruptPayload(String),
    #[error("bad image dimensions: {0}")]
    BadDimensions(String),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
}

/// Interleaved RGB image in linear light, row-major.
///
/// Dimensions are at least 1x1 and every sample is finite. The nominal
/// range is [0, 1]; values above 1 can appear transiently inside the
/// engine before its final clamp.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Result<Self, RasterError> {
        Self::from_data(width, height, vec![0.0; width * height * CHANNELS])
    }

    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self, RasterError> {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self::from_data(width, height, data)
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::BadDimensions(format!("{width}x{height}")));
        }
        if data.len() != width * height * CHANNELS {
            return Err(RasterError::BadDimensions(format!(
                "{width}x{height} needs {} samples, got {}",
                width * height * CHANNELS,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(RasterError::NonFinite(i));
        }
        Ok(Self { width, height, data })
    }

    /// Builds from 8-bit sRGB bytes (interleaved RGB), decoding to linear.
    pub fn from_srgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, RasterError> {
        if bytes.len() != width * height * CHANNELS {
            return Err(RasterError::BadDimensions(format!(
                "{width}x{height} needs {} bytes, got {}",
                width * height * CHANNELS,
                bytes.len()
            )));
        }
        let data = bytes
            .iter()
            .map(|&b| srgb_to_linear(f64::from(b) / 255.0))
            .collect();
        Self::from_data(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Quantizes to 8-bit sRGB bytes: clamp, encode, round half up.
    pub fn to_srgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize8(v)).collect()
    }
}

/// Round-half-up quantization of one linear sample to an 8-bit code.
pub fn quantize8(linear: f64) -> u8 {
    let tone = linear_to_srgb(linear.clamp(0.0, 1.0));
    (tone * 255.0 + 0.5).floor().min(255.0) as u8
}

/// Summary statistics of an image, all in the sRGB tone domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean_luma: f64,
    pub std_luma: f64,
    pub mean_saturation: f64,
    /// Mean red minus mean blue, in [-1, 1].
    pub warmth: f64,
    pub channel_means: [f64; 3],
    pub clipped_high_frac: f64,
    pub clipped_low_frac: f64,
    /// Luma histogram over 8 equal bins of [0, 1]; fractions sum to 1.
    pub luma_hist: [f64; HIST_BINS],
}

/// Computes [`FeatureStats`]. Samples are clamped to [0, 1] and encoded
/// to the tone domain first; every statistic is order-independent.
pub fn image_stats(img: &ImageBuffer) -> FeatureStats {
    let n = img.pixel_count() as f64;
    let mut sum_luma = 0.0;
    let mut sum_luma_sq = 0.0;
    let mut sum_sat = 0.0;
    let mut sum_ch = [0.0; 3];
    let mut hi = 0usize;
    let mut lo = 0usize;
    let mut hist = [0usize; HIST_BINS];
    for px in img.data.chunks_exact(CHANNELS) {
        let r = linear_to_srgb(px[0].clamp(0.0, 1.0));
        let g = linear_to_srgb(px[1].clamp(0.0, 1.0));
        let b = linear_to_srgb(px[2].clamp(0.0, 1.0));
        let luma = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b;
        sum_luma += luma;
        sum_luma_sq += luma * luma;
        let (_, s, _) = rgb_to_hsl(r, g, b);
        sum_sat += s;
        sum_ch[0] += r;
        sum_ch[1] += g;
        sum_ch[2] += b;
        if luma >= CLIP_HIGH {
            hi += 1;
        }
        if luma <= CLIP_LOW {
            lo += 1;
        }
        let bin = ((luma * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        hist[bin] += 1;
    }
    let mean_luma = sum_luma / n;
    let var = (sum_luma_sq / n - mean_luma * mean_luma).max(0.0);
    let mut luma_hist = [0.0; HIST_BINS];
    for (out, &count) in luma_hist.iter_mut().zip(hist.iter()) {
        *out = count as f64 / n;
    }
    FeatureStats {
        mean_luma,
        std_luma: var.sqrt(),
        mean_saturation: sum_sat / n,
        warmth: sum_ch[0] / n - sum_ch[2] / n,
        channel_means: [sum_ch[0] / n, sum_ch[1] / n, sum_ch[2] / n],
        clipped_high_frac: hi as f64 / n,
        clipped_low_frac: lo as f64 / n,
        luma_hist,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    /// Picks a format from a file extension (case-insensitive).
    pub fn from_path(path: &Path) -> Result<Self, RasterError> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("ppm") => Ok(ImageFormat::Ppm),
            Some("png") => Ok(ImageFormat::Png),
            other => Err(RasterError::UnsupportedFormat(format!(
                "extension {:?} (expected .ppm or .png)",
                other.unwrap_or("<none>")
            ))),
        }
    }
}

/// Writes an image as 8-bit PPM P6 or PNG.
pub fn save_image(img: &ImageBuffer, path: &Path, format: ImageFormat) -> Result<(), RasterError> {
    let bytes = img.to_srgb8();
    match format {
        ImageFormat::Ppm => {
            let mut out = Vec::with_capacity(bytes.len() + 32);
            out.extend_from_slice(format!("P6\n{} {}\n255\n", img.width, img.height).as_bytes());
            out.extend_from_slice(&bytes);
            fs::write(path, out)?;
            Ok(())
        }
        ImageFormat::Png => {
            let file = fs::File::create(path)?;
            let mut enc = png::Encoder::new(
                BufWriter::new(file),
                img.width as u32,
                img.height as u32,
            );
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc
                .write_header()
                .map_err(|e| RasterError::CorruptPayload(format!("png encode: {e}")))?;
            writer
                .write_image_data(&bytes)
                .map_err(|e| RasterError::CorruptPayload(format!("png encode: {e}")))?;
            Ok(())
        }
    }
}

/// Loads an 8-bit PPM P6 or PNG image, sniffing the format from the
/// file's magic bytes.
pub fn load_image(path: &Path) -> Result<ImageBuffer, RasterError> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P6") {
        load_ppm(&bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        load_png(&bytes)
    } else {
        Err(RasterError::UnsupportedFormat(
            "unrecognized magic bytes (expected PPM P6 or PNG)".into(),
        ))
    }
}

fn load_ppm(bytes: &[u8]) -> Result<ImageBuffer, RasterError> {
    let mut pos = 2; // past "P6"
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        skip_ppm_separators(bytes, &mut pos)?;
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(RasterError::CorruptHeader("expected a decimal field".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| RasterError::CorruptHeader("non-ASCII header".into()))?;
        *field = text
            .parse()
            .map_err(|_| RasterError::CorruptHeader(format!("bad number {text:?}")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(RasterError::UnsupportedFormat(format!(
            "PPM maxval {maxval} (only 255 supported)"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(RasterError::CorruptHeader("missing payload separator".into())),
    }
    let expected = width * height * CHANNELS;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(RasterError::CorruptPayload(format!(
            "expected {expected} bytes, got {}",
            payload.len()
        )));
    }
    ImageBuffer::from_srgb8(width, height, payload)
}

fn skip_ppm_separators(bytes: &[u8], pos: &mut usize) -> Result<(), RasterError> {
    let mut advanced = false;
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => {
                *pos += 1;
                advanced = true;
            }
            Some(b'#') => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            Some(_) if advanced => return Ok(()),
            Some(_) => return Err(RasterError::CorruptHeader("missing separator".into())),
            None => return Err(RasterError::CorruptHeader("truncated header".into())),
        }
    }
}

fn load_png(bytes: &[u8]) -> Result<ImageBuffer, RasterError> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder
        .read_info()
        .map_err(|e| RasterError::CorruptHeader(format!("png: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(RasterError::UnsupportedFormat(format!(
            "png {:?}/{:?} (only 8-bit RGB supported)",
            info.color_type, info.bit_depth
        )));
    }
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| RasterError::CorruptPayload(format!("png: {e}")))?;
    let width = frame.width as usize;
    let height = frame.height as usize;
    ImageBuffer::from_srgb8(width, height, &buf[..width * height * CHANNELS])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(v: f64) -> f64 {
        linear_to_srgb(v.clamp(0.0, 1.0))
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            ImageBuffer::new(0, 4),
            Err(RasterError::BadDimensions(_))
        ));
        assert!(matches!(
            ImageBuffer::from_data(2, 1, vec![0.0; 5]),
            Err(RasterError::BadDimensions(_))
        ));
        assert!(matches!(
            ImageBuffer::from_data(1, 1, vec![0.0, f64::NAN, 0.0]),
            Err(RasterError::NonFinite(1))
        ));
    }

    #[test]
    fn quantize_rounds_half_up() {
        // srgb_to_linear(0.5/255) maps back to exactly 0.5 in 255-scaled
        // tone space, the tie that must round up.
        let half_step = srgb_to_linear(0.5 / 255.0);
        assert_eq!(quantize8(half_step), 1);
        assert_eq!(quantize8(0.0), 0);
        assert_eq!(quantize8(1.0), 255);
        assert_eq!(quantize8(0.5), 188); // well-known sRGB mid-gray code
    }

    #[test]
    fn ppm_golden_bytes() {
        let img = ImageBuffer::from_data(
            2,
            1,
            vec![0.0, 0.0, 0.0, 1.0, 0.5, 0.0],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("px.ppm");
        save_image(&img, &path, ImageFormat::Ppm).unwrap();
        let bytes = fs::read(&path).unwrap();
        let mut expected = b"P6\n2 1\n255\n".to_vec();
        expected.extend_from_slice(&[0, 0, 0, 255, 188, 0]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn ppm_round_trip_within_half_step() {
        let img = ImageBuffer::from_data(
            3,
            2,
            (0..18).map(|i| f64::from(i) / 17.0).collect(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.ppm");
        save_image(&img, &path, ImageFormat::Ppm).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.width(), 3);
        assert_eq!(back.height(), 2);
        for (a, b) in img.data().iter().zip(back.data()) {
            let err = (tone(*a) - tone(*b)).abs();
            assert!(err <= 0.5 / 255.0 + 1e-12, "tone error {err}");
        }
    }

    #[test]
    fn png_round_trip_is_exact_on_the_8bit_grid() {
        let bytes: Vec<u8> = (0..=47).map(|i| (i * 5) as u8).collect();
        let img = ImageBuffer::from_srgb8(4, 4, &bytes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.png");
        save_image(&img, &path, ImageFormat::Png).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.to_srgb8(), bytes);
        assert_eq!(back, img);
    }

    #[test]
    fn load_error_classes_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(&dir.path().join("missing.ppm")),
            Err(RasterError::Io(_))
        ));
        let junk = dir.path().join("junk.ppm");
        fs::write(&junk, b"JFIF....").unwrap();
        assert!(matches!(
            load_image(&junk),
            Err(RasterError::UnsupportedFormat(_))
        ));
        let bad_header = dir.path().join("hdr.ppm");
        fs::write(&bad_header, b"P6\n2 x\n255\n").unwrap();
        assert!(matches!(
            load_image(&bad_header),
            Err(RasterError::CorruptHeader(_))
        ));
        let short = dir.path().join("short.ppm");
        fs::write(&short, b"P6\n2 1\n255\nab").unwrap();
        assert!(matches!(
            load_image(&short),
            Err(RasterError::CorruptPayload(_))
        ));
    }

    #[test]
    fn ppm_header_accepts_comments() {
        let mut bytes = b"P6\n# a comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0u8; 6]);
        let img = load_ppm(&bytes).unwrap();
        assert_eq!(img.width(), 2);
    }

    #[test]
    fn stats_of_constant_image() {
        let img = ImageBuffer::constant(4, 3, [0.5, 0.5, 0.5]).unwrap();
        let s = image_stats(&img);
        let t = tone(0.5);
        assert!((s.mean_luma - t).abs() < 1e-12);
        assert!(s.std_luma < 1e-12);
        assert_eq!(s.mean_saturation, 0.0);
        assert_eq!(s.warmth, 0.0);
        assert!((s.channel_means[1] - t).abs() < 1e-12);
        assert_eq!(s.clipped_high_frac, 0.0);
        assert_eq!(s.clipped_low_frac, 0.0);
        let bin = ((t * 8.0) as usize).min(7);
        assert_eq!(s.luma_hist[bin], 1.0);
    }

    #[test]
    fn stats_count_clipping() {
        let mut data = vec![0.0; 2 * 2 * 3];
        data[0] = 1.0;
        data[1] = 1.0;
        data[2] = 1.0; // one white pixel, three black
        let img = ImageBuffer::from_data(2, 2, data).unwrap();
        let s = image_stats(&img);
        assert_eq!(s.clipped_high_frac, 0.25);
        assert_eq!(s.clipped_low_frac, 0.75);
        assert_eq!(s.luma_hist[0], 0.75);
        assert_eq!(s.luma_hist[7], 0.25);
    }

    #[test]
    fn stats_match_two_pass_reference() {
        // Straight-line two-pass reference for the luma moments.
        let mut rng_state = 0x2545F4914F6CDD1Du64;
        let mut next = || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        let data: Vec<f64> = (0..5 * 4 * 3).map(|_| next()).collect();
        let img = ImageBuffer::from_data(5, 4, data).unwrap();
        let s = image_stats(&img);

        let mut lumas = Vec::new();
        for px in img.data().chunks_exact(3) {
            let l = 0.2126 * tone(px[0]) + 0.7152 * tone(px[1]) + 0.0722 * tone(px[2]);
            lumas.push(l);
        }
        let mean: f64 = lumas.iter().sum::<f64>() / lumas.len() as f64;
        let var: f64 =
            lumas.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / lumas.len() as f64;
        assert!((s.mean_luma - mean).abs() <= 1e-6);
        assert!((s.std_luma - var.sqrt()).abs() <= 1e-6);
    }

    proptest! {
        #[test]
        fn stats_are_pixel_permutation_invariant(seed in 0u64..1000) {
            let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let n = 24usize;
            let pixels: Vec<[f64; 3]> = (0..n).map(|_| [next(), next(), next()]).collect();
            let flat: Vec<f64> = pixels.iter().flatten().copied().collect();
            let img = ImageBuffer::from_data(6, 4, flat).unwrap();
            let a = image_stats(&img);

            let mut reversed: Vec<[f64; 3]> = pixels.clone();
            reversed.reverse();
            let flat_r: Vec<f64> = reversed.iter().flatten().copied().collect();
            let img_r = ImageBuffer::from_data(4, 6, flat_r).unwrap();
            let b = image_stats(&img_r);

            prop_assert!((a.mean_luma - b.mean_luma).abs() <= 1e-9);
            prop_assert!((a.std_luma - b.std_luma).abs() <= 1e-9);
            prop_assert!((a.mean_saturation - b.mean_saturation).abs() <= 1e-9);
            prop_assert!((a.warmth - b.warmth).abs() <= 1e-9);
            prop_assert_eq!(a.clipped_high_frac, b.clipped_high_frac);
            prop_assert_eq!(a.clipped_low_frac, b.clipped_low_frac);
            for k in 0..HIST_BINS {
                prop_assert_eq!(a.luma_hist[k], b.luma_hist[k]);
            }
        }

        #[test]
        fn histogram_sums_to_one(seed in 0u64..200) {
            let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(7);
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let data: Vec<f64> = (0..3 * 5 * 3).map(|_| next()).collect();
            let img = ImageBuffer::from_data(3, 5, data).unwrap();
            let s = image_stats(&img);
            let total: f64 = s.luma_hist.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-6);
        }
    }
}
