//! Transfer functions between 8-bit sRGB file space and the linear-light
//! working space, plus the HSL mapping used by the hue and saturation
//! stages.
//!
//! Pixels live in linear light everywhere except inside the tone-domain
//! stages of the engine, which encode through these functions explicitly.
//! Both directions clamp their input to [0, 1] first, so callers never
//! feed the power segments a negative base.

/// sRGB-encoded value where the linear and power segments join.
///
/// The segments are joined where they actually intersect rather than at
/// the commonly quoted 0.04045 breakpoint. With the textbook constants
/// the encode is non-monotone in a ~1e-5 sliver around the joint and
/// therefore has no exact inverse; the intersection point keeps both
/// directions strictly monotone and mutually inverse to machine
/// precision.
const SRGB_KNEE: f64 = 0.040_448_236_277_108_2;

/// Linear-light value corresponding to [`SRGB_KNEE`].
const LINEAR_KNEE: f64 = 0.003_130_668_442_500_63;

/// Decodes an sRGB-encoded value in [0, 1] to linear light.
pub fn srgb_to_linear(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v == 1.0 {
        // The power segment misses the endpoint by an ulp; pin it.
        return 1.0;
    }
    if v <= SRGB_KNEE {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4).clamp(0.0, 1.0)
    }
}

/// Encodes a linear-light value in [0, 1] to the sRGB tone domain.
pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v == 1.0 {
        // The power segment misses the endpoint by an ulp; pin it.
        return 1.0;
    }
    if v <= LINEAR_KNEE {
        v * 12.92
    } else {
        (1.055 * v.powf(1.0 / 2.4) - 0.055).clamp(0.0, 1.0)
    }
}

/// RGB (each in [0, 1]) to HSL. Hue is in degrees, [0, 360); saturation
/// and lightness are in [0, 1]. Gray pixels get s = 0 and h = 0.
pub fn rgb_to_hsl(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let l = 0.5 * (max + min);
    if max == min {
        return (0.0, 0.0, l);
    }
    let d = max - min;
    let s = if l > 0.5 {
        d / (2.0 - max - min)
    } else {
        d / (max + min)
    };
    let h = if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    // Guard the h == 360.0 rounding corner so hue stays in [0, 360).
    let h = if h >= 360.0 { h - 360.0 } else { h };
    (h, s, l)
}

/// HSL back to RGB, inverse of [`rgb_to_hsl`] for s, l in [0, 1].
pub fn hsl_to_rgb(h: f64, s: f64, l: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        return (l, l, l);
    }
    let q = if l < 0.5 { l * (1.0 + s) } else { l + s - l * s };
    let p = 2.0 * l - q;
    let hk = (h / 360.0).rem_euclid(1.0);
    (
        hue_to_channel(p, q, hk + 1.0 / 3.0),
        hue_to_channel(p, q, hk),
        hue_to_channel(p, q, hk - 1.0 / 3.0),
    )
}

fn hue_to_channel(p: f64, q: f64, t: f64) -> f64 {
    let t = if t < 0.0 {
        t + 1.0
    } else if t > 1.0 {
        t - 1.0
    } else {
        t
    };
    if t < 1.0 / 6.0 {
        p + (q - p) * 6.0 * t
    } else if t < 0.5 {
        q
    } else if t < 2.0 / 3.0 {
        p + (q - p) * (2.0 / 3.0 - t) * 6.0
    } else {
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn srgb_knee_segments_agree() {
        let from_linear_segment = SRGB_KNEE / 12.92;
        let from_power_segment = ((SRGB_KNEE + 0.055) / 1.055).powf(2.4);
        assert!((from_linear_segment - LINEAR_KNEE).abs() < 1e-12);
        assert!((from_power_segment - LINEAR_KNEE).abs() < 1e-12);
    }

    #[test]
    fn srgb_frozen_values() {
        assert_eq!(srgb_to_linear(0.0), 0.0);
        assert_eq!(srgb_to_linear(1.0), 1.0);
        assert!((srgb_to_linear(0.5) - 0.21404).abs() < 1e-5);
        // 8-bit mid gray 128 decodes just above the 0.5 code value.
        assert!((srgb_to_linear(128.0 / 255.0) - 0.21586).abs() < 1e-5);
        assert_eq!(linear_to_srgb(0.0), 0.0);
        assert_eq!(linear_to_srgb(1.0), 1.0);
    }

    #[test]
    fn srgb_clamps_out_of_range_input() {
        assert_eq!(srgb_to_linear(-0.5), 0.0);
        assert_eq!(srgb_to_linear(2.0), 1.0);
        assert_eq!(linear_to_srgb(-1.0), 0.0);
        assert_eq!(linear_to_srgb(7.0), 1.0);
    }

    #[test]
    fn hsl_primaries() {
        assert_eq!(rgb_to_hsl(1.0, 0.0, 0.0), (0.0, 1.0, 0.5));
        assert_eq!(rgb_to_hsl(0.0, 1.0, 0.0), (120.0, 1.0, 0.5));
        assert_eq!(rgb_to_hsl(0.0, 0.0, 1.0), (240.0, 1.0, 0.5));
        let (h, s, l) = rgb_to_hsl(0.25, 0.25, 0.25);
        assert_eq!((h, s), (0.0, 0.0));
        assert!((l - 0.25).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn srgb_round_trip(v in 0.0f64..=1.0) {
            let once = linear_to_srgb(srgb_to_linear(v));
            prop_assert!((once - v).abs() <= 1e-9);
            let back = srgb_to_linear(linear_to_srgb(v));
            prop_assert!((back - v).abs() <= 1e-9);
        }

        #[test]
        fn srgb_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(srgb_to_linear(lo) <= srgb_to_linear(hi));
            prop_assert!(linear_to_srgb(lo) <= linear_to_srgb(hi));
        }

        #[test]
        fn hsl_round_trip(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (h, s, l) = rgb_to_hsl(r, g, b);
            prop_assert!((0.0..360.0).contains(&h));
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((0.0..=1.0).contains(&l));
            let (r2, g2, b2) = hsl_to_rgb(h, s, l);
            prop_assert!((r - r2).abs() <= 1e-6);
            prop_assert!((g - g2).abs() <= 1e-6);
            prop_assert!((b - b2).abs() <= 1e-6);
        }
    }
}
