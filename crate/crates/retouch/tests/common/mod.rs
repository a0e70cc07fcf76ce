//! Shared fixtures for the integration suites.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use retouch::bench::{generate_tasks, BenchSplit, BenchTask};
use retouch::dsl::{
    EditOp, EditProgram, HslBand, HslField, LocalParam, MaskSpec, ScalarParam,
};
use retouch::raster::ImageBuffer;

/// A random valid program exercising every op kind with some
/// probability: scalars, a tone curve, HSL tweaks, and local groups.
/// Roughly one in forty comes out empty, which is also valid.
pub fn random_program(rng: &mut ChaCha8Rng) -> EditProgram {
    let mut ops = Vec::new();
    for param in ScalarParam::ALL {
        if rng.random_bool(0.3) {
            let (lo, hi) = param.range();
            ops.push(EditOp::Scalar { param, value: rng.random_range(lo..=hi) });
        }
    }
    if rng.random_bool(0.4) {
        let n = rng.random_range(2..=16);
        // Distinct grid points keep x strictly increasing.
        let mut grid = rand::seq::index::sample(rng, 101, n).into_vec();
        grid.sort_unstable();
        let points = grid
            .into_iter()
            .map(|i| (i as f64 / 100.0, rng.random_range(0.0..=1.0)))
            .collect();
        ops.push(EditOp::ToneCurve { points });
    }
    for band in HslBand::ALL {
        for field in [HslField::Hue, HslField::Sat, HslField::Lum] {
            if rng.random_bool(0.05) {
                ops.push(EditOp::Hsl { band, field, value: rng.random_range(-100.0..=100.0) });
            }
        }
    }
    for index in 1..=4u8 {
        if rng.random_bool(0.25) {
            let mask = random_mask(rng);
            let count = rng.random_range(1..=3);
            let params = rand::seq::index::sample(rng, LocalParam::ALL.len(), count)
                .into_iter()
                .map(|i| {
                    let param = LocalParam::ALL[i];
                    let (lo, hi) = param.range();
                    (param, rng.random_range(lo..=hi))
                })
                .collect();
            ops.push(EditOp::Local { index, mask, params });
        }
    }
    EditProgram::from_ops(ops).expect("generated ops are valid by construction")
}

pub fn random_mask(rng: &mut ChaCha8Rng) -> MaskSpec {
    if rng.random_bool(0.5) {
        MaskSpec::Radial {
            cx: rng.random_range(0.0..=1.0),
            cy: rng.random_range(0.0..=1.0),
            radius: rng.random_range(0.01..=1.0),
            feather: rng.random_range(0.0..=1.0),
        }
    } else {
        loop {
            let (x0, y0, x1, y1) = (
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=1.0),
            );
            if (x0, y0) != (x1, y1) {
                return MaskSpec::Linear { x0, y0, x1, y1 };
            }
        }
    }
}

/// Synthetic (source image, strong edit, goal) triples, round-robin
/// over the three task flavors.
pub fn synthetic_sources(n: usize, seed: u64) -> Vec<BenchTask> {
    let per_split = n.div_ceil(3);
    let by_split: Vec<Vec<BenchTask>> = BenchSplit::ALL
        .iter()
        .map(|&s| generate_tasks(s, per_split, seed))
        .collect();
    (0..per_split)
        .flat_map(|i| by_split.iter().map(move |tasks| tasks[i].clone()))
        .take(n)
        .collect()
}

/// A small image with plenty of tonal variety and nothing clipped.
pub fn random_image(width: usize, height: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let data = (0..width * height * 3)
        .map(|_| rng.random_range(0.02..=0.98))
        .collect();
    ImageBuffer::from_data(width, height, data).unwrap()
}
