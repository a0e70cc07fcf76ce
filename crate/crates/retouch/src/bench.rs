//! Procedural benchmark: synthetic befores, hidden ground-truth
//! programs, and goals measured from the ground truth itself.
//!
//! Three splits probe different skills. `quality` hides a few modest
//! global corrections behind numeric targets only. `style` applies a
//! strong look and names it with the style tag that best matches the
//! measured shift. `local` edits a single masked region and passes the
//! mask along as the region hint.
//!
//! Every goal target is measured by actually executing the ground
//! truth, so the benchmark can never drift from the engine.

use serde::{Deserialize, Serialize};
use std::fmt;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dsl::{EditOp, EditProgram, HslBand, HslField, LocalParam, MaskSpec, ScalarParam};
use crate::engine::execute;
use crate::goal::{GoalDescriptor, StyleTag, TargetDeltas};
use crate::metrics::{report, MetricError};
use crate::policy::{decode_action, policy_features, PolicyModel};
use crate::raster::{image_stats, FeatureStats, ImageBuffer};
use crate::seed::derive_seed_n;

pub const BENCH_WIDTH: usize = 96;
pub const BENCH_HEIGHT: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchSplit {
    Quality,
    Style,
    Local,
}

impl BenchSplit {
    pub const ALL: [BenchSplit; 3] = [BenchSplit::Quality, BenchSplit::Style, BenchSplit::Local];

    pub fn name(self) -> &'static str {
        match self {
            BenchSplit::Quality => "quality",
            BenchSplit::Style => "style",
            BenchSplit::Local => "local",
        }
    }

    fn index(self) -> u64 {
        match self {
            BenchSplit::Quality => 0,
            BenchSplit::Style => 1,
            BenchSplit::Local => 2,
        }
    }
}

impl fmt::Display for BenchSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BenchSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quality" => Ok(BenchSplit::Quality),
            "style" => Ok(BenchSplit::Style),
            "local" => Ok(BenchSplit::Local),
            other => Err(format!("unknown split `{other}` (quality, style, local)")),
        }
    }
}

/// One benchmark datum. The ground-truth program is hidden from the
/// policy at evaluation time; only `before` and `goal` are visible.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchTask {
    pub id: String,
    pub before: ImageBuffer,
    pub gt_program: EditProgram,
    pub goal: GoalDescriptor,
    pub split: BenchSplit,
}

/// Deterministic task list: task `i` depends only on
/// (seed, split, i), so any prefix of a larger run is reusable.
pub fn generate_tasks(split: BenchSplit, n: usize, seed: u64) -> Vec<BenchTask> {
    (0..n)
        .map(|i| {
            let task_seed = derive_seed_n(seed, "bench-task", &[split.index(), i as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
            let before = synth_image(&mut rng);
            let gt_program = match split {
                BenchSplit::Quality => quality_program(&mut rng),
                BenchSplit::Style => style_program(&mut rng),
                BenchSplit::Local => local_program(&mut rng),
            };
            let goal = measure_goal(&before, &gt_program, split);
            BenchTask {
                id: format!("{split}-{i:04}"),
                before,
                gt_program,
                goal,
                split,
            }
        })
        .collect()
}

/// Demonstration corpus for imitation and pair building. Each demo is
/// a benchmark-style edit finished with the freehand touches a real
/// retoucher reaches for: a gentle tone curve and a couple of per-band
/// HSL tweaks. A slider-only action head cannot express those ops, so
/// a policy fit on demos stays an approximation of the demonstrator
/// instead of a copy of the benchmark's ground truth.
pub fn generate_demo_tasks(n: usize, seed: u64) -> Vec<BenchTask> {
    (0..n)
        .map(|i| {
            let task_seed = derive_seed_n(seed, "demo-task", &[i as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
            let before = synth_image(&mut rng);
            let split = BenchSplit::ALL[i % BenchSplit::ALL.len()];
            let base = match split {
                BenchSplit::Quality => quality_program(&mut rng),
                BenchSplit::Style => style_program(&mut rng),
                BenchSplit::Local => local_program(&mut rng),
            };
            let mut ops = base.ops().to_vec();
            if rng.random::<f64>() < 0.7 {
                ops.push(freehand_curve(&mut rng));
            }
            ops.extend(freehand_hsl(&mut rng));
            let gt_program = EditProgram::from_ops(ops).unwrap();
            let goal = measure_goal(&before, &gt_program, split);
            BenchTask {
                id: format!("demo-{i:04}"),
                before,
                gt_program,
                goal,
                split,
            }
        })
        .collect()
}

/// Near-diagonal curve with two to four interior control points.
fn freehand_curve(rng: &mut ChaCha8Rng) -> EditOp {
    let count = rng.random_range(2..=4);
    let xs = rand::seq::index::sample(rng, 9, count);
    let mut points: Vec<(f64, f64)> = xs
        .into_iter()
        .map(|ix| {
            let x = (ix as f64 + 1.0) / 10.0;
            let y = (x + signed_magnitude(rng, 0.02, 0.12)).clamp(0.0, 1.0);
            (x, y)
        })
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    EditOp::ToneCurve { points }
}

/// Up to two HSL tweaks on distinct (band, field) slots.
fn freehand_hsl(rng: &mut ChaCha8Rng) -> Vec<EditOp> {
    const FIELDS: [HslField; 3] = [HslField::Hue, HslField::Sat, HslField::Lum];
    let count = rng.random_range(0..=2);
    rand::seq::index::sample(rng, HslBand::ALL.len() * FIELDS.len(), count)
        .into_iter()
        .map(|slot| EditOp::Hsl {
            band: HslBand::ALL[slot / FIELDS.len()],
            field: FIELDS[slot % FIELDS.len()],
            value: signed_magnitude(rng, 10.0, 50.0),
        })
        .collect()
}

/// Two-color gradient along a random axis, a few soft blobs, and a
/// little uniform noise. Everything stays inside [0, 1].
fn synth_image(rng: &mut ChaCha8Rng) -> ImageBuffer {
    let (w, h) = (BENCH_WIDTH, BENCH_HEIGHT);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (ax, ay) = (angle.cos(), angle.sin());
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..=0.95));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..=0.95));
    struct Blob {
        x: f64,
        y: f64,
        r: f64,
        color: [f64; 3],
    }
    let blobs: Vec<Blob> = (0..rng.random_range(2..=4))
        .map(|_| Blob {
            x: rng.random_range(0.0..=1.0),
            y: rng.random_range(0.0..=1.0),
            r: rng.random_range(0.1..=0.3),
            color: std::array::from_fn(|_| rng.random_range(0.05..=0.95)),
        })
        .collect();

    let mut data = Vec::with_capacity(w * h * 3);
    for row in 0..h {
        for col in 0..w {
            let px = (col as f64 + 0.5) / w as f64;
            let py = (row as f64 + 0.5) / h as f64;
            // Projection onto the axis, shifted into [0, 1].
            let t = ((px - 0.5) * ax + (py - 0.5) * ay + 0.5).clamp(0.0, 1.0);
            let mut rgb = [
                c0[0] + t * (c1[0] - c0[0]),
                c0[1] + t * (c1[1] - c0[1]),
                c0[2] + t * (c1[2] - c0[2]),
            ];
            for blob in &blobs {
                let d = ((px - blob.x).powi(2) + (py - blob.y).powi(2)).sqrt();
                if d < blob.r {
                    let u = 1.0 - (d / blob.r) * (d / blob.r);
                    let weight = 0.8 * u * u;
                    for c in 0..3 {
                        rgb[c] += weight * (blob.color[c] - rgb[c]);
                    }
                }
            }
            for c in rgb {
                let noise = rng.random_range(-0.02..=0.02);
                data.push((c + noise).clamp(0.0, 1.0));
            }
        }
    }
    ImageBuffer::from_data(w, h, data).unwrap()
}

/// Magnitude in slider units with a random sign; exposure dims divide
/// by 20 so the EV stays proportionate to the sliders.
fn signed_magnitude(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let u = rng.random_range(lo..=hi);
    if rng.random::<bool>() {
        u
    } else {
        -u
    }
}

fn scalar_ops(rng: &mut ChaCha8Rng, pool: &[ScalarParam], count: usize, lo: f64, hi: f64) -> Vec<EditOp> {
    rand::seq::index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|idx| {
            let param = pool[idx];
            let u = signed_magnitude(rng, lo, hi);
            let value = if param == ScalarParam::Exposure { u / 20.0 } else { u };
            EditOp::Scalar { param, value }
        })
        .collect()
}

/// A handful of modest corrections drawn from every global slider.
fn quality_program(rng: &mut ChaCha8Rng) -> EditProgram {
    let count = rng.random_range(2..=4);
    let ops = scalar_ops(rng, &ScalarParam::ALL, count, 2.0, 25.0);
    EditProgram::from_ops(ops).unwrap()
}

/// A strong look built from the color- and contrast-bearing sliders.
fn style_program(rng: &mut ChaCha8Rng) -> EditProgram {
    const POOL: [ScalarParam; 6] = [
        ScalarParam::Temperature,
        ScalarParam::Tint,
        ScalarParam::Contrast,
        ScalarParam::Saturation,
        ScalarParam::Vibrance,
        ScalarParam::Highlights,
    ];
    let count = rng.random_range(3..=6);
    let ops = scalar_ops(rng, &POOL, count, 40.0, 80.0);
    EditProgram::from_ops(ops).unwrap()
}

/// One feathered radial region with a few adjustments inside it.
fn local_program(rng: &mut ChaCha8Rng) -> EditProgram {
    let mask = MaskSpec::Radial {
        cx: rng.random_range(0.3..=0.7),
        cy: rng.random_range(0.3..=0.7),
        radius: rng.random_range(0.2..=0.45),
        feather: rng.random_range(0.2..=0.6),
    };
    const POOL: [LocalParam; 3] =
        [LocalParam::Temperature, LocalParam::Exposure, LocalParam::Saturation];
    let count = rng.random_range(1..=3);
    let params: Vec<(LocalParam, f64)> = rand::seq::index::sample(rng, POOL.len(), count)
        .into_iter()
        .map(|idx| {
            let param = POOL[idx];
            let u = signed_magnitude(rng, 20.0, 60.0);
            let value = if param == LocalParam::Exposure { u / 20.0 } else { u };
            (param, value)
        })
        .collect();
    EditProgram::from_ops(vec![EditOp::Local { index: 1, mask, params }]).unwrap()
}

/// Executes the ground truth and states the measured statistic shifts
/// as the goal. Style tasks also pick the tag that best describes the
/// shift; local tasks pass the edited mask as the region hint.
fn measure_goal(before: &ImageBuffer, gt: &EditProgram, split: BenchSplit) -> GoalDescriptor {
    let before_stats = image_stats(before);
    let after_stats = image_stats(&execute(before, gt));
    let clamp = |v: f64| v.clamp(-1.0, 1.0);
    let targets = TargetDeltas {
        mean_luma: Some(clamp(after_stats.mean_luma - before_stats.mean_luma)),
        std_luma: Some(clamp(after_stats.std_luma - before_stats.std_luma)),
        mean_saturation: Some(clamp(after_stats.mean_saturation - before_stats.mean_saturation)),
        warmth: Some(clamp(after_stats.warmth - before_stats.warmth)),
    };
    let style_tag = match split {
        BenchSplit::Style => dominant_style(&before_stats, &after_stats),
        _ => StyleTag::Neutral,
    };
    let region_hint = match split {
        BenchSplit::Local => gt.ops().iter().find_map(|op| match op {
            EditOp::Local { mask, .. } => Some(*mask),
            _ => None,
        }),
        _ => None,
    };
    let goal = GoalDescriptor { style_tag, targets, region_hint, note: None };
    debug_assert!(goal.validate().is_ok());
    goal
}

/// The tag whose signature shift the ground truth exhibits most.
fn dominant_style(before: &FeatureStats, after: &FeatureStats) -> StyleTag {
    let d_warmth = after.warmth - before.warmth;
    let d_sat = after.mean_saturation - before.mean_saturation;
    let d_std = after.std_luma - before.std_luma;
    let candidates = [
        (StyleTag::Warm, d_warmth),
        (StyleTag::Cool, -d_warmth),
        (StyleTag::Vivid, d_sat),
        (StyleTag::Dramatic, d_std),
        (StyleTag::Matte, -d_std),
        (StyleTag::Bw, 0.1 - after.mean_saturation),
    ];
    candidates
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

/// Per-split metric means plus an `overall` row averaged over every
/// task (not over split means).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub split: String,
    pub n: usize,
    pub l1: f64,
    pub l2: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// The `overall` row.
    pub fn overall(&self) -> &BenchRow {
        self.rows.last().expect("report always has an overall row")
    }

    pub fn row(&self, split: BenchSplit) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.split == split.name())
    }

    /// Stable CSV: fixed column order, split rows in canonical order,
    /// floats through Display. Byte-identical for identical inputs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,n,l1,l2,psnr,ssim\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.split, r.n, r.l1, r.l2, r.psnr, r.ssim
            ));
        }
        out
    }
}

/// Scores the policy's deterministic head on the tasks.
pub fn evaluate(policy: &PolicyModel, tasks: &[BenchTask]) -> Result<BenchReport, MetricError> {
    evaluate_with(tasks, |task| {
        let features = policy_features(&image_stats(&task.before), &task.goal);
        decode_action(&policy.mean_action(&features), task.goal.region_hint.as_ref())
    })
}

/// Evaluation seam: any task-to-program function can stand in for the
/// policy, which is how the oracle fixed points are checked.
pub fn evaluate_with<F>(tasks: &[BenchTask], act: F) -> Result<BenchReport, MetricError>
where
    F: Fn(&BenchTask) -> EditProgram,
{
    let mut per_task: Vec<(BenchSplit, [f64; 4])> = Vec::with_capacity(tasks.len());
    for task in tasks {
        let predicted = execute(&task.before, &act(task));
        let truth = execute(&task.before, &task.gt_program);
        let m = report(&predicted, &truth)?;
        per_task.push((task.split, [m.l1, m.l2, m.psnr, m.ssim]));
    }
    let mut rows = Vec::new();
    for split in BenchSplit::ALL {
        let subset: Vec<&[f64; 4]> =
            per_task.iter().filter(|(s, _)| *s == split).map(|(_, m)| m).collect();
        if !subset.is_empty() {
            rows.push(mean_row(split.name(), &subset));
        }
    }
    let all: Vec<&[f64; 4]> = per_task.iter().map(|(_, m)| m).collect();
    rows.push(mean_row("overall", &all));
    Ok(BenchReport { rows })
}

fn mean_row(split: &str, metrics: &[&[f64; 4]]) -> BenchRow {
    let n = metrics.len();
    let mut sums = [0.0; 4];
    for m in metrics {
        for (sum, v) in sums.iter_mut().zip(m.iter()) {
            *sum += v;
        }
    }
    let k = n as f64;
    BenchRow {
        split: split.to_string(),
        n,
        l1: sums[0] / k,
        l2: sums[1] / k,
        psnr: sums[2] / k,
        ssim: sums[3] / k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PSNR_CAP_DB;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_tasks(BenchSplit::Style, 4, 42);
        let b = generate_tasks(BenchSplit::Style, 4, 42);
        assert_eq!(a, b);
        let c = generate_tasks(BenchSplit::Style, 4, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn task_prefix_is_stable() {
        let short = generate_tasks(BenchSplit::Quality, 3, 7);
        let long = generate_tasks(BenchSplit::Quality, 10, 7);
        assert_eq!(short[..], long[..3]);
    }

    #[test]
    fn demo_tasks_add_ops_outside_the_action_head() {
        let demos = generate_demo_tasks(24, 3);
        assert_eq!(demos.len(), 24);
        let freehand = demos
            .iter()
            .filter(|t| {
                t.gt_program
                    .ops()
                    .iter()
                    .any(|op| matches!(op, EditOp::ToneCurve { .. } | EditOp::Hsl { .. }))
            })
            .count();
        assert!(freehand > 12, "only {freehand}/24 demos carry freehand ops");
        for task in &demos {
            assert!(task.goal.validate().is_ok());
        }
        assert_eq!(demos[..6], generate_demo_tasks(6, 3)[..]);
    }

    #[test]
    fn images_stay_in_range() {
        for task in generate_tasks(BenchSplit::Local, 3, 1) {
            assert_eq!(task.before.width(), BENCH_WIDTH);
            assert_eq!(task.before.height(), BENCH_HEIGHT);
            assert!(task.before.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn goal_targets_match_a_fresh_execution() {
        for split in BenchSplit::ALL {
            for task in generate_tasks(split, 4, 9) {
                let before = image_stats(&task.before);
                let after = image_stats(&execute(&task.before, &task.gt_program));
                let measured = [
                    after.mean_luma - before.mean_luma,
                    after.std_luma - before.std_luma,
                    after.mean_saturation - before.mean_saturation,
                    after.warmth - before.warmth,
                ];
                let stored = task.goal.targets.as_array();
                for (m, s) in measured.iter().zip(stored) {
                    let s = s.expect("bench goals state all four targets");
                    assert!(
                        (m.clamp(-1.0, 1.0) - s).abs() < 1e-6,
                        "{}: measured {m} vs stored {s}",
                        task.id
                    );
                }
            }
        }
    }

    #[test]
    fn split_shapes_are_as_documented() {
        for task in generate_tasks(BenchSplit::Quality, 6, 3) {
            assert_eq!(task.goal.style_tag, StyleTag::Neutral);
            assert!(task.goal.region_hint.is_none());
            let ops = task.gt_program.ops();
            assert!((2..=4).contains(&ops.len()));
            assert!(ops.iter().all(|op| matches!(op, EditOp::Scalar { .. })));
        }
        for task in generate_tasks(BenchSplit::Style, 6, 3) {
            assert_ne!(task.goal.style_tag, StyleTag::Neutral);
            assert!(task.goal.region_hint.is_none());
            assert!((3..=6).contains(&task.gt_program.ops().len()));
        }
        for task in generate_tasks(BenchSplit::Local, 6, 3) {
            assert_eq!(task.goal.style_tag, StyleTag::Neutral);
            let hint = task.goal.region_hint.expect("local tasks carry a region hint");
            let ops = task.gt_program.ops();
            assert_eq!(ops.len(), 1);
            match &ops[0] {
                EditOp::Local { mask, params, .. } => {
                    assert_eq!(*mask, hint);
                    assert!((1..=3).contains(&params.len()));
                }
                other => panic!("expected a local op, found {other:?}"),
            }
        }
    }

    #[test]
    fn oracle_policy_is_a_fixed_point() {
        let mut tasks = generate_tasks(BenchSplit::Quality, 2, 5);
        tasks.extend(generate_tasks(BenchSplit::Style, 2, 5));
        tasks.extend(generate_tasks(BenchSplit::Local, 2, 5));
        let report = evaluate_with(&tasks, |t| t.gt_program.clone()).unwrap();
        let overall = report.overall();
        assert_eq!(overall.l1, 0.0);
        assert_eq!(overall.l2, 0.0);
        assert_eq!(overall.psnr, PSNR_CAP_DB);
        assert_eq!(overall.ssim, 1.0);
        assert_eq!(report.rows.len(), 4);
    }

    #[test]
    fn evaluate_matches_the_mean_action_seam() {
        let policy = PolicyModel::init();
        let tasks = generate_tasks(BenchSplit::Style, 3, 11);
        let a = evaluate(&policy, &tasks).unwrap();
        let b = evaluate_with(&tasks, |task| {
            let features = policy_features(&image_stats(&task.before), &task.goal);
            decode_action(&policy.mean_action(&features), task.goal.region_hint.as_ref())
        })
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_is_byte_deterministic() {
        let tasks = generate_tasks(BenchSplit::Quality, 3, 2);
        let policy = PolicyModel::init();
        let a = evaluate(&policy, &tasks).unwrap().to_csv();
        let b = evaluate(&policy, &tasks).unwrap().to_csv();
        assert_eq!(a, b);
        assert!(a.starts_with("split,n,l1,l2,psnr,ssim\n"));
        assert_eq!(a.lines().count(), 3); // header, quality, overall
        assert!(a.lines().nth(1).unwrap().starts_with("quality,3,"));
        assert!(a.lines().nth(2).unwrap().starts_with("overall,3,"));
    }
}
