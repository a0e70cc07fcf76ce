//! The editing policy: from image statistics and a goal to an edit.
//!
//! The policy is a linear Gaussian head over a fixed feature vector.
//! Its raw action lives in [-1, 1] per dimension and decodes to a
//! 10-slider global program plus an optional single local group when
//! the goal names a region. Tiny decoded adjustments are dropped so
//! programs stay sparse.
//!
//! Training happens in two stages: ridge-regression behavior cloning
//! on demonstration (features, action) pairs, then group-relative
//! policy optimization against a reward model. Rollout sampling is
//! seeded per (step, task, sample), so results are bitwise
//! reproducible at any thread count.

use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::dsl::{EditOp, EditProgram, LocalParam, MaskSpec, ScalarParam};
use crate::engine::execute;
use crate::goal::{GoalDescriptor, GOAL_ENCODE_DIM};
use crate::grm::GrmModel;
use crate::raster::{image_stats, FeatureStats, ImageBuffer, HIST_BINS};
use crate::seed::derive_seed_n;

/// Raw action layout. The first ten entries are the global sliders;
/// the last three fill the local group when a region hint exists.
pub const ACTION_DIM: usize = 13;
pub const ACTION_NAMES: [&str; ACTION_DIM] = [
    "exposure",
    "contrast",
    "temperature",
    "tint",
    "highlights",
    "shadows",
    "whites",
    "blacks",
    "vibrance",
    "saturation",
    "local_exposure",
    "local_saturation",
    "local_temperature",
];

/// Feature layout: six summary statistics, eight luma histogram bins,
/// then the goal encoding.
pub const POLICY_FEATURE_DIM: usize = 6 + HIST_BINS + GOAL_ENCODE_DIM;

/// Decoded adjustments smaller than this (in the op's own units:
/// EV for exposure, slider units otherwise) are dropped from the
/// program.
pub const SPARSITY_THRESHOLD: f64 = 0.5;

const LOG_STD_MIN: f64 = -6.0;
const LOG_STD_MAX: f64 = 1.0;

/// Scale from clamped raw value to native units per action dim.
fn action_scale(dim: usize) -> f64 {
    match ACTION_NAMES[dim] {
        "exposure" | "local_exposure" => 5.0,
        _ => 100.0,
    }
}

fn global_param(dim: usize) -> ScalarParam {
    match dim {
        0 => ScalarParam::Exposure,
        1 => ScalarParam::Contrast,
        2 => ScalarParam::Temperature,
        3 => ScalarParam::Tint,
        4 => ScalarParam::Highlights,
        5 => ScalarParam::Shadows,
        6 => ScalarParam::Whites,
        7 => ScalarParam::Blacks,
        8 => ScalarParam::Vibrance,
        9 => ScalarParam::Saturation,
        _ => unreachable!("dim {dim} is not a global slider"),
    }
}

/// Fixed feature vector the policy conditions on.
pub fn policy_features(stats: &FeatureStats, goal: &GoalDescriptor) -> [f64; POLICY_FEATURE_DIM] {
    let mut x = [0.0; POLICY_FEATURE_DIM];
    x[0] = stats.mean_luma;
    x[1] = stats.std_luma;
    x[2] = stats.mean_saturation;
    x[3] = stats.warmth;
    x[4] = stats.clipped_high_frac;
    x[5] = stats.clipped_low_frac;
    x[6..6 + HIST_BINS].copy_from_slice(&stats.luma_hist);
    x[6 + HIST_BINS..].copy_from_slice(&goal.encode());
    x
}

/// Turns a raw action into a concrete program. The raw vector is
/// clamped to [-1, 1], scaled to native units, and pruned by
/// [`SPARSITY_THRESHOLD`]. The local triple only applies when the goal
/// provided a region; with nothing above threshold there the local
/// group vanishes entirely.
pub fn decode_action(raw: &[f64; ACTION_DIM], region_hint: Option<&MaskSpec>) -> EditProgram {
    let c: Vec<f64> = raw.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let mut ops = Vec::new();
    for dim in 0..10 {
        let value = c[dim] * action_scale(dim);
        if value.abs() >= SPARSITY_THRESHOLD {
            ops.push(EditOp::Scalar { param: global_param(dim), value });
        }
    }
    if let Some(mask) = region_hint {
        let mut params = Vec::new();
        for (dim, param) in [
            (12, LocalParam::Temperature),
            (10, LocalParam::Exposure),
            (11, LocalParam::Saturation),
        ] {
            let value = c[dim] * action_scale(dim);
            if value.abs() >= SPARSITY_THRESHOLD {
                params.push((param, value));
            }
        }
        if !params.is_empty() {
            ops.push(EditOp::Local { index: 1, mask: *mask, params });
        }
    }
    EditProgram::from_validated(ops)
}

/// Raw action that decodes (up to sparsity pruning) to `program`.
/// Curve and HSL ops have no action slot and are ignored.
pub fn encode_program(program: &EditProgram) -> [f64; ACTION_DIM] {
    let mut raw = [0.0; ACTION_DIM];
    for op in program.ops() {
        match op {
            EditOp::Scalar { param, value } => {
                let dim = (0..10).find(|&d| global_param(d) == *param).unwrap();
                raw[dim] = value / action_scale(dim);
            }
            EditOp::Local { params, .. } => {
                for (param, value) in params {
                    let dim = match param {
                        LocalParam::Exposure => 10,
                        LocalParam::Saturation => 11,
                        LocalParam::Temperature => 12,
                    };
                    raw[dim] = value / action_scale(dim);
                }
            }
            EditOp::ToneCurve { .. } | EditOp::Hsl { .. } => {}
        }
    }
    raw
}

/// 1 when every raw component already sits in [-1, 1], else 0. Keeps
/// sampled actions from drifting off the representable box.
pub fn format_reward(raw: &[f64; ACTION_DIM]) -> f64 {
    if raw.iter().all(|v| (-1.0..=1.0).contains(v)) {
        1.0
    } else {
        0.0
    }
}

/// One behavior-cloning demonstration.
#[derive(Clone, Debug, PartialEq)]
pub struct SftDemo {
    pub features: [f64; POLICY_FEATURE_DIM],
    pub action: [f64; ACTION_DIM],
}

/// One reinforcement-learning context: an image to edit and the goal
/// to edit it toward.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutTask {
    pub before: ImageBuffer,
    pub goal: GoalDescriptor,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no demonstrations")]
    NoDemos,
    #[error("no rollout tasks")]
    NoTasks,
    #[error("ridge system is not positive definite (lambda too small?)")]
    Singular,
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad model file: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SftConfig {
    /// Ridge strength; the normal equations are normalized by the demo
    /// count, so lambda means the same thing at any corpus size.
    pub lambda: f64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self { lambda: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrpoConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Samples per task per step; advantages are normalized within
    /// this group.
    pub group_size: usize,
    /// Weight of the KL penalty to the policy as it stood when
    /// training began. The reward only sees a few image statistics, so
    /// whole subspaces of the action space are reward-neutral; without
    /// this anchor the update noise random-walks along them.
    pub kl_beta: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self { steps: 200, learning_rate: 0.01, group_size: 8, kl_beta: 0.15 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GrpoTrace {
    /// Mean reward across all samples, one entry per step.
    pub mean_rewards: Vec<f64>,
    /// Mean KL to the reference policy across tasks, one entry per
    /// step, measured before that step's update.
    pub mean_kls: Vec<f64>,
    /// Task groups whose rewards had zero spread (their advantages
    /// were zeroed). Persistent degeneracy means the reward cannot
    /// tell the samples apart.
    pub degenerate_groups: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    /// Row-major [ACTION_DIM x POLICY_FEATURE_DIM].
    mean_map: Vec<f64>,
    log_std: [f64; ACTION_DIM],
}

impl PolicyModel {
    /// Zero-mean policy with moderate exploration noise.
    pub fn init() -> Self {
        Self {
            mean_map: vec![0.0; ACTION_DIM * POLICY_FEATURE_DIM],
            log_std: [-1.0; ACTION_DIM],
        }
    }

    pub fn log_std(&self) -> &[f64; ACTION_DIM] {
        &self.log_std
    }

    /// Deterministic head: the Gaussian mean.
    pub fn mean_action(&self, features: &[f64; POLICY_FEATURE_DIM]) -> [f64; ACTION_DIM] {
        let mut out = [0.0; ACTION_DIM];
        for (d, slot) in out.iter_mut().enumerate() {
            let row = &self.mean_map[d * POLICY_FEATURE_DIM..(d + 1) * POLICY_FEATURE_DIM];
            *slot = row.iter().zip(features).map(|(w, x)| w * x).sum();
        }
        out
    }

    /// Draws one action; consumes exactly [`ACTION_DIM`] normal
    /// variates from `rng`.
    pub fn sample_action(
        &self,
        features: &[f64; POLICY_FEATURE_DIM],
        rng: &mut ChaCha8Rng,
    ) -> [f64; ACTION_DIM] {
        let mut raw = self.mean_action(features);
        for (d, slot) in raw.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *slot += self.log_std[d].exp() * z;
        }
        raw
    }

    /// Ridge-regression behavior cloning. Normal equations are
    /// normalized by the demo count, so a corpus repeated k times
    /// fits the same map.
    pub fn fit_sft(&mut self, demos: &[SftDemo], cfg: &SftConfig) -> Result<(), PolicyError> {
        if demos.is_empty() {
            return Err(PolicyError::NoDemos);
        }
        let n = demos.len() as f64;
        let f = POLICY_FEATURE_DIM;
        // A = X'X/N + lambda I, B = X'T/N.
        let mut a = vec![0.0; f * f];
        let mut b = vec![0.0; f * ACTION_DIM];
        for demo in demos {
            for i in 0..f {
                let xi = demo.features[i];
                for j in 0..f {
                    a[i * f + j] += xi * demo.features[j];
                }
                for d in 0..ACTION_DIM {
                    b[i * ACTION_DIM + d] += xi * demo.action[d];
                }
            }
        }
        for v in a.iter_mut().chain(b.iter_mut()) {
            *v /= n;
        }
        for i in 0..f {
            a[i * f + i] += cfg.lambda;
        }
        cholesky_in_place(&mut a, f)?;
        // Solve A W = B column by column; mean_map rows are W columns.
        let mut w = vec![0.0; f];
        let mut y = vec![0.0; f];
        for d in 0..ACTION_DIM {
            for i in 0..f {
                let mut sum = b[i * ACTION_DIM + d];
                for k in 0..i {
                    sum -= a[i * f + k] * y[k];
                }
                y[i] = sum / a[i * f + i];
            }
            for i in (0..f).rev() {
                let mut sum = y[i];
                for k in i + 1..f {
                    sum -= a[k * f + i] * w[k];
                }
                w[i] = sum / a[i * f + i];
            }
            self.mean_map[d * POLICY_FEATURE_DIM..(d + 1) * POLICY_FEATURE_DIM]
                .copy_from_slice(&w);
        }
        self.log_std = [-1.0; ACTION_DIM];
        Ok(())
    }

    /// Group-relative policy gradient against a reward model: the
    /// reward is the model's score of the rendered edit plus the
    /// format bonus.
    pub fn train_grpo(
        &mut self,
        grm: &GrmModel,
        tasks: &[RolloutTask],
        cfg: &GrpoConfig,
        seed: u64,
    ) -> Result<GrpoTrace, PolicyError> {
        let before_stats: Vec<FeatureStats> =
            tasks.iter().map(|t| image_stats(&t.before)).collect();
        self.train_grpo_with(tasks, cfg, seed, |task_idx, task, raw, after| {
            grm.score(&task.goal, &before_stats[task_idx], &image_stats(after))
                + format_reward(raw)
        })
    }

    /// GRPO with an arbitrary reward function, the seam both the
    /// production reward and the tests plug into. `reward(task_idx,
    /// task, raw, after)` must be pure; it runs inside the parallel
    /// rollout.
    pub fn train_grpo_with<F>(
        &mut self,
        tasks: &[RolloutTask],
        cfg: &GrpoConfig,
        seed: u64,
        reward: F,
    ) -> Result<GrpoTrace, PolicyError>
    where
        F: Fn(usize, &RolloutTask, &[f64; ACTION_DIM], &ImageBuffer) -> f64 + Sync,
    {
        if tasks.is_empty() {
            return Err(PolicyError::NoTasks);
        }
        let features: Vec<[f64; POLICY_FEATURE_DIM]> = tasks
            .iter()
            .map(|t| policy_features(&image_stats(&t.before), &t.goal))
            .collect();
        let ref_means: Vec<[f64; ACTION_DIM]> =
            features.iter().map(|x| self.mean_action(x)).collect();
        let ref_log_std = self.log_std;
        let k = cfg.group_size;
        let mut trace = GrpoTrace::default();

        for step in 0..cfg.steps {
            // Ordered parallel rollout: seeds are fixed per
            // (step, task, sample) before anything runs.
            let flat: Vec<([f64; ACTION_DIM], f64)> = (0..tasks.len() * k)
                .into_par_iter()
                .map(|idx| {
                    let (t, i) = (idx / k, idx % k);
                    let sample_seed =
                        derive_seed_n(seed, "grpo", &[step as u64, t as u64, i as u64]);
                    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
                    let raw = self.sample_action(&features[t], &mut rng);
                    let program = decode_action(&raw, tasks[t].goal.region_hint.as_ref());
                    let after = execute(&tasks[t].before, &program);
                    let r = reward(t, &tasks[t], &raw, &after);
                    (raw, r)
                })
                .collect();

            let mut samples: Vec<([f64; POLICY_FEATURE_DIM], [f64; ACTION_DIM], f64)> =
                Vec::with_capacity(flat.len());
            let mut reward_total = 0.0;
            for t in 0..tasks.len() {
                let group = &flat[t * k..(t + 1) * k];
                let mean: f64 = group.iter().map(|(_, r)| r).sum::<f64>() / k as f64;
                let var: f64 =
                    group.iter().map(|(_, r)| (r - mean) * (r - mean)).sum::<f64>() / k as f64;
                let std = var.sqrt();
                for (raw, r) in group {
                    reward_total += r;
                    let advantage = if std == 0.0 { 0.0 } else { (r - mean) / (std + 1e-8) };
                    samples.push((features[t], *raw, advantage));
                }
                if std == 0.0 {
                    trace.degenerate_groups += 1;
                }
            }

            let grad = self.surrogate_grad(&samples);
            let (kl, kl_grad) = self.kl_to_reference(&features, &ref_means, &ref_log_std);
            let params = self.params_flat();
            let updated: Vec<f64> = params
                .iter()
                .zip(grad.iter().zip(&kl_grad))
                .map(|(p, (g, kg))| p + cfg.learning_rate * (g - cfg.kl_beta * kg))
                .collect();
            if updated.iter().any(|v| !v.is_finite()) {
                return Err(PolicyError::Diverged { step });
            }
            self.set_params_flat(&updated);
            for v in &mut self.log_std {
                *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
            }
            trace.mean_rewards.push(reward_total / flat.len() as f64);
            trace.mean_kls.push(kl);
        }
        Ok(trace)
    }

    /// Gradient of the mean advantage-weighted log-likelihood over the
    /// given samples, in flat parameter order.
    fn surrogate_grad(
        &self,
        samples: &[([f64; POLICY_FEATURE_DIM], [f64; ACTION_DIM], f64)],
    ) -> Vec<f64> {
        let mut grad = vec![0.0; ACTION_DIM * POLICY_FEATURE_DIM + ACTION_DIM];
        let n = samples.len() as f64;
        for (x, raw, advantage) in samples {
            let mean = self.mean_action(x);
            for d in 0..ACTION_DIM {
                let sigma = self.log_std[d].exp();
                let z = (raw[d] - mean[d]) / sigma;
                let coeff = advantage * z / sigma / n;
                let row = &mut grad[d * POLICY_FEATURE_DIM..(d + 1) * POLICY_FEATURE_DIM];
                for (slot, xi) in row.iter_mut().zip(x) {
                    *slot += coeff * xi;
                }
                grad[ACTION_DIM * POLICY_FEATURE_DIM + d] += advantage * (z * z - 1.0) / n;
            }
        }
        grad
    }

    /// Mean KL divergence from this policy to the reference over the
    /// task features, with its gradient in flat parameter order. Both
    /// Gaussians are diagonal, so the divergence is closed-form.
    fn kl_to_reference(
        &self,
        features: &[[f64; POLICY_FEATURE_DIM]],
        ref_means: &[[f64; ACTION_DIM]],
        ref_log_std: &[f64; ACTION_DIM],
    ) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; ACTION_DIM * POLICY_FEATURE_DIM + ACTION_DIM];
        let mut total = 0.0;
        let n = features.len() as f64;
        for (x, ref_mean) in features.iter().zip(ref_means) {
            let mean = self.mean_action(x);
            for d in 0..ACTION_DIM {
                let var = (2.0 * self.log_std[d]).exp();
                let ref_var = (2.0 * ref_log_std[d]).exp();
                let dm = mean[d] - ref_mean[d];
                total += ref_log_std[d] - self.log_std[d] + (var + dm * dm) / (2.0 * ref_var) - 0.5;
                let coeff = dm / ref_var / n;
                let row = &mut grad[d * POLICY_FEATURE_DIM..(d + 1) * POLICY_FEATURE_DIM];
                for (slot, xi) in row.iter_mut().zip(x) {
                    *slot += coeff * xi;
                }
                grad[ACTION_DIM * POLICY_FEATURE_DIM + d] += (var / ref_var - 1.0) / n;
            }
        }
        (total / n, grad)
    }

    /// Value whose gradient [`Self::surrogate_grad`] computes; used to
    /// cross-check the analytic form.
    #[cfg(test)]
    fn surrogate_value(
        &self,
        samples: &[([f64; POLICY_FEATURE_DIM], [f64; ACTION_DIM], f64)],
    ) -> f64 {
        let n = samples.len() as f64;
        samples
            .iter()
            .map(|(x, raw, advantage)| {
                let mean = self.mean_action(x);
                let logp: f64 = (0..ACTION_DIM)
                    .map(|d| {
                        let sigma = self.log_std[d].exp();
                        let z = (raw[d] - mean[d]) / sigma;
                        -0.5 * z * z - self.log_std[d]
                    })
                    .sum();
                advantage * logp
            })
            .sum::<f64>()
            / n
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = self.mean_map.clone();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        let m = ACTION_DIM * POLICY_FEATURE_DIM;
        assert_eq!(params.len(), m + ACTION_DIM, "parameter count mismatch");
        self.mean_map.copy_from_slice(&params[..m]);
        self.log_std.copy_from_slice(&params[m..]);
    }

    /// Plain-text snapshot; floats round-trip exactly through Display.
    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let mut out = String::from("policy-model v1\n");
        let stds: Vec<String> = self.log_std.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "log_std {}", stds.join(" "));
        for d in 0..ACTION_DIM {
            let row: Vec<String> = self.mean_map
                [d * POLICY_FEATURE_DIM..(d + 1) * POLICY_FEATURE_DIM]
                .iter()
                .map(f64::to_string)
                .collect();
            let _ = writeln!(out, "mean {}", row.join(" "));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some("policy-model v1") => {}
            other => {
                return Err(PolicyError::Format(format!(
                    "expected header `policy-model v1`, found {other:?}"
                )))
            }
        }
        let stds = parse_floats(lines.next(), "log_std", ACTION_DIM)?;
        let mut mean_map = Vec::with_capacity(ACTION_DIM * POLICY_FEATURE_DIM);
        for _ in 0..ACTION_DIM {
            mean_map.extend(parse_floats(lines.next(), "mean", POLICY_FEATURE_DIM)?);
        }
        let mut log_std = [0.0; ACTION_DIM];
        log_std.copy_from_slice(&stds);
        Ok(Self { mean_map, log_std })
    }
}

/// In-place lower Cholesky of a row-major symmetric matrix.
fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<(), PolicyError> {
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(PolicyError::Singular);
                }
                a[i * n + i] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    Ok(())
}

fn parse_floats(line: Option<&str>, tag: &str, count: usize) -> Result<Vec<f64>, PolicyError> {
    let line = line.ok_or_else(|| PolicyError::Format(format!("missing `{tag}` line")))?;
    let rest = line
        .strip_prefix(tag)
        .ok_or_else(|| PolicyError::Format(format!("expected `{tag}` line, found `{line}`")))?;
    let values: Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
    let values = values.map_err(|e| PolicyError::Format(format!("bad float in `{tag}`: {e}")))?;
    if values.len() != count {
        return Err(PolicyError::Format(format!(
            "`{tag}` has {} values, expected {count}",
            values.len()
        )));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_program;
    use crate::goal::StyleTag;

    fn demo_goal() -> GoalDescriptor {
        GoalDescriptor::tagged(StyleTag::Warm)
    }

    fn gradient_task(seed: u64) -> RolloutTask {
        let (w, h) = (20, 14);
        let mut data = Vec::with_capacity(w * h * 3);
        let phase = seed as f64 * 0.37;
        for row in 0..h {
            for col in 0..w {
                let t = (col as f64 + 0.5) / w as f64;
                let u = (row as f64 + 0.5) / h as f64;
                data.extend_from_slice(&[
                    (0.2 + 0.6 * t + 0.05 * phase.sin()).clamp(0.0, 1.0),
                    (0.3 + 0.4 * u).clamp(0.0, 1.0),
                    (0.7 - 0.5 * t).clamp(0.0, 1.0),
                ]);
            }
        }
        RolloutTask {
            before: ImageBuffer::from_data(w, h, data).unwrap(),
            goal: demo_goal(),
        }
    }

    #[test]
    fn feature_layout_is_stats_hist_goal() {
        let img = ImageBuffer::constant(8, 8, [0.5, 0.25, 0.125]).unwrap();
        let stats = image_stats(&img);
        let goal = demo_goal();
        let x = policy_features(&stats, &goal);
        assert_eq!(x[0], stats.mean_luma);
        assert_eq!(x[3], stats.warmth);
        assert_eq!(&x[6..14], &stats.luma_hist);
        assert_eq!(&x[14..29], &goal.encode());
    }

    #[test]
    fn decode_keeps_only_meaningful_ops() {
        let mut raw = [0.0; ACTION_DIM];
        raw[0] = 0.2; // exposure: 1.0 EV, kept
        raw[1] = 0.004; // contrast: 0.4 units, dropped
        raw[9] = -0.005; // saturation: -0.5 units, kept (boundary)
        let p = decode_action(&raw, None);
        assert_eq!(crate::dsl::serialize_program(&p), "{exposure=+1; saturation=-0.5}");
    }

    #[test]
    fn decode_clamps_out_of_box_values() {
        let mut raw = [0.0; ACTION_DIM];
        raw[0] = 3.0; // way past the box: clamps to 1.0 -> 5 EV
        let p = decode_action(&raw, None);
        assert_eq!(crate::dsl::serialize_program(&p), "{exposure=+5}");
        assert_eq!(format_reward(&raw), 0.0);
    }

    #[test]
    fn local_triple_needs_a_region_hint() {
        let mut raw = [0.0; ACTION_DIM];
        raw[10] = 0.4; // 2 EV local exposure
        raw[11] = 0.001; // 0.1 local saturation: dropped
        raw[12] = -0.3; // -30 local temperature
        assert!(decode_action(&raw, None).is_empty());

        let mask = MaskSpec::Radial { cx: 0.5, cy: 0.5, radius: 0.3, feather: 0.2 };
        let p = decode_action(&raw, Some(&mask));
        assert_eq!(
            crate::dsl::serialize_program(&p),
            "{local1.mask.radial=(0.5,0.5,0.3,0.2); local1.temperature=-30; local1.exposure=+2}"
        );

        // All three below threshold: no local op at all.
        let tiny = [0.0; ACTION_DIM];
        assert!(decode_action(&tiny, Some(&mask)).is_empty());
    }

    #[test]
    fn format_reward_boundary() {
        let mut raw = [1.0; ACTION_DIM];
        raw[5] = -1.0;
        assert_eq!(format_reward(&raw), 1.0);
        raw[5] = -1.0000001;
        assert_eq!(format_reward(&raw), 0.0);
    }

    #[test]
    fn encode_inverts_decode_on_kept_ops() {
        let p = parse_program("{exposure=+2.5; temperature=-60; vibrance=+35}").unwrap();
        let raw = encode_program(&p);
        assert_eq!(raw[0], 0.5);
        assert_eq!(raw[2], -0.6);
        assert_eq!(raw[8], 0.35);
        let back = decode_action(&raw, None);
        assert_eq!(back, p);
    }

    #[test]
    fn sft_recovers_a_single_demo() {
        let task = gradient_task(1);
        let features = policy_features(&image_stats(&task.before), &task.goal);
        let mut action = [0.0; ACTION_DIM];
        action[0] = 0.3;
        action[2] = -0.45;
        let mut policy = PolicyModel::init();
        policy
            .fit_sft(
                &[SftDemo { features, action }],
                &SftConfig { lambda: 1e-9 },
            )
            .unwrap();
        let out = policy.mean_action(&features);
        for d in 0..ACTION_DIM {
            assert!(
                (out[d] - action[d]).abs() < 1e-6,
                "dim {d}: {} vs {}",
                out[d],
                action[d]
            );
        }
    }

    #[test]
    fn sft_is_invariant_to_demo_duplication() {
        let demos: Vec<SftDemo> = (0..6)
            .map(|i| {
                let task = gradient_task(i);
                let features = policy_features(&image_stats(&task.before), &task.goal);
                let mut action = [0.0; ACTION_DIM];
                action[0] = 0.1 * i as f64 - 0.2;
                action[1] = 0.05 * i as f64;
                SftDemo { features, action }
            })
            .collect();
        let mut doubled = demos.clone();
        doubled.extend(demos.iter().cloned());

        let mut a = PolicyModel::init();
        let mut b = PolicyModel::init();
        a.fit_sft(&demos, &SftConfig::default()).unwrap();
        b.fit_sft(&doubled, &SftConfig::default()).unwrap();
        for (x, y) in a.params_flat().iter().zip(b.params_flat()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn infinite_ridge_pulls_the_map_to_zero() {
        let task = gradient_task(3);
        let features = policy_features(&image_stats(&task.before), &task.goal);
        let mut action = [0.0; ACTION_DIM];
        action[0] = 0.9;
        let mut policy = PolicyModel::init();
        policy
            .fit_sft(&[SftDemo { features, action }], &SftConfig { lambda: 1e12 })
            .unwrap();
        for w in policy.params_flat()[..ACTION_DIM * POLICY_FEATURE_DIM].iter() {
            assert!(w.abs() < 1e-6);
        }
    }

    #[test]
    fn constant_reward_leaves_policy_bitwise_unchanged() {
        let tasks = vec![gradient_task(1), gradient_task(2)];
        let mut policy = PolicyModel::init();
        // Give the mean map some structure first.
        let features = policy_features(&image_stats(&tasks[0].before), &tasks[0].goal);
        let mut action = [0.0; ACTION_DIM];
        action[0] = 0.2;
        policy.fit_sft(&[SftDemo { features, action }], &SftConfig::default()).unwrap();
        let before = policy.params_flat();
        let trace = policy
            .train_grpo_with(
                &tasks,
                &GrpoConfig { steps: 3, learning_rate: 0.1, group_size: 8, ..GrpoConfig::default() },
                7,
                |_, _, _, _| 4.25,
            )
            .unwrap();
        assert_eq!(policy.params_flat(), before);
        assert_eq!(trace.degenerate_groups, 6); // 2 tasks x 3 steps
        assert!(trace.mean_rewards.iter().all(|r| *r == 4.25));
    }

    #[test]
    fn reward_shift_does_not_change_updates() {
        // Integer rewards and a power-of-two group size keep the group
        // mean exact, so a constant shift cancels bitwise.
        let tasks = vec![gradient_task(5)];
        let cfg = GrpoConfig { steps: 4, learning_rate: 0.05, group_size: 8, ..GrpoConfig::default() };
        let reward_base = |_: usize, _: &RolloutTask, raw: &[f64; ACTION_DIM], _: &ImageBuffer| {
            (raw[0] * 8.0).round() + (raw[1] * 4.0).round()
        };
        let mut a = PolicyModel::init();
        a.train_grpo_with(&tasks, &cfg, 11, reward_base).unwrap();
        let mut b = PolicyModel::init();
        b.train_grpo_with(&tasks, &cfg, 11, |t, task, raw, img| {
            reward_base(t, task, raw, img) + 100.0
        })
        .unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
    }

    #[test]
    fn grpo_climbs_a_quadratic_bowl() {
        // Reward peaks when the raw action hits a fixed target vector.
        let tasks = vec![gradient_task(8), gradient_task(9)];
        let mut target = [0.0; ACTION_DIM];
        target[0] = 0.4;
        target[2] = -0.3;
        let reward = move |_: usize, _: &RolloutTask, raw: &[f64; ACTION_DIM], _: &ImageBuffer| {
            -raw.iter().zip(&target).map(|(r, t)| (r - t) * (r - t)).sum::<f64>()
        };
        let mut policy = PolicyModel::init();
        let trace = policy
            .train_grpo_with(
                &tasks,
                &GrpoConfig { steps: 60, learning_rate: 0.02, group_size: 8, ..GrpoConfig::default() },
                3,
                reward,
            )
            .unwrap();
        let first = trace.mean_rewards[0];
        let last = *trace.mean_rewards.last().unwrap();
        assert!(last > first, "reward did not improve: {first} -> {last}");
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let mut policy = PolicyModel::init();
        // Non-trivial parameters.
        let mut params = policy.params_flat();
        let mut s = 0x9e3779b97f4a7c15u64;
        for p in params.iter_mut() {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            *p = ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.2;
        }
        policy.set_params_flat(&params);

        let task = gradient_task(2);
        let features = policy_features(&image_stats(&task.before), &task.goal);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<([f64; POLICY_FEATURE_DIM], [f64; ACTION_DIM], f64)> = (0..6)
            .map(|i| {
                let raw = policy.sample_action(&features, &mut rng);
                (features, raw, (i as f64 - 2.5) * 0.6)
            })
            .collect();

        let analytic = policy.surrogate_grad(&samples);
        let h = 1e-6;
        let base = policy.params_flat();
        for i in (0..base.len()).step_by(17).chain([base.len() - 1]) {
            let mut plus = policy.clone();
            let mut minus = policy.clone();
            let mut p = base.clone();
            p[i] += h;
            plus.set_params_flat(&p);
            p[i] -= 2.0 * h;
            minus.set_params_flat(&p);
            let fd = (plus.surrogate_value(&samples) - minus.surrogate_value(&samples)) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1.0);
            assert!(
                ((analytic[i] - fd) / denom).abs() < 1e-4,
                "grad[{i}]: analytic {} vs fd {}",
                analytic[i],
                fd
            );
        }
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let reference = PolicyModel::init();
        let task = gradient_task(4);
        let features = vec![policy_features(&image_stats(&task.before), &task.goal)];
        let ref_means: Vec<[f64; ACTION_DIM]> =
            features.iter().map(|x| reference.mean_action(x)).collect();
        let ref_log_std = *reference.log_std();

        let mut policy = reference.clone();
        let mut params = policy.params_flat();
        let mut s = 0x2545f4914f6cdd1du64;
        for p in params.iter_mut() {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            *p += ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.3;
        }
        policy.set_params_flat(&params);

        let (_, analytic) = policy.kl_to_reference(&features, &ref_means, &ref_log_std);
        let h = 1e-6;
        let base = policy.params_flat();
        for i in (0..base.len()).step_by(23).chain([base.len() - 1]) {
            let mut plus = policy.clone();
            let mut minus = policy.clone();
            let mut p = base.clone();
            p[i] += h;
            plus.set_params_flat(&p);
            p[i] -= 2.0 * h;
            minus.set_params_flat(&p);
            let fd = (plus.kl_to_reference(&features, &ref_means, &ref_log_std).0
                - minus.kl_to_reference(&features, &ref_means, &ref_log_std).0)
                / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1.0);
            assert!(
                ((analytic[i] - fd) / denom).abs() < 1e-4,
                "kl grad[{i}]: analytic {} vs fd {}",
                analytic[i],
                fd
            );
        }
    }

    #[test]
    fn kl_anchor_pins_reward_null_directions() {
        // Reward reads only raw[0]; every other action dimension is
        // reward-null and moves on update noise alone.
        let tasks = vec![gradient_task(1), gradient_task(2)];
        let reward = |_: usize, _: &RolloutTask, raw: &[f64; ACTION_DIM], _: &ImageBuffer| {
            -(raw[0] - 0.3) * (raw[0] - 0.3)
        };
        let null_drift = |policy: &PolicyModel| -> f64 {
            policy.params_flat()[POLICY_FEATURE_DIM..ACTION_DIM * POLICY_FEATURE_DIM]
                .iter()
                .map(|w| w * w)
                .sum::<f64>()
                .sqrt()
        };
        let run = |kl_beta: f64| {
            let mut policy = PolicyModel::init();
            let cfg = GrpoConfig { steps: 40, learning_rate: 0.05, group_size: 8, kl_beta };
            policy.train_grpo_with(&tasks, &cfg, 21, reward).unwrap();
            null_drift(&policy)
        };
        let free = run(0.0);
        let anchored = run(0.5);
        assert!(
            anchored < 0.5 * free,
            "anchor did not damp null drift: free {free}, anchored {anchored}"
        );
    }

    #[test]
    fn grpo_is_deterministic_across_thread_counts() {
        let tasks = vec![gradient_task(1), gradient_task(4), gradient_task(6)];
        let cfg = GrpoConfig { steps: 3, learning_rate: 0.05, group_size: 4, ..GrpoConfig::default() };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let mut p = PolicyModel::init();
                    let grm = GrmModel::init(1);
                    let trace = p.train_grpo(&grm, &tasks, &cfg, 99).unwrap();
                    (p.params_flat(), trace.mean_rewards)
                })
        };
        let (p1, r1) = run(1);
        let (p8, r8) = run(8);
        assert_eq!(p1, p8);
        assert_eq!(r1, r8);
    }

    #[test]
    fn log_std_stays_clamped() {
        let tasks = vec![gradient_task(3)];
        let mut policy = PolicyModel::init();
        policy
            .train_grpo_with(
                &tasks,
                &GrpoConfig { steps: 30, learning_rate: 5.0, group_size: 4, ..GrpoConfig::default() },
                2,
                |_, _, raw, _| raw[0],
            )
            .unwrap();
        for v in policy.log_std() {
            assert!((LOG_STD_MIN..=LOG_STD_MAX).contains(v));
        }
    }

    #[test]
    fn empty_inputs_are_errors() {
        let mut policy = PolicyModel::init();
        assert!(matches!(
            policy.fit_sft(&[], &SftConfig::default()),
            Err(PolicyError::NoDemos)
        ));
        assert!(matches!(
            policy.train_grpo_with(
                &[],
                &GrpoConfig::default(),
                1,
                |_, _, _, _| 0.0
            ),
            Err(PolicyError::NoTasks)
        ));
    }

    #[test]
    fn save_load_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.txt");
        let task = gradient_task(7);
        let features = policy_features(&image_stats(&task.before), &task.goal);
        let mut action = [0.0; ACTION_DIM];
        action[0] = 0.123456789;
        let mut policy = PolicyModel::init();
        policy.fit_sft(&[SftDemo { features, action }], &SftConfig::default()).unwrap();
        policy.save(&path).unwrap();
        let loaded = PolicyModel::load(&path).unwrap();
        assert_eq!(loaded.params_flat(), policy.params_flat());
    }

    #[test]
    fn load_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "grm-model v1\n").unwrap();
        assert!(matches!(PolicyModel::load(&path), Err(PolicyError::Format(_))));
    }
}
