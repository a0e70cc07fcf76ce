//! The goal-conditioned reward model.
//!
//! The model scores an edit by how well the change in image statistics
//! agrees with the stated goal. It is deliberately small: a 12-feature
//! agreement vector, a learned per-feature gate conditioned on the goal
//! encoding, a learned positive scale, and a bias.
//!
//! score(goal, before, after) =
//!     sum_k sigmoid(gate_map[k] . e(goal)) * exp(log_scale[k]) * a_k + bias
//!
//! where `a` is the agreement vector of the edit with the goal. Both
//! training losses (supervised regression and pairwise preference) are
//! optimized by full-batch gradient descent with analytic gradients;
//! the parameter vector is exposed flat so the gradients can be checked
//! against finite differences.

use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use thiserror::Error;

use crate::goal::{GoalDescriptor, StyleTag, GOAL_ENCODE_DIM};
use crate::metrics::oracle_distance;
use crate::perturb::{PairSample, Provenance};
use crate::raster::{image_stats, FeatureStats};

/// Feature layout: six deltas (after minus before), then the same six
/// statistics of the after image.
pub const GRM_FEATURE_DIM: usize = 12;
/// Flat parameter count: gate map, log scales, bias.
pub const GRM_PARAM_COUNT: usize = GRM_FEATURE_DIM * GOAL_ENCODE_DIM + GRM_FEATURE_DIM + 1;

/// Supervised target scale: score 10 at zero distance from the strong
/// render, 0 at tone distance 128.
const TARGET_TOP: f64 = 10.0;
const TARGET_DISTANCE_SCALE: f64 = 12.8;

fn stat_six(s: &FeatureStats) -> [f64; 6] {
    [
        s.mean_luma,
        s.std_luma,
        s.mean_saturation,
        s.warmth,
        s.clipped_high_frac,
        s.clipped_low_frac,
    ]
}

/// Raw feature vector for an edit: deltas first, after-absolutes second.
pub fn edit_features(before: &FeatureStats, after: &FeatureStats) -> [f64; GRM_FEATURE_DIM] {
    let b = stat_six(before);
    let a = stat_six(after);
    let mut f = [0.0; GRM_FEATURE_DIM];
    for i in 0..6 {
        f[i] = a[i] - b[i];
        f[6 + i] = a[i];
    }
    f
}

/// How each feature agrees with the goal. Numeric targets dominate
/// their own delta slot; otherwise the style tag picks a direction on
/// the feature it cares about, and a neutral tag penalizes any
/// untargeted drift. The warm, cool, and bw directions read after-image
/// absolutes, so they stay live even when every delta is targeted;
/// they are monotone by design, which is what lets preference data
/// collected off the policy's own distribution correct them later.
pub fn agreement(features: &[f64; GRM_FEATURE_DIM], goal: &GoalDescriptor) -> [f64; GRM_FEATURE_DIM] {
    let mut a = [0.0; GRM_FEATURE_DIM];
    let targets = goal.targets.as_array();
    for (k, target) in targets.iter().enumerate() {
        if let Some(t) = target {
            let d = features[k] - t;
            a[k] = -d * d;
        }
    }
    match goal.style_tag {
        StyleTag::Neutral => {
            for k in 0..6 {
                let targeted = k < 4 && targets[k].is_some();
                if !targeted {
                    a[k] = -features[k].abs();
                }
            }
        }
        StyleTag::Warm => a[9] = features[9],
        StyleTag::Cool => a[9] = -features[9],
        StyleTag::Bw => a[8] = -features[8],
        StyleTag::Vivid => {
            if targets[2].is_none() {
                a[2] = features[2];
            }
        }
        StyleTag::Matte => {
            if targets[1].is_none() {
                a[1] = -features[1];
            }
        }
        StyleTag::Dramatic => {
            if targets[1].is_none() {
                a[1] = features[1];
            }
        }
    }
    a
}

/// One preference pair reduced to what training needs. Building these
/// up front lets a large corpus train without keeping any images
/// resident.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFeatures {
    pub a_strong: [f64; GRM_FEATURE_DIM],
    pub a_weak: [f64; GRM_FEATURE_DIM],
    pub goal_enc: [f64; GOAL_ENCODE_DIM],
    /// Supervised regression targets on the 0..10 score scale.
    pub target_strong: f64,
    pub target_weak: f64,
    pub provenance: Provenance,
}

/// Reduces a rendered pair to its training features and targets.
pub fn featurize_pair(pair: &PairSample) -> PairFeatures {
    let before = image_stats(&pair.before);
    let strong = image_stats(&pair.strong_img);
    let weak = image_stats(&pair.weak_img);
    let f_strong = edit_features(&before, &strong);
    let f_weak = edit_features(&before, &weak);
    let weak_distance = oracle_distance(&pair.weak_img, &pair.strong_img);
    PairFeatures {
        a_strong: agreement(&f_strong, &pair.goal),
        a_weak: agreement(&f_weak, &pair.goal),
        goal_enc: pair.goal.encode(),
        target_strong: TARGET_TOP,
        target_weak: TARGET_TOP - (TARGET_TOP).min(weak_distance / TARGET_DISTANCE_SCALE),
        provenance: pair.provenance,
    }
}

pub fn featurize_pairs(pairs: &[PairSample]) -> Vec<PairFeatures> {
    pairs.iter().map(featurize_pair).collect()
}

#[derive(Debug, Error)]
pub enum GrmError {
    #[error("no pairs to work with")]
    NoPairs,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad model file: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrmTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for GrmTrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 200 }
    }
}

/// Per-epoch loss trace returned by the trainers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrmModel {
    /// Row-major [GRM_FEATURE_DIM x GOAL_ENCODE_DIM].
    gate_map: Vec<f64>,
    log_scales: [f64; GRM_FEATURE_DIM],
    bias: f64,
}

impl GrmModel {
    /// Fresh model: small random gates, unit scales, bias at the
    /// middle of the score range.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 0.1).unwrap();
        let gate_map = (0..GRM_FEATURE_DIM * GOAL_ENCODE_DIM)
            .map(|_| rng.sample(dist))
            .collect();
        Self {
            gate_map,
            log_scales: [0.0; GRM_FEATURE_DIM],
            bias: 5.0,
        }
    }

    /// Score from precomputed agreement and goal encoding.
    pub fn score_parts(&self, a: &[f64; GRM_FEATURE_DIM], e: &[f64; GOAL_ENCODE_DIM]) -> f64 {
        let mut score = self.bias;
        for k in 0..GRM_FEATURE_DIM {
            let gate = sigmoid(self.gate_row_dot(k, e));
            score += gate * self.log_scales[k].exp() * a[k];
        }
        score
    }

    /// Score an edit described by its before/after statistics.
    pub fn score(&self, goal: &GoalDescriptor, before: &FeatureStats, after: &FeatureStats) -> f64 {
        let f = edit_features(before, after);
        self.score_parts(&agreement(&f, goal), &goal.encode())
    }

    fn gate_row_dot(&self, k: usize, e: &[f64; GOAL_ENCODE_DIM]) -> f64 {
        let row = &self.gate_map[k * GOAL_ENCODE_DIM..(k + 1) * GOAL_ENCODE_DIM];
        row.iter().zip(e).map(|(w, x)| w * x).sum()
    }

    /// Flat parameter vector: gate map rows, log scales, bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = self.gate_map.clone();
        p.extend_from_slice(&self.log_scales);
        p.push(self.bias);
        p
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), GRM_PARAM_COUNT, "parameter count mismatch");
        let gates = GRM_FEATURE_DIM * GOAL_ENCODE_DIM;
        self.gate_map.copy_from_slice(&params[..gates]);
        self.log_scales.copy_from_slice(&params[gates..gates + GRM_FEATURE_DIM]);
        self.bias = params[gates + GRM_FEATURE_DIM];
    }

    /// Accumulates d(score)/d(params) scaled by `coeff` into `grad`.
    fn accumulate_score_grad(
        &self,
        a: &[f64; GRM_FEATURE_DIM],
        e: &[f64; GOAL_ENCODE_DIM],
        coeff: f64,
        grad: &mut [f64],
    ) {
        let gates = GRM_FEATURE_DIM * GOAL_ENCODE_DIM;
        for k in 0..GRM_FEATURE_DIM {
            let g = self.gate_row_dot(k, e);
            let gate = sigmoid(g);
            let scale = self.log_scales[k].exp();
            let dgate = gate * (1.0 - gate) * scale * a[k] * coeff;
            let row = &mut grad[k * GOAL_ENCODE_DIM..(k + 1) * GOAL_ENCODE_DIM];
            for (slot, x) in row.iter_mut().zip(e) {
                *slot += dgate * x;
            }
            grad[gates + k] += gate * scale * a[k] * coeff;
        }
        grad[gates + GRM_FEATURE_DIM] += coeff;
    }

    /// Mean squared error of scores against the supervised targets,
    /// counting both sides of every pair.
    pub fn supervised_loss(&self, pairs: &[PairFeatures]) -> f64 {
        let mut total = 0.0;
        for p in pairs {
            let rs = self.score_parts(&p.a_strong, &p.goal_enc);
            let rw = self.score_parts(&p.a_weak, &p.goal_enc);
            total += (rs - p.target_strong).powi(2) + (rw - p.target_weak).powi(2);
        }
        total / (2 * pairs.len()) as f64
    }

    /// Gradient of [`Self::supervised_loss`]; exposed so the analytic
    /// form can be validated against finite differences.
    pub fn supervised_grad(&self, pairs: &[PairFeatures]) -> Vec<f64> {
        let mut grad = vec![0.0; GRM_PARAM_COUNT];
        let n = (2 * pairs.len()) as f64;
        for p in pairs {
            let rs = self.score_parts(&p.a_strong, &p.goal_enc);
            let rw = self.score_parts(&p.a_weak, &p.goal_enc);
            self.accumulate_score_grad(&p.a_strong, &p.goal_enc, 2.0 * (rs - p.target_strong) / n, &mut grad);
            self.accumulate_score_grad(&p.a_weak, &p.goal_enc, 2.0 * (rw - p.target_weak) / n, &mut grad);
        }
        grad
    }

    /// Mean negative log-likelihood that the strong side outranks the
    /// weak side.
    pub fn pairwise_loss(&self, pairs: &[PairFeatures]) -> f64 {
        let mut total = 0.0;
        for p in pairs {
            let margin = self.score_parts(&p.a_strong, &p.goal_enc)
                - self.score_parts(&p.a_weak, &p.goal_enc);
            total += softplus(-margin);
        }
        total / pairs.len() as f64
    }

    /// Gradient of [`Self::pairwise_loss`].
    pub fn pairwise_grad(&self, pairs: &[PairFeatures]) -> Vec<f64> {
        let mut grad = vec![0.0; GRM_PARAM_COUNT];
        let n = pairs.len() as f64;
        for p in pairs {
            let margin = self.score_parts(&p.a_strong, &p.goal_enc)
                - self.score_parts(&p.a_weak, &p.goal_enc);
            let coeff = (sigmoid(margin) - 1.0) / n;
            self.accumulate_score_grad(&p.a_strong, &p.goal_enc, coeff, &mut grad);
            self.accumulate_score_grad(&p.a_weak, &p.goal_enc, -coeff, &mut grad);
        }
        grad
    }

    /// Full-batch gradient descent on the supervised regression loss.
    pub fn train_supervised(
        &mut self,
        pairs: &[PairFeatures],
        cfg: &GrmTrainConfig,
    ) -> Result<TrainTrace, GrmError> {
        self.train_with(pairs, cfg, Self::supervised_loss, Self::supervised_grad)
    }

    /// Full-batch gradient descent on the pairwise preference loss.
    pub fn train_pairwise(
        &mut self,
        pairs: &[PairFeatures],
        cfg: &GrmTrainConfig,
    ) -> Result<TrainTrace, GrmError> {
        self.train_with(pairs, cfg, Self::pairwise_loss, Self::pairwise_grad)
    }

    fn train_with(
        &mut self,
        pairs: &[PairFeatures],
        cfg: &GrmTrainConfig,
        loss_fn: fn(&Self, &[PairFeatures]) -> f64,
        grad_fn: fn(&Self, &[PairFeatures]) -> Vec<f64>,
    ) -> Result<TrainTrace, GrmError> {
        if pairs.is_empty() {
            return Err(GrmError::NoPairs);
        }
        let mut trace = TrainTrace::default();
        let mut params = self.params_flat();
        for epoch in 0..cfg.epochs {
            let grad = grad_fn(self, pairs);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            self.set_params_flat(&params);
            let loss = loss_fn(self, pairs);
            if !loss.is_finite() || loss > 1e12 {
                return Err(GrmError::Diverged { epoch, loss });
            }
            trace.losses.push(loss);
        }
        Ok(trace)
    }

    /// Fraction of pairs where the strong side strictly outscores the
    /// weak side; ties count as wrong.
    pub fn eval_pairwise_accuracy(&self, pairs: &[PairFeatures]) -> Result<f64, GrmError> {
        if pairs.is_empty() {
            return Err(GrmError::NoPairs);
        }
        let correct = pairs
            .iter()
            .filter(|p| {
                self.score_parts(&p.a_strong, &p.goal_enc)
                    > self.score_parts(&p.a_weak, &p.goal_enc)
            })
            .count();
        Ok(correct as f64 / pairs.len() as f64)
    }

    /// Plain-text snapshot; floats round-trip exactly through Display.
    pub fn save(&self, path: &Path) -> Result<(), GrmError> {
        let mut out = String::from("grm-model v1\n");
        let _ = writeln!(out, "bias {}", self.bias);
        let scales: Vec<String> = self.log_scales.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "log_scales {}", scales.join(" "));
        for k in 0..GRM_FEATURE_DIM {
            let row: Vec<String> = self.gate_map[k * GOAL_ENCODE_DIM..(k + 1) * GOAL_ENCODE_DIM]
                .iter()
                .map(f64::to_string)
                .collect();
            let _ = writeln!(out, "gate {}", row.join(" "));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GrmError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some("grm-model v1") => {}
            other => {
                return Err(GrmError::Format(format!(
                    "expected header `grm-model v1`, found {other:?}"
                )))
            }
        }
        let bias = parse_floats(lines.next(), "bias", 1)?[0];
        let scales = parse_floats(lines.next(), "log_scales", GRM_FEATURE_DIM)?;
        let mut gate_map = Vec::with_capacity(GRM_FEATURE_DIM * GOAL_ENCODE_DIM);
        for _ in 0..GRM_FEATURE_DIM {
            gate_map.extend(parse_floats(lines.next(), "gate", GOAL_ENCODE_DIM)?);
        }
        let mut log_scales = [0.0; GRM_FEATURE_DIM];
        log_scales.copy_from_slice(&scales);
        Ok(Self { gate_map, log_scales, bias })
    }
}

fn parse_floats(line: Option<&str>, tag: &str, count: usize) -> Result<Vec<f64>, GrmError> {
    let line = line.ok_or_else(|| GrmError::Format(format!("missing `{tag}` line")))?;
    let rest = line
        .strip_prefix(tag)
        .ok_or_else(|| GrmError::Format(format!("expected `{tag}` line, found `{line}`")))?;
    let values: Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
    let values = values.map_err(|e| GrmError::Format(format!("bad float in `{tag}`: {e}")))?;
    if values.len() != count {
        return Err(GrmError::Format(format!(
            "`{tag}` has {} values, expected {count}",
            values.len()
        )));
    }
    Ok(values)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x), the numerically safe form of -log(sigmoid(-x)).
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
