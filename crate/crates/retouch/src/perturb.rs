//! Degrading good edits into plausible weaker ones.
//!
//! Preference pairs for reward training come from taking a strong
//! (ground-truth) edit program and perturbing it: dropping ops,
//! jittering values, or replacing the whole edit with a biased
//! one-slider guess. [`build_pair`] renders both sides and enforces
//! the separation and plausibility margins, retrying with fresh
//! sub-seeds until a usable pair comes out.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{EditOp, EditProgram, ScalarParam};
use crate::engine::execute;
use crate::goal::GoalDescriptor;
use crate::metrics::oracle_distance;
use crate::raster::ImageBuffer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbStrategy {
    /// Remove `count` distinct ops (all of them if the program is
    /// shorter). Fails on an empty program.
    Omit { count: usize },
    /// Gaussian jitter on every scalar value, including HSL sliders,
    /// local adjustments, and curve point heights. Sigma is
    /// `sigma_frac` of each parameter's range width; curve x and mask
    /// geometry stay put. Results clamp back into range.
    Misadjust { sigma_frac: f64 },
    /// Replace the edit with a single random slider, biased toward the
    /// adjustments novice retouchers reach for first.
    SingleParamBias {
        #[serde(default = "PerturbStrategy::default_bias_weights")]
        weights: [f64; 10],
    },
}

impl PerturbStrategy {
    /// The default one-slider bias: exposure and temperature dominate,
    /// the remaining eight sliders share the tail evenly.
    pub fn default_bias_weights() -> [f64; 10] {
        let mut w = [0.025; 10];
        w[param_slot(ScalarParam::Exposure)] = 0.4;
        w[param_slot(ScalarParam::Temperature)] = 0.4;
        w
    }

    pub fn single_param_bias() -> Self {
        PerturbStrategy::SingleParamBias { weights: Self::default_bias_weights() }
    }

    fn check(&self) -> Result<(), PerturbError> {
        match self {
            PerturbStrategy::Omit { count } => {
                if *count == 0 {
                    return Err(PerturbError::BadStrategy("omit count must be at least 1".into()));
                }
            }
            PerturbStrategy::Misadjust { sigma_frac } => {
                if !sigma_frac.is_finite() || *sigma_frac < 0.0 {
                    return Err(PerturbError::BadStrategy(format!(
                        "sigma_frac {sigma_frac} must be finite and non-negative"
                    )));
                }
            }
            PerturbStrategy::SingleParamBias { weights } => {
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(PerturbError::BadStrategy("negative or non-finite weight".into()));
                }
                let sum: f64 = weights.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(PerturbError::BadStrategy(format!(
                        "weights sum to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Index of a scalar parameter in [`ScalarParam::ALL`], used to key
/// the bias weight table.
fn param_slot(param: ScalarParam) -> usize {
    ScalarParam::ALL.iter().position(|p| *p == param).unwrap()
}

#[derive(Debug, Error, PartialEq)]
pub enum PerturbError {
    #[error("cannot perturb an empty program")]
    EmptyProgram,
    #[error("bad strategy: {0}")]
    BadStrategy(String),
    #[error("no acceptable pair after {tries} tries")]
    Rejected { tries: u32 },
}

/// Applies a perturbation strategy; the same seed always yields the
/// same program.
pub fn perturb(
    program: &EditProgram,
    strategy: &PerturbStrategy,
    seed: u64,
) -> Result<EditProgram, PerturbError> {
    strategy.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match strategy {
        PerturbStrategy::Omit { count } => {
            let len = program.len();
            if len == 0 {
                return Err(PerturbError::EmptyProgram);
            }
            let drop = (*count).min(len);
            let drop_idx = rand::seq::index::sample(&mut rng, len, drop);
            let ops: Vec<EditOp> = program
                .ops()
                .iter()
                .enumerate()
                .filter(|(i, _)| !drop_idx.iter().any(|d| d == *i))
                .map(|(_, op)| op.clone())
                .collect();
            Ok(EditProgram::from_validated(ops))
        }
        PerturbStrategy::Misadjust { sigma_frac } => {
            let ops: Vec<EditOp> = program
                .ops()
                .iter()
                .map(|op| misadjust_op(op, *sigma_frac, &mut rng))
                .collect();
            Ok(EditProgram::from_validated(ops))
        }
        PerturbStrategy::SingleParamBias { weights } => {
            let mut pick = rng.random_range(0.0..1.0);
            let mut chosen = *ScalarParam::ALL.last().unwrap();
            for (i, param) in ScalarParam::ALL.into_iter().enumerate() {
                if pick < weights[i] {
                    chosen = param;
                    break;
                }
                pick -= weights[i];
            }
            let (min, max) = chosen.range();
            let value = rng.random_range(min..=max);
            Ok(EditProgram::from_validated(vec![EditOp::Scalar {
                param: chosen,
                value,
            }]))
        }
    }
}

fn jitter(value: f64, width: f64, sigma_frac: f64, (min, max): (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
    let noise: f64 = rng.sample(Normal::new(0.0, sigma_frac * width).expect("valid sigma"));
    (value + noise).clamp(min, max)
}

fn misadjust_op(op: &EditOp, sigma_frac: f64, rng: &mut ChaCha8Rng) -> EditOp {
    match op {
        EditOp::Scalar { param, value } => {
            let (min, max) = param.range();
            EditOp::Scalar {
                param: *param,
                value: jitter(*value, max - min, sigma_frac, (min, max), rng),
            }
        }
        EditOp::ToneCurve { points } => EditOp::ToneCurve {
            points: points
                .iter()
                .map(|&(x, y)| (x, jitter(y, 1.0, sigma_frac, (0.0, 1.0), rng)))
                .collect(),
        },
        EditOp::Hsl { band, field, value } => EditOp::Hsl {
            band: *band,
            field: *field,
            value: jitter(*value, 200.0, sigma_frac, (-100.0, 100.0), rng),
        },
        EditOp::Local { index, mask, params } => EditOp::Local {
            index: *index,
            mask: *mask,
            params: params
                .iter()
                .map(|&(param, value)| {
                    let (min, max) = param.range();
                    (param, jitter(value, max - min, sigma_frac, (min, max), rng))
                })
                .collect(),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Weak side came from perturbing the strong program.
    Perturbed,
    /// Weak side was sampled from a trained policy.
    Policy,
}

/// One preference pair: the same source image under a strong edit and
/// a weaker one, with the goal both were aiming at.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub before: ImageBuffer,
    pub strong_program: EditProgram,
    pub weak_program: EditProgram,
    pub strong_img: ImageBuffer,
    pub weak_img: ImageBuffer,
    pub goal: GoalDescriptor,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    /// Minimum tone-scale distance between the weak and strong render;
    /// pairs closer than this teach nothing.
    pub tau: f64,
    /// Maximum distance between the weak render and the source image;
    /// beyond it the "weak edit" stops being a plausible attempt.
    pub plausibility_max: f64,
    pub max_tries: u32,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self { tau: 2.0, plausibility_max: 120.0, max_tries: 16 }
    }
}

/// Renders the strong program once, then draws perturbed weak programs
/// until one clears the margins.
pub fn build_pair(
    before: &ImageBuffer,
    strong_program: &EditProgram,
    goal: &GoalDescriptor,
    strategy: &PerturbStrategy,
    config: &PairConfig,
    seed: u64,
) -> Result<PairSample, PerturbError> {
    strategy.check()?;
    let strong_img = execute(before, strong_program);
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..config.max_tries {
        let sub_seed: u64 = master.random();
        let weak_program = perturb(strong_program, strategy, sub_seed)?;
        let weak_img = execute(before, &weak_program);
        let separation = oracle_distance(&weak_img, &strong_img);
        let drift = oracle_distance(&weak_img, before);
        if separation >= config.tau && drift <= config.plausibility_max {
            return Ok(PairSample {
                before: before.clone(),
                strong_program: strong_program.clone(),
                weak_program,
                strong_img,
                weak_img,
                goal: goal.clone(),
                provenance: Provenance::Perturbed,
            });
        }
    }
    Err(PerturbError::Rejected { tries: config.max_tries })
}
