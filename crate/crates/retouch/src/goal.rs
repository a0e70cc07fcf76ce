//! Editing goals: what a retouch is supposed to achieve.
//!
//! A goal carries a style tag, optional numeric targets for the
//! feature deltas an edit should produce, an optional region of
//! interest, and a free-form note. Goals condition the reward model
//! and the policy; [`GoalDescriptor::encode`] is the fixed numeric
//! layout both consume.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::MaskSpec;

/// Length of [`GoalDescriptor::encode`]'s output: 7 tag slots, 4
/// target values, 4 presence flags.
pub const GOAL_ENCODE_DIM: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleTag {
    Neutral,
    Warm,
    Cool,
    Bw,
    Vivid,
    Matte,
    Dramatic,
}

impl StyleTag {
    pub const ALL: [StyleTag; 7] = [
        StyleTag::Neutral,
        StyleTag::Warm,
        StyleTag::Cool,
        StyleTag::Bw,
        StyleTag::Vivid,
        StyleTag::Matte,
        StyleTag::Dramatic,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|t| *t == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            StyleTag::Neutral => "neutral",
            StyleTag::Warm => "warm",
            StyleTag::Cool => "cool",
            StyleTag::Bw => "bw",
            StyleTag::Vivid => "vivid",
            StyleTag::Matte => "matte",
            StyleTag::Dramatic => "dramatic",
        }
    }
}

/// Desired changes in image statistics, each on a [-1, 1] scale in the
/// units of [`crate::raster::FeatureStats`]. Absent fields are
/// unconstrained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetDeltas {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_luma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_luma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_saturation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmth: Option<f64>,
}

impl TargetDeltas {
    pub fn as_array(&self) -> [Option<f64>; 4] {
        [self.mean_luma, self.std_luma, self.mean_saturation, self.warmth]
    }

    pub fn any_present(&self) -> bool {
        self.as_array().iter().any(Option::is_some)
    }
}

pub const TARGET_FIELD_NAMES: [&str; 4] = ["mean_luma", "std_luma", "mean_saturation", "warmth"];

#[derive(Debug, Error, PartialEq)]
pub enum GoalError {
    #[error("goal constrains nothing: neutral tag and no targets")]
    Unconstrained,
    #[error("target `{field}` value {value} outside [-1, 1]")]
    TargetOutOfRange { field: &'static str, value: f64 },
    #[error("region hint: {0}")]
    BadRegion(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalDescriptor {
    pub style_tag: StyleTag,
    #[serde(default, skip_serializing_if = "TargetDeltas::is_empty")]
    pub targets: TargetDeltas,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_hint: Option<MaskSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TargetDeltas {
    fn is_empty(&self) -> bool {
        !self.any_present()
    }
}

impl GoalDescriptor {
    /// Tag-only goal.
    pub fn tagged(style_tag: StyleTag) -> Self {
        Self {
            style_tag,
            targets: TargetDeltas::default(),
            region_hint: None,
            note: None,
        }
    }

    /// A goal must constrain something, its targets must be on the
    /// [-1, 1] scale, and any region hint must be a usable mask.
    pub fn validate(&self) -> Result<(), GoalError> {
        if self.style_tag == StyleTag::Neutral && !self.targets.any_present() {
            return Err(GoalError::Unconstrained);
        }
        for (field, value) in TARGET_FIELD_NAMES.iter().zip(self.targets.as_array()) {
            if let Some(v) = value {
                if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                    return Err(GoalError::TargetOutOfRange { field, value: v });
                }
            }
        }
        if let Some(mask) = &self.region_hint {
            mask.check().map_err(GoalError::BadRegion)?;
        }
        Ok(())
    }

    /// Fixed numeric layout: one-hot tag (7), target values with
    /// absent treated as 0 (4), presence flags (4).
    pub fn encode(&self) -> [f64; GOAL_ENCODE_DIM] {
        let mut out = [0.0; GOAL_ENCODE_DIM];
        out[self.style_tag.index()] = 1.0;
        for (i, target) in self.targets.as_array().iter().enumerate() {
            if let Some(v) = target {
                out[7 + i] = *v;
                out[11 + i] = 1.0;
            }
        }
        out
    }
}
