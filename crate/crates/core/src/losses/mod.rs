//! Training objective: duration-based alignment loss, detection
//! cross-entropy and their weighted sum.
//!
//! The alignment loss compares the affinity matrix `A` (audio x text, the
//! transposed attention map of the text-query cross-attention) with a
//! target matrix. Targets come from the strategies in [`targets`]:
//! phoneme-duration groups for positive pairs, Gaussian noise for negatives
//! and a duration-blind monotonic diagonal for the ablation.

mod alignment;
pub mod targets;
pub mod tensor;

use serde::{Deserialize, Serialize};

pub use alignment::{
    column_softmax, consecutive_index, duration_target_matrix, monotonic_index, monotonic_target_matrix,
    noise_target_matrix, AlignmentMatrix, BlankPolicy, ConsecutiveIndexVector, MatrixRole,
};
pub use targets::{AlignmentTarget, TargetInput, TargetRegistry};

use crate::error::{KwsError, Result};

/// Weight of the alignment term in the total loss.
pub const DEFAULT_LAMBDA: f64 = 0.3;
/// Sharpness of the duration target's Gaussian.
pub const DEFAULT_SHARPNESS: f64 = 0.1;
/// Prediction clamp for the cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PdaReduction {
    #[default]
    Mean,
    Sum,
}

/// Squared error between affinity and target, averaged (or summed) over entries.
pub fn pda_loss(affinity: &AlignmentMatrix, target: &AlignmentMatrix, reduction: PdaReduction) -> Result<f64> {
    if affinity.shape() != target.shape() {
        return Err(KwsError::Shape(format!(
            "affinity {:?} vs target {:?}",
            affinity.shape(),
            target.shape()
        )));
    }
    let sum: f64 = affinity
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, t)| (a - t) * (a - t))
        .sum();
    Ok(match reduction {
        PdaReduction::Mean => sum / affinity.data().len() as f64,
        PdaReduction::Sum => sum,
    })
}

/// Binary cross-entropy of a probability against a 0/1 label.
pub fn detection_loss(prediction: f64, label: u8) -> f64 {
    let p = prediction.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let y = label as f64;
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub fn total_loss(pda: f64, detection: f64, lambda: f64) -> f64 {
    lambda * pda + detection
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub pda: f64,
    pub detection: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBundle {
    pub fn new(pda: f64, detection: f64, lambda: f64) -> Self {
        Self {
            pda,
            detection,
            total: total_loss(pda, detection, lambda),
            lambda,
        }
    }
}

/// Which alignment target (if any) accompanies the detection loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    DetectionOnly,
    #[default]
    #[serde(rename = "detection+pda")]
    DetectionPda,
    #[serde(rename = "detection+mm")]
    DetectionMm,
}

impl LossMode {
    /// Registry name of the positive-pair target strategy.
    pub fn positive_target(self) -> Option<&'static str> {
        match self {
            LossMode::DetectionOnly => None,
            LossMode::DetectionPda => Some(targets::DURATION),
            LossMode::DetectionMm => Some(targets::MONOTONIC),
        }
    }

    pub fn negative_target(self) -> Option<&'static str> {
        match self {
            LossMode::DetectionOnly => None,
            _ => Some(targets::NOISE),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::DetectionOnly => "detection_only",
            LossMode::DetectionPda => "detection+pda",
            LossMode::DetectionMm => "detection+mm",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = KwsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detection_only" => Ok(LossMode::DetectionOnly),
            "detection+pda" => Ok(LossMode::DetectionPda),
            "detection+mm" => Ok(LossMode::DetectionMm),
            other => Err(KwsError::invalid(format!("unknown loss mode {other:?}"))),
        }
    }
}
