//! Alignment-target strategies, registered by name.
//!
//! The trainer looks strategies up through [`TargetRegistry`] using the names
//! selected by the configured [`super::LossMode`]; new variants can be
//! registered without touching the training loop.

use std::collections::BTreeMap;

use rand::RngCore;

use super::alignment::{
    consecutive_index, duration_target_matrix, monotonic_target_matrix, noise_target_matrix, AlignmentMatrix,
    BlankPolicy,
};
use crate::error::{KwsError, Result};

pub const DURATION: &str = "duration";
pub const MONOTONIC: &str = "monotonic";
pub const NOISE: &str = "noise";

/// Everything a target strategy may consult for one audio-text pair.
#[derive(Debug, Clone, Copy)]
pub struct TargetInput<'a> {
    /// Frame-level phoneme predictions at the audio-embedding resolution.
    pub predictions: &'a [u32],
    pub text_len: usize,
    pub sharpness: f64,
    pub blank_policy: BlankPolicy,
}

impl TargetInput<'_> {
    pub fn audio_len(&self) -> usize {
        self.predictions.len()
    }
}

pub trait AlignmentTarget: Send + Sync {
    fn name(&self) -> &'static str;

    fn build(&self, input: &TargetInput<'_>, rng: &mut dyn RngCore) -> Result<AlignmentMatrix>;
}

/// Gaussian around the frame's duration group index.
#[derive(Debug, Default, Clone, Copy)]
pub struct DurationTarget;

impl AlignmentTarget for DurationTarget {
    fn name(&self) -> &'static str {
        DURATION
    }

    fn build(&self, input: &TargetInput<'_>, _rng: &mut dyn RngCore) -> Result<AlignmentMatrix> {
        let c = consecutive_index(input.predictions, input.blank_policy)?;
        duration_target_matrix(&c, input.text_len, input.sharpness)
    }
}

/// Gaussian around a linear audio-to-text diagonal; ignores predictions.
#[derive(Debug, Default, Clone, Copy)]
pub struct MonotonicTarget;

impl AlignmentTarget for MonotonicTarget {
    fn name(&self) -> &'static str {
        MONOTONIC
    }

    fn build(&self, input: &TargetInput<'_>, _rng: &mut dyn RngCore) -> Result<AlignmentMatrix> {
        monotonic_target_matrix(input.audio_len(), input.text_len, input.sharpness)
    }
}

/// Column-softmaxed Gaussian noise, used for negative pairs.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoiseTarget;

impl AlignmentTarget for NoiseTarget {
    fn name(&self) -> &'static str {
        NOISE
    }

    fn build(&self, input: &TargetInput<'_>, rng: &mut dyn RngCore) -> Result<AlignmentMatrix> {
        if input.audio_len() == 0 || input.text_len == 0 {
            return Err(KwsError::invalid("noise target needs a non-empty shape"));
        }
        Ok(noise_target_matrix(input.audio_len(), input.text_len, rng))
    }
}

pub struct TargetRegistry {
    strategies: BTreeMap<&'static str, Box<dyn AlignmentTarget>>,
}

impl TargetRegistry {
    pub fn empty() -> Self {
        Self {
            strategies: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, strategy: Box<dyn AlignmentTarget>) -> Option<Box<dyn AlignmentTarget>> {
        self.strategies.insert(strategy.name(), strategy)
    }

    pub fn get(&self, name: &str) -> Result<&dyn AlignmentTarget> {
        self.strategies
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| KwsError::invalid(format!("no alignment target named {name:?}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.strategies.keys().copied()
    }
}

impl Default for TargetRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(DurationTarget));
        r.register(Box::new(MonotonicTarget));
        r.register(Box::new(NoiseTarget));
        r
    }
}
