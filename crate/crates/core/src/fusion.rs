//! Pattern extractor and discriminator.
//!
//! Three single-head attention modules run side by side on the audio and
//! text embeddings: text-query cross-attention, audio-query
//! cross-attention, and self-attention over the time-concatenated pair. Each
//! output is max-pooled over time, the pooled vectors are concatenated and a
//! single logistic unit produces the detection probability.
//!
//! The modules are bare attention (projections, softmax, weighted sum) with
//! independent parameters and no residuals or normalization.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::nn::{additive_mask, sigmoid, softmax_last, Linear, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub dim: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { dim: 128 }
    }
}

/// `softmax(Q K^T / sqrt(d)) V` over `(batch, queries, d)` and `(batch, keys, d)`.
///
/// `key_mask` is additive, shaped `(batch, 1, keys)`. Returns the output and
/// the row-stochastic weights `(batch, queries, keys)`.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor, key_mask: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
    let (_, _, d) = q.dims3()?;
    let (_, n, dk) = k.dims3()?;
    if n == 0 {
        return Err(KwsError::invalid("attention over zero keys"));
    }
    if dk != d || v.dim(1)? != n {
        return Err(KwsError::Shape(format!(
            "attention q {:?}, k {:?}, v {:?}",
            q.dims(),
            k.dims(),
            v.dims()
        )));
    }
    let scores = (q.matmul(&k.t()?)? / (d as f64).sqrt())?;
    let scores = match key_mask {
        Some(m) => scores.broadcast_add(m)?,
        None => scores,
    };
    let weights = softmax_last(&scores)?;
    let out = weights.matmul(&v.contiguous()?)?;
    Ok((out, weights))
}

/// Query/key/value projection matrices of one attention module.
#[derive(Debug, Clone)]
pub struct AttentionProjections {
    query: Linear,
    key: Linear,
    value: Linear,
}

impl AttentionProjections {
    pub fn new(ps: &ParamStore, dim: usize) -> Result<Self> {
        Ok(Self {
            query: Linear::new(&ps.pp("w_q"), dim, dim, false)?,
            key: Linear::new(&ps.pp("w_k"), dim, dim, false)?,
            value: Linear::new(&ps.pp("w_v"), dim, dim, false)?,
        })
    }

    fn dim(&self) -> usize {
        self.query.out_dim()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let d = x.dim(D::Minus1)?;
        if d != self.dim() {
            return Err(KwsError::Shape(format!(
                "embedding dimension {d}, attention expects {}",
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn attend(&self, queries: &Tensor, keys: &Tensor, key_mask: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        self.check(queries)?;
        self.check(keys)?;
        let q = self.query.forward(queries)?;
        let k = self.key.forward(keys)?;
        let v = self.value.forward(keys)?;
        scaled_dot_attention(&q, &k, &v, key_mask)
    }
}

/// Cross-attention with one modality as query and the other as key/value.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    proj: AttentionProjections,
}

impl CrossAttention {
    pub fn new(ps: &ParamStore, dim: usize) -> Result<Self> {
        Ok(Self {
            proj: AttentionProjections::new(ps, dim)?,
        })
    }

    pub fn forward(&self, query: &Tensor, key_value: &Tensor, kv_mask: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        self.proj.attend(query, key_value, kv_mask)
    }
}

/// Self-attention over audio rows followed by text rows.
#[derive(Debug, Clone)]
pub struct ConcatSelfAttention {
    proj: AttentionProjections,
}

impl ConcatSelfAttention {
    pub fn new(ps: &ParamStore, dim: usize) -> Result<Self> {
        Ok(Self {
            proj: AttentionProjections::new(ps, dim)?,
        })
    }

    /// `concat_mask` is additive over the concatenated axis, `(batch, 1, Ta + Tt)`.
    pub fn forward(&self, audio: &Tensor, text: &Tensor, concat_mask: Option<&Tensor>) -> Result<Tensor> {
        let joined = Tensor::cat(&[audio, text], 1)?;
        Ok(self.proj.attend(&joined, &joined, concat_mask)?.0)
    }
}

/// Valid lengths of a padded audio/text batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairLengths {
    pub audio: Vec<usize>,
    pub text: Vec<usize>,
}

impl PairLengths {
    pub fn full(batch: usize, audio: usize, text: usize) -> Self {
        Self {
            audio: vec![audio; batch],
            text: vec![text; batch],
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    /// `(batch, Tt, d)`
    pub cross_text: Tensor,
    /// `(batch, Ta, d)`
    pub cross_audio: Tensor,
    /// `(batch, Ta + Tt, d)`
    pub self_out: Tensor,
    /// Text-query attention map `(batch, Tt, Ta)`, rows sum to one.
    pub text_attention: Tensor,
    /// Audio-query attention map `(batch, Ta, Tt)`.
    pub audio_attention: Tensor,
    audio_mask: Tensor,
    text_mask: Tensor,
}

impl FusionOutput {
    /// Affinity matrix `(batch, Ta, Tt)`: the transposed text-query map,
    /// so each column is a distribution over audio frames.
    pub fn affinity(&self) -> Result<Tensor> {
        Ok(self.text_attention.transpose(1, 2)?.contiguous()?)
    }
}

#[derive(Debug, Clone)]
pub struct PatternExtractor {
    text_query: CrossAttention,
    audio_query: CrossAttention,
    self_attention: ConcatSelfAttention,
}

impl PatternExtractor {
    pub fn new(ps: &ParamStore, cfg: &FusionConfig) -> Result<Self> {
        Ok(Self {
            text_query: CrossAttention::new(&ps.pp("cross_text"), cfg.dim)?,
            audio_query: CrossAttention::new(&ps.pp("cross_audio"), cfg.dim)?,
            self_attention: ConcatSelfAttention::new(&ps.pp("self"), cfg.dim)?,
        })
    }

    pub fn forward(&self, audio: &Tensor, text: &Tensor, lens: &PairLengths) -> Result<FusionOutput> {
        let (b, ta, da) = audio.dims3()?;
        let (bt, tt, dt) = text.dims3()?;
        if b != bt || da != dt {
            return Err(KwsError::Shape(format!(
                "audio {:?} and text {:?} embeddings",
                audio.dims(),
                text.dims()
            )));
        }
        if lens.audio.len() != b || lens.text.len() != b {
            return Err(KwsError::Shape("length vectors do not match batch".into()));
        }
        let (dtype, dev) = (audio.dtype(), audio.device());
        // (b, t, 1) additive masks, transposed to key form (b, 1, t)
        let audio_mask = additive_mask(&lens.audio, ta, dtype, dev)?;
        let text_mask = additive_mask(&lens.text, tt, dtype, dev)?;
        let audio_keys = audio_mask.transpose(1, 2)?;
        let text_keys = text_mask.transpose(1, 2)?;
        let concat_keys = Tensor::cat(&[&audio_keys, &text_keys], 2)?;

        let (cross_text, text_attention) = self.text_query.forward(text, audio, Some(&audio_keys))?;
        let (cross_audio, audio_attention) = self.audio_query.forward(audio, text, Some(&text_keys))?;
        let self_out = self.self_attention.forward(audio, text, Some(&concat_keys))?;
        Ok(FusionOutput {
            cross_text,
            cross_audio,
            self_out,
            text_attention,
            audio_attention,
            audio_mask,
            text_mask,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DetectionScore {
    pub logit: Tensor,
    /// Sigmoid of the logit, `(batch,)`.
    pub probability: Tensor,
    /// Pooled and concatenated features `(batch, 3d)`.
    pub pooled: Tensor,
}

/// Max-pool over time, concatenate, logistic output.
#[derive(Debug, Clone)]
pub struct PatternDiscriminator {
    fc: Linear,
}

fn masked_max(x: &Tensor, additive: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_add(additive)?.max(1)?)
}

impl PatternDiscriminator {
    pub fn new(ps: &ParamStore, cfg: &FusionConfig) -> Result<Self> {
        Ok(Self {
            fc: Linear::new(&ps.pp("fc"), 3 * cfg.dim, 1, true)?,
        })
    }

    pub fn forward(&self, f: &FusionOutput) -> Result<DetectionScore> {
        let concat_mask = Tensor::cat(&[&f.audio_mask, &f.text_mask], 1)?;
        let e_cross_text = masked_max(&f.cross_text, &f.text_mask)?;
        let e_cross_audio = masked_max(&f.cross_audio, &f.audio_mask)?;
        let e_self = masked_max(&f.self_out, &concat_mask)?;
        let pooled = Tensor::cat(&[e_cross_text, e_cross_audio, e_self], 1)?;
        let logit = self.fc.forward(&pooled)?.squeeze(1)?;
        let probability = sigmoid(&logit)?;
        Ok(DetectionScore {
            logit,
            probability,
            pooled,
        })
    }
}
