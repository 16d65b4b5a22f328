//! Audio encoder (dual-path convolutional extractor + GRU) and text encoder
//! (phoneme embedding + GRU), both producing `d`-dimensional sequences.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::nn::{conv_out_len, conv_transpose_out_len, length_mask, Conv1d, ConvTranspose1d, Gru, ParamStore};

/// Kernel, stride and padding of one (transposed) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Transposed convolutions only.
    #[serde(default)]
    pub output_padding: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioEncoderConfig {
    pub feature_dim: usize,
    /// Width of the embedder hidden states feeding the first path.
    pub embedder_dim: usize,
    pub subsampling_factor: usize,
    pub path_channels: usize,
    pub dim: usize,
    pub path1_up: ConvSpec,
    pub path2_down: ConvSpec,
    pub path2_up: ConvSpec,
}

impl Default for AudioEncoderConfig {
    fn default() -> Self {
        Self {
            feature_dim: 80,
            embedder_dim: 144,
            subsampling_factor: 4,
            path_channels: 128,
            dim: 128,
            path1_up: ConvSpec { kernel: 5, stride: 4, padding: 1, output_padding: 1 },
            path2_down: ConvSpec { kernel: 3, stride: 2, padding: 1, output_padding: 0 },
            path2_up: ConvSpec { kernel: 3, stride: 2, padding: 1, output_padding: 1 },
        }
    }
}

/// Time lengths through the two audio paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AudioLengths {
    pub embedder: usize,
    /// Path 1 before alignment.
    pub path1: usize,
    pub path2_down: usize,
    /// Path 2 output, which is also T_a.
    pub audio: usize,
}

impl AudioEncoderConfig {
    pub fn lengths(&self, frames: usize) -> Result<AudioLengths> {
        if frames == 0 {
            return Err(KwsError::invalid("audio has no frames"));
        }
        let embedder = frames.div_ceil(self.subsampling_factor);
        let up = |len: usize, s: &ConvSpec| conv_transpose_out_len(len, s.kernel, s.stride, s.padding, s.output_padding);
        let d = &self.path2_down;
        let path2_down = conv_out_len(frames, d.kernel, d.stride, d.padding)
            .ok_or_else(|| KwsError::invalid(format!("{frames} frames are shorter than the path-2 kernel")))?;
        let audio = up(path2_down, &self.path2_up);
        if audio == 0 {
            return Err(KwsError::invalid(format!("{frames} frames give an empty audio embedding")));
        }
        Ok(AudioLengths {
            embedder,
            path1: up(embedder, &self.path1_up),
            path2_down,
            audio,
        })
    }
}

fn crop_or_pad(x: &Tensor, len: usize) -> Result<Tensor> {
    let t = x.dim(1)?;
    Ok(if t >= len { x.narrow(1, 0, len)? } else { x.pad_with_zeros(1, 0, len - t)? })
}

pub struct AudioEncoder {
    cfg: AudioEncoderConfig,
    path1_up: ConvTranspose1d,
    path2_down: Conv1d,
    path2_up: ConvTranspose1d,
    gru: Gru,
}

impl AudioEncoder {
    pub fn new(ps: &ParamStore, cfg: &AudioEncoderConfig) -> Result<Self> {
        let c = cfg.path_channels;
        let t = |ps: &ParamStore, i: usize, s: &ConvSpec| ConvTranspose1d::new(ps, i, c, s.kernel, s.stride, s.padding, s.output_padding);
        let d = &cfg.path2_down;
        Ok(Self {
            cfg: cfg.clone(),
            path1_up: t(&ps.pp("path1_up"), cfg.embedder_dim, &cfg.path1_up)?,
            path2_down: Conv1d::new(&ps.pp("path2_down"), cfg.feature_dim, c, d.kernel, d.stride, d.padding)?,
            path2_up: t(&ps.pp("path2_up"), c, &cfg.path2_up)?,
            gru: Gru::new(&ps.pp("gru"), 2 * c, cfg.dim)?,
        })
    }

    pub fn config(&self) -> &AudioEncoderConfig {
        &self.cfg
    }

    /// `hidden` is `(batch, T_e, embedder_dim)`, `features` is
    /// `(batch, T, feature_dim)`; both zero beyond each item's length.
    /// Returns `(batch, T_a, dim)` and the per-item T_a.
    pub fn forward(&self, hidden: &Tensor, features: &Tensor, frames: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let (b, t, _) = features.dims3()?;
        let (bh, t_e, _) = hidden.dims3()?;
        if b != bh || b != frames.len() {
            return Err(KwsError::Shape("audio batch sizes disagree".into()));
        }
        let lens: Vec<AudioLengths> = frames.iter().map(|&n| self.cfg.lengths(n)).collect::<Result<_>>()?;
        let batch = self.cfg.lengths(t)?;
        if t_e < batch.embedder {
            return Err(KwsError::Shape(format!("{t_e} embedder frames for {t} input frames")));
        }
        let (dtype, dev) = (features.dtype(), features.device());
        let t_a = batch.audio;
        let audio_lens: Vec<usize> = lens.iter().map(|l| l.audio).collect();

        let down_lens: Vec<usize> = lens.iter().map(|l| l.path2_down).collect();
        let p2 = self.path2_down.forward(features)?;
        let p2 = p2.broadcast_mul(&length_mask(&down_lens, p2.dim(1)?, dtype, dev)?)?;
        let p2 = crop_or_pad(&self.path2_up.forward(&p2)?, t_a)?;
        let p2 = p2.broadcast_mul(&length_mask(&audio_lens, t_a, dtype, dev)?)?;

        let hidden = hidden.narrow(1, 0, batch.embedder)?;
        let p1 = crop_or_pad(&self.path1_up.forward(&hidden)?, t_a)?;
        let p1_lens: Vec<usize> = lens.iter().map(|l| l.path1.min(l.audio)).collect();
        let p1 = p1.broadcast_mul(&length_mask(&p1_lens, t_a, dtype, dev)?)?;

        let cat = Tensor::cat(&[p1, p2], D::Minus1)?;
        let out = self.gru.forward(&cat)?;
        let out = out.broadcast_mul(&length_mask(&audio_lens, t_a, dtype, dev)?)?;
        Ok((out, audio_lens))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextEncoderConfig {
    pub inventory_size: usize,
    pub embedding_dim: usize,
    pub dim: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            inventory_size: 12,
            embedding_dim: 64,
            dim: 128,
        }
    }
}

pub struct TextEncoder {
    cfg: TextEncoderConfig,
    table: Tensor,
    gru: Gru,
}

impl TextEncoder {
    pub fn new(ps: &ParamStore, cfg: &TextEncoderConfig) -> Result<Self> {
        Ok(Self {
            cfg: cfg.clone(),
            table: ps.normal("embedding", &[cfg.inventory_size, cfg.embedding_dim], 1.0)?,
            gru: Gru::new(&ps.pp("gru"), cfg.embedding_dim, cfg.dim)?,
        })
    }

    /// Encodes a batch of phoneme sequences into `(batch, T_t, dim)`.
    pub fn forward(&self, sequences: &[&[u32]]) -> Result<(Tensor, Vec<usize>)> {
        let lens: Vec<usize> = sequences.iter().map(|s| s.len()).collect();
        if sequences.is_empty() || lens.contains(&0) {
            return Err(KwsError::invalid("phoneme sequences must be non-empty"));
        }
        let p = self.cfg.inventory_size as u32;
        if let Some(bad) = sequences.iter().flat_map(|s| s.iter()).find(|&&id| id >= p) {
            return Err(KwsError::invalid(format!("phoneme id {bad} outside an inventory of {p}")));
        }
        let t_t = *lens.iter().max().expect("non-empty");
        let mut ids = vec![0u32; sequences.len() * t_t];
        for (i, s) in sequences.iter().enumerate() {
            ids[i * t_t..i * t_t + s.len()].copy_from_slice(s);
        }
        let dev = self.table.device();
        let idx = Tensor::from_vec(ids, sequences.len() * t_t, dev)?;
        let emb = self
            .table
            .index_select(&idx, 0)?
            .reshape((sequences.len(), t_t, self.cfg.embedding_dim))?;
        let out = self.gru.forward(&emb)?;
        let out = out.broadcast_mul(&length_mask(&lens, t_t, self.table.dtype(), dev)?)?;
        Ok((out, lens))
    }
}
