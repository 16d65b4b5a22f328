//! The full detector: frozen speech embedder, audio and text encoders,
//! pattern extractor and discriminator.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointHeader, CheckpointKind};
use crate::encoders::{AudioEncoder, AudioEncoderConfig, ConvSpec, TextEncoder, TextEncoderConfig};
use crate::error::{KwsError, Result};
use crate::features::{FeatureMatrix, Lexicon, PhonemeInventory};
use crate::fusion::{FusionConfig, PairLengths, PatternDiscriminator, PatternExtractor};
use crate::nn::ParamStore;
use crate::speech_embedder::{pad_batch, Embedder, EmbedderConfig, FrameOutputs};

pub const EMBEDDER_PREFIX: &str = "embedder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedder: EmbedderConfig,
    pub audio: AudioEncoderConfig,
    pub text: TextEncoderConfig,
    pub fusion: FusionConfig,
}

impl ModelConfig {
    /// Encoder and fusion settings matched to an embedder.
    pub fn for_embedder(embedder: &EmbedderConfig) -> Self {
        let audio = AudioEncoderConfig {
            feature_dim: embedder.input_dim,
            embedder_dim: embedder.model_dim,
            subsampling_factor: embedder.subsampling_factor,
            ..AudioEncoderConfig::default()
        };
        let text = TextEncoderConfig {
            inventory_size: embedder.inventory_size,
            ..TextEncoderConfig::default()
        };
        Self {
            embedder: embedder.clone(),
            audio,
            text,
            fusion: FusionConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        let e = &self.embedder;
        let a = &self.audio;
        if a.feature_dim != e.input_dim || a.embedder_dim != e.model_dim || a.subsampling_factor != e.subsampling_factor {
            return Err(KwsError::invalid("audio encoder settings do not match the embedder"));
        }
        if self.text.inventory_size != e.inventory_size {
            return Err(KwsError::invalid("text encoder inventory differs from the embedder's"));
        }
        if a.dim != self.fusion.dim || self.text.dim != self.fusion.dim {
            return Err(KwsError::invalid("audio, text and fusion dimensions must agree"));
        }
        Ok(())
    }
}

/// Sizes of everything downstream of the embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    /// Shared width of the audio and text embeddings and the fusion layers.
    pub dim: usize,
    pub path_channels: usize,
    pub text_embedding_dim: usize,
    pub path1_up: ConvSpec,
    pub path2_down: ConvSpec,
    pub path2_up: ConvSpec,
}

impl Default for HeadConfig {
    fn default() -> Self {
        let a = AudioEncoderConfig::default();
        Self {
            dim: a.dim,
            path_channels: a.path_channels,
            text_embedding_dim: TextEncoderConfig::default().embedding_dim,
            path1_up: a.path1_up,
            path2_down: a.path2_down,
            path2_up: a.path2_up,
        }
    }
}

impl HeadConfig {
    pub fn model_config(&self, embedder: &EmbedderConfig) -> ModelConfig {
        let mut cfg = ModelConfig::for_embedder(embedder);
        cfg.audio.dim = self.dim;
        cfg.audio.path_channels = self.path_channels;
        cfg.audio.path1_up = self.path1_up;
        cfg.audio.path2_down = self.path2_down;
        cfg.audio.path2_up = self.path2_up;
        cfg.text.dim = self.dim;
        cfg.text.embedding_dim = self.text_embedding_dim;
        cfg.fusion.dim = self.dim;
        cfg
    }
}

/// One audio-text pair ready for the forward pass.
#[derive(Clone, Copy)]
pub struct PairInput<'a> {
    pub features: &'a FeatureMatrix,
    /// Frozen embedder output, if already computed.
    pub frames: Option<&'a FrameOutputs>,
    pub phonemes: &'a [u32],
}

pub struct ModelOutput {
    pub logit: Tensor,
    /// `(batch,)`
    pub probability: Tensor,
    /// `(batch, T_a, T_t)`, zero outside each item's lengths.
    pub affinity: Tensor,
    /// Text-query attention `(batch, T_t, T_a)`.
    pub text_attention: Tensor,
    pub audio_attention: Tensor,
    pub audio_lens: Vec<usize>,
    pub text_lens: Vec<usize>,
}

pub struct KwsModel {
    cfg: ModelConfig,
    params: ParamStore,
    embedder: Embedder,
    audio: AudioEncoder,
    text: TextEncoder,
    extractor: PatternExtractor,
    discriminator: PatternDiscriminator,
}

impl KwsModel {
    /// Fresh trainable parts around a given embedder.
    pub fn new(cfg: &ModelConfig, embedder: Embedder, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if embedder.config() != &cfg.embedder {
            return Err(KwsError::invalid("embedder weights do not match the model configuration"));
        }
        let params = ParamStore::new(seed, DType::F32, Device::Cpu);
        Ok(Self {
            audio: AudioEncoder::new(&params.pp("audio"), &cfg.audio)?,
            text: TextEncoder::new(&params.pp("text"), &cfg.text)?,
            extractor: PatternExtractor::new(&params.pp("extractor"), &cfg.fusion)?,
            discriminator: PatternDiscriminator::new(&params.pp("discriminator"), &cfg.fusion)?,
            cfg: cfg.clone(),
            params,
            embedder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Trainable parameters (the embedder is held separately).
    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    fn cached_hidden(&self, frames: &[&FrameOutputs]) -> Result<Tensor> {
        let dim = self.cfg.embedder.model_dim;
        let t_max = frames.iter().map(|f| f.n_frames).max().unwrap_or(0);
        let mut buf = vec![0f32; frames.len() * t_max * dim];
        for (i, f) in frames.iter().enumerate() {
            if f.model_dim != dim {
                return Err(KwsError::Shape(format!("cached hidden width {} vs {dim}", f.model_dim)));
            }
            buf[i * t_max * dim..i * t_max * dim + f.hidden.len()].copy_from_slice(&f.hidden);
        }
        Ok(Tensor::from_vec(buf, (frames.len(), t_max, dim), self.params.device())?)
    }

    /// Batched forward pass. With `train_embedder` the embedder runs inside
    /// the graph; otherwise cached or freshly computed outputs are constants.
    pub fn forward(&self, items: &[PairInput<'_>], train_embedder: bool) -> Result<ModelOutput> {
        if items.is_empty() {
            return Err(KwsError::invalid("empty batch"));
        }
        let feats: Vec<&FeatureMatrix> = items.iter().map(|p| p.features).collect();
        let (x, frames) = pad_batch(&feats, self.params.device())?;
        let hidden = if train_embedder {
            self.embedder.model().forward(&x, &frames)?.hidden
        } else if items.iter().all(|p| p.frames.is_some()) {
            let cached: Vec<&FrameOutputs> = items.iter().filter_map(|p| p.frames).collect();
            for (c, &n) in cached.iter().zip(&frames) {
                if c.n_frames != self.cfg.embedder.output_len(n) {
                    return Err(KwsError::Shape("cached embedder output does not match its features".into()));
                }
            }
            self.cached_hidden(&cached)?
        } else {
            self.embedder.model().forward(&x, &frames)?.hidden.detach()
        };
        let (audio, audio_lens) = self.audio.forward(&hidden, &x, &frames)?;
        let seqs: Vec<&[u32]> = items.iter().map(|p| p.phonemes).collect();
        let (text, text_lens) = self.text.forward(&seqs)?;
        let lens = PairLengths {
            audio: audio_lens.clone(),
            text: text_lens.clone(),
        };
        let fused = self.extractor.forward(&audio, &text, &lens)?;
        let score = self.discriminator.forward(&fused)?;
        Ok(ModelOutput {
            logit: score.logit,
            probability: score.probability,
            affinity: fused.affinity()?,
            text_attention: fused.text_attention,
            audio_attention: fused.audio_attention,
            audio_lens,
            text_lens,
        })
    }

    /// Detection probabilities in input order.
    pub fn score(&self, items: &[PairInput<'_>]) -> Result<Vec<f64>> {
        let out = self.forward(items, false)?;
        Ok(out.probability.to_dtype(DType::F64)?.to_vec1::<f64>()?)
    }

    pub fn to_checkpoint(&self, lexicon: &Lexicon, seed: u64, epoch: usize) -> Result<Checkpoint> {
        let mut header = CheckpointHeader::new(
            CheckpointKind::Model,
            seed,
            epoch,
            lexicon.inventory().symbols()[1..].to_vec(),
            serde_json::to_value(&self.cfg)?,
        );
        header.lexicon = Some(lexicon.to_lexicon_text());
        header.fallback = Some(lexicon.to_fallback_text());
        let mut tensors = self.params.export()?;
        for (k, v) in self.embedder.params().export()? {
            tensors.insert(format!("{EMBEDDER_PREFIX}.{k}"), v);
        }
        Ok(Checkpoint { header, tensors })
    }

    /// Rebuilds the model and its lexicon from a model checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, Lexicon)> {
        if ckpt.header.kind != CheckpointKind::Model {
            return Err(KwsError::Checkpoint("expected a model checkpoint".into()));
        }
        let cfg: ModelConfig = serde_json::from_value(ckpt.header.config.clone())?;
        let embedder = Embedder::from_tensors(&cfg.embedder, &ckpt.sub_tensors(EMBEDDER_PREFIX))?;
        let model = Self::new(&cfg, embedder, 0)?;
        let own: crate::checkpoint::TensorMap = ckpt
            .tensors
            .iter()
            .filter(|(k, _)| !k.starts_with(&format!("{EMBEDDER_PREFIX}.")))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        model.params.load(&own)?;
        let inventory = PhonemeInventory::new(ckpt.header.inventory.iter().cloned())?;
        let lexicon = Lexicon::parse(
            inventory,
            ckpt.header.lexicon.as_deref().unwrap_or(""),
            ckpt.header.fallback.as_deref().unwrap_or(""),
        )?;
        Ok((model, lexicon))
    }

    pub fn load(path: &Path) -> Result<(Self, Lexicon)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
