//! Conformer speech embedder pretrained with phoneme-level CTC. Supplies
//! frame hidden states to the audio encoder and frame-level phoneme
//! predictions to the alignment targets.

mod conformer;
pub mod ctc;
mod pretrain;

use std::path::Path;

use candle_core::{DType, Device};

pub use conformer::{pad_batch, EmbedderConfig, EmbedderOutput, SpeechEmbedder};
pub use pretrain::{frame_accuracy, pretrain_ctc, FineTuneStage, FrameAccuracy, PretrainConfig, PretrainEpoch, PretrainOutcome};

use crate::checkpoint::{Checkpoint, CheckpointHeader, CheckpointKind};
use crate::error::{KwsError, Result};
use crate::features::{FeatureMatrix, PhonemeInventory};
use crate::nn::ParamStore;

/// Per-utterance embedder output, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutputs {
    pub n_frames: usize,
    /// `n_frames x model_dim` hidden states of the final block.
    pub hidden: Vec<f32>,
    /// `n_frames x P` unnormalized phoneme scores.
    pub logits: Vec<f32>,
    pub model_dim: usize,
    pub inventory_size: usize,
}

impl FrameOutputs {
    pub fn predictions(&self, t_a: usize) -> Vec<u32> {
        frame_phoneme_predictions(&self.logits, self.inventory_size, t_a)
    }
}

/// Embedder weights with their configuration.
pub struct Embedder {
    params: ParamStore,
    model: SpeechEmbedder,
}

impl Embedder {
    pub fn new(cfg: &EmbedderConfig, seed: u64) -> Result<Self> {
        let params = ParamStore::new(seed, DType::F32, Device::Cpu);
        let model = SpeechEmbedder::new(&params, cfg)?;
        Ok(Self { params, model })
    }

    pub fn config(&self) -> &EmbedderConfig {
        self.model.config()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn model(&self) -> &SpeechEmbedder {
        &self.model
    }

    /// Batched inference; results are in input order.
    pub fn embed(&self, items: &[&FeatureMatrix]) -> Result<Vec<FrameOutputs>> {
        let (x, lens) = pad_batch(items, self.params.device())?;
        let out = self.model.forward(&x, &lens)?;
        let hidden = out.hidden.to_dtype(DType::F32)?.to_vec3::<f32>()?;
        let logits = out.logits.to_dtype(DType::F32)?.to_vec3::<f32>()?;
        let cfg = self.config();
        Ok(out
            .lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| FrameOutputs {
                n_frames: n,
                hidden: hidden[i][..n].concat(),
                logits: logits[i][..n].concat(),
                model_dim: cfg.model_dim,
                inventory_size: cfg.inventory_size,
            })
            .collect())
    }

    pub fn to_checkpoint(&self, inventory: &PhonemeInventory, seed: u64, epoch: usize) -> Result<Checkpoint> {
        let header = CheckpointHeader::new(
            CheckpointKind::Embedder,
            seed,
            epoch,
            inventory.symbols()[1..].to_vec(),
            serde_json::to_value(self.config())?,
        );
        Ok(Checkpoint {
            header,
            tensors: self.params.export()?,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.header.kind != CheckpointKind::Embedder {
            return Err(KwsError::Checkpoint("expected an embedder checkpoint".into()));
        }
        let cfg: EmbedderConfig = serde_json::from_value(ckpt.header.config.clone())?;
        Self::from_tensors(&cfg, &ckpt.tensors)
    }

    pub fn from_tensors(cfg: &EmbedderConfig, tensors: &crate::checkpoint::TensorMap) -> Result<Self> {
        let e = Self::new(cfg, 0)?;
        e.params.load(tensors)?;
        Ok(e)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Embeds one utterance.
pub fn embed_frames(f: &FeatureMatrix, embedder: &Embedder) -> Result<FrameOutputs> {
    Ok(embedder.embed(&[f])?.remove(0))
}

/// Per-frame argmax phoneme (lowest ID on ties), resampled to `t_a` frames
/// by nearest-centre lookup.
pub fn frame_phoneme_predictions(logits: &[f32], inventory_size: usize, t_a: usize) -> Vec<u32> {
    let t_e = logits.len() / inventory_size.max(1);
    if t_e == 0 {
        return vec![0; t_a];
    }
    let argmax: Vec<u32> = logits
        .chunks_exact(inventory_size)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect();
    (0..t_a)
        .map(|i| {
            let src = ((2 * i + 1) * t_e) / (2 * t_a);
            argmax[src.min(t_e - 1)]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> EmbedderConfig {
        EmbedderConfig {
            num_layers: 2,
            model_dim: 16,
            attention_heads: 4,
            input_dim: 6,
            inventory_size: 5,
            ..EmbedderConfig::default()
        }
    }

    fn features(n: usize, dim: usize, seed: u64) -> FeatureMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix::new(n, dim, (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn output_length_and_determinism() {
        let e = Embedder::new(&tiny(), 1).unwrap();
        for n in [1, 3, 4, 5, 17] {
            let f = features(n, 6, n as u64);
            let a = embed_frames(&f, &e).unwrap();
            assert_eq!(a.n_frames, n.div_ceil(4));
            assert_eq!(a.hidden.len(), a.n_frames * 16);
            assert_eq!(a.logits.len(), a.n_frames * 5);
            assert!(a.hidden.iter().chain(&a.logits).all(|v| v.is_finite()));
            assert_eq!(a, embed_frames(&f, &e).unwrap());
        }
        let two = Embedder::new(&EmbedderConfig { subsampling_factor: 2, ..tiny() }, 1).unwrap();
        assert_eq!(embed_frames(&features(100, 6, 0), &two).unwrap().n_frames, 50);
        assert!(embed_frames(&features(4, 7, 0), &e).is_err());
    }

    #[test]
    fn batched_matches_single() {
        let e = Embedder::new(&tiny(), 2).unwrap();
        let fs: Vec<FeatureMatrix> = [9, 21, 4, 13].iter().map(|&n| features(n, 6, n as u64)).collect();
        let refs: Vec<&FeatureMatrix> = fs.iter().collect();
        let batch = e.embed(&refs).unwrap();
        for (f, b) in fs.iter().zip(&batch) {
            let s = embed_frames(f, &e).unwrap();
            for (x, y) in s.hidden.iter().zip(&b.hidden).chain(s.logits.iter().zip(&b.logits)) {
                assert!((x - y).abs() < 1e-5, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let e = Embedder::new(&tiny(), 3).unwrap();
        let inv = PhonemeInventory::new(["a", "b", "c", "d"]).unwrap();
        let ck = e.to_checkpoint(&inv, 3, 0).unwrap();
        let back = Embedder::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap()).unwrap();
        let f = features(11, 6, 0);
        assert_eq!(embed_frames(&f, &e).unwrap(), embed_frames(&f, &back).unwrap());
    }

    #[test]
    fn predictions_argmax_ties_and_resampling() {
        let logits = [0.1f32, 0.9, 0.0, 2.0, 1.0, 0.0, 0.5, 0.5, 0.5];
        assert_eq!(frame_phoneme_predictions(&logits, 3, 3), vec![1, 0, 0]);
        let ten: Vec<f32> = (0..10).flat_map(|t| (0..10).map(move |k| if k == t { 1.0 } else { 0.0 })).collect();
        let p = frame_phoneme_predictions(&ten, 10, 20);
        assert_eq!(p, (0..20).map(|i| i / 2).collect::<Vec<u32>>());
    }

    proptest! {
        #[test]
        fn prediction_length_is_t_a(t_e in 1usize..30, t_a in 1usize..80, p in 2usize..6) {
            let logits: Vec<f32> = (0..t_e * p).map(|i| ((i * 37) % 11) as f32).collect();
            let out = frame_phoneme_predictions(&logits, p, t_a);
            prop_assert_eq!(out.len(), t_a);
            prop_assert!(out.iter().all(|&x| (x as usize) < p));
        }
    }
}
