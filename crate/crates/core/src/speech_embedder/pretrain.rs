use std::time::Instant;

use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::ctc::{ctc_loss_and_grad, min_frames};
use super::{pad_batch, Embedder, EmbedderConfig, FrameOutputs};
use crate::datagen::{frame_labels, Utterance};
use crate::error::{KwsError, Result};
use crate::losses::BlankPolicy;

/// Second pass restricted to short utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneStage {
    pub epochs: usize,
    pub max_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub embedder: EmbedderConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Use only the first N training utterances.
    pub max_utterances: Option<usize>,
    pub fine_tune: Option<FineTuneStage>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            embedder: EmbedderConfig::default(),
            epochs: 8,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            max_utterances: None,
            fine_tune: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub stage: String,
    pub epoch: usize,
    pub mean_loss: f64,
    pub utterances: usize,
    pub seconds: f64,
}

pub struct PretrainOutcome {
    pub embedder: Embedder,
    pub log: Vec<PretrainEpoch>,
    /// Ids of utterances dropped because their targets do not fit.
    pub skipped: Vec<String>,
}

fn run_epoch(
    embedder: &Embedder,
    opt: &mut AdamW,
    items: &[&Utterance],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    let p = embedder.config().inventory_size;
    let mut total = 0.0;
    for (step, chunk) in order.chunks(batch_size).enumerate() {
        let feats: Vec<_> = chunk.iter().map(|&i| &items[i].features).collect();
        let (x, lens) = pad_batch(&feats, embedder.params().device())?;
        let out = embedder.model().forward(&x, &lens)?;
        let (b, t_e, _) = out.logits.dims3()?;
        let logits = out.logits.to_vec3::<f32>()?;
        let mut grad = vec![0f32; b * t_e * p];
        let mut batch_loss = 0.0;
        for (k, &i) in chunk.iter().enumerate() {
            let n = out.lengths[k];
            let flat = logits[k][..n].concat();
            let (loss, g) = ctc_loss_and_grad(&flat, n, p, &items[i].record.phoneme_ids)?;
            if !loss.is_finite() {
                return Err(KwsError::Diverged {
                    epoch,
                    step,
                    detail: format!("CTC loss {loss} on {}", items[i].record.id),
                    last_good: None,
                });
            }
            batch_loss += loss;
            for (dst, src) in grad[k * t_e * p..].iter_mut().zip(&g) {
                *dst = (*src / b as f64) as f32;
            }
        }
        let g = Tensor::from_vec(grad, (b, t_e, p), out.logits.device())?;
        let surrogate = (&out.logits * g)?.sum_all()?;
        opt.backward_step(&surrogate)?;
        total += batch_loss;
    }
    Ok(total / items.len() as f64)
}

/// Trains the embedder with CTC on the given utterances. Utterances whose
/// phoneme sequence cannot fit in the subsampled length are skipped.
pub fn pretrain_ctc(utterances: &[&Utterance], cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    cfg.embedder.validate()?;
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(KwsError::invalid("batch_size and learning_rate must be positive"));
    }
    let limit = cfg.max_utterances.unwrap_or(usize::MAX);
    let mut usable = Vec::new();
    let mut skipped = Vec::new();
    for u in utterances.iter().take(limit) {
        let t_e = cfg.embedder.output_len(u.features.n_frames());
        if min_frames(&u.record.phoneme_ids) > t_e {
            warn!(id = %u.record.id, frames = t_e, "skipping utterance: target longer than embedder output");
            skipped.push(u.record.id.clone());
        } else if u.features.dim() != cfg.embedder.input_dim {
            return Err(KwsError::invalid(format!("{}: feature dim {}", u.record.id, u.features.dim())));
        } else {
            usable.push(*u);
        }
    }
    if usable.is_empty() {
        return Err(KwsError::invalid("pretraining corpus is empty"));
    }
    let embedder = Embedder::new(&cfg.embedder, cfg.seed)?;
    let vars: Vec<Var> = embedder.params().vars().into_iter().map(|(_, v)| v).collect();
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut stages = vec![("main".to_string(), cfg.epochs, usable.clone())];
    if let Some(ft) = &cfg.fine_tune {
        let short: Vec<&Utterance> = usable.iter().copied().filter(|u| u.features.n_frames() <= ft.max_frames).collect();
        if short.is_empty() {
            warn!(max_frames = ft.max_frames, "fine-tune stage has no utterances; skipping it");
        } else {
            stages.push(("fine_tune".to_string(), ft.epochs, short));
        }
    }
    let mut log = Vec::new();
    let mut epoch_index = 0;
    for (stage, epochs, items) in stages {
        for e in 0..epochs {
            let start = Instant::now();
            let mean_loss = run_epoch(&embedder, &mut opt, &items, cfg.batch_size, &mut rng, epoch_index)?;
            let seconds = start.elapsed().as_secs_f64();
            info!(stage = %stage, epoch = e, loss = mean_loss, seconds, "pretrain epoch");
            log.push(PretrainEpoch {
                stage: stage.clone(),
                epoch: e,
                mean_loss,
                utterances: items.len(),
                seconds,
            });
            epoch_index += 1;
        }
    }
    Ok(PretrainOutcome { embedder, log, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameAccuracy {
    /// Fraction of embedder output frames whose argmax equals the true
    /// phoneme at the centre of the frame's input window.
    pub raw: f64,
    /// Same, after blank frames take the preceding non-blank prediction.
    pub blank_filled: f64,
    /// Predictions resampled to the input frame rate and scored per input frame.
    pub input_rate: f64,
    pub frames: usize,
}

/// Frame-level phoneme accuracy against ground-truth durations.
pub fn frame_accuracy(embedder: &Embedder, utterances: &[&Utterance], batch_size: usize) -> Result<FrameAccuracy> {
    let s = embedder.config().subsampling_factor;
    let (mut raw, mut filled, mut frames) = (0usize, 0usize, 0usize);
    let (mut input_hits, mut input_frames) = (0usize, 0usize);
    for chunk in utterances.chunks(batch_size.max(1)) {
        let feats: Vec<_> = chunk.iter().map(|u| &u.features).collect();
        let outs: Vec<FrameOutputs> = embedder.embed(&feats)?;
        for (u, o) in chunk.iter().zip(&outs) {
            let labels = frame_labels(&u.record)
                .ok_or_else(|| KwsError::invalid(format!("{} has no true durations", u.record.id)))?;
            let pred = o.predictions(o.n_frames);
            let merged = BlankPolicy::Merge.apply(&pred);
            for t in 0..o.n_frames {
                let truth = labels[(t * s + s / 2).min(labels.len() - 1)];
                raw += usize::from(pred[t] == truth);
                filled += usize::from(merged[t] == truth);
            }
            frames += o.n_frames;
            let upsampled = o.predictions(labels.len());
            input_hits += upsampled.iter().zip(&labels).filter(|(a, b)| a == b).count();
            input_frames += labels.len();
        }
    }
    if frames == 0 {
        return Err(KwsError::invalid("no frames to score"));
    }
    Ok(FrameAccuracy {
        raw: raw as f64 / frames as f64,
        blank_filled: filled as f64 / frames as f64,
        input_rate: input_hits as f64 / input_frames as f64,
        frames,
    })
}
