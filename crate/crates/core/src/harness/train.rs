use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::eval::{evaluate_scored, score_pairs_cached, FrameCache};
use crate::checkpoint::TensorMap;
use crate::datagen::{add_feature_noise, levenshtein, Corpus, EvalPair, Utterance};
use crate::error::{KwsError, Result};
use crate::features::{FeatureMatrix, Lexicon};
use crate::losses::tensor::{detection_loss_batch, pad_targets, pda_loss_batch};
use crate::losses::{BlankPolicy, LossMode, PdaReduction, TargetInput, TargetRegistry, DEFAULT_LAMBDA, DEFAULT_SHARPNESS};
use crate::model::{KwsModel, PairInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Constant Adam learning rate.
    pub learning_rate: f64,
    pub lambda: f64,
    pub sharpness: f64,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub pda_reduction: PdaReduction,
    pub blank_policy: BlankPolicy,
    pub freeze_embedder: bool,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Select the checkpoint on the test pairs instead of validation pairs.
    pub select_on_test: bool,
    /// Share of training negatives drawn from phonetically close keywords.
    pub hard_negative_fraction: f64,
    pub negatives_per_positive: usize,
    pub hard_threshold: usize,
    /// Standard deviation of additive feature noise during training.
    pub augment_noise_std: f64,
    pub eval_batch_size: usize,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            lambda: DEFAULT_LAMBDA,
            sharpness: DEFAULT_SHARPNESS,
            seed: 0,
            loss_mode: LossMode::DetectionPda,
            pda_reduction: PdaReduction::Mean,
            blank_policy: BlankPolicy::Keep,
            freeze_embedder: true,
            patience: 10,
            select_on_test: false,
            hard_negative_fraction: 0.5,
            negatives_per_positive: 1,
            hard_threshold: 2,
            augment_noise_std: 0.0,
            eval_batch_size: 128,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(KwsError::invalid("batch sizes must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.lambda >= 0.0) || !(self.sharpness > 0.0) {
            return Err(KwsError::invalid("learning_rate and sharpness must be positive, lambda non-negative"));
        }
        if !(0.0..=1.0).contains(&self.hard_negative_fraction) {
            return Err(KwsError::invalid("hard_negative_fraction must lie in [0, 1]"));
        }
        if self.augment_noise_std < 0.0 {
            return Err(KwsError::invalid("augment_noise_std must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub loss_detection: f64,
    pub loss_pda: f64,
    pub loss_total: f64,
    pub embedder_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_detection: f64,
    pub loss_pda: f64,
    pub loss_total: f64,
    pub selection_eer: Option<f64>,
    pub seconds: f64,
}

pub struct TrainOutcome {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights the model holds on return.
    pub best_epoch: usize,
    pub best_eer: Option<f64>,
}

/// Pairs used to pick the best epoch.
pub struct Selection<'a> {
    pub corpus: &'a Corpus,
    pub pairs: &'a [EvalPair],
}

struct TrainPair {
    utterance: usize,
    keyword: usize,
    label: u8,
}

struct Keywords {
    phonemes: Vec<Vec<u32>>,
    of_utterance: Vec<usize>,
    near: Vec<Vec<usize>>,
}

fn keywords(items: &[&Utterance], hard_threshold: usize) -> Result<Keywords> {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut phonemes: Vec<Vec<u32>> = Vec::new();
    let mut of_utterance = Vec::with_capacity(items.len());
    for u in items {
        let next = index.len();
        let k = *index.entry(u.record.text.as_str()).or_insert(next);
        if k == phonemes.len() {
            phonemes.push(u.record.phoneme_ids.clone());
        }
        of_utterance.push(k);
    }
    if phonemes.len() < 2 {
        return Err(KwsError::invalid("training needs at least two distinct keywords"));
    }
    let near = (0..phonemes.len())
        .map(|a| {
            (0..phonemes.len())
                .filter(|&b| b != a && levenshtein(&phonemes[a], &phonemes[b]) <= hard_threshold)
                .collect()
        })
        .collect();
    Ok(Keywords {
        phonemes,
        of_utterance,
        near,
    })
}

fn epoch_pairs(kw: &Keywords, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<TrainPair> {
    let n_kw = kw.phonemes.len();
    let mut pairs = Vec::new();
    for (u, &k) in kw.of_utterance.iter().enumerate() {
        pairs.push(TrainPair { utterance: u, keyword: k, label: 1 });
        for _ in 0..cfg.negatives_per_positive {
            let hard = rng.random::<f64>() < cfg.hard_negative_fraction;
            let neg = if hard && !kw.near[k].is_empty() {
                kw.near[k][rng.random_range(0..kw.near[k].len())]
            } else {
                let j = rng.random_range(0..n_kw - 1);
                if j >= k { j + 1 } else { j }
            };
            pairs.push(TrainPair { utterance: u, keyword: neg, label: 0 });
        }
    }
    pairs.shuffle(rng);
    pairs
}

/// Cuts shuffled pairs into batches of similar audio length: windows of
/// `BUCKET_WINDOW` batches are sorted by length, then batch order is shuffled.
fn bucketed_batches(pairs: Vec<TrainPair>, frames: &[usize], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<TrainPair>> {
    let mut batches = Vec::new();
    let mut it = pairs.into_iter().peekable();
    while it.peek().is_some() {
        let mut window: Vec<TrainPair> = it.by_ref().take(batch * BUCKET_WINDOW).collect();
        window.sort_by_key(|p| frames[p.utterance]);
        let mut rest = window.into_iter().peekable();
        while rest.peek().is_some() {
            batches.push(rest.by_ref().take(batch).collect());
        }
    }
    batches.shuffle(rng);
    batches
}

const BUCKET_WINDOW: usize = 16;

fn tensor_to_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

struct LogFiles {
    steps: BufWriter<File>,
    epochs: BufWriter<File>,
}

fn open_logs(dir: &Path) -> Result<LogFiles> {
    std::fs::create_dir_all(dir).map_err(|e| KwsError::io(dir, e))?;
    let open = |name: &str| -> Result<BufWriter<File>> {
        let p = dir.join(name);
        Ok(BufWriter::new(File::create(&p).map_err(|e| KwsError::io(&p, e))?))
    };
    Ok(LogFiles {
        steps: open("train_log.jsonl")?,
        epochs: open("epochs.jsonl")?,
    })
}

fn write_line(w: &mut BufWriter<File>, value: &impl Serialize, dir: &Path) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| KwsError::io(dir, e))
}

/// Trains the model's encoders, extractor and discriminator on pairs drawn
/// from `train`. The embedder stays frozen unless `freeze_embedder` is off.
/// On return the model holds the weights of the selected epoch.
pub fn train(
    model: &KwsModel,
    lexicon: &Lexicon,
    train: &[&Utterance],
    selection: Option<Selection<'_>>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    train_cached(model, lexicon, train, selection, cfg, out_dir, None)
}

/// [`train`] starting from embedder outputs in `cache`, which must come from
/// the model's embedder. Missing entries are computed.
pub fn train_cached(
    model: &KwsModel,
    lexicon: &Lexicon,
    train: &[&Utterance],
    selection: Option<Selection<'_>>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    cache: Option<&FrameCache>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(KwsError::invalid("no training utterances"));
    }
    let kw = keywords(train, cfg.hard_threshold)?;
    let registry = TargetRegistry::default();
    let positive_target = cfg.loss_mode.positive_target().map(|n| registry.get(n)).transpose()?;
    let negative_target = cfg.loss_mode.negative_target().map(|n| registry.get(n)).transpose()?;

    let mut vars: Vec<Var> = model.params().vars().into_iter().map(|(_, v)| v).collect();
    let embedder_vars: Vec<Var> = model.embedder().params().vars().into_iter().map(|(_, v)| v).collect();
    if !cfg.freeze_embedder {
        vars.extend(embedder_vars.iter().cloned());
    }
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        },
    )?;

    info!(utterances = train.len(), keywords = kw.phonemes.len(), "caching embedder outputs");
    let mut frame_cache = cache.cloned().unwrap_or_default();
    frame_cache.fill(model.embedder(), train, cfg.eval_batch_size)?;
    // selection reuses frames only while the embedder is frozen
    let selection_cache = match (&selection, cfg.freeze_embedder) {
        (Some(sel), true) => {
            let ids: std::collections::HashSet<&str> = sel.pairs.iter().map(|p| p.audio_ref.as_str()).collect();
            let used: Vec<&Utterance> = sel.corpus.utterances.iter().filter(|u| ids.contains(u.record.id.as_str())).collect();
            frame_cache.fill(model.embedder(), &used, cfg.eval_batch_size)?;
            Some(&frame_cache)
        }
        _ => None,
    };
    let cache: Vec<_> = train
        .iter()
        .map(|u| frame_cache.get(&u.record.id).expect("filled above"))
        .collect();

    let frames: Vec<usize> = train.iter().map(|u| u.features.n_frames()).collect();
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    data_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(2);
    let mut augment_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    augment_rng.set_stream(3);

    let mut logs = out_dir.map(open_logs).transpose()?;
    let last_path: Option<PathBuf> = out_dir.map(|d| d.join("last.ckpt"));
    let mut last_good: Option<PathBuf> = None;
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, TensorMap, TensorMap)> = None;
    let mut since_best = 0;
    let mut global_step = 0;
    let dev = model.params().device().clone();

    'epochs: for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let pairs = epoch_pairs(&kw, cfg, &mut data_rng);
        let batches = bucketed_batches(pairs, &frames, cfg.batch_size, &mut data_rng);
        let (mut sum_d, mut sum_p, mut sum_t, mut n_steps) = (0.0, 0.0, 0.0, 0usize);
        for (step, chunk) in batches.iter().enumerate() {
            if cfg.max_steps.is_some_and(|m| global_step >= m) {
                break 'epochs;
            }
            let noisy: Vec<FeatureMatrix> = if cfg.augment_noise_std > 0.0 {
                chunk
                    .iter()
                    .map(|p| add_feature_noise(&train[p.utterance].features, cfg.augment_noise_std, &mut augment_rng))
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let inputs: Vec<PairInput> = chunk
                .iter()
                .enumerate()
                .map(|(k, p)| PairInput {
                    features: noisy.get(k).unwrap_or(&train[p.utterance].features),
                    frames: if noisy.is_empty() { Some(cache[p.utterance]) } else { None },
                    phonemes: &kw.phonemes[p.keyword],
                })
                .collect();
            let out = model.forward(&inputs, !cfg.freeze_embedder)?;
            let labels_f: Vec<f32> = chunk.iter().map(|p| p.label as f32).collect();
            let labels = Tensor::from_vec(labels_f, chunk.len(), &dev)?;
            let det = detection_loss_batch(&out.probability, &labels)?.mean(0)?;

            let pda = if cfg.loss_mode == LossMode::DetectionOnly {
                None
            } else {
                let targets = chunk
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        let strategy = if p.label == 1 { positive_target } else { negative_target };
                        let Some(strategy) = strategy else { return Ok(None) };
                        let predictions = cache[p.utterance].predictions(out.audio_lens[k]);
                        let input = TargetInput {
                            predictions: &predictions,
                            text_len: out.text_lens[k],
                            sharpness: cfg.sharpness,
                            blank_policy: cfg.blank_policy,
                        };
                        strategy.build(&input, &mut noise_rng).map(Some)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (_, ta, tt) = out.affinity.dims3()?;
                let padded = pad_targets(&targets, &out.audio_lens, &out.text_lens, ta, tt, DType::F32, &dev)?;
                Some(pda_loss_batch(&out.affinity, &padded, cfg.pda_reduction)?.mean(0)?)
            };
            let total = match &pda {
                Some(p) => (&det + (p * cfg.lambda)?)?,
                None => det.clone(),
            };
            let (l_d, l_t) = (tensor_to_f64(&det)?, tensor_to_f64(&total)?);
            let l_p = pda.as_ref().map(tensor_to_f64).transpose()?.unwrap_or(0.0);
            if !l_t.is_finite() {
                return Err(KwsError::Diverged {
                    epoch,
                    step,
                    detail: format!("loss {l_t} (detection {l_d}, alignment {l_p})"),
                    last_good,
                });
            }
            let grads = total.backward()?;
            let mut sq = 0.0;
            for v in &embedder_vars {
                if let Some(g) = grads.get(v) {
                    sq += tensor_to_f64(&g.sqr()?.sum_all()?)?;
                }
            }
            opt.step(&grads)?;
            let entry = StepLog {
                epoch,
                step,
                loss_detection: l_d,
                loss_pda: l_p,
                loss_total: l_t,
                embedder_grad_norm: sq.sqrt(),
            };
            if let (Some(l), Some(d)) = (logs.as_mut(), out_dir) {
                write_line(&mut l.steps, &entry, d)?;
            }
            steps.push(entry);
            sum_d += l_d;
            sum_p += l_p;
            sum_t += l_t;
            n_steps += 1;
            global_step += 1;
        }

        let selection_eer = match &selection {
            Some(sel) => {
                let scored = score_pairs_cached(model, lexicon, sel.corpus, sel.pairs, cfg.eval_batch_size, selection_cache)?;
                evaluate_scored("selection", &scored)?.get("selection").map(|m| m.eer)
            }
            None => None,
        };
        let n = n_steps.max(1) as f64;
        let record = EpochLog {
            epoch,
            loss_detection: sum_d / n,
            loss_pda: sum_p / n,
            loss_total: sum_t / n,
            selection_eer,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            epoch,
            loss = record.loss_total,
            detection = record.loss_detection,
            pda = record.loss_pda,
            eer = ?selection_eer,
            seconds = record.seconds,
            "train epoch"
        );
        if let (Some(l), Some(d)) = (logs.as_mut(), out_dir) {
            write_line(&mut l.epochs, &record, d)?;
        }
        epochs.push(record);

        let score = selection_eer.unwrap_or(f64::NEG_INFINITY);
        let improved = best.as_ref().is_none_or(|(b, _, _, _)| score < *b);
        if let Some(path) = &last_path {
            let mut ck = model.to_checkpoint(lexicon, cfg.seed, epoch)?;
            ck.header.metrics = serde_json::json!({ "selection_eer": selection_eer });
            ck.save(path)?;
            last_good = Some(path.clone());
            if improved {
                ck.save(&path.with_file_name("best.ckpt"))?;
            }
        }
        if improved {
            best = Some((score, epoch, model.params().export()?, model.embedder().params().export()?));
            since_best = 0;
        } else {
            since_best += 1;
            if selection.is_some() && since_best >= cfg.patience {
                info!(epoch, "stopping: no improvement for {} epochs", cfg.patience);
                break;
            }
        }
    }

    let (best_eer, best_epoch) = match best {
        Some((score, epoch, own, emb)) => {
            model.params().load(&own)?;
            if !cfg.freeze_embedder {
                model.embedder().params().load(&emb)?;
            }
            (score.is_finite().then_some(score), epoch)
        }
        None => (None, 0),
    };
    Ok(TrainOutcome {
        steps,
        epochs,
        best_epoch,
        best_eer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::testutil::{corpus, model};
    use crate::datagen::{build_pairs, PairConfig, PairMode, Split};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 8,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_writes_checkpoints() {
        let sc = corpus();
        let train_set: Vec<&Utterance> = sc.corpus.split(Split::Train).collect();
        let valid: Vec<_> = sc.corpus.split(Split::Valid).map(|u| u.record.clone()).collect();
        let pairs = build_pairs(
            &valid,
            &valid,
            &PairConfig {
                mode: PairMode::AnchorAll,
                hard_threshold: 1,
                easy_threshold: 3,
                ..PairConfig::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let run = |out: Option<&Path>| {
            let m = model(3);
            let sel = Selection { corpus: &sc.corpus, pairs: &pairs };
            let o = train(&m, &sc.corpus.lexicon, &train_set, Some(sel), &small_cfg(), out).unwrap();
            (o, m.params().export().unwrap())
        };
        let (a, wa) = run(Some(dir.path()));
        let (b, wb) = run(None);
        assert_eq!(a.steps, b.steps);
        assert_eq!(wa, wb);
        assert_eq!(a.steps.len(), 2 * 6);
        assert!(a.best_eer.is_some());
        assert!(a.steps.iter().all(|s| s.embedder_grad_norm == 0.0 && s.loss_pda > 0.0));
        for f in ["last.ckpt", "best.ckpt", "train_log.jsonl", "epochs.jsonl"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let (restored, _) = KwsModel::load(&dir.path().join("best.ckpt")).unwrap();
        if a.best_epoch == 1 {
            assert_eq!(restored.params().export().unwrap(), wa);
        }
        let lines = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), a.steps.len());

        let m = model(3);
        let all: Vec<&Utterance> = sc.corpus.utterances.iter().collect();
        let cache = FrameCache::build(m.embedder(), &all, 5).unwrap();
        let sel = Selection { corpus: &sc.corpus, pairs: &pairs };
        let c = train_cached(&m, &sc.corpus.lexicon, &train_set, Some(sel), &small_cfg(), None, Some(&cache)).unwrap();
        assert_eq!(c.steps.len(), a.steps.len());
        for (x, y) in c.steps.iter().zip(&a.steps) {
            assert!((x.loss_total - y.loss_total).abs() < 1e-4, "{x:?} {y:?}");
        }
        assert!((c.best_eer.unwrap() - a.best_eer.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn zero_lambda_matches_detection_only() {
        let sc = corpus();
        let train_set: Vec<&Utterance> = sc.corpus.split(Split::Train).collect();
        let run = |mode: LossMode, lambda: f64| {
            let m = model(5);
            let cfg = TrainConfig {
                loss_mode: mode,
                lambda,
                max_steps: Some(4),
                ..small_cfg()
            };
            let o = train(&m, &sc.corpus.lexicon, &train_set, None, &cfg, None).unwrap();
            (o, m.params().export().unwrap())
        };
        let (pda, wp) = run(LossMode::DetectionPda, 0.0);
        let (det, wd) = run(LossMode::DetectionOnly, 0.3);
        assert_eq!(pda.steps.len(), 4);
        assert!(pda.steps.iter().any(|s| s.loss_pda > 0.0));
        for (n, (_, a)) in &wp {
            let (_, b) = &wd[n];
            let delta = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
            assert!(delta <= 1e-6, "{n}: {delta}");
        }
        assert!(det.steps.iter().all(|s| s.loss_pda == 0.0 && s.loss_total == s.loss_detection));
    }

    #[test]
    fn unfrozen_embedder_receives_gradient() {
        let sc = corpus();
        let train_set: Vec<&Utterance> = sc.corpus.split(Split::Train).collect();
        let m = model(1);
        let before = m.embedder().params().export().unwrap();
        let cfg = TrainConfig {
            freeze_embedder: false,
            max_steps: Some(2),
            ..small_cfg()
        };
        let o = train(&m, &sc.corpus.lexicon, &train_set, None, &cfg, None).unwrap();
        assert!(o.steps.iter().all(|s| s.embedder_grad_norm > 0.0));
        assert_ne!(before, m.embedder().params().export().unwrap());
    }

    #[test]
    fn augmentation_and_invalid_configs() {
        let sc = corpus();
        let train_set: Vec<&Utterance> = sc.corpus.split(Split::Train).collect();
        let m = model(1);
        let cfg = TrainConfig {
            augment_noise_std: 0.1,
            max_steps: Some(1),
            ..small_cfg()
        };
        assert_eq!(train(&m, &sc.corpus.lexicon, &train_set, None, &cfg, None).unwrap().steps.len(), 1);
        for bad in [
            TrainConfig { batch_size: 0, ..small_cfg() },
            TrainConfig { hard_negative_fraction: 1.5, ..small_cfg() },
            TrainConfig { lambda: -1.0, ..small_cfg() },
        ] {
            assert!(train(&m, &sc.corpus.lexicon, &train_set, None, &bad, None).is_err());
        }
        assert!(train(&m, &sc.corpus.lexicon, &train_set[..1], None, &small_cfg(), None).is_err());
    }

    #[test]
    fn training_pairs_are_balanced_with_distinct_negatives() {
        let sc = corpus();
        let train_set: Vec<&Utterance> = sc.corpus.split(Split::Train).collect();
        let kw = keywords(&train_set, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = epoch_pairs(&kw, &small_cfg(), &mut rng);
        assert_eq!(pairs.len(), 2 * train_set.len());
        for p in &pairs {
            let own = kw.of_utterance[p.utterance];
            assert_eq!(p.label == 1, p.keyword == own);
        }
        let frames: Vec<usize> = train_set.iter().map(|u| u.features.n_frames()).collect();
        let n = pairs.len();
        let batches = bucketed_batches(pairs, &frames, 5, &mut rng);
        assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), n);
        assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= 5));
        for b in &batches {
            assert!(b.windows(2).all(|w| frames[w[0].utterance] <= frames[w[1].utterance]));
        }
    }
}
