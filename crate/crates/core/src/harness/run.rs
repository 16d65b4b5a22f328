//! File-driven pretraining and training runs, one JSON config each.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::info;

use super::train::{train, Selection, TrainConfig, TrainOutcome};
use crate::datagen::{read_corpus, read_pairs, Corpus, Split, Utterance};
use crate::error::{KwsError, Result};
use crate::model::{HeadConfig, KwsModel};
use crate::speech_embedder::{frame_accuracy, pretrain_ctc, Embedder, FrameAccuracy, PretrainConfig, PretrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRunConfig {
    pub manifest: PathBuf,
    /// The embedder's input size and inventory are taken from the corpus.
    #[serde(default)]
    pub pretrain: PretrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub manifest: PathBuf,
    pub embedder: PathBuf,
    /// Pairs over the manifest's utterances used for checkpoint selection.
    pub valid_pairs: Option<PathBuf>,
    /// Selection pairs when `train.select_on_test` is set.
    pub test_pairs: Option<PathBuf>,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn dims(corpus: &Corpus) -> Result<usize> {
    corpus
        .utterances
        .first()
        .map(|u| u.features.dim())
        .ok_or_else(|| KwsError::invalid("manifest has no utterances"))
}

/// Pretrains on the manifest's train split, saves the checkpoint to `out`
/// and reports frame accuracy on the test split (valid split when no test utterances exist).
pub fn run_pretrain(cfg: &PretrainRunConfig, out: &Path) -> Result<(PretrainOutcome, Option<FrameAccuracy>)> {
    let corpus = read_corpus(&cfg.manifest)?;
    let mut pre = cfg.pretrain.clone();
    pre.embedder.input_dim = dims(&corpus)?;
    pre.embedder.inventory_size = corpus.lexicon.inventory().len();
    let train_set: Vec<&Utterance> = corpus.split(Split::Train).collect();
    let outcome = pretrain_ctc(&train_set, &pre)?;
    let mut held: Vec<&Utterance> = corpus.split(Split::Test).filter(|u| u.record.true_durations.is_some()).collect();
    if held.is_empty() {
        held = corpus.split(Split::Valid).filter(|u| u.record.true_durations.is_some()).collect();
    }
    let acc = if held.is_empty() {
        None
    } else {
        Some(frame_accuracy(&outcome.embedder, &held, 64)?)
    };
    let mut ck = outcome.embedder.to_checkpoint(corpus.lexicon.inventory(), pre.seed, outcome.log.len())?;
    ck.header.metrics = serde_json::json!({ "frame_accuracy": acc, "log": outcome.log, "pretrain": pre });
    ck.save(out)?;
    info!(path = %out.display(), "saved embedder");
    Ok((outcome, acc))
}

/// Trains a model on the manifest's train split, writing checkpoints and
/// logs into `out_dir`.
pub fn run_train(cfg: &TrainRunConfig, out_dir: &Path) -> Result<(KwsModel, TrainOutcome)> {
    let corpus = read_corpus(&cfg.manifest)?;
    if !cfg.embedder.exists() {
        return Err(KwsError::invalid(format!("embedder checkpoint {} not found", cfg.embedder.display())));
    }
    let embedder = Embedder::load(&cfg.embedder)?;
    if embedder.config().input_dim != dims(&corpus)? || embedder.config().inventory_size != corpus.lexicon.inventory().len() {
        return Err(KwsError::invalid("embedder does not match the corpus features or inventory"));
    }
    let model_cfg = cfg.head.model_config(embedder.config());
    let model = KwsModel::new(&model_cfg, embedder, cfg.train.seed)?;
    let pairs_path = if cfg.train.select_on_test { &cfg.test_pairs } else { &cfg.valid_pairs };
    let pairs = pairs_path.as_deref().map(read_pairs).transpose()?;
    let selection = pairs.as_deref().map(|p| Selection { corpus: &corpus, pairs: p });
    std::fs::create_dir_all(out_dir).map_err(|e| KwsError::io(out_dir, e))?;
    std::fs::write(out_dir.join("config.json"), serde_json::to_vec_pretty(cfg)?).map_err(|e| KwsError::io(out_dir, e))?;
    let train_set: Vec<&Utterance> = corpus.split(Split::Train).collect();
    let outcome = train(&model, &corpus.lexicon, &train_set, selection, &cfg.train, Some(out_dir))?;
    Ok((model, outcome))
}
