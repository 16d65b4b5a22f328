//! End-to-end runs on the synthetic corpus: generate, pretrain the
//! embedder, train every requested loss mode over several seeds and
//! evaluate on held-out pairs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::info;

use super::eval::{evaluate_scored, score_pairs_cached, FrameCache};
use super::report::{aggregate_runs, CurvePoint, EvalReport};
use super::train::{train_cached, EpochLog, Selection, TrainConfig};
use crate::datagen::{build_pairs, synth_corpus, write_corpus, write_pairs, PairConfig, Split, SynthConfig, Utterance};
use crate::error::{KwsError, Result};
use crate::losses::LossMode;
use crate::model::{HeadConfig, KwsModel};
use crate::speech_embedder::{frame_accuracy, pretrain_ctc, Embedder, EmbedderConfig, FrameAccuracy, PretrainConfig, PretrainEpoch};

pub const DATASET: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    /// The embedder's input size and inventory are taken from `synth`.
    pub pretrain: PretrainConfig,
    pub head: HeadConfig,
    /// `seed` and `loss_mode` are overridden per run.
    pub train: TrainConfig,
    pub pairs: PairConfig,
    pub seeds: Vec<u64>,
    pub modes: Vec<LossMode>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            pretrain: PretrainConfig::default(),
            head: HeadConfig::default(),
            train: TrainConfig::default(),
            pairs: PairConfig::default(),
            seeds: vec![0, 1, 2],
            modes: vec![LossMode::DetectionPda],
        }
    }
}

impl ExperimentConfig {
    pub fn embedder_config(&self) -> EmbedderConfig {
        EmbedderConfig {
            input_dim: self.synth.prototype_dim,
            inventory_size: self.synth.phoneme_inventory_size,
            ..self.pretrain.embedder.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: LossMode,
    /// Pooled over seeds.
    pub report: EvalReport,
    pub per_seed: Vec<EvalReport>,
    pub best_epochs: Vec<usize>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub frame_accuracy: FrameAccuracy,
    pub pretrain_log: Vec<PretrainEpoch>,
    pub modes: Vec<ModeResult>,
    pub seconds: f64,
}

impl ExperimentOutcome {
    pub fn mode(&self, mode: LossMode) -> Option<&ModeResult> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

pub fn curve_of(epochs: &[EpochLog]) -> Vec<CurvePoint> {
    epochs
        .iter()
        .map(|e| CurvePoint {
            epoch: e.epoch,
            loss_detection: e.loss_detection,
            loss_pda: e.loss_pda,
            loss_total: e.loss_total,
            valid_eer: e.selection_eer,
        })
        .collect()
}

fn mode_dir(mode: LossMode) -> String {
    mode.as_str().replace('+', "_")
}

/// Runs the whole pipeline, writing data, checkpoints and reports under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    if cfg.seeds.is_empty() || cfg.modes.is_empty() {
        return Err(KwsError::invalid("an experiment needs at least one seed and one mode"));
    }
    std::fs::create_dir_all(out).map_err(|e| KwsError::io(out, e))?;
    std::fs::write(out.join("config.json"), serde_json::to_vec_pretty(cfg)?).map_err(|e| KwsError::io(out, e))?;

    let sc = synth_corpus(&cfg.synth)?;
    write_corpus(&out.join("data"), &sc.corpus.lexicon, &sc.corpus.utterances)?;
    let corpus = &sc.corpus;
    let lexicon = &corpus.lexicon;
    let train_set: Vec<&Utterance> = corpus.split(Split::Train).collect();
    let test_set: Vec<&Utterance> = corpus.split(Split::Test).collect();

    let pre_cfg = PretrainConfig {
        embedder: cfg.embedder_config(),
        ..cfg.pretrain.clone()
    };
    let pre = pretrain_ctc(&train_set, &pre_cfg)?;
    let acc = frame_accuracy(&pre.embedder, &test_set, 64)?;
    info!(raw = acc.raw, input_rate = acc.input_rate, "embedder frame accuracy");
    let inventory = lexicon.inventory();
    let mut ck = pre.embedder.to_checkpoint(inventory, pre_cfg.seed, pre.log.len())?;
    ck.header.metrics = serde_json::to_value(acc)?;
    ck.save(&out.join("embedder.ckpt"))?;
    let embedder_tensors = pre.embedder.params().export()?;

    let records = |split: Split| corpus.split(split).map(|u| u.record.clone()).collect::<Vec<_>>();
    let (valid_records, test_records) = (records(Split::Valid), records(Split::Test));
    let valid_pairs = build_pairs(&valid_records, &valid_records, &cfg.pairs)?;
    let test_pairs = build_pairs(&test_records, &test_records, &PairConfig { seed: cfg.pairs.seed + 1, ..cfg.pairs.clone() })?;
    write_pairs(&out.join("pairs_valid.jsonl"), &valid_pairs)?;
    write_pairs(&out.join("pairs_test.jsonl"), &test_pairs)?;
    let selection_pairs = if cfg.train.select_on_test { &test_pairs } else { &valid_pairs };

    let model_cfg = cfg.head.model_config(&pre_cfg.embedder);
    // frames of the shared frozen embedder, reused by every run
    let shared = if cfg.train.freeze_embedder {
        let all: Vec<&Utterance> = corpus.utterances.iter().collect();
        Some(FrameCache::build(&pre.embedder, &all, cfg.train.eval_batch_size)?)
    } else {
        None
    };
    let mut modes = Vec::new();
    for &mode in &cfg.modes {
        let mode_start = Instant::now();
        let dir = out.join(mode_dir(mode));
        let mut per_seed = Vec::new();
        let mut best_epochs = Vec::new();
        for &seed in &cfg.seeds {
            let embedder = Embedder::from_tensors(&pre_cfg.embedder, &embedder_tensors)?;
            let model = KwsModel::new(&model_cfg, embedder, seed)?;
            let tcfg = TrainConfig {
                seed,
                loss_mode: mode,
                ..cfg.train.clone()
            };
            let run_dir: PathBuf = dir.join(format!("seed{seed}"));
            let selection = Selection {
                corpus,
                pairs: selection_pairs,
            };
            let outcome = train_cached(&model, lexicon, &train_set, Some(selection), &tcfg, Some(&run_dir), shared.as_ref())?;
            let scored = score_pairs_cached(&model, lexicon, corpus, &test_pairs, tcfg.eval_batch_size, shared.as_ref())?;
            let mut report = EvalReport::single(seed, evaluate_scored(DATASET, &scored)?);
            report.label = Some(mode.as_str().to_string());
            report.skipped = scored.iter().filter_map(|s| s.skipped.clone()).collect();
            report.curve = curve_of(&outcome.epochs);
            report.save(&run_dir.join("report.json"))?;
            info!(mode = mode.as_str(), seed, best_epoch = outcome.best_epoch, "run finished");
            best_epochs.push(outcome.best_epoch);
            per_seed.push(report);
        }
        let mut report = if per_seed.len() > 1 {
            aggregate_runs(&per_seed)?
        } else {
            per_seed[0].clone()
        };
        report.curve = per_seed[0].curve.clone();
        report.save(&dir.join("report.json"))?;
        std::fs::write(dir.join("report.csv"), report.to_csv()).map_err(|e| KwsError::io(&dir, e))?;
        modes.push(ModeResult {
            mode,
            report,
            per_seed,
            best_epochs,
            seconds: mode_start.elapsed().as_secs_f64(),
        });
    }
    let outcome = ExperimentOutcome {
        frame_accuracy: acc,
        pretrain_log: pre.log,
        modes,
        seconds: start.elapsed().as_secs_f64(),
    };
    std::fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&outcome)?).map_err(|e| KwsError::io(out, e))?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{tiny_embedder, tiny_head, tiny_synth};
    use super::*;

    #[test]
    fn tiny_experiment_writes_reports_for_every_mode() {
        let cfg = ExperimentConfig {
            synth: tiny_synth(),
            pretrain: PretrainConfig {
                embedder: tiny_embedder(),
                epochs: 1,
                ..PretrainConfig::default()
            },
            head: tiny_head(),
            train: TrainConfig {
                epochs: 1,
                batch_size: 8,
                hard_threshold: 1,
                ..TrainConfig::default()
            },
            pairs: PairConfig {
                hard_threshold: 1,
                easy_threshold: 3,
                ..PairConfig::default()
            },
            seeds: vec![0, 1],
            modes: vec![LossMode::DetectionPda, LossMode::DetectionMm],
        };
        let dir = tempfile::tempdir().unwrap();
        let o = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(o.modes.len(), 2);
        for m in &o.modes {
            assert_eq!(m.report.runs.len(), 2);
            assert!(m.report.summary.contains_key(DATASET));
            let d = dir.path().join(mode_dir(m.mode));
            assert!(d.join("report.json").exists() && d.join("report.csv").exists());
            assert!(d.join("seed1").join("best.ckpt").exists());
        }
        for f in ["embedder.ckpt", "pairs_test.jsonl", "summary.json", "config.json", "data/manifest.jsonl"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let bad = ExperimentConfig { seeds: vec![], ..cfg };
        assert!(run_experiment(&bad, dir.path()).is_err());
    }
}
