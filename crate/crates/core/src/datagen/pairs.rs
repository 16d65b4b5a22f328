//! Audio-text evaluation pairs stratified by phoneme edit distance.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::levenshtein::levenshtein;
use super::manifest::UtteranceRecord;
use crate::error::{KwsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    #[serde(rename = "easy")]
    Easy,
    #[serde(rename = "hard")]
    Hard,
    #[serde(rename = "n/a")]
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    /// Utterance id in the accompanying manifest.
    pub audio_ref: String,
    pub text: String,
    pub label: u8,
    pub difficulty: Difficulty,
    pub levenshtein_distance: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    /// One positive per anchor plus sampled hard and easy negatives.
    #[default]
    Libriphrase,
    /// Every keyword other than the anchor's is a negative.
    AnchorAll,
}

impl std::str::FromStr for PairMode {
    type Err = KwsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "libriphrase" => Ok(PairMode::Libriphrase),
            "anchor-all" => Ok(PairMode::AnchorAll),
            other => Err(KwsError::invalid(format!("unknown pair mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    pub mode: PairMode,
    pub hard_threshold: usize,
    pub easy_threshold: usize,
    /// Negatives drawn per difficulty class and anchor in libriphrase mode.
    pub negatives_per_class: usize,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            mode: PairMode::Libriphrase,
            hard_threshold: 2,
            easy_threshold: 5,
            negatives_per_class: 1,
            seed: 0,
        }
    }
}

impl PairConfig {
    pub fn classify(&self, distance: usize) -> Difficulty {
        if distance <= self.hard_threshold {
            Difficulty::Hard
        } else if distance >= self.easy_threshold {
            Difficulty::Easy
        } else {
            Difficulty::NotApplicable
        }
    }
}

/// Keyword pool: distinct transcripts with their phonemes, sorted by text.
fn keyword_pool(records: &[UtteranceRecord]) -> Result<Vec<(String, Vec<u32>)>> {
    let mut pool: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for r in records {
        if let Some(prev) = pool.insert(r.text.clone(), r.phoneme_ids.clone()) {
            if prev != r.phoneme_ids {
                return Err(KwsError::invalid(format!("transcript {:?} has two pronunciations", r.text)));
            }
        }
    }
    Ok(pool.into_iter().collect())
}

/// Builds pairs for every record in `anchors`, drawing negatives from the
/// transcripts of `pool`.
pub fn build_pairs(anchors: &[UtteranceRecord], pool: &[UtteranceRecord], cfg: &PairConfig) -> Result<Vec<EvalPair>> {
    if cfg.hard_threshold == 0 || cfg.easy_threshold == 0 || cfg.hard_threshold > cfg.easy_threshold {
        return Err(KwsError::invalid(format!(
            "need 0 < hard_threshold ({}) <= easy_threshold ({})",
            cfg.hard_threshold, cfg.easy_threshold
        )));
    }
    if cfg.mode == PairMode::Libriphrase && cfg.negatives_per_class == 0 {
        return Err(KwsError::invalid("negatives_per_class must be positive"));
    }
    let keywords = keyword_pool(pool)?;
    let mut out = Vec::new();
    for (n, anchor) in anchors.iter().enumerate() {
        out.push(EvalPair {
            audio_ref: anchor.id.clone(),
            text: anchor.text.clone(),
            label: 1,
            difficulty: Difficulty::NotApplicable,
            levenshtein_distance: 0,
        });
        let negatives: Vec<(&str, usize)> = keywords
            .iter()
            .filter(|(text, _)| *text != anchor.text)
            .map(|(text, ids)| (text.as_str(), levenshtein(&anchor.phoneme_ids, ids)))
            .filter(|&(_, d)| d > 0)
            .collect();
        let mut push = |text: &str, d: usize| {
            out.push(EvalPair {
                audio_ref: anchor.id.clone(),
                text: text.to_string(),
                label: 0,
                difficulty: cfg.classify(d),
                levenshtein_distance: d,
            })
        };
        match cfg.mode {
            PairMode::AnchorAll => {
                if negatives.is_empty() {
                    return Err(KwsError::invalid(format!("no negative keyword for anchor {:?}", anchor.text)));
                }
                for (text, d) in negatives {
                    push(text, d);
                }
            }
            PairMode::Libriphrase => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(n as u64);
                for class in [Difficulty::Hard, Difficulty::Easy] {
                    let candidates: Vec<_> = negatives.iter().filter(|(_, d)| cfg.classify(*d) == class).collect();
                    if candidates.len() < cfg.negatives_per_class {
                        return Err(KwsError::invalid(format!(
                            "anchor {:?} has {} {class:?} candidates (distance {} {}), {} required",
                            anchor.text,
                            candidates.len(),
                            if class == Difficulty::Hard { "<=" } else { ">=" },
                            if class == Difficulty::Hard { cfg.hard_threshold } else { cfg.easy_threshold },
                            cfg.negatives_per_class
                        )));
                    }
                    let mut picks = sample(&mut rng, candidates.len(), cfg.negatives_per_class).into_vec();
                    picks.sort_unstable();
                    for i in picks {
                        let (text, d) = *candidates[i];
                        push(text, d);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Pairs evaluated in one difficulty subset: every positive plus the
/// negatives of that class.
pub fn subset(pairs: &[EvalPair], class: Difficulty) -> Vec<&EvalPair> {
    pairs.iter().filter(|p| p.label == 1 || p.difficulty == class).collect()
}

pub fn write_pairs(path: &Path, pairs: &[EvalPair]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| KwsError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n").map_err(|e| KwsError::io(path, e))?;
    }
    out.flush().map_err(|e| KwsError::io(path, e))
}

pub fn read_pairs(path: &Path) -> Result<Vec<EvalPair>> {
    let file = std::fs::File::open(path).map_err(|e| KwsError::io(path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| KwsError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: EvalPair = serde_json::from_str(&line)
            .map_err(|e| KwsError::invalid(format!("{} line {}: {e}", path.display(), n + 1)))?;
        if p.label > 1 {
            return Err(KwsError::invalid(format!("{} line {}: label must be 0 or 1", path.display(), n + 1)));
        }
        pairs.push(p);
    }
    Ok(pairs)
}
