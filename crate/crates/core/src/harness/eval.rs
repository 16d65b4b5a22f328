use std::collections::{BTreeMap, HashMap};

use tracing::warn;

use super::metrics::{compute_auc, compute_eer, roc_curve};
use super::report::DatasetMetrics;
use crate::datagen::{Corpus, Difficulty, EvalPair, Utterance};
use crate::error::Result;
use crate::features::{phonemize, Lexicon};
use crate::model::{KwsModel, PairInput};
use crate::speech_embedder::{Embedder, FrameOutputs};

/// Embedder outputs keyed by utterance id. Only valid for the embedder
/// weights that produced them.
#[derive(Debug, Clone, Default)]
pub struct FrameCache {
    frames: HashMap<String, FrameOutputs>,
}

impl FrameCache {
    pub fn build(embedder: &Embedder, utterances: &[&Utterance], batch_size: usize) -> Result<Self> {
        let mut c = Self::default();
        c.fill(embedder, utterances, batch_size)?;
        Ok(c)
    }

    /// Embeds the utterances not cached yet.
    pub fn fill(&mut self, embedder: &Embedder, utterances: &[&Utterance], batch_size: usize) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let missing: Vec<&Utterance> = utterances
            .iter()
            .copied()
            .filter(|u| !self.frames.contains_key(&u.record.id) && seen.insert(u.record.id.as_str()))
            .collect();
        for chunk in missing.chunks(batch_size.max(1)) {
            let feats: Vec<_> = chunk.iter().map(|u| &u.features).collect();
            for (u, out) in chunk.iter().zip(embedder.embed(&feats)?) {
                self.frames.insert(u.record.id.clone(), out);
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&FrameOutputs> {
        self.frames.get(id)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub pair: EvalPair,
    /// `None` when the pair could not be prepared.
    pub score: Option<f64>,
    pub skipped: Option<String>,
}

/// Scores pairs in batches, returning results in input order. Pairs whose
/// audio is missing or whose text cannot be phonemized are marked skipped.
pub fn score_pairs(
    model: &KwsModel,
    lexicon: &Lexicon,
    corpus: &Corpus,
    pairs: &[EvalPair],
    batch_size: usize,
) -> Result<Vec<ScoredPair>> {
    score_pairs_cached(model, lexicon, corpus, pairs, batch_size, None)
}

/// [`score_pairs`] reusing embedder outputs from `cache`, which must come
/// from the model's embedder.
pub fn score_pairs_cached(
    model: &KwsModel,
    lexicon: &Lexicon,
    corpus: &Corpus,
    pairs: &[EvalPair],
    batch_size: usize,
    cache: Option<&FrameCache>,
) -> Result<Vec<ScoredPair>> {
    let by_id: HashMap<&str, usize> = corpus
        .utterances
        .iter()
        .enumerate()
        .map(|(i, u)| (u.record.id.as_str(), i))
        .collect();
    let mut prepared: Vec<Option<(usize, Vec<u32>)>> = Vec::with_capacity(pairs.len());
    let mut reasons: Vec<Option<String>> = Vec::with_capacity(pairs.len());
    for p in pairs {
        let audio = by_id.get(p.audio_ref.as_str()).copied();
        let text = phonemize(&p.text, lexicon);
        match (audio, text) {
            (Some(a), Ok(t)) => {
                prepared.push(Some((a, t.ids().to_vec())));
                reasons.push(None);
            }
            (None, _) => {
                warn!(audio = %p.audio_ref, "skipping pair: audio not in manifest");
                prepared.push(None);
                reasons.push(Some(format!("audio {} not in manifest", p.audio_ref)));
            }
            (_, Err(e)) => {
                warn!(text = %p.text, "skipping pair: {e}");
                prepared.push(None);
                reasons.push(Some(e.to_string()));
            }
        }
    }

    // embed every referenced utterance once
    let mut needed: Vec<usize> = prepared.iter().flatten().map(|(a, _)| *a).collect();
    needed.sort_unstable();
    needed.dedup();
    let uncached: Vec<&Utterance> = needed
        .iter()
        .map(|&i| &corpus.utterances[i])
        .filter(|u| cache.is_none_or(|c| c.get(&u.record.id).is_none()))
        .collect();
    let local = FrameCache::build(model.embedder(), &uncached, batch_size)?;
    let frames_of = |i: usize| -> Option<&FrameOutputs> {
        let id = &corpus.utterances[i].record.id;
        cache.and_then(|c| c.get(id)).or_else(|| local.get(id))
    };

    let ready: Vec<usize> = (0..pairs.len()).filter(|&i| prepared[i].is_some()).collect();
    let mut scores = vec![None; pairs.len()];
    for chunk in ready.chunks(batch_size.max(1)) {
        let inputs: Vec<PairInput> = chunk
            .iter()
            .map(|&i| {
                let (a, ids) = prepared[i].as_ref().expect("filtered");
                PairInput {
                    features: &corpus.utterances[*a].features,
                    frames: frames_of(*a),
                    phonemes: ids,
                }
            })
            .collect();
        for (&i, s) in chunk.iter().zip(model.score(&inputs)?) {
            scores[i] = Some(s);
        }
    }
    Ok(pairs
        .iter()
        .zip(scores)
        .zip(reasons)
        .map(|((p, score), skipped)| ScoredPair {
            pair: p.clone(),
            score,
            skipped,
        })
        .collect())
}

fn downsample(points: Vec<(f64, f64)>, max: usize) -> Vec<(f64, f64)> {
    if points.len() <= max {
        return points;
    }
    let step = (points.len() - 1) as f64 / (max - 1) as f64;
    (0..max).map(|i| points[((i as f64 * step).round() as usize).min(points.len() - 1)]).collect()
}

pub fn dataset_metrics(scores: &[f64], labels: &[u8]) -> Result<DatasetMetrics> {
    let (eer, threshold) = compute_eer(scores, labels)?;
    let auc = compute_auc(scores, labels)?;
    let roc = roc_curve(scores, labels)?
        .into_iter()
        .map(|p| (p.false_accept, p.false_reject))
        .collect();
    Ok(DatasetMetrics {
        eer: 100.0 * eer,
        auc: 100.0 * auc,
        threshold,
        positives: labels.iter().filter(|&&l| l == 1).count(),
        negatives: labels.iter().filter(|&&l| l == 0).count(),
        roc: downsample(roc, 200),
    })
}

/// Metrics for the whole pair set (`name`) and for its `name_easy` /
/// `name_hard` subsets (all positives plus negatives of that difficulty)
/// when those contain negatives.
pub fn evaluate_scored(name: &str, scored: &[ScoredPair]) -> Result<BTreeMap<String, DatasetMetrics>> {
    let mut out = BTreeMap::new();
    let valid: Vec<(&EvalPair, f64)> = scored.iter().filter_map(|s| s.score.map(|v| (&s.pair, v))).collect();
    let subsets: [(String, Option<Difficulty>); 3] = [
        (name.to_string(), None),
        (format!("{name}_easy"), Some(Difficulty::Easy)),
        (format!("{name}_hard"), Some(Difficulty::Hard)),
    ];
    for (key, class) in subsets {
        let chosen: Vec<&(&EvalPair, f64)> = valid
            .iter()
            .filter(|(p, _)| class.is_none_or(|c| p.label == 1 || p.difficulty == c))
            .collect();
        let labels: Vec<u8> = chosen.iter().map(|(p, _)| p.label).collect();
        let scores: Vec<f64> = chosen.iter().map(|(_, s)| *s).collect();
        let has_both = labels.contains(&0) && labels.contains(&1);
        if has_both {
            out.insert(key, dataset_metrics(&scores, &labels)?);
        } else if class.is_none() {
            dataset_metrics(&scores, &labels)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{corpus, model};
    use super::*;
    use crate::datagen::{build_pairs, PairConfig, PairMode, Split};

    fn pairs(c: &Corpus) -> Vec<EvalPair> {
        let test: Vec<_> = c.split(Split::Test).map(|u| u.record.clone()).collect();
        let cfg = PairConfig {
            mode: PairMode::AnchorAll,
            hard_threshold: 1,
            easy_threshold: 3,
            ..PairConfig::default()
        };
        build_pairs(&test, &test, &cfg).unwrap()
    }

    #[test]
    fn batch_size_does_not_change_scores() {
        let sc = corpus();
        let m = model(0);
        let mut ps = pairs(&sc.corpus);
        ps.push(ps[0].clone());
        let one = score_pairs(&m, &sc.corpus.lexicon, &sc.corpus, &ps, 1).unwrap();
        let many = score_pairs(&m, &sc.corpus.lexicon, &sc.corpus, &ps, 7).unwrap();
        for (a, b) in one.iter().zip(&many) {
            let (x, y) = (a.score.unwrap(), b.score.unwrap());
            assert!((x - y).abs() < 1e-5);
            assert!(x > 0.0 && x < 1.0);
            assert_eq!(a.pair, b.pair);
        }
        assert_eq!(many[0].score, many.last().unwrap().score);
    }

    #[test]
    fn cached_frames_give_the_same_scores() {
        let sc = corpus();
        let m = model(0);
        let ps = pairs(&sc.corpus);
        let all: Vec<&Utterance> = sc.corpus.utterances.iter().collect();
        let mut cache = FrameCache::build(m.embedder(), &all[..3], 2).unwrap();
        cache.fill(m.embedder(), &all[..5], 2).unwrap();
        assert_eq!(cache.len(), 5);
        let fresh = score_pairs(&m, &sc.corpus.lexicon, &sc.corpus, &ps, 4).unwrap();
        let cached = score_pairs_cached(&m, &sc.corpus.lexicon, &sc.corpus, &ps, 4, Some(&cache)).unwrap();
        for (a, b) in fresh.iter().zip(&cached) {
            assert!((a.score.unwrap() - b.score.unwrap()).abs() < 1e-5);
        }
    }

    #[test]
    fn unusable_pairs_are_skipped_not_fatal() {
        let sc = corpus();
        let m = model(0);
        let mut ps = pairs(&sc.corpus);
        let n = ps.len();
        let mut missing = ps[0].clone();
        missing.audio_ref = "nowhere".into();
        let mut odd = ps[1].clone();
        odd.text = "???".into();
        ps.push(missing);
        ps.push(odd);
        let scored = score_pairs(&m, &sc.corpus.lexicon, &sc.corpus, &ps, 4).unwrap();
        assert_eq!(scored.iter().filter(|s| s.skipped.is_some()).count(), 2);
        assert!(scored[n].skipped.as_ref().unwrap().contains("nowhere"));
        assert!(scored[n + 1].score.is_none());
        let metrics = evaluate_scored("t", &scored).unwrap();
        assert!(metrics.contains_key("t"));
        assert_eq!(metrics["t"].positives + metrics["t"].negatives, n);
    }

    #[test]
    fn subsets_keep_all_positives() {
        let mk = |label: u8, difficulty: Difficulty, score: f64| ScoredPair {
            pair: EvalPair {
                audio_ref: "a".into(),
                text: "x".into(),
                label,
                difficulty,
                levenshtein_distance: 0,
            },
            score: Some(score),
            skipped: None,
        };
        let scored = vec![
            mk(1, Difficulty::NotApplicable, 0.9),
            mk(1, Difficulty::NotApplicable, 0.8),
            mk(0, Difficulty::Easy, 0.1),
            mk(0, Difficulty::Hard, 0.85),
        ];
        let m = evaluate_scored("d", &scored).unwrap();
        assert_eq!((m["d_easy"].positives, m["d_easy"].negatives), (2, 1));
        assert_eq!(m["d_easy"].eer, 0.0);
        assert_eq!(m["d_hard"].auc, 50.0);
        assert_eq!(m["d"].negatives, 2);
    }
}
