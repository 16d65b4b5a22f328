//! Synthetic keyword corpus: each phoneme is a fixed random prototype
//! vector, rendered for a random number of frames plus Gaussian noise.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::levenshtein::levenshtein;
use super::manifest::{Corpus, Split, Utterance, UtteranceRecord};
use crate::error::{KwsError, Result};
use crate::features::{FeatureMatrix, Lexicon, PhonemeInventory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// P, blank included. Phonemes are the letters `a`, `b`, ...
    pub phoneme_inventory_size: usize,
    pub keyword_count: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub min_phonemes_per_word: usize,
    pub max_phonemes_per_word: usize,
    pub min_frames_per_phoneme: usize,
    pub max_frames_per_phoneme: usize,
    pub prototype_dim: usize,
    pub prototype_scale: f64,
    pub noise_std: f64,
    pub train_utterances: usize,
    pub valid_utterances: usize,
    pub test_utterances: usize,
    /// Every keyword gets a neighbour within this distance...
    pub hard_threshold: usize,
    /// ...and one at least this far away.
    pub easy_threshold: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            phoneme_inventory_size: 12,
            keyword_count: 20,
            min_words: 1,
            max_words: 4,
            min_phonemes_per_word: 2,
            max_phonemes_per_word: 4,
            min_frames_per_phoneme: 4,
            max_frames_per_phoneme: 12,
            prototype_dim: 80,
            prototype_scale: 1.0,
            noise_std: 0.5,
            train_utterances: 2000,
            valid_utterances: 200,
            test_utterances: 400,
            hard_threshold: 2,
            easy_threshold: 5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KwsError::invalid(format!("synth config: {m}")));
        if !(3..=27).contains(&self.phoneme_inventory_size) {
            return bad("phoneme_inventory_size must be in 3..=27");
        }
        if self.keyword_count < 2 {
            return bad("keyword_count must be at least 2");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("need 1 <= min_words <= max_words");
        }
        if self.min_phonemes_per_word == 0 || self.min_phonemes_per_word > self.max_phonemes_per_word {
            return bad("need 1 <= min_phonemes_per_word <= max_phonemes_per_word");
        }
        if self.min_frames_per_phoneme == 0 || self.min_frames_per_phoneme > self.max_frames_per_phoneme {
            return bad("need 1 <= min_frames_per_phoneme <= max_frames_per_phoneme");
        }
        if self.prototype_dim == 0 {
            return bad("prototype_dim must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and non-negative");
        }
        if !(self.prototype_scale > 0.0 && self.prototype_scale.is_finite()) {
            return bad("prototype_scale must be positive");
        }
        if self.train_utterances + self.valid_utterances + self.test_utterances == 0 {
            return bad("at least one utterance is required");
        }
        if self.hard_threshold == 0 || self.hard_threshold > self.easy_threshold {
            return bad("need 0 < hard_threshold <= easy_threshold");
        }
        Ok(())
    }

    /// Non-blank phoneme symbols.
    pub fn symbols(&self) -> Vec<String> {
        (0..self.phoneme_inventory_size - 1)
            .map(|i| char::from(b'a' + i as u8).to_string())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyword {
    pub text: String,
    pub phoneme_ids: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub keywords: Vec<Keyword>,
    /// Row `p` is the prototype of phoneme `p`; row 0 (blank) is unused.
    pub prototypes: Vec<Vec<f32>>,
}

fn word_text(ids: &[u32]) -> String {
    ids.iter().map(|&id| char::from(b'a' + (id - 1) as u8)).collect()
}

fn phrase_ids(words: &[Vec<u32>]) -> Vec<u32> {
    words.concat()
}

fn has_adjacent_repeat(ids: &[u32]) -> bool {
    ids.windows(2).any(|w| w[0] == w[1])
}

fn random_phrase(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
    let n_phon = (cfg.phoneme_inventory_size - 1) as u32;
    let n_words = rng.random_range(cfg.min_words..=cfg.max_words);
    let mut prev = 0u32;
    (0..n_words)
        .map(|_| {
            let len = rng.random_range(cfg.min_phonemes_per_word..=cfg.max_phonemes_per_word);
            (0..len)
                .map(|_| {
                    let mut p = rng.random_range(1..=n_phon);
                    while p == prev {
                        p = rng.random_range(1..=n_phon);
                    }
                    prev = p;
                    p
                })
                .collect()
        })
        .collect()
}

/// Substitutes one phoneme, keeping neighbours distinct.
fn variant(base: &[Vec<u32>], cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
    let n_phon = (cfg.phoneme_inventory_size - 1) as u32;
    let flat = phrase_ids(base);
    let pos = rng.random_range(0..flat.len());
    let left = pos.checked_sub(1).map(|i| flat[i]);
    let right = flat.get(pos + 1).copied();
    let choices: Vec<u32> = (1..=n_phon)
        .filter(|&p| p != flat[pos] && Some(p) != left && Some(p) != right)
        .collect();
    let mut out = base.to_vec();
    if choices.is_empty() {
        return out;
    }
    let new = choices[rng.random_range(0..choices.len())];
    let mut k = pos;
    for w in out.iter_mut() {
        if k < w.len() {
            w[k] = new;
            break;
        }
        k -= w.len();
    }
    out
}

fn family_base(k: usize, count: usize) -> Option<usize> {
    if k % 2 == 1 {
        Some(k - 1)
    } else if k + 1 == count && k >= 2 {
        Some(k - 2)
    } else {
        None
    }
}

/// Draws keyword phrases in pairs of one-substitution variants, so every
/// keyword has a close neighbour, and retries until every keyword also has
/// a distant one.
pub fn generate_keywords(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Vec<u32>>>> {
    'attempt: for _ in 0..1000 {
        let mut phrases: Vec<Vec<Vec<u32>>> = Vec::with_capacity(cfg.keyword_count);
        let mut seen = HashSet::new();
        for k in 0..cfg.keyword_count {
            let mut tries = 0;
            let phrase = loop {
                tries += 1;
                if tries > 200 {
                    continue 'attempt;
                }
                let p = match family_base(k, cfg.keyword_count) {
                    Some(b) => variant(&phrases[b], cfg, rng),
                    None => random_phrase(cfg, rng),
                };
                let flat = phrase_ids(&p);
                if !has_adjacent_repeat(&flat) && !seen.contains(&flat) {
                    break p;
                }
            };
            seen.insert(phrase_ids(&phrase));
            phrases.push(phrase);
        }
        let flat: Vec<Vec<u32>> = phrases.iter().map(|p| phrase_ids(p)).collect();
        let ok = (0..flat.len()).all(|i| {
            let d: Vec<usize> = (0..flat.len())
                .filter(|&j| j != i)
                .map(|j| levenshtein(&flat[i], &flat[j]))
                .collect();
            d.iter().any(|&x| x <= cfg.hard_threshold) && d.iter().any(|&x| x >= cfg.easy_threshold)
        });
        if ok {
            return Ok(phrases);
        }
    }
    Err(KwsError::invalid(
        "could not draw a keyword set with both hard and easy neighbours; widen the phrase length range",
    ))
}

/// Seed-derived independent stream for item `index`.
fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Renders phoneme prototypes for the given durations.
pub fn render(prototypes: &[Vec<f32>], ids: &[u32], durations: &[u32], noise_std: f64, rng: &mut impl Rng) -> Result<FeatureMatrix> {
    let dim = prototypes.first().map_or(0, Vec::len);
    let total: usize = durations.iter().map(|&d| d as usize).sum();
    let mut values = Vec::with_capacity(total * dim);
    for (&id, &d) in ids.iter().zip(durations) {
        let proto = &prototypes[id as usize];
        for _ in 0..d {
            for &x in proto {
                let n: f64 = if noise_std > 0.0 { rng.sample::<f64, _>(StandardNormal) * noise_std } else { 0.0 };
                values.push(x + n as f32);
            }
        }
    }
    FeatureMatrix::new(total, dim, values)
}

/// Additive Gaussian feature noise, the stand-in for waveform augmentation.
pub fn add_feature_noise(f: &FeatureMatrix, std: f64, rng: &mut impl Rng) -> Result<FeatureMatrix> {
    if std <= 0.0 {
        return Ok(f.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| KwsError::invalid(e.to_string()))?;
    let values = f.values().iter().map(|&v| v + normal.sample(rng) as f32).collect();
    FeatureMatrix::new(f.n_frames(), f.dim(), values)
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let symbols = cfg.symbols();
    let inventory = PhonemeInventory::new(symbols.iter().cloned())?;
    let fallback: BTreeMap<char, u32> = symbols
        .iter()
        .enumerate()
        .map(|(i, s)| (s.chars().next().unwrap_or('a'), i as u32 + 1))
        .collect();
    let mut lexicon = Lexicon::new(inventory, fallback)?;

    let mut rng = stream(cfg.seed, 0);
    let prototypes: Vec<Vec<f32>> = (0..cfg.phoneme_inventory_size)
        .map(|p| {
            (0..cfg.prototype_dim)
                .map(|_| {
                    let x: f64 = rng.sample(StandardNormal);
                    if p == 0 { 0.0 } else { (x * cfg.prototype_scale) as f32 }
                })
                .collect()
        })
        .collect();

    let phrases = generate_keywords(cfg, &mut rng)?;
    let keywords: Vec<Keyword> = phrases
        .iter()
        .map(|words| {
            for w in words {
                lexicon.insert(&word_text(w), w.clone())?;
            }
            Ok(Keyword {
                text: words.iter().map(|w| word_text(w)).collect::<Vec<_>>().join(" "),
                phoneme_ids: phrase_ids(words),
            })
        })
        .collect::<Result<_>>()?;

    let splits = [
        (Split::Train, cfg.train_utterances),
        (Split::Valid, cfg.valid_utterances),
        (Split::Test, cfg.test_utterances),
    ];
    let mut utterances = Vec::new();
    let mut index = 0u64;
    for (split, count) in splits {
        for n in 0..count {
            index += 1;
            let mut r = stream(cfg.seed, index);
            let kw = &keywords[n % keywords.len()];
            let durations: Vec<u32> = kw
                .phoneme_ids
                .iter()
                .map(|_| r.random_range(cfg.min_frames_per_phoneme..=cfg.max_frames_per_phoneme) as u32)
                .collect();
            let features = render(&prototypes, &kw.phoneme_ids, &durations, cfg.noise_std, &mut r)?;
            let record = UtteranceRecord {
                id: format!("{}-{n:05}", split.as_str()),
                features_path: None,
                wav_path: None,
                n_frames: features.n_frames(),
                feature_dim: features.dim(),
                text: kw.text.clone(),
                phoneme_ids: kw.phoneme_ids.clone(),
                true_durations: Some(durations),
                split,
            };
            utterances.push(Utterance { record, features });
        }
    }
    Ok(SynthCorpus {
        corpus: Corpus { lexicon, utterances },
        keywords,
        prototypes,
    })
}

/// Per-frame phoneme labels implied by the true durations.
pub fn frame_labels(record: &UtteranceRecord) -> Option<Vec<u32>> {
    let d = record.true_durations.as_ref()?;
    Some(
        record
            .phoneme_ids
            .iter()
            .zip(d)
            .flat_map(|(&p, &n)| std::iter::repeat_n(p, n as usize))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::manifest::{read_corpus, write_corpus};
    use crate::features::phonemize;
    use crate::losses::{consecutive_index, BlankPolicy};

    fn small() -> SynthConfig {
        SynthConfig {
            train_utterances: 30,
            valid_utterances: 5,
            test_utterances: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn durations_cover_features_and_text_round_trips() {
        let s = synth_corpus(&small()).unwrap();
        assert_eq!(s.keywords.len(), 20);
        assert_eq!(s.corpus.utterances.len(), 45);
        for u in &s.corpus.utterances {
            let d = u.record.true_durations.as_ref().unwrap();
            assert_eq!(d.iter().sum::<u32>() as usize, u.features.n_frames());
            assert_eq!(d.len(), u.record.phoneme_ids.len());
            assert!(d.iter().all(|&x| (4..=12).contains(&x)));
            let ph = phonemize(&u.record.text, &s.corpus.lexicon).unwrap();
            assert_eq!(ph.ids(), u.record.phoneme_ids.as_slice());
            assert!(!has_adjacent_repeat(&u.record.phoneme_ids));
        }
    }

    #[test]
    fn keywords_have_hard_and_easy_neighbours() {
        let cfg = small();
        let s = synth_corpus(&cfg).unwrap();
        for (i, a) in s.keywords.iter().enumerate() {
            let words = a.text.split(' ').count();
            assert!((1..=4).contains(&words));
            let d: Vec<usize> = s
                .keywords
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| levenshtein(&a.phoneme_ids, &b.phoneme_ids))
                .collect();
            assert!(d.iter().all(|&x| x > 0));
            assert!(d.iter().any(|&x| x <= cfg.hard_threshold));
            assert!(d.iter().any(|&x| x >= cfg.easy_threshold));
        }
    }

    #[test]
    fn zero_noise_segments_are_constant() {
        let s = synth_corpus(&SynthConfig { noise_std: 0.0, ..small() }).unwrap();
        for u in &s.corpus.utterances {
            let labels = frame_labels(&u.record).unwrap();
            for t in 0..labels.len() {
                assert_eq!(u.features.row(t), s.prototypes[labels[t] as usize].as_slice());
            }
            // a perfect classifier's output groups exactly at the phoneme changes
            let c = consecutive_index(&labels, BlankPolicy::Keep).unwrap();
            let d = u.record.true_durations.as_ref().unwrap();
            let mut t = 0;
            for (g, &n) in d.iter().enumerate() {
                for _ in 0..n {
                    assert_eq!(c.as_slice()[t], g as u32 + 1);
                    t += 1;
                }
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_manifest_bytes() {
        let cfg = small();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let mut bytes = Vec::new();
        for d in &dirs {
            let s = synth_corpus(&cfg).unwrap();
            let m = write_corpus(d.path(), &s.corpus.lexicon, &s.corpus.utterances).unwrap();
            bytes.push((
                std::fs::read(&m).unwrap(),
                std::fs::read(d.path().join("feats/train-00007.f32")).unwrap(),
            ));
        }
        assert_eq!(bytes[0], bytes[1]);

        let other = synth_corpus(&SynthConfig { seed: 1, ..cfg }).unwrap();
        let first = synth_corpus(&small()).unwrap();
        assert_ne!(other.corpus.utterances[0].features, first.corpus.utterances[0].features);
    }

    #[test]
    fn manifest_round_trip() {
        let s = synth_corpus(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_corpus(dir.path(), &s.corpus.lexicon, &s.corpus.utterances).unwrap();
        let back = read_corpus(&m).unwrap();
        assert_eq!(back.utterances.len(), s.corpus.utterances.len());
        for (a, b) in back.utterances.iter().zip(&s.corpus.utterances) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.record.text, b.record.text);
            assert_eq!(a.record.true_durations, b.record.true_durations);
        }
        assert_eq!(back.lexicon.to_lexicon_text(), s.corpus.lexicon.to_lexicon_text());
        assert_eq!(back.lexicon.inventory().len(), 12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            SynthConfig { noise_std: -1.0, ..small() },
            SynthConfig { keyword_count: 0, ..small() },
            SynthConfig { max_words: 0, ..small() },
            SynthConfig { phoneme_inventory_size: 40, ..small() },
        ] {
            assert!(synth_corpus(&cfg).is_err());
        }
    }

    #[test]
    fn feature_noise_hook() {
        let f = FeatureMatrix::new(2, 2, vec![1.0; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(add_feature_noise(&f, 0.0, &mut rng).unwrap(), f);
        let g = add_feature_noise(&f, 0.1, &mut rng).unwrap();
        assert_ne!(g, f);
        assert!(g.values().iter().all(|v| (v - 1.0).abs() < 1.0));
    }
}
