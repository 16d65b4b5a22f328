//! Synthetic corpora, manifest IO, corpus ingestion and evaluation pairs.

mod ingest;
mod levenshtein;
mod manifest;
mod pairs;
mod synth;

pub use ingest::ingest_speech_commands;
pub use levenshtein::levenshtein;
pub use manifest::{
    read_corpus, read_features, read_lexicon, read_records, write_corpus, write_features, Corpus, Split, Utterance,
    UtteranceRecord, MANIFEST_FILE,
};
pub use pairs::{build_pairs, read_pairs, subset, write_pairs, Difficulty, EvalPair, PairConfig, PairMode};
pub use synth::{add_feature_noise, frame_labels, generate_keywords, render, synth_corpus, Keyword, SynthConfig, SynthCorpus};
