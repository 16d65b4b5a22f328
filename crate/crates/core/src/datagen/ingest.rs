use std::path::{Path, PathBuf};

use tracing::warn;

use super::manifest::{Split, Utterance, UtteranceRecord};
use crate::error::{KwsError, Result};
use crate::features::{phonemize, read_wav, Filterbank, FilterbankConfig, Lexicon};

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| KwsError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// Reads a keyword-per-folder tree of WAV files. Folders whose names start
/// with `_` (such as `_background_noise_`) are ignored.
pub fn ingest_speech_commands(dir: &Path, lexicon: &Lexicon, fbank: &FilterbankConfig) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for folder in sorted_entries(dir)? {
        let Some(name) = folder.file_name().and_then(|n| n.to_str()).map(String::from) else {
            continue;
        };
        if !folder.is_dir() || name.starts_with('_') {
            continue;
        }
        let text = name.replace('_', " ");
        let phonemes = match phonemize(&text, lexicon) {
            Ok(p) => p,
            Err(e) => {
                warn!(folder = %folder.display(), "skipping folder: {e}");
                continue;
            }
        };
        for wav in sorted_entries(&folder)? {
            if wav.extension().and_then(|e| e.to_str()) != Some("wav") {
                continue;
            }
            let features = match read_wav(&wav).and_then(|w| Filterbank::new(fbank.clone(), w.sample_rate)?.compute(&w.samples)) {
                Ok(f) => f,
                Err(e) => {
                    warn!(file = %wav.display(), "skipping unreadable audio: {e}");
                    continue;
                }
            };
            let stem = wav.file_stem().and_then(|s| s.to_str()).unwrap_or("utt");
            out.push(Utterance {
                record: UtteranceRecord {
                    id: format!("{name}/{stem}"),
                    features_path: None,
                    wav_path: Some(wav.display().to_string()),
                    n_frames: features.n_frames(),
                    feature_dim: features.dim(),
                    text: text.clone(),
                    phoneme_ids: phonemes.ids().to_vec(),
                    true_durations: None,
                    split: Split::Test,
                },
                features,
            });
        }
    }
    if out.is_empty() {
        warn!(dir = %dir.display(), "no readable recordings found");
    }
    Ok(out)
}
