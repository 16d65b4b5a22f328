//! JSON-lines manifests with one raw little-endian `f32` feature file per
//! utterance, plus the phoneme inventory and lexicon stored beside them.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::features::{FeatureMatrix, Lexicon, PhonemeInventory};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const INVENTORY_FILE: &str = "inventory.txt";
pub const LEXICON_FILE: &str = "lexicon.tsv";
pub const FALLBACK_FILE: &str = "fallback.tsv";
const FEATURE_DIR: &str = "feats";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = KwsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(KwsError::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    /// Feature file, relative to the manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav_path: Option<String>,
    pub n_frames: usize,
    pub feature_dim: usize,
    pub text: String,
    pub phoneme_ids: Vec<u32>,
    /// Frames per phoneme, only known for synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_durations: Option<Vec<u32>>,
    pub split: Split,
}

impl UtteranceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.phoneme_ids.is_empty() {
            return Err(KwsError::invalid(format!("{}: empty phoneme sequence", self.id)));
        }
        if let Some(d) = &self.true_durations {
            let total: u64 = d.iter().map(|&x| x as u64).sum();
            if d.len() != self.phoneme_ids.len() || total != self.n_frames as u64 {
                return Err(KwsError::invalid(format!(
                    "{}: durations {d:?} do not cover {} frames of {} phonemes",
                    self.id,
                    self.n_frames,
                    self.phoneme_ids.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub record: UtteranceRecord,
    pub features: FeatureMatrix,
}

/// A manifest loaded together with its lexicon.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub lexicon: Lexicon,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> + '_ {
        self.utterances.iter().filter(move |u| u.record.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.record.id == id)
    }
}

fn safe_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| KwsError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| KwsError::io(path, e))
}

pub fn write_features(path: &Path, f: &FeatureMatrix) -> Result<()> {
    let bytes: Vec<u8> = f.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_file(path, &bytes)
}

pub fn read_features(path: &Path, n_frames: usize, dim: usize) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| KwsError::io(path, e))?;
    if bytes.len() != n_frames * dim * 4 {
        return Err(KwsError::invalid(format!(
            "{}: expected {} bytes for {n_frames}x{dim} features, found {}",
            path.display(),
            n_frames * dim * 4,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureMatrix::new(n_frames, dim, values)
}

/// Writes `manifest.jsonl`, the feature files and the lexicon into `dir`.
/// Returns the manifest path.
pub fn write_corpus(dir: &Path, lexicon: &Lexicon, utterances: &[Utterance]) -> Result<PathBuf> {
    let feat_dir = dir.join(FEATURE_DIR);
    fs::create_dir_all(&feat_dir).map_err(|e| KwsError::io(&feat_dir, e))?;
    let manifest = dir.join(MANIFEST_FILE);
    let file = fs::File::create(&manifest).map_err(|e| KwsError::io(&manifest, e))?;
    let mut out = BufWriter::new(file);
    for u in utterances {
        u.record.validate()?;
        let rel = format!("{FEATURE_DIR}/{}.f32", safe_file_stem(&u.record.id));
        write_features(&dir.join(&rel), &u.features)?;
        let mut record = u.record.clone();
        record.features_path = Some(rel);
        record.n_frames = u.features.n_frames();
        record.feature_dim = u.features.dim();
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| KwsError::io(&manifest, e))?;
    }
    out.flush().map_err(|e| KwsError::io(&manifest, e))?;

    let symbols = lexicon.inventory().symbols()[1..].join("\n") + "\n";
    write_file(&dir.join(INVENTORY_FILE), symbols.as_bytes())?;
    write_file(&dir.join(LEXICON_FILE), lexicon.to_lexicon_text().as_bytes())?;
    write_file(&dir.join(FALLBACK_FILE), lexicon.to_fallback_text().as_bytes())?;
    Ok(manifest)
}

pub fn read_records(manifest: &Path) -> Result<Vec<UtteranceRecord>> {
    let file = fs::File::open(manifest).map_err(|e| KwsError::io(manifest, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| KwsError::io(manifest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: UtteranceRecord = serde_json::from_str(&line)
            .map_err(|e| KwsError::invalid(format!("{} line {}: {e}", manifest.display(), n + 1)))?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// Loads the lexicon files that sit next to a manifest.
pub fn read_lexicon(dir: &Path) -> Result<Lexicon> {
    let inventory = PhonemeInventory::new(
        read_text(&dir.join(INVENTORY_FILE))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from),
    )?;
    Lexicon::load(inventory, dir.join(LEXICON_FILE), dir.join(FALLBACK_FILE))
}

/// Reads a manifest, its feature files and the sibling lexicon.
pub fn read_corpus(manifest: &Path) -> Result<Corpus> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let lexicon = read_lexicon(dir)?;
    let mut utterances = Vec::new();
    for record in read_records(manifest)? {
        let rel = record
            .features_path
            .as_deref()
            .ok_or_else(|| KwsError::invalid(format!("{}: no feature file", record.id)))?;
        let features = read_features(&dir.join(rel), record.n_frames, record.feature_dim)?;
        utterances.push(Utterance { record, features });
    }
    Ok(Corpus { lexicon, utterances })
}
