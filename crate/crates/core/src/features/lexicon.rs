use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};

/// Reserved CTC blank. Never produced by the phonemizer.
pub const BLANK_ID: u32 = 0;

/// Phoneme symbol table; index 0 is the CTC blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
}

impl PhonemeInventory {
    pub const BLANK_SYMBOL: &'static str = "<blk>";

    /// Builds an inventory from non-blank symbols; the blank is prepended.
    pub fn new<S: Into<String>>(phonemes: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut symbols = vec![Self::BLANK_SYMBOL.to_string()];
        for s in phonemes {
            let s = s.into();
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(KwsError::invalid(format!("bad phoneme symbol {s:?}")));
            }
            if symbols.contains(&s) {
                return Err(KwsError::invalid(format!("duplicate phoneme symbol {s:?}")));
            }
            symbols.push(s);
        }
        Ok(Self { symbols })
    }

    /// Inventory size P, blank included.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.len() <= 1
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id_of(&self, symbol: &str) -> Option<u32> {
        self.symbols.iter().position(|s| s == symbol).map(|i| i as u32)
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }
}

/// Text-side phoneme IDs for one keyword.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhonemeSequence {
    ids: Vec<u32>,
    inventory_size: usize,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<u32>, inventory_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(KwsError::invalid("phoneme sequence is empty"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= inventory_size) {
            return Err(KwsError::invalid(format!(
                "phoneme id {bad} outside inventory of size {inventory_size}"
            )));
        }
        if ids.contains(&BLANK_ID) {
            return Err(KwsError::invalid("blank id in a text-side phoneme sequence"));
        }
        Ok(Self {
            ids,
            inventory_size,
        })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn inventory_size(&self) -> usize {
        self.inventory_size
    }
}

/// Word pronunciations plus a one-phoneme-per-letter fallback for
/// out-of-lexicon words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    inventory: PhonemeInventory,
    entries: HashMap<String, Vec<u32>>,
    fallback: BTreeMap<char, u32>,
}

fn parse_entries(text: &str, inventory: &PhonemeInventory) -> Result<Vec<(String, Vec<u32>)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (word, phones) = line.split_once('\t').ok_or_else(|| {
            KwsError::invalid(format!("lexicon line {}: missing TAB separator", lineno + 1))
        })?;
        let ids = phones
            .split_whitespace()
            .map(|p| {
                inventory.id_of(p).filter(|&id| id != BLANK_ID).ok_or_else(|| {
                    KwsError::invalid(format!("lexicon line {}: unknown phoneme {p:?}", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(KwsError::invalid(format!(
                "lexicon line {}: empty pronunciation",
                lineno + 1
            )));
        }
        out.push((word.trim().to_lowercase(), ids));
    }
    Ok(out)
}

impl Lexicon {
    pub fn new(inventory: PhonemeInventory, fallback: BTreeMap<char, u32>) -> Result<Self> {
        for (&c, &id) in &fallback {
            if id == BLANK_ID || id as usize >= inventory.len() {
                return Err(KwsError::invalid(format!(
                    "fallback for {c:?} maps to invalid phoneme id {id}"
                )));
            }
        }
        Ok(Self {
            inventory,
            entries: HashMap::new(),
            fallback,
        })
    }

    pub fn insert(&mut self, word: &str, ids: Vec<u32>) -> Result<()> {
        PhonemeSequence::new(ids.clone(), self.inventory.len())?;
        self.entries.insert(word.to_lowercase(), ids);
        Ok(())
    }

    /// Parses `word<TAB>ph1 ph2 ...` lines. The fallback table uses the same
    /// format with single-character words.
    pub fn parse(inventory: PhonemeInventory, lexicon: &str, fallback: &str) -> Result<Self> {
        let mut table = BTreeMap::new();
        for (letter, ids) in parse_entries(fallback, &inventory)? {
            let mut chars = letter.chars();
            match (chars.next(), chars.next(), ids.as_slice()) {
                (Some(c), None, &[id]) => {
                    table.insert(c, id);
                }
                _ => {
                    return Err(KwsError::invalid(format!(
                        "fallback rule {letter:?} must map one letter to one phoneme"
                    )))
                }
            }
        }
        let mut lex = Self::new(inventory, table)?;
        for (word, ids) in parse_entries(lexicon, &lex.inventory)? {
            lex.entries.insert(word, ids);
        }
        Ok(lex)
    }

    pub fn load(
        inventory: PhonemeInventory,
        lexicon_path: impl AsRef<Path>,
        fallback_path: impl AsRef<Path>,
    ) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| KwsError::io(p, e));
        Self::parse(
            inventory,
            &read(lexicon_path.as_ref())?,
            &read(fallback_path.as_ref())?,
        )
    }

    /// Lexicon entries in the on-disk format, sorted by word.
    pub fn to_lexicon_text(&self) -> String {
        let mut words: Vec<_> = self.entries.iter().collect();
        words.sort();
        words
            .into_iter()
            .map(|(w, ids)| format!("{w}\t{}\n", self.render(ids)))
            .collect()
    }

    pub fn to_fallback_text(&self) -> String {
        self.fallback
            .iter()
            .map(|(c, &id)| format!("{c}\t{}\n", self.render(&[id])))
            .collect()
    }

    fn render(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.inventory.symbol(id).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn inventory(&self) -> &PhonemeInventory {
        &self.inventory
    }

    pub fn lookup(&self, word: &str) -> Option<&[u32]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn alphabet(&self) -> impl Iterator<Item = char> + '_ {
        self.fallback.keys().copied()
    }
}

/// Text to phoneme IDs: lowercase, split on whitespace, look each word up,
/// spelling out unknown words letter by letter.
pub fn phonemize(text: &str, lex: &Lexicon) -> Result<PhonemeSequence> {
    let normalized = text.to_lowercase();
    let mut ids = Vec::new();
    let mut words = 0;
    for word in normalized.split_whitespace() {
        words += 1;
        if let Some(entry) = lex.entries.get(word) {
            ids.extend_from_slice(entry);
            continue;
        }
        for c in word.chars() {
            let id = lex.fallback.get(&c).ok_or_else(|| {
                KwsError::invalid(format!("character {c:?} in {word:?} is outside the alphabet"))
            })?;
            ids.push(*id);
        }
    }
    if words == 0 {
        return Err(KwsError::invalid("text is empty after normalization"));
    }
    PhonemeSequence::new(ids, lex.inventory.len())
}
