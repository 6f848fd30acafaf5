//! Phoneme vocabulary: the mapping between phoneme symbols and model input
//! ids. Loaded from a user-supplied symbols file (one symbol per line) since
//! phoneme inventories are tool-specific.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeVocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl PhonemeVocab {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Format(format!("empty symbol at position {i}")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate symbol {s:?}")));
            }
        }
        if symbols.is_empty() {
            return Err(Error::Format("empty vocabulary".into()));
        }
        Ok(PhonemeVocab { symbols, index })
    }

    /// One symbol per line; blank lines and `#` comments are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let symbols = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        PhonemeVocab::new(symbols)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.index.contains_key(symbol)
    }

    /// Map a whitespace-separated phoneme string to ids, naming any unknown
    /// symbol in the error.
    pub fn encode(&self, phonemes: &str) -> Result<Vec<usize>> {
        phonemes
            .split_whitespace()
            .map(|s| {
                self.id(s)
                    .ok_or_else(|| Error::Format(format!("unknown phoneme {s:?}")))
            })
            .collect()
    }
}
