//! JSON-lines corpus manifest: one utterance record per line with id, wav
//! path, space-separated phoneme symbols, and alignment path. Paths are
//! resolved relative to the manifest file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub wav: PathBuf,
    pub phonemes: String,
    pub alignment: PathBuf,
    /// Optional precomputed F0 contour (CSV, one Hz value per frame,
    /// 0 = unvoiced), replacing the built-in estimator for this utterance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f0: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
}

impl CorpusManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
            if !seen.insert(entry.id.clone()) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    msg: format!("duplicate utterance id {:?}", entry.id),
                });
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(Error::Format(format!(
                "{}: no utterances",
                path.display()
            )));
        }
        Ok(CorpusManifest { entries, base_dir })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Resolve an entry-relative path against the manifest location.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_and_resolves() {
        let dir = std::env::temp_dir().join("melforge-manifest-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("manifest.jsonl");
        std::fs::write(
            &path,
            r#"{"id":"a","wav":"wavs/a.wav","phonemes":"_ AA _","alignment":"align/a.tsv"}
{"id":"b","wav":"wavs/b.wav","phonemes":"_ IY _","alignment":"align/b.tsv","f0":"f0/b.csv"}
"#,
        )
        .unwrap();
        let m = CorpusManifest::load(&path).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries[1].f0.as_deref(), Some(Path::new("f0/b.csv")));
        assert_eq!(m.resolve(&m.entries[0].wav), dir.join("wavs/a.wav"));
    }

    #[test]
    fn empty_manifest_is_error() {
        let dir = std::env::temp_dir().join("melforge-manifest-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.jsonl");
        std::fs::write(&path, "\n\n").unwrap();
        let err = CorpusManifest::load(&path).unwrap_err();
        assert!(err.to_string().contains("no utterances"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = std::env::temp_dir().join("melforge-manifest-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("dup.jsonl");
        std::fs::write(
            &path,
            r#"{"id":"a","wav":"a.wav","phonemes":"AA","alignment":"a.tsv"}
{"id":"a","wav":"b.wav","phonemes":"IY","alignment":"b.tsv"}
"#,
        )
        .unwrap();
        assert!(CorpusManifest::load(&path).is_err());
    }
}
