//! Corpus ingestion, feature caching, and the operations behind the CLI
//! verbs.

mod features;
mod manifest;
mod ops;

pub use features::UtteranceFeatures;
pub use manifest::{CorpusManifest, ManifestEntry};
pub use ops::{
    extract, feature_path, load_features, load_mel, load_spaces, mel_csv, pitch_csv, run_eval,
    save_mel, synthesize, ExtractOutcome, SynthesisResult, F0_RANGE,
};
