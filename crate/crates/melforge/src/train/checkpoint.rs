//! Checkpoints: model + audio configuration, quantizer ranges and wavelet
//! gains, weights, optimizer moments, the step counter and the RNG seed,
//! all in the shared section container. Weight and moment payloads are
//! stored as little-endian f32; since persistent training state is kept
//! f32-representable, save/load round-trips are bitwise.

use std::collections::BTreeMap;
use std::path::Path;

use super::optim::AdamState;
use crate::config::ConfigMap;
use crate::dsp::AudioConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelWeights, VarianceSpaces};
use crate::sections::SectionFile;
use crate::tensor::Tensor;
use crate::vocab::PhonemeVocab;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_cfg: ModelConfig,
    pub audio_cfg: AudioConfig,
    pub spaces: VarianceSpaces,
    pub weights: ModelWeights,
    pub moments: AdamState,
    pub step: u64,
    pub seed: u64,
    pub symbols: Vec<String>,
}

impl Checkpoint {
    pub fn vocab(&self) -> Result<PhonemeVocab> {
        PhonemeVocab::new(self.symbols.clone())
    }

    pub fn to_sections(&self) -> Result<SectionFile> {
        // model and audio front end must agree on the mel channel count;
        // they share the n_mels key in the embedded config
        if self.model_cfg.n_mels != self.audio_cfg.n_mels {
            return Err(Error::Config(format!(
                "model predicts {} mel channels but the audio config analyzes {}",
                self.model_cfg.n_mels, self.audio_cfg.n_mels
            )));
        }
        let mut config = ConfigMap::new();
        config.set_model_config(&self.model_cfg);
        config.set_audio_config(&self.audio_cfg);
        config.set_variance_spaces(&self.spaces);

        let mut f = SectionFile::new();
        f.put_text("config", &config.to_text())?;
        f.put_text("symbols", &self.symbols.join("\n"))?;
        f.put_u64("step", self.step)?;
        f.put_u64("seed", self.seed)?;
        for (name, tensor) in self.weights.iter() {
            f.put_f32s(
                &format!("weights.{name}"),
                tensor.shape().to_vec(),
                tensor.data().iter().map(|v| *v as f32).collect(),
            )?;
        }
        for (name, m) in &self.moments.m {
            f.put_f32s(
                &format!("adam.m.{name}"),
                vec![m.len()],
                m.iter().map(|v| *v as f32).collect(),
            )?;
        }
        for (name, v) in &self.moments.v {
            f.put_f32s(
                &format!("adam.v.{name}"),
                vec![v.len()],
                v.iter().map(|v| *v as f32).collect(),
            )?;
        }
        Ok(f)
    }

    pub fn from_sections(f: &SectionFile) -> Result<Self> {
        let config = ConfigMap::parse(&f.get_text("config")?, "checkpoint")?;
        let symbols: Vec<String> = f
            .get_text("symbols")?
            .lines()
            .map(str::to_string)
            .collect();
        let vocab_size = config.get_usize("vocab_size", symbols.len())?;
        if vocab_size != symbols.len() {
            return Err(Error::Format(format!(
                "checkpoint stores {} symbols but vocab_size = {vocab_size}",
                symbols.len()
            )));
        }
        let model_cfg = config.model_config(vocab_size)?;
        let audio_cfg = config.audio_config()?;
        let spaces = config.variance_spaces()?;
        let step = f.get_u64("step")?;
        let seed = f.get_u64("seed")?;

        let mut params = BTreeMap::new();
        let mut moments = AdamState::default();
        for name in f.names() {
            if let Some(param) = name.strip_prefix("weights.") {
                let (shape, values) = f.get_f32s(name)?;
                params.insert(
                    param.to_string(),
                    Tensor::new(shape.to_vec(), values.iter().map(|v| *v as f64).collect())?,
                );
            } else if let Some(param) = name.strip_prefix("adam.m.") {
                let (_, values) = f.get_f32s(name)?;
                moments
                    .m
                    .insert(param.to_string(), values.iter().map(|v| *v as f64).collect());
            } else if let Some(param) = name.strip_prefix("adam.v.") {
                let (_, values) = f.get_f32s(name)?;
                moments
                    .v
                    .insert(param.to_string(), values.iter().map(|v| *v as f64).collect());
            }
        }
        let weights = ModelWeights::from_params(params);

        // the stored weights must cover exactly the configured shapes
        let expected = model_cfg.parameter_shapes();
        if weights.len() != expected.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} weight sections, config implies {}",
                weights.len(),
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            let got = weights.get(name)?;
            if got.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "checkpoint weight {name:?} has shape {:?}, config implies {shape:?}",
                    got.shape()
                )));
            }
        }

        Ok(Checkpoint {
            model_cfg,
            audio_cfg,
            spaces,
            weights,
            moments,
            step,
            seed,
            symbols,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_sections()?.write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_sections(&SectionFile::read(path)?)
    }
}
