//! Flat key-value configuration text: `key = value` lines with `#`
//! comments. Used for CLI config files and embedded verbatim inside
//! checkpoints, with keys mirroring the config struct field names.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dsp::{AudioConfig, CwtConfig, N_SCALES};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, QuantizerSpec, VarianceSpaces};
use crate::train::{LossWeights, OptimizerConfig};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        ConfigMap::default()
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: idx + 1,
                    msg: format!("expected key = value, got {line:?}"),
                });
            };
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigMap { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ConfigMap::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn parse_key<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("cannot parse {key} = {raw:?}"))
            }),
        }
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.parse_key(key)?.unwrap_or(default))
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.parse_key(key)?.unwrap_or(default))
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self.parse_key(key)?.unwrap_or(default))
    }

    pub fn get_u32(&self, key: &str, default: u32) -> Result<u32> {
        Ok(self.parse_key(key)?.unwrap_or(default))
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        Ok(self.parse_key(key)?.unwrap_or(default))
    }

    // ---- struct bridges ---------------------------------------------------

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let base = ModelConfig::base(vocab_size);
        let cfg = ModelConfig {
            vocab_size,
            hidden: self.get_usize("hidden", base.hidden)?,
            heads: self.get_usize("heads", base.heads)?,
            encoder_layers: self.get_usize("encoder_layers", base.encoder_layers)?,
            decoder_layers: self.get_usize("decoder_layers", base.decoder_layers)?,
            conv_kernels: (
                self.get_usize("conv_kernel_1", base.conv_kernels.0)?,
                self.get_usize("conv_kernel_2", base.conv_kernels.1)?,
            ),
            conv_filter: self.get_usize("conv_filter", base.conv_filter)?,
            predictor_kernel: self.get_usize("predictor_kernel", base.predictor_kernel)?,
            predictor_filter: self.get_usize("predictor_filter", base.predictor_filter)?,
            predictor_dropout: self.get_f64("predictor_dropout", base.predictor_dropout)?,
            enc_dec_dropout: self.get_f64("enc_dec_dropout", base.enc_dec_dropout)?,
            n_bins: self.get_usize("n_bins", base.n_bins)?,
            n_mels: self.get_usize("n_mels", base.n_mels)?,
            cwt_scales: self.get_usize("cwt_scales", base.cwt_scales)?,
            stacked_variance_embeddings: self.get_bool(
                "stacked_variance_embeddings",
                base.stacked_variance_embeddings,
            )?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_model_config(&mut self, cfg: &ModelConfig) {
        self.set("vocab_size", cfg.vocab_size);
        self.set("hidden", cfg.hidden);
        self.set("heads", cfg.heads);
        self.set("encoder_layers", cfg.encoder_layers);
        self.set("decoder_layers", cfg.decoder_layers);
        self.set("conv_kernel_1", cfg.conv_kernels.0);
        self.set("conv_kernel_2", cfg.conv_kernels.1);
        self.set("conv_filter", cfg.conv_filter);
        self.set("predictor_kernel", cfg.predictor_kernel);
        self.set("predictor_filter", cfg.predictor_filter);
        self.set("predictor_dropout", cfg.predictor_dropout);
        self.set("enc_dec_dropout", cfg.enc_dec_dropout);
        self.set("n_bins", cfg.n_bins);
        self.set("n_mels", cfg.n_mels);
        self.set("cwt_scales", cfg.cwt_scales);
        self.set(
            "stacked_variance_embeddings",
            cfg.stacked_variance_embeddings,
        );
    }

    pub fn audio_config(&self) -> Result<AudioConfig> {
        let base = AudioConfig::default();
        let cfg = AudioConfig {
            sample_rate: self.get_u32("sample_rate", base.sample_rate)?,
            frame_size: self.get_usize("frame_size", base.frame_size)?,
            hop_size: self.get_usize("hop_size", base.hop_size)?,
            n_mels: self.get_usize("n_mels", base.n_mels)?,
            fmin: self.get_f64("fmin", base.fmin)?,
            fmax: self.get_f64("fmax", base.fmax)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_audio_config(&mut self, cfg: &AudioConfig) {
        self.set("sample_rate", cfg.sample_rate);
        self.set("frame_size", cfg.frame_size);
        self.set("hop_size", cfg.hop_size);
        self.set("n_mels", cfg.n_mels);
        self.set("fmin", cfg.fmin);
        self.set("fmax", cfg.fmax);
    }

    pub fn optimizer_config(&self, d_model: usize) -> Result<OptimizerConfig> {
        let base = OptimizerConfig::for_model_dim(d_model);
        let grad_clip = match self.get("grad_clip") {
            Some("none") => None,
            Some(raw) => Some(raw.parse::<f64>().map_err(|_| {
                Error::Config(format!("cannot parse grad_clip = {raw:?}"))
            })?),
            None => base.grad_clip,
        };
        let cfg = OptimizerConfig {
            beta1: self.get_f64("beta1", base.beta1)?,
            beta2: self.get_f64("beta2", base.beta2)?,
            eps: self.get_f64("eps", base.eps)?,
            warmup_steps: self.get_u64("warmup_steps", base.warmup_steps)?,
            d_model,
            grad_clip,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_optimizer_config(&mut self, cfg: &OptimizerConfig) {
        self.set("beta1", cfg.beta1);
        self.set("beta2", cfg.beta2);
        self.set("eps", cfg.eps);
        self.set("warmup_steps", cfg.warmup_steps);
        self.set("d_model", cfg.d_model);
        match cfg.grad_clip {
            Some(c) => self.set("grad_clip", c),
            None => self.set("grad_clip", "none"),
        }
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        let base = LossWeights::default();
        let w = LossWeights {
            w_mel: self.get_f64("w_mel", base.w_mel)?,
            w_dur: self.get_f64("w_dur", base.w_dur)?,
            w_pitch_spec: self.get_f64("w_pitch_spec", base.w_pitch_spec)?,
            w_pitch_stats: self.get_f64("w_pitch_stats", base.w_pitch_stats)?,
            w_energy: self.get_f64("w_energy", base.w_energy)?,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn set_loss_weights(&mut self, w: &LossWeights) {
        self.set("w_mel", w.w_mel);
        self.set("w_dur", w.w_dur);
        self.set("w_pitch_spec", w.w_pitch_spec);
        self.set("w_pitch_stats", w.w_pitch_stats);
        self.set("w_energy", w.w_energy);
    }

    pub fn variance_spaces(&self) -> Result<VarianceSpaces> {
        let n_bins = self.get_usize("n_bins", 256)?;
        let pitch_quantizer = QuantizerSpec::pitch(
            self.get_f64("pitch_lo", 50.0)?,
            self.get_f64("pitch_hi", 600.0)?,
            n_bins,
        )?;
        let energy_quantizer = QuantizerSpec::energy(
            self.get_f64("energy_lo", 0.0)?,
            self.get_f64("energy_hi", 100.0)?,
            n_bins,
        )?;
        let frame_period = self.get_f64("frame_period", 256.0 / 22050.0)?;
        let mut cwt = CwtConfig::uncalibrated(frame_period);
        for (i, g) in cwt.gains.iter_mut().enumerate() {
            *g = self.get_f64(&format!("cwt_gain_{i}"), 1.0)?;
        }
        Ok(VarianceSpaces {
            pitch_quantizer,
            energy_quantizer,
            cwt,
        })
    }

    pub fn set_variance_spaces(&mut self, spaces: &VarianceSpaces) {
        self.set("pitch_lo", spaces.pitch_quantizer.lo);
        self.set("pitch_hi", spaces.pitch_quantizer.hi);
        self.set("energy_lo", spaces.energy_quantizer.lo);
        self.set("energy_hi", spaces.energy_quantizer.hi);
        self.set("frame_period", spaces.cwt.frame_period);
        for i in 0..N_SCALES {
            self.set(&format!("cwt_gain_{i}"), spaces.cwt.gains[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_roundtrip() {
        let text = "# model\nhidden = 64\nheads=2\n\nw_mel = 1.5\n";
        let map = ConfigMap::parse(text, "test").unwrap();
        assert_eq!(map.get_usize("hidden", 0).unwrap(), 64);
        assert_eq!(map.get_usize("heads", 0).unwrap(), 2);
        let again = ConfigMap::parse(&map.to_text(), "test").unwrap();
        assert_eq!(map, again);
    }

    #[test]
    fn bad_line_reports_position() {
        let err = ConfigMap::parse("hidden 64\n", "conf").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn model_config_bridge() {
        let mut map = ConfigMap::new();
        map.set_model_config(&ModelConfig::tiny(13));
        let cfg = map.model_config(13).unwrap();
        assert_eq!(cfg, ModelConfig::tiny(13));
    }

    #[test]
    fn unparsable_value_is_config_error() {
        let map = ConfigMap::parse("hidden = banana\n", "t").unwrap();
        assert!(map.model_config(10).is_err());
    }
}
