//! Extracted per-utterance features and their cache file format (the same
//! tagged section container as checkpoints).

use std::path::Path;

use crate::align::DurationSequence;
use crate::dsp::{EnergySequence, MelSpectrogram, PitchContour, PitchSpectrogram, N_SCALES};
use crate::error::{Error, Result};
use crate::sections::SectionFile;

/// Aligned feature bundle for one utterance: phoneme ids, frame durations,
/// preprocessed pitch (contour + wavelet spectrogram), energy, and the
/// target mel-spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub id: String,
    pub phoneme_ids: Vec<usize>,
    pub durations: DurationSequence,
    pub pitch: PitchContour,
    pub pitch_spec: PitchSpectrogram,
    pub energy: EnergySequence,
    pub mel: MelSpectrogram,
}

impl UtteranceFeatures {
    pub fn frame_count(&self) -> usize {
        self.mel.len()
    }

    pub fn phoneme_count(&self) -> usize {
        self.phoneme_ids.len()
    }

    /// Frame-length consistency across pitch/energy/mel and durations.
    pub fn validate(&self) -> Result<()> {
        let t = self.mel.len();
        if self.pitch.len() != t || self.energy.len() != t || self.pitch_spec.len() != t {
            return Err(Error::Shape(format!(
                "utterance {}: frame counts differ (mel {t}, pitch {}, spec {}, energy {})",
                self.id,
                self.pitch.len(),
                self.pitch_spec.len(),
                self.energy.len()
            )));
        }
        if self.durations.len() != self.phoneme_ids.len() {
            return Err(Error::Shape(format!(
                "utterance {}: {} durations for {} phonemes",
                self.id,
                self.durations.len(),
                self.phoneme_ids.len()
            )));
        }
        if self.durations.total() != t {
            return Err(Error::Shape(format!(
                "utterance {}: durations sum to {} but there are {t} frames",
                self.id,
                self.durations.total()
            )));
        }
        Ok(())
    }

    pub fn to_sections(&self) -> Result<SectionFile> {
        let mut f = SectionFile::new();
        f.put_text("id", &self.id)?;
        f.put_i64s(
            "phoneme_ids",
            self.phoneme_ids.iter().map(|v| *v as i64).collect(),
        )?;
        f.put_i64s(
            "durations",
            self.durations
                .frames_per_phoneme
                .iter()
                .map(|v| *v as i64)
                .collect(),
        )?;
        f.put_f64s("f0", vec![self.pitch.f0.len()], self.pitch.f0.clone())?;
        f.put_i64s(
            "voiced",
            self.pitch.voiced.iter().map(|v| *v as i64).collect(),
        )?;
        f.put_f64s(
            "normalized_logf0",
            vec![self.pitch.normalized_logf0.len()],
            self.pitch.normalized_logf0.clone(),
        )?;
        f.put_f64s(
            "pitch_stats",
            vec![2],
            vec![self.pitch.utt_mean, self.pitch.utt_std],
        )?;
        let t = self.pitch_spec.len();
        f.put_f64s(
            "pitch_spec",
            vec![t, N_SCALES],
            self.pitch_spec.components.iter().flatten().copied().collect(),
        )?;
        f.put_f64s("energy", vec![self.energy.len()], self.energy.energy.clone())?;
        f.put_f64s(
            "mel",
            vec![self.mel.len(), self.mel.n_mels],
            self.mel.frames.iter().flatten().copied().collect(),
        )?;
        Ok(f)
    }

    pub fn from_sections(f: &SectionFile) -> Result<Self> {
        let id = f.get_text("id")?;
        let phoneme_ids: Vec<usize> = f
            .get_i64s("phoneme_ids")?
            .iter()
            .map(|v| *v as usize)
            .collect();
        let durations = DurationSequence {
            frames_per_phoneme: f.get_i64s("durations")?.iter().map(|v| *v as usize).collect(),
        };
        let (_, f0) = f.get_f64s("f0")?;
        let voiced: Vec<bool> = f.get_i64s("voiced")?.iter().map(|v| *v != 0).collect();
        let (_, normalized) = f.get_f64s("normalized_logf0")?;
        let (_, stats) = f.get_f64s("pitch_stats")?;
        if stats.len() != 2 {
            return Err(Error::Format("pitch_stats must have two values".into()));
        }
        let pitch = PitchContour {
            f0: f0.to_vec(),
            voiced,
            normalized_logf0: normalized.to_vec(),
            utt_mean: stats[0],
            utt_std: stats[1],
        };
        let (spec_shape, spec_flat) = f.get_f64s("pitch_spec")?;
        if spec_shape.len() != 2 || spec_shape[1] != N_SCALES {
            return Err(Error::Shape(format!(
                "pitch_spec shape {spec_shape:?} is not [T, {N_SCALES}]"
            )));
        }
        let pitch_spec = PitchSpectrogram {
            components: spec_flat.chunks(N_SCALES).map(|c| c.to_vec()).collect(),
            utt_mean: stats[0],
            utt_std: stats[1],
            tau0: 0.005,
        };
        let (_, energy) = f.get_f64s("energy")?;
        let (mel_shape, mel_flat) = f.get_f64s("mel")?;
        if mel_shape.len() != 2 {
            return Err(Error::Shape(format!("mel shape {mel_shape:?} is not 2-D")));
        }
        let n_mels = mel_shape[1];
        let mel = MelSpectrogram::new(
            mel_flat.chunks(n_mels).map(|c| c.to_vec()).collect(),
            n_mels,
        )?;
        let features = UtteranceFeatures {
            id,
            phoneme_ids,
            durations,
            pitch,
            pitch_spec,
            energy: EnergySequence {
                energy: energy.to_vec(),
            },
            mel,
        };
        features.validate()?;
        Ok(features)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_sections()?.write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        UtteranceFeatures::from_sections(&SectionFile::read(path)?)
    }
}
