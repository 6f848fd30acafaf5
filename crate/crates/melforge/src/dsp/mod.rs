//! Signal-processing front end: STFT, mel-spectrograms, frame energy, F0
//! estimation, pitch preprocessing, wavelet pitch decomposition, and a
//! phase-reconstruction synthesizer for audible output.

mod cwt;
mod griffin_lim;
mod linalg;
mod pitch;
mod stft;
pub mod wav;

pub use cwt::{
    cwt_decompose, decompose_series, denormalize_logf0, icwt_recompose, pearson_correlation,
    recompose_components, synthetic_contour, CwtConfig, PitchSpectrogram, N_SCALES,
};
pub use griffin_lim::griffin_lim;
pub use pitch::{estimate_f0, preprocess_pitch, PitchContour};
pub use stft::{energy_from_stft, extract_mel, istft, mel_filterbank, stft, ComplexFrames};
pub use rustfft::num_complex::Complex;

use crate::error::{Error, Result};

/// Audio analysis configuration shared by every front-end stage.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub frame_size: usize,
    pub hop_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig {
            sample_rate: 22050,
            frame_size: 1024,
            hop_size: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

impl AudioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop_size == 0 || self.hop_size > self.frame_size {
            return Err(Error::Config(format!(
                "hop_size {} must be in 1..=frame_size {}",
                self.hop_size, self.frame_size
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be >= 1".into()));
        }
        if self.fmax > self.sample_rate as f64 / 2.0 {
            return Err(Error::Config(format!(
                "fmax {} exceeds Nyquist {}",
                self.fmax,
                self.sample_rate as f64 / 2.0
            )));
        }
        if self.fmin < 0.0 || self.fmin >= self.fmax {
            return Err(Error::Config(format!(
                "need 0 <= fmin < fmax, got {} / {}",
                self.fmin, self.fmax
            )));
        }
        Ok(())
    }

    /// Seconds per analysis frame.
    pub fn frame_period(&self) -> f64 {
        self.hop_size as f64 / self.sample_rate as f64
    }

    /// Frame count for a waveform of `len` samples under center padding.
    pub fn frame_count(&self, len: usize) -> usize {
        1 + len / self.hop_size
    }

    /// One-sided spectrum size.
    pub fn n_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }
}

/// Mono waveform with samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Format("empty waveform".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("non-finite waveform sample".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Log-amplitude mel-spectrogram, `frames[t][m]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Vec<Vec<f64>>,
    pub n_mels: usize,
}

impl MelSpectrogram {
    pub fn new(frames: Vec<Vec<f64>>, n_mels: usize) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Format("mel-spectrogram needs at least 1 frame".into()));
        }
        for (t, row) in frames.iter().enumerate() {
            if row.len() != n_mels {
                return Err(Error::Shape(format!(
                    "mel frame {t} has {} channels, expected {n_mels}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite mel value in frame {t}")));
            }
        }
        Ok(MelSpectrogram { frames, n_mels })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Per-frame spectral energy: the L2 norm of each STFT frame's amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySequence {
    pub energy: Vec<f64>,
}

impl EnergySequence {
    pub fn len(&self) -> usize {
        self.energy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energy.is_empty()
    }
}

/// Natural-log floor applied to mel magnitudes.
pub(crate) const LOG_FLOOR: f64 = 1e-5;
