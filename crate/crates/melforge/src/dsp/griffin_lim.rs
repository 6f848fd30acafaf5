//! Phase reconstruction from mel-spectrograms: pseudo-inverse the mel
//! filterbank back to a linear magnitude spectrum, then run iterative
//! phase estimation. A vocoder substitute for audible output, not a
//! quality target.

use rustfft::num_complex::Complex;

use super::linalg::solve_dense;
use super::stft::{istft, mel_filterbank, stft, ComplexFrames};
use super::{AudioConfig, MelSpectrogram, Waveform, LOG_FLOOR};
use crate::error::{Error, Result};

/// Moore-Penrose pseudo-inverse of the mel filterbank via normal equations:
/// `pinv = M^T (M M^T)^-1`, rows indexed by frequency bin.
fn mel_pseudo_inverse(bank: &[Vec<f64>], n_bins: usize) -> Result<Vec<Vec<f64>>> {
    let n_mels = bank.len();
    let mut gram = vec![0.0; n_mels * n_mels];
    for i in 0..n_mels {
        for j in 0..n_mels {
            gram[i * n_mels + j] = bank[i]
                .iter()
                .zip(&bank[j])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        // neighbouring triangles overlap so the Gram matrix is near-banded;
        // a tiny ridge keeps the corner filters from going singular
        gram[i * n_mels + i] += 1e-10;
    }
    // Solve (M M^T) X = M column-by-column; pinv column k is X for M[:,k].
    let mut pinv = vec![vec![0.0; n_mels]; n_bins];
    for k in 0..n_bins {
        let mut a = gram.clone();
        let mut rhs: Vec<f64> = (0..n_mels).map(|i| bank[i][k]).collect();
        let x = solve_dense(&mut a, &mut rhs, n_mels)?;
        pinv[k].copy_from_slice(&x);
    }
    Ok(pinv)
}

/// Mel -> approximate linear magnitudes -> iterative phase reconstruction ->
/// waveform. `n_iter = 0` is a single inverse STFT with zero phase.
pub fn griffin_lim(mel: &MelSpectrogram, cfg: &AudioConfig, n_iter: usize) -> Result<Waveform> {
    cfg.validate()?;
    if mel.n_mels != cfg.n_mels {
        return Err(Error::Shape(format!(
            "mel has {} channels, config expects {}",
            mel.n_mels, cfg.n_mels
        )));
    }
    let n_bins = cfg.n_bins();
    let bank = mel_filterbank(cfg);
    let pinv = mel_pseudo_inverse(&bank, n_bins)?;

    // Linear magnitude estimate per frame. Values at the log floor are
    // treated as true silence so quiet regions stay quiet.
    let magnitudes: Vec<Vec<f64>> = mel
        .frames
        .iter()
        .map(|row| {
            let linear: Vec<f64> = row
                .iter()
                .map(|v| {
                    let p = v.exp();
                    if p <= LOG_FLOOR * (1.0 + 1e-9) {
                        0.0
                    } else {
                        p
                    }
                })
                .collect();
            pinv.iter()
                .map(|col| {
                    col.iter()
                        .zip(&linear)
                        .map(|(w, m)| w * m)
                        .sum::<f64>()
                        .max(0.0)
                })
                .collect()
        })
        .collect();

    // zero-phase start
    let mut frames = ComplexFrames {
        frames: magnitudes
            .iter()
            .map(|m| m.iter().map(|v| Complex::new(*v, 0.0)).collect())
            .collect(),
        n_bins,
    };
    let mut wave = istft(&frames, cfg)?;
    for _ in 0..n_iter {
        let rebuilt = stft(&wave, cfg)?;
        for (t, frame) in frames.frames.iter_mut().enumerate() {
            if t >= rebuilt.frames.len() {
                break;
            }
            for (k, c) in frame.iter_mut().enumerate() {
                let est = rebuilt.frames[t][k];
                let norm = est.norm();
                let phase = if norm > 1e-12 {
                    est / norm
                } else {
                    Complex::new(1.0, 0.0)
                };
                *c = phase * magnitudes[t][k];
            }
        }
        wave = istft(&frames, cfg)?;
    }
    Ok(wave)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_mel_stays_silent() {
        let cfg = AudioConfig::default();
        let mel =
            MelSpectrogram::new(vec![vec![LOG_FLOOR.ln(); 80]; 40], 80).unwrap();
        let wave = griffin_lim(&mel, &cfg, 5).unwrap();
        let peak = wave.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak <= 1e-3, "peak {peak}");
    }

    #[test]
    fn zero_iterations_is_zero_phase_inverse() {
        let cfg = AudioConfig::default();
        let mut frames = vec![vec![LOG_FLOOR.ln(); 80]; 30];
        for (t, row) in frames.iter_mut().enumerate() {
            row[30] = (0.1 + 0.01 * t as f64).ln();
        }
        let mel = MelSpectrogram::new(frames, 80).unwrap();
        // contract: runs and produces the expected number of samples
        let wave = griffin_lim(&mel, &cfg, 0).unwrap();
        assert_eq!(wave.samples.len(), 29 * cfg.hop_size);
    }

    #[test]
    fn pseudo_inverse_roundtrips_mel_vectors() {
        let cfg = AudioConfig::default();
        let bank = mel_filterbank(&cfg);
        let pinv = mel_pseudo_inverse(&bank, cfg.n_bins()).unwrap();
        // M . pinv ~ I on mel space: feed a mel unit vector through
        // pinv then M and check it comes back.
        for unit in [10usize, 40, 70] {
            let mel_vec: Vec<f64> = (0..80).map(|i| if i == unit { 1.0 } else { 0.0 }).collect();
            let spec: Vec<f64> = pinv
                .iter()
                .map(|col| col.iter().zip(&mel_vec).map(|(w, m)| w * m).sum())
                .collect();
            let back: Vec<f64> = bank
                .iter()
                .map(|row| row.iter().zip(&spec).map(|(w, s)| w * s).sum())
                .collect();
            for (i, v) in back.iter().enumerate() {
                let want = if i == unit { 1.0 } else { 0.0 };
                assert!(
                    (v - want).abs() < 0.2,
                    "unit {unit} channel {i}: {v}"
                );
            }
        }
    }
}
