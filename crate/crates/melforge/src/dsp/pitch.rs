use super::{AudioConfig, Waveform};
use crate::error::{Error, Result};

/// Frame-level fundamental-frequency contour. `f0[t]` is in Hz with 0
/// marking unvoiced frames; after [`preprocess_pitch`] the interpolated,
/// log-scaled, per-utterance-normalized series and its statistics are
/// populated.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchContour {
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
    /// Unvoiced-filled, log-scaled, zero-mean unit-variance series.
    pub normalized_logf0: Vec<f64>,
    /// Mean of the log-interpolated series (0 until preprocessing).
    pub utt_mean: f64,
    /// Std of the log-interpolated series (0 until preprocessing).
    pub utt_std: f64,
}

impl PitchContour {
    pub fn from_f0(f0: Vec<f64>) -> Self {
        let voiced = f0.iter().map(|v| *v > 0.0).collect();
        PitchContour {
            f0,
            voiced,
            normalized_logf0: Vec::new(),
            utt_mean: 0.0,
            utt_std: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|v| **v).count()
    }

    /// Hz values of voiced frames only.
    pub fn voiced_values(&self) -> Vec<f64> {
        self.f0
            .iter()
            .zip(&self.voiced)
            .filter(|(_, v)| **v)
            .map(|(f, _)| *f)
            .collect()
    }
}

/// Voicing decision threshold on the cumulative mean normalized difference.
const YIN_THRESHOLD: f64 = 0.15;
/// Frames quieter than this RMS are unvoiced outright.
const SILENCE_RMS: f64 = 1e-5;

/// Per-frame F0 via the normalized autocorrelation difference function on
/// hop-aligned frames. The contour has exactly the mel frame count; silent
/// or aperiodic frames come back unvoiced (f0 = 0), never as an error.
pub fn estimate_f0(
    wave: &Waveform,
    cfg: &AudioConfig,
    f0_min: f64,
    f0_max: f64,
) -> Result<PitchContour> {
    cfg.validate()?;
    let sr = cfg.sample_rate as f64;
    if !(0.0 < f0_min && f0_min < f0_max && f0_max < sr / 2.0) {
        return Err(Error::Config(format!(
            "need 0 < f0_min < f0_max < sr/2, got {f0_min}/{f0_max} at {sr} Hz"
        )));
    }
    let n = cfg.frame_size;
    let half = n / 2;
    let tau_min = (sr / f0_max).floor() as usize;
    let tau_max = ((sr / f0_min).ceil() as usize).min(n / 2 - 1);
    let t_count = cfg.frame_count(wave.samples.len());

    let sample_at = |i: isize| -> f64 {
        if i < 0 || i >= wave.samples.len() as isize {
            // reflect, matching the STFT centering
            let len = wave.samples.len();
            if len == 1 {
                return wave.samples[0];
            }
            let period = 2 * (len as isize - 1);
            let mut j = i.rem_euclid(period);
            if j >= len as isize {
                j = period - j;
            }
            wave.samples[j as usize]
        } else {
            wave.samples[i as usize]
        }
    };

    let mut f0 = Vec::with_capacity(t_count);
    let mut frame = vec![0.0; n];
    let mut diff = vec![0.0; tau_max + 1];
    let mut cmnd = vec![0.0; tau_max + 1];
    for t in 0..t_count {
        let center = (t * cfg.hop_size) as isize;
        for (j, f) in frame.iter_mut().enumerate() {
            *f = sample_at(center - half as isize + j as isize);
        }
        f0.push(detect_frame(
            &frame, &mut diff, &mut cmnd, tau_min, tau_max, sr,
        ));
    }
    Ok(PitchContour::from_f0(f0))
}

fn detect_frame(
    frame: &[f64],
    diff: &mut [f64],
    cmnd: &mut [f64],
    tau_min: usize,
    tau_max: usize,
    sr: f64,
) -> f64 {
    let n = frame.len();
    let rms = (frame.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms < SILENCE_RMS {
        return 0.0;
    }
    // difference function d(tau) = sum (x_j - x_{j+tau})^2
    for tau in 0..=tau_max {
        let mut acc = 0.0;
        for j in 0..n - tau_max {
            let d = frame[j] - frame[j + tau];
            acc += d * d;
        }
        diff[tau] = acc;
    }
    // cumulative mean normalized difference d'(tau)
    cmnd[0] = 1.0;
    let mut running = 0.0;
    for tau in 1..=tau_max {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }
    // first dip under the absolute threshold, descended to its local minimum
    let mut tau = tau_min;
    let best = loop {
        if tau > tau_max {
            break None;
        }
        if cmnd[tau] < YIN_THRESHOLD {
            let mut t = tau;
            while t + 1 <= tau_max && cmnd[t + 1] < cmnd[t] {
                t += 1;
            }
            break Some(t);
        }
        tau += 1;
    };
    let Some(tau) = best else { return 0.0 };
    // parabolic interpolation around the minimum
    let refined = if tau > tau_min && tau < tau_max {
        let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            tau as f64 + 0.5 * (a - c) / denom
        } else {
            tau as f64
        }
    } else {
        tau as f64
    };
    sr / refined
}

/// Fill unvoiced gaps by linear interpolation (edges held from the nearest
/// voiced value), move to natural-log scale, normalize to zero mean and unit
/// variance, and record the utterance statistics needed to undo it.
pub fn preprocess_pitch(contour: &PitchContour) -> Result<PitchContour> {
    let n = contour.len();
    let voiced_idx: Vec<usize> = (0..n).filter(|i| contour.voiced[*i]).collect();
    if voiced_idx.is_empty() {
        return Err(Error::Numeric("unvoiced utterance".into()));
    }
    // interpolate in Hz before the log transform
    let mut interp = vec![0.0; n];
    for i in 0..n {
        if contour.voiced[i] {
            interp[i] = contour.f0[i];
            continue;
        }
        let prev = voiced_idx.iter().rev().find(|&&j| j < i).copied();
        let next = voiced_idx.iter().find(|&&j| j > i).copied();
        interp[i] = match (prev, next) {
            (Some(p), Some(q)) => {
                let w = (i - p) as f64 / (q - p) as f64;
                contour.f0[p] * (1.0 - w) + contour.f0[q] * w
            }
            (Some(p), None) => contour.f0[p],
            (None, Some(q)) => contour.f0[q],
            (None, None) => unreachable!("voiced_idx checked non-empty"),
        };
    }
    let logs: Vec<f64> = interp.iter().map(|v| v.ln()).collect();
    let mean = logs.iter().sum::<f64>() / n as f64;
    let var = logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let (normalized, std) = if std < 1e-6 {
        (vec![0.0; n], 1e-6)
    } else {
        (logs.iter().map(|v| (v - mean) / std).collect(), std)
    };
    Ok(PitchContour {
        f0: interp,
        voiced: contour.voiced.clone(),
        normalized_logf0: normalized,
        utt_mean: mean,
        utt_std: std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64, sr: u32, amp: f64) -> Waveform {
        let n = (secs * sr as f64) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect();
        Waveform::new(samples, sr).unwrap()
    }

    #[test]
    fn silence_is_all_unvoiced() {
        let cfg = AudioConfig::default();
        let wave = Waveform::new(vec![0.0; 22050], 22050).unwrap();
        let contour = estimate_f0(&wave, &cfg, 70.0, 400.0).unwrap();
        assert_eq!(contour.len(), cfg.frame_count(22050));
        assert_eq!(contour.voiced_count(), 0);
    }

    #[test]
    fn pure_sine_220hz_detected() {
        let cfg = AudioConfig::default();
        let wave = sine(220.0, 1.0, cfg.sample_rate, 0.5);
        let contour = estimate_f0(&wave, &cfg, 70.0, 400.0).unwrap();
        // interior frames (skip 4 on each side for edge reflections)
        for t in 4..contour.len() - 4 {
            assert!(contour.voiced[t], "frame {t} unvoiced");
            assert!(
                (contour.f0[t] - 220.0).abs() <= 2.0,
                "frame {t}: {}",
                contour.f0[t]
            );
        }
    }

    #[test]
    fn pure_sine_100hz_detected() {
        let cfg = AudioConfig::default();
        let wave = sine(100.0, 1.0, cfg.sample_rate, 0.5);
        let contour = estimate_f0(&wave, &cfg, 70.0, 400.0).unwrap();
        for t in 4..contour.len() - 4 {
            assert!(
                (contour.f0[t] - 100.0).abs() <= 2.0,
                "frame {t}: {}",
                contour.f0[t]
            );
        }
    }

    #[test]
    fn contour_length_matches_mel_frames() {
        let cfg = AudioConfig::default();
        let wave = sine(180.0, 0.37, cfg.sample_rate, 0.5);
        let contour = estimate_f0(&wave, &cfg, 70.0, 400.0).unwrap();
        assert_eq!(contour.len(), cfg.frame_count(wave.samples.len()));
    }

    #[test]
    fn interpolation_fills_interior_gap_linearly() {
        let contour = PitchContour::from_f0(vec![100.0, 0.0, 200.0]);
        let p = preprocess_pitch(&contour).unwrap();
        assert_eq!(p.f0, vec![100.0, 150.0, 200.0]);
    }

    #[test]
    fn constant_after_interpolation_hits_std_floor() {
        let contour = PitchContour::from_f0(vec![100.0, 0.0, 0.0, 100.0]);
        let p = preprocess_pitch(&contour).unwrap();
        assert_eq!(p.f0, vec![100.0; 4]);
        assert_eq!(p.normalized_logf0, vec![0.0; 4]);
        assert_eq!(p.utt_std, 1e-6);
    }

    #[test]
    fn edges_held_from_nearest_voiced() {
        let contour = PitchContour::from_f0(vec![0.0, 0.0, 120.0, 0.0]);
        let p = preprocess_pitch(&contour).unwrap();
        assert_eq!(p.f0, vec![120.0; 4]);
    }

    #[test]
    fn stats_match_direct_recompute() {
        let contour = PitchContour::from_f0(vec![100.0, 0.0, 150.0, 220.0, 0.0, 90.0]);
        let p = preprocess_pitch(&contour).unwrap();
        let logs: Vec<f64> = p.f0.iter().map(|v| v.ln()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let var = logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / logs.len() as f64;
        assert!((p.utt_mean - mean).abs() <= 1e-9);
        assert!((p.utt_std - var.sqrt()).abs() <= 1e-9);
        // normalized series has mean 0 and std 1
        let nmean = p.normalized_logf0.iter().sum::<f64>() / logs.len() as f64;
        let nvar = p
            .normalized_logf0
            .iter()
            .map(|v| (v - nmean) * (v - nmean))
            .sum::<f64>()
            / logs.len() as f64;
        assert!(nmean.abs() <= 1e-9);
        assert!((nvar.sqrt() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn all_unvoiced_is_error() {
        let contour = PitchContour::from_f0(vec![0.0; 5]);
        assert!(preprocess_pitch(&contour).is_err());
    }

    #[test]
    fn hz_vs_log_interpolation_sensitivity() {
        // The interpolation domain (Hz vs log-Hz) is an open convention; this
        // documents how far the two drift on a wide octave gap fixture.
        let contour = PitchContour::from_f0(vec![100.0, 0.0, 0.0, 0.0, 200.0]);
        let hz = preprocess_pitch(&contour).unwrap();
        let log_interp: Vec<f64> = (0..5)
            .map(|i| (100.0f64.ln() + (200.0f64.ln() - 100.0f64.ln()) * i as f64 / 4.0).exp())
            .collect();
        let max_rel: f64 = hz
            .f0
            .iter()
            .zip(&log_interp)
            .map(|(a, b)| (a - b).abs() / b)
            .fold(0.0, f64::max);
        // worst case for a full octave gap stays under 7%
        assert!(max_rel > 0.0 && max_rel < 0.07, "divergence {max_rel}");
    }
}
