use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioConfig, EnergySequence, MelSpectrogram, Waveform, LOG_FLOOR};
use crate::error::{Error, Result};

/// One-sided complex STFT frames: `frames[t][k]` for `k in 0..frame_size/2+1`.
#[derive(Debug, Clone)]
pub struct ComplexFrames {
    pub frames: Vec<Vec<Complex<f64>>>,
    pub n_bins: usize,
}

impl ComplexFrames {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Mirror an out-of-range index back into `0..len` without repeating edges
/// (reflect padding).
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

/// Center-padded (reflect) Hann-windowed STFT. Frame `t` is centered on
/// sample `t * hop`; the frame count is `1 + len / hop`.
pub fn stft(wave: &Waveform, cfg: &AudioConfig) -> Result<ComplexFrames> {
    cfg.validate()?;
    if wave.samples.is_empty() {
        return Err(Error::Format("empty waveform".into()));
    }
    let n = cfg.frame_size;
    let half = n / 2;
    let window = hann(n);
    let t_count = cfg.frame_count(wave.samples.len());
    let n_bins = cfg.n_bins();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut frames = Vec::with_capacity(t_count);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for t in 0..t_count {
        let center = (t * cfg.hop_size) as isize;
        for (j, b) in buf.iter_mut().enumerate() {
            let src = center - half as isize + j as isize;
            let idx = if src < 0 || src >= wave.samples.len() as isize {
                reflect_index(src, wave.samples.len())
            } else {
                src as usize
            };
            *b = Complex::new(wave.samples[idx] * window[j], 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..n_bins].to_vec());
    }
    Ok(ComplexFrames { frames, n_bins })
}

/// Inverse STFT via windowed overlap-add with squared-window normalization.
/// Undoes the center padding; the output has `(T - 1) * hop` samples.
pub fn istft(frames: &ComplexFrames, cfg: &AudioConfig) -> Result<Waveform> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::Format("no frames to invert".into()));
    }
    let n = cfg.frame_size;
    let half = n / 2;
    let n_bins = cfg.n_bins();
    if frames.n_bins != n_bins {
        return Err(Error::Shape(format!(
            "frames have {} bins, config implies {n_bins}",
            frames.n_bins
        )));
    }
    let window = hann(n);
    let t_count = frames.len();
    let total = (t_count - 1) * cfg.hop_size + n;
    let mut acc = vec![0.0; total];
    let mut norm = vec![0.0; total];

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for (t, frame) in frames.frames.iter().enumerate() {
        buf[..n_bins].copy_from_slice(frame);
        for k in n_bins..n {
            buf[k] = frame[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop_size;
        for j in 0..n {
            let sample = buf[j].re / n as f64;
            acc[start + j] += sample * window[j];
            norm[start + j] += window[j] * window[j];
        }
    }
    let out_len = (t_count - 1) * cfg.hop_size;
    let mut samples = Vec::with_capacity(out_len.max(1));
    for i in 0..out_len.max(1) {
        let idx = half + i;
        let d = norm[idx];
        samples.push(if d > 1e-9 { acc[idx] / d } else { 0.0 });
    }
    Waveform::new(samples, cfg.sample_rate)
}

/// L2 norm of each frame's amplitude spectrum.
pub fn energy_from_stft(frames: &ComplexFrames) -> EnergySequence {
    let energy = frames
        .frames
        .iter()
        .map(|f| f.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    EnergySequence { energy }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Slaney-style area-normalized triangular mel filterbank on the one-sided
/// spectrum: `n_mels` rows of `frame_size/2 + 1` weights.
pub fn mel_filterbank(cfg: &AudioConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_bins();
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.frame_size as f64;
    let mut bank = Vec::with_capacity(cfg.n_mels);
    for i in 0..cfg.n_mels {
        let (lo, mid, hi) = (points[i], points[i + 1], points[i + 2]);
        let norm = 2.0 / (hi - lo);
        let row = (0..n_bins)
            .map(|k| {
                let f = k as f64 * bin_hz;
                let rise = (f - lo) / (mid - lo);
                let fall = (hi - f) / (hi - mid);
                rise.min(fall).max(0.0) * norm
            })
            .collect();
        bank.push(row);
    }
    bank
}

/// Magnitude STFT -> mel filterbank -> natural log with floor.
pub fn extract_mel(wave: &Waveform, cfg: &AudioConfig) -> Result<MelSpectrogram> {
    let frames = stft(wave, cfg)?;
    let bank = mel_filterbank(cfg);
    let mel_frames = frames
        .frames
        .iter()
        .map(|frame| {
            let mags: Vec<f64> = frame.iter().map(|c| c.norm()).collect();
            bank.iter()
                .map(|row| {
                    let e: f64 = row.iter().zip(&mags).map(|(w, m)| w * m).sum();
                    e.max(LOG_FLOOR).ln()
                })
                .collect()
        })
        .collect();
    MelSpectrogram::new(mel_frames, cfg.n_mels)
}
