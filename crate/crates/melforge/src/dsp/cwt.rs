//! Pitch-spectrogram transforms: a discrete continuous-wavelet-transform
//! analysis of the normalized log-F0 contour at 10 dyadic scales, and the
//! matching approximate inverse.
//!
//! The contour is decomposed with a Mexican-hat mother wavelet into
//! components `W_i(t) = W(2^(i+1) tau0, t) * (i + 2.5)^(-5/2)` for
//! `i = 1..=10` with `tau0 = 5 ms`, and recomposed as
//! `f(t) = sum_i W_i(t) * (i + 2.5)^(-5/2)`. The 10-scale recomposition is
//! only an approximate inverse, so a per-scale gain vector (least-squares
//! fit on synthetic band-limited contours, done once and carried in
//! [`CwtConfig`]) is applied on top to make round trips faithful.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::linalg::solve_dense;
use super::pitch::PitchContour;
use crate::error::{Error, Result};

/// Number of dyadic scales in the decomposition.
pub const N_SCALES: usize = 10;

/// Base scale of the dyadic ladder, in seconds.
const TAU0: f64 = 0.005;

/// Wavelet support is truncated at |u| <= 5 (the Mexican hat is below 1e-4
/// of its peak there).
const SUPPORT_RADIUS: f64 = 5.0;

/// Pitch spectrogram: per-frame wavelet components plus the utterance
/// statistics needed to undo the contour normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchSpectrogram {
    /// `components[t][i]` for scale index `i in 0..10` (scale `i+1` in the
    /// ladder formula).
    pub components: Vec<Vec<f64>>,
    pub utt_mean: f64,
    pub utt_std: f64,
    pub tau0: f64,
}

impl PitchSpectrogram {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Analysis/synthesis configuration: frame period, dyadic ladder, and the
/// recomposition gains.
#[derive(Debug, Clone, PartialEq)]
pub struct CwtConfig {
    /// Seconds per contour frame (hop / sample rate).
    pub frame_period: f64,
    /// Per-scale recomposition gains; all-ones means the bare formula.
    pub gains: [f64; N_SCALES],
}

impl CwtConfig {
    /// Bare Eq-style recomposition with unit gains.
    pub fn uncalibrated(frame_period: f64) -> Self {
        CwtConfig {
            frame_period,
            gains: [1.0; N_SCALES],
        }
    }

    /// Fit per-scale recomposition gains by least squares over a seeded set
    /// of synthetic band-limited contours. Deterministic; takes well under a
    /// second at the default frame period.
    pub fn calibrated(frame_period: f64) -> Result<Self> {
        let mut cfg = CwtConfig::uncalibrated(frame_period);
        cfg.gains = fit_gains(&cfg)?;
        Ok(cfg)
    }

    pub fn tau0(&self) -> f64 {
        TAU0
    }

    /// Scale value in seconds for scale index `i in 0..10`.
    pub fn scale(&self, i: usize) -> f64 {
        2f64.powi(i as i32 + 2) * TAU0
    }

    /// The `(i + 2.5)^(-5/2)` attenuation for scale index `i in 0..10`
    /// (ladder index `i + 1`).
    pub fn attenuation(&self, i: usize) -> f64 {
        ((i + 1) as f64 + 2.5).powf(-2.5)
    }

    /// Truncated wavelet support radius at scale index `i`, in frames.
    /// Frames farther than this from both contour edges see no boundary
    /// extension at that scale.
    pub fn support_radius_frames(&self, i: usize) -> usize {
        (SUPPORT_RADIUS * self.scale(i) / self.frame_period).ceil() as usize
    }
}

/// Mexican hat (Ricker) wavelet with unit L2 norm.
fn mexican_hat(u: f64) -> f64 {
    let norm = 2.0 / (3f64.sqrt() * std::f64::consts::PI.powf(0.25));
    norm * (1.0 - u * u) * (-0.5 * u * u).exp()
}

/// Symmetric (edge-repeating) extension index: ...c b a | a b c... for a
/// signal a b c.
fn symmetric_index(i: isize, len: usize) -> usize {
    let period = 2 * len as isize;
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - 1 - j;
    }
    j as usize
}

/// Riemann-sum wavelet transform of `signal` at scale `tau` (seconds),
/// sampled at every frame, with symmetric boundary extension.
fn transform_at_scale(signal: &[f64], tau: f64, dt: f64) -> Vec<f64> {
    let radius = (SUPPORT_RADIUS * tau / dt).ceil() as isize;
    // kernel[m + radius] = psi(m dt / tau) * dt / sqrt(tau)
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|m| mexican_hat(m as f64 * dt / tau) * dt / tau.sqrt())
        .collect();
    let len = signal.len();
    (0..len as isize)
        .map(|t| {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let src = t + ki as isize - radius;
                let idx = if src < 0 || src >= len as isize {
                    symmetric_index(src, len)
                } else {
                    src as usize
                };
                acc += signal[idx] * k;
            }
            acc
        })
        .collect()
}

/// Decompose a preprocessed (normalized) pitch contour into its 10-scale
/// pitch spectrogram.
pub fn cwt_decompose(contour: &PitchContour, cfg: &CwtConfig) -> Result<PitchSpectrogram> {
    if contour.normalized_logf0.is_empty() {
        return Err(Error::Config(
            "contour must be preprocessed before decomposition".into(),
        ));
    }
    decompose_series(&contour.normalized_logf0, cfg).map(|components| PitchSpectrogram {
        components,
        utt_mean: contour.utt_mean,
        utt_std: contour.utt_std,
        tau0: TAU0,
    })
}

/// Decompose an arbitrary normalized series into its 10-scale components.
pub fn decompose_series(series: &[f64], cfg: &CwtConfig) -> Result<Vec<Vec<f64>>> {
    if series.len() < 2 {
        return Err(Error::Format(format!(
            "contour of {} frames is too short to decompose",
            series.len()
        )));
    }
    let t_len = series.len();
    let mut components = vec![vec![0.0; N_SCALES]; t_len];
    for i in 0..N_SCALES {
        let w = transform_at_scale(series, cfg.scale(i), cfg.frame_period);
        let att = cfg.attenuation(i);
        for t in 0..t_len {
            components[t][i] = w[t] * att;
        }
    }
    Ok(components)
}

/// Recompose the normalized contour from its 10 components: the weighted
/// component sum, with the per-scale calibration gains applied.
/// Denormalization back to Hz is [`denormalize_logf0`], kept separate so the
/// caller controls which statistics are used.
pub fn icwt_recompose(spec: &PitchSpectrogram, cfg: &CwtConfig) -> Vec<f64> {
    recompose_components(&spec.components, cfg)
}

pub fn recompose_components(components: &[Vec<f64>], cfg: &CwtConfig) -> Vec<f64> {
    components
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(i, w)| cfg.gains[i] * w * cfg.attenuation(i))
                .sum()
        })
        .collect()
}

/// Undo the pitch preprocessing: scale by the utterance std, shift by the
/// mean, and leave log space.
pub fn denormalize_logf0(normalized: &[f64], utt_mean: f64, utt_std: f64) -> Vec<f64> {
    normalized
        .iter()
        .map(|v| (v * utt_std + utt_mean).exp())
        .collect()
}

/// Synthetic band-limited contour: a seeded mix of sinusoids whose periods
/// sit inside the dyadic ladder's pass band, normalized to zero mean and
/// unit variance.
pub fn synthetic_contour(len: usize, cfg: &CwtConfig, rng: &mut ChaCha20Rng) -> Vec<f64> {
    // The Mexican hat response to period P peaks near P = 2 pi tau / sqrt(2);
    // probe slightly above (omega tau = 1.6) where the attenuated ladder is
    // most selective.
    let mut series = vec![0.0; len];
    let span = len as f64 * cfg.frame_period;
    for i in 0..6 {
        let period = 2.0 * std::f64::consts::PI * cfg.scale(i) / 1.6;
        if period > span {
            continue;
        }
        let amp = rng.random_range(0.3..1.0);
        let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
        for (t, s) in series.iter_mut().enumerate() {
            *s += amp * (2.0 * std::f64::consts::PI * t as f64 * cfg.frame_period / period
                + phase)
                .sin();
        }
    }
    let mean = series.iter().sum::<f64>() / len as f64;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
    let std = var.sqrt().max(1e-9);
    series.iter_mut().for_each(|v| *v = (*v - mean) / std);
    series
}

/// Least-squares fit of the per-scale recomposition gains on a seeded
/// synthetic corpus.
fn fit_gains(cfg: &CwtConfig) -> Result<[f64; N_SCALES]> {
    let mut rng = ChaCha20Rng::seed_from_u64(0xCA11_B0A7);
    let mut ata = vec![0.0; N_SCALES * N_SCALES];
    let mut atb = vec![0.0; N_SCALES];
    for _ in 0..8 {
        let x = synthetic_contour(384, cfg, &mut rng);
        let comps = decompose_series(&x, cfg)?;
        for (t, row) in comps.iter().enumerate() {
            let contrib: Vec<f64> = (0..N_SCALES)
                .map(|i| row[i] * cfg.attenuation(i))
                .collect();
            for i in 0..N_SCALES {
                for j in 0..N_SCALES {
                    ata[i * N_SCALES + j] += contrib[i] * contrib[j];
                }
                atb[i] += contrib[i] * x[t];
            }
        }
    }
    // Large scales can be numerically absent from short synthetic signals;
    // regularize so their gains settle near zero instead of blowing up.
    for i in 0..N_SCALES {
        ata[i * N_SCALES + i] += 1e-9;
    }
    let solved = solve_dense(&mut ata, &mut atb, N_SCALES)?;
    let mut gains = [0.0; N_SCALES];
    gains.copy_from_slice(&solved);
    Ok(gains)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (
        a.iter().sum::<f64>() / n,
        b.iter().sum::<f64>() / n,
    );
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt()).max(1e-12)
}

/// Pearson correlation, exposed for round-trip evaluations.
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> f64 {
    pearson(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_cfg() -> CwtConfig {
        CwtConfig::uncalibrated(256.0 / 22050.0)
    }

    #[test]
    fn scale_ladder_values() {
        let cfg = default_cfg();
        assert!((cfg.scale(0) - 0.02).abs() < 1e-12); // 2^2 * 5ms
        assert!((cfg.scale(9) - 10.24).abs() < 1e-12); // 2^11 * 5ms
        assert!((cfg.attenuation(0) - 3.5f64.powf(-2.5)).abs() < 1e-15);
    }

    #[test]
    fn constant_contour_decomposes_to_zero() {
        let cfg = default_cfg();
        let series = vec![0.7; 256];
        let comps = decompose_series(&series, &cfg).unwrap();
        for row in &comps {
            for w in row {
                assert!(w.abs() <= 1e-6, "component {w}");
            }
        }
    }

    #[test]
    fn linear_ramp_vanishes_at_interior_frames() {
        let cfg = default_cfg();
        let len = 2048usize;
        let series: Vec<f64> = (0..len).map(|t| -1.0 + 2.0 * t as f64 / len as f64).collect();
        let comps = decompose_series(&series, &cfg).unwrap();
        // independent quadrature oracle at a handful of interior points
        for i in 0..N_SCALES {
            let radius = cfg.support_radius_frames(i);
            if 2 * radius + 16 >= len {
                continue; // no interior at this scale and length
            }
            for t in [radius + 1, len / 2, len - radius - 2] {
                let w = comps[t][i];
                assert!(
                    w.abs() <= 1e-4,
                    "scale {i} frame {t}: {w} (radius {radius})"
                );
            }
        }
    }

    #[test]
    fn decomposition_is_linear() {
        let cfg = default_cfg();
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let x = synthetic_contour(200, &cfg, &mut rng);
        let y = synthetic_contour(200, &cfg, &mut rng);
        let (a, b) = (1.7, -0.4);
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(xv, yv)| a * xv + b * yv).collect();
        let dx = decompose_series(&x, &cfg).unwrap();
        let dy = decompose_series(&y, &cfg).unwrap();
        let dm = decompose_series(&mixed, &cfg).unwrap();
        for t in 0..200 {
            for i in 0..N_SCALES {
                let want = a * dx[t][i] + b * dy[t][i];
                assert!((dm[t][i] - want).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn sinusoid_energy_concentrates_at_matching_scale() {
        let cfg = default_cfg();
        for target in [2usize, 3, 4] {
            // probe where omega * tau_target = 1.6
            let period = 2.0 * std::f64::consts::PI * cfg.scale(target) / 1.6;
            let len = 512;
            let series: Vec<f64> = (0..len)
                .map(|t| {
                    (2.0 * std::f64::consts::PI * t as f64 * cfg.frame_period / period).sin()
                })
                .collect();
            let comps = decompose_series(&series, &cfg).unwrap();
            let mut energy = vec![0.0; N_SCALES];
            for row in &comps {
                for (i, w) in row.iter().enumerate() {
                    energy[i] += w * w;
                }
            }
            let argmax = energy
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, target, "energies {energy:?}");
        }
    }

    #[test]
    fn zero_spectrogram_recomposes_to_zero() {
        let cfg = default_cfg();
        let spec = PitchSpectrogram {
            components: vec![vec![0.0; N_SCALES]; 40],
            utt_mean: 0.0,
            utt_std: 1.0,
            tau0: TAU0,
        };
        assert!(icwt_recompose(&spec, &cfg).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn recomposition_is_linear_in_components() {
        let cfg = default_cfg();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let x = synthetic_contour(128, &cfg, &mut rng);
        let comps = decompose_series(&x, &cfg).unwrap();
        let scaled: Vec<Vec<f64>> = comps
            .iter()
            .map(|row| row.iter().map(|v| 3.0 * v).collect())
            .collect();
        let base = recompose_components(&comps, &cfg);
        let tripled = recompose_components(&scaled, &cfg);
        for (b, t) in base.iter().zip(&tripled) {
            assert!((3.0 * b - t).abs() <= 1e-12);
        }
    }

    #[test]
    fn too_short_contour_is_error() {
        let cfg = default_cfg();
        assert!(decompose_series(&[1.0], &cfg).is_err());
    }

    #[test]
    fn calibrated_roundtrip_correlation() {
        let cfg = CwtConfig::calibrated(256.0 / 22050.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(777);
        let mut worst: f64 = 1.0;
        for _ in 0..5 {
            let x = synthetic_contour(192, &cfg, &mut rng);
            let comps = decompose_series(&x, &cfg).unwrap();
            let back = recompose_components(&comps, &cfg);
            worst = worst.min(pearson(&back, &x));
        }
        assert!(worst >= 0.95, "worst correlation {worst}");
    }

    #[test]
    fn denormalize_inverts_preprocessing() {
        let normalized = vec![0.0, 1.0, -1.0];
        let out = denormalize_logf0(&normalized, 5.0, 0.25);
        assert!((out[0] - 5.0f64.exp()).abs() < 1e-12);
        assert!((out[1] - 5.25f64.exp()).abs() < 1e-12);
        assert!((out[2] - 4.75f64.exp()).abs() < 1e-12);
    }
}
