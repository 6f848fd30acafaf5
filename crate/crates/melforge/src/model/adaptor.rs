//! The variance adaptor: duration prediction and length regulation, then
//! pitch and energy prediction with embedding injection on the expanded
//! frame-level sequence. Teacher-forced in training, free-running with
//! user controls at inference.

use rand_chacha::ChaCha20Rng;

use super::predictor::{pitch_predictor, variance_predictor};
use super::{GraphWeights, Mode, ModelConfig, VarianceSpaces};
use crate::align::DurationSequence;
use crate::dsp::{denormalize_logf0, recompose_components, EnergySequence, PitchContour, PitchSpectrogram};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Ground-truth variance signals for teacher-forced training.
pub struct VarianceTargets<'a> {
    pub durations: &'a DurationSequence,
    pub pitch_spec: &'a PitchSpectrogram,
    /// Interpolated (gap-free) Hz contour; used for the pitch embedding.
    pub pitch_contour: &'a PitchContour,
    pub energy: &'a EnergySequence,
}

/// User-facing multiplicative synthesis controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceControls {
    pub duration_mult: f64,
    pub pitch_mult: f64,
    pub energy_mult: f64,
}

impl Default for VarianceControls {
    fn default() -> Self {
        VarianceControls {
            duration_mult: 1.0,
            pitch_mult: 1.0,
            energy_mult: 1.0,
        }
    }
}

impl VarianceControls {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("duration_mult", self.duration_mult),
            ("pitch_mult", self.pitch_mult),
            ("energy_mult", self.energy_mult),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Repeat hidden row `i` exactly `durations[i]` times, in order. Zero
/// durations drop the phoneme's frames.
pub fn length_regulate(tape: &mut Tape, hidden: Var, durations: &[usize]) -> Result<Var> {
    let n = tape.value(hidden).rows();
    if durations.len() != n {
        return Err(Error::Shape(format!(
            "{} durations for {n} hidden rows",
            durations.len()
        )));
    }
    let total: usize = durations.iter().sum();
    if total == 0 {
        return Err(Error::Numeric("degenerate duration (all zero)".into()));
    }
    let mut ids = Vec::with_capacity(total);
    for (i, d) in durations.iter().enumerate() {
        ids.extend(std::iter::repeat(i).take(*d));
    }
    tape.gather_rows(hidden, &ids)
}

/// Inference duration decoding: per-phoneme frames from log-domain
/// predictions, `max(0, round(exp(p) - 1))`, then the duration control is
/// applied and the result re-rounded.
pub fn predicted_durations(log_duration: &[f64], duration_mult: f64) -> Vec<usize> {
    log_duration
        .iter()
        .map(|p| {
            let frames = (p.exp() - 1.0).round().max(0.0);
            (frames * duration_mult).round().max(0.0) as usize
        })
        .collect()
}

/// Everything the adaptor hands to the decoder and the loss.
pub struct AdaptorOutput {
    pub hidden: Var,
    pub expanded_len: usize,
    pub log_duration: Var,
    pub pitch_spec: Var,
    pub pitch_mean: Var,
    pub pitch_std: Var,
    pub energy: Var,
    pub durations_used: Vec<usize>,
    pub applied_pitch_hz: Option<Vec<f64>>,
    pub applied_energy: Option<Vec<f64>>,
}

/// Run the variance adaptor. Training expands with ground-truth durations
/// and injects ground-truth pitch/energy embeddings; inference uses the
/// predictors' own outputs with the controls applied.
#[allow(clippy::too_many_arguments)]
pub fn variance_adaptor(
    tape: &mut Tape,
    gw: &mut GraphWeights,
    cfg: &ModelConfig,
    hidden: Var,
    targets: Option<&VarianceTargets>,
    controls: &VarianceControls,
    spaces: &VarianceSpaces,
    mode: Mode,
    training: bool,
    rng: &mut ChaCha20Rng,
) -> Result<AdaptorOutput> {
    controls.validate()?;
    let (log_duration, _) =
        variance_predictor(tape, gw, cfg, hidden, "duration_predictor", training, rng)?;

    // Targets force the expansion durations in either mode; inference with
    // targets is the ground-truth-duration evaluation protocol (pitch and
    // energy still come from the predictors).
    let durations: Vec<usize> = match (mode, targets) {
        (_, Some(t)) => t.durations.frames_per_phoneme.clone(),
        (Mode::Train, None) => {
            return Err(Error::Config("train mode requires variance targets".into()))
        }
        (Mode::Infer, None) => {
            let preds: Vec<f64> = tape.value(log_duration).data().to_vec();
            predicted_durations(&preds, controls.duration_mult)
        }
    };
    let expanded = length_regulate(tape, hidden, &durations)?;
    let expanded_len: usize = durations.iter().sum();

    let pitch = pitch_predictor(tape, gw, cfg, expanded, training, rng)?;
    let pitch_table = gw.bind(tape, "pitch_embedding")?;
    let (pitch_bins, applied_pitch_hz) = match mode {
        Mode::Train => {
            let t = targets.expect("checked above");
            if t.pitch_contour.f0.len() != expanded_len {
                return Err(Error::Shape(format!(
                    "pitch contour has {} frames, expansion has {expanded_len}",
                    t.pitch_contour.f0.len()
                )));
            }
            let bins = t
                .pitch_contour
                .f0
                .iter()
                .map(|hz| spaces.pitch_quantizer.quantize(*hz))
                .collect::<Result<Vec<_>>>()?;
            (bins, None)
        }
        Mode::Infer => {
            let components: Vec<Vec<f64>> = tape
                .value(pitch.spec)
                .data()
                .chunks(cfg.cwt_scales)
                .map(|c| c.to_vec())
                .collect();
            let normalized = recompose_components(&components, &spaces.cwt);
            let mean = tape.value(pitch.mean).item();
            let std = tape.value(pitch.std).item();
            let hz = denormalize_logf0(&normalized, mean, std);
            let applied: Vec<f64> = hz.iter().map(|v| v * controls.pitch_mult).collect();
            let bins = applied
                .iter()
                .map(|hz| spaces.pitch_quantizer.quantize(*hz))
                .collect::<Result<Vec<_>>>()?;
            (bins, Some(applied))
        }
    };
    let pitch_emb = tape.gather_rows(pitch_table, &pitch_bins)?;
    let with_pitch = tape.add(expanded, pitch_emb)?;

    let energy_input = if cfg.stacked_variance_embeddings {
        with_pitch
    } else {
        expanded
    };
    let (energy, _) =
        variance_predictor(tape, gw, cfg, energy_input, "energy_predictor", training, rng)?;
    let energy_table = gw.bind(tape, "energy_embedding")?;
    let (energy_bins, applied_energy) = match mode {
        Mode::Train => {
            let t = targets.expect("checked above");
            if t.energy.energy.len() != expanded_len {
                return Err(Error::Shape(format!(
                    "energy has {} frames, expansion has {expanded_len}",
                    t.energy.energy.len()
                )));
            }
            let bins = t
                .energy
                .energy
                .iter()
                .map(|e| spaces.energy_quantizer.quantize(*e))
                .collect::<Result<Vec<_>>>()?;
            (bins, None)
        }
        Mode::Infer => {
            let applied: Vec<f64> = tape
                .value(energy)
                .data()
                .iter()
                .map(|e| e * controls.energy_mult)
                .collect();
            let bins = applied
                .iter()
                .map(|e| spaces.energy_quantizer.quantize(*e))
                .collect::<Result<Vec<_>>>()?;
            (bins, Some(applied))
        }
    };
    let energy_emb = tape.gather_rows(energy_table, &energy_bins)?;
    let adapted = tape.add(with_pitch, energy_emb)?;

    Ok(AdaptorOutput {
        hidden: adapted,
        expanded_len,
        log_duration,
        pitch_spec: pitch.spec,
        pitch_mean: pitch.mean,
        pitch_std: pitch.std,
        energy,
        durations_used: durations,
        applied_pitch_hz,
        applied_energy,
    })
}
