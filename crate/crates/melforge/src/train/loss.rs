//! Batching with padding masks and the multi-term masked training loss:
//! MAE on mel frames, MSE on log durations, pitch spectrogram, pitch
//! statistics and energy, each averaged over unmasked positions only.

use crate::data::UtteranceFeatures;
use crate::dsp::N_SCALES;
use crate::error::{Error, Result};
use crate::model::Predictions;
use crate::tensor::{Tape, Tensor, Var};

/// Per-term loss weights; all default to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_mel: f64,
    pub w_dur: f64,
    pub w_pitch_spec: f64,
    pub w_pitch_stats: f64,
    pub w_energy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_mel: 1.0,
            w_dur: 1.0,
            w_pitch_spec: 1.0,
            w_pitch_stats: 1.0,
            w_energy: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_mel,
            self.w_dur,
            self.w_pitch_spec,
            self.w_pitch_stats,
            self.w_energy,
        ];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("at least one loss weight must be non-zero".into()));
        }
        Ok(())
    }
}

/// Zero-padded batch of utterance targets with validity masks. Masks are
/// true exactly on real positions; everything in padding is zero and must
/// never influence a loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub n_max: usize,
    pub t_max: usize,
    pub phoneme_ids: Vec<Vec<usize>>,
    pub phoneme_mask: Vec<Vec<bool>>,
    pub frame_mask: Vec<Vec<bool>>,
    /// `ln(d + 1)` regression targets, padded.
    pub log_durations: Vec<Vec<f64>>,
    pub durations: Vec<Vec<usize>>,
    pub pitch_spec: Vec<Vec<f64>>,
    pub pitch_stats: Vec<[f64; 2]>,
    pub energy: Vec<Vec<f64>>,
    pub mel: Vec<Vec<f64>>,
    pub n_mels: usize,
    pub phoneme_len: Vec<usize>,
    pub frame_len: Vec<usize>,
}

/// Zero-pad a batch of utterances to their maxima and build the masks.
/// Item order is preserved exactly as given.
pub fn make_batch(items: &[&UtteranceFeatures]) -> Result<Batch> {
    if items.is_empty() {
        return Err(Error::Format("cannot batch an empty item list".into()));
    }
    for item in items {
        item.validate()?;
    }
    let n_max = items.iter().map(|i| i.phoneme_count()).max().unwrap();
    let t_max = items.iter().map(|i| i.frame_count()).max().unwrap();
    let n_mels = items[0].mel.n_mels;
    let mut batch = Batch {
        size: items.len(),
        n_max,
        t_max,
        phoneme_ids: Vec::new(),
        phoneme_mask: Vec::new(),
        frame_mask: Vec::new(),
        log_durations: Vec::new(),
        durations: Vec::new(),
        pitch_spec: Vec::new(),
        pitch_stats: Vec::new(),
        energy: Vec::new(),
        mel: Vec::new(),
        n_mels,
        phoneme_len: items.iter().map(|i| i.phoneme_count()).collect(),
        frame_len: items.iter().map(|i| i.frame_count()).collect(),
    };
    for item in items {
        if item.mel.n_mels != n_mels {
            return Err(Error::Shape(format!(
                "utterance {} has {} mel channels, batch has {n_mels}",
                item.id, item.mel.n_mels
            )));
        }
        let n = item.phoneme_count();
        let t = item.frame_count();
        let mut ids = item.phoneme_ids.clone();
        ids.resize(n_max, 0);
        batch.phoneme_ids.push(ids);
        let mut pmask = vec![true; n];
        pmask.resize(n_max, false);
        batch.phoneme_mask.push(pmask);
        let mut fmask = vec![true; t];
        fmask.resize(t_max, false);
        batch.frame_mask.push(fmask);
        let mut logd: Vec<f64> = item
            .durations
            .frames_per_phoneme
            .iter()
            .map(|d| ((*d + 1) as f64).ln())
            .collect();
        logd.resize(n_max, 0.0);
        batch.log_durations.push(logd);
        let mut durs = item.durations.frames_per_phoneme.clone();
        durs.resize(n_max, 0);
        batch.durations.push(durs);
        let mut spec: Vec<f64> = item
            .pitch_spec
            .components
            .iter()
            .flatten()
            .copied()
            .collect();
        spec.resize(t_max * N_SCALES, 0.0);
        batch.pitch_spec.push(spec);
        batch
            .pitch_stats
            .push([item.pitch.utt_mean, item.pitch.utt_std]);
        let mut energy = item.energy.energy.clone();
        energy.resize(t_max, 0.0);
        batch.energy.push(energy);
        let mut mel: Vec<f64> = item.mel.frames.iter().flatten().copied().collect();
        mel.resize(t_max * n_mels, 0.0);
        batch.mel.push(mel);
    }
    Ok(batch)
}

impl Batch {
    /// Recover one item's unpadded targets (used by tests to verify the
    /// padding is a pure extension).
    pub fn unpadded_mel(&self, item: usize) -> Vec<f64> {
        self.mel[item][..self.frame_len[item] * self.n_mels].to_vec()
    }

    pub fn unpadded_energy(&self, item: usize) -> Vec<f64> {
        self.energy[item][..self.frame_len[item]].to_vec()
    }

    pub fn unpadded_ids(&self, item: usize) -> Vec<usize> {
        self.phoneme_ids[item][..self.phoneme_len[item]].to_vec()
    }

    /// Masked frame indices for an item, driven by the mask itself.
    fn valid_frames(&self, item: usize) -> Vec<usize> {
        (0..self.t_max).filter(|t| self.frame_mask[item][*t]).collect()
    }

    fn valid_phonemes(&self, item: usize) -> Vec<usize> {
        (0..self.n_max)
            .filter(|n| self.phoneme_mask[item][*n])
            .collect()
    }
}

/// Per-term values from one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub mel: f64,
    pub duration: f64,
    pub pitch_spec: f64,
    pub pitch_stats: f64,
    pub energy: f64,
}

/// Denominators for each loss term, fixed by the batch masks alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchCounts {
    pub mel: usize,
    pub duration: usize,
    pub pitch_spec: usize,
    pub pitch_stats: usize,
    pub energy: usize,
}

impl Batch {
    pub fn counts(&self) -> Result<BatchCounts> {
        let mut frames = 0usize;
        let mut phonemes = 0usize;
        for b in 0..self.size {
            let t = self.frame_mask[b].iter().filter(|m| **m).count();
            let n = self.phoneme_mask[b].iter().filter(|m| **m).count();
            if t == 0 || n == 0 {
                return Err(Error::Format(format!("batch item {b} has an empty mask")));
            }
            frames += t;
            phonemes += n;
        }
        Ok(BatchCounts {
            mel: frames * self.n_mels,
            duration: phonemes,
            pitch_spec: frames * N_SCALES,
            pitch_stats: 2 * self.size,
            energy: frames,
        })
    }
}

/// Unnormalized per-item loss numerators, as tape handles.
pub struct TermSums {
    pub mel: Var,
    pub duration: Var,
    pub pitch_spec: Var,
    pub pitch_stats: Var,
    pub energy: Var,
}

/// Build one item's loss numerators on a tape: the sum of absolute mel
/// errors and the sums of squared errors for the other heads, over exactly
/// the mask-selected positions.
pub fn item_term_sums(
    tape: &mut Tape,
    pred: &Predictions,
    batch: &Batch,
    b: usize,
) -> Result<TermSums> {
    let frames = batch.valid_frames(b);
    let phonemes = batch.valid_phonemes(b);
    if frames.is_empty() || phonemes.is_empty() {
        return Err(Error::Format(format!("batch item {b} has an empty mask")));
    }
    let t = frames.len();
    let n = phonemes.len();
    if tape.value(pred.mel).rows() != t {
        return Err(Error::Shape(format!(
            "item {b}: predicted mel has {} frames, mask selects {t}",
            tape.value(pred.mel).rows()
        )));
    }
    if tape.value(pred.log_duration).rows() != n {
        return Err(Error::Shape(format!(
            "item {b}: predicted durations cover {} phonemes, mask selects {n}",
            tape.value(pred.log_duration).rows()
        )));
    }

    let mel_target: Vec<f64> = frames
        .iter()
        .flat_map(|t| {
            batch.mel[b][t * batch.n_mels..(t + 1) * batch.n_mels]
                .iter()
                .copied()
        })
        .collect();
    let mel_target = tape.constant(Tensor::new(vec![t, batch.n_mels], mel_target)?);
    let mel_diff = tape.sub(pred.mel, mel_target)?;
    let mel_abs = tape.abs(mel_diff);
    let mel = tape.sum_all(mel_abs);

    let dur_target: Vec<f64> = phonemes
        .iter()
        .map(|p| batch.log_durations[b][*p])
        .collect();
    let dur_target = tape.constant(Tensor::new(vec![n, 1], dur_target)?);
    let dur_diff = tape.sub(pred.log_duration, dur_target)?;
    let dur_sq = tape.mul(dur_diff, dur_diff)?;
    let duration = tape.sum_all(dur_sq);

    let spec_target: Vec<f64> = frames
        .iter()
        .flat_map(|t| {
            batch.pitch_spec[b][t * N_SCALES..(t + 1) * N_SCALES]
                .iter()
                .copied()
        })
        .collect();
    let spec_target = tape.constant(Tensor::new(vec![t, N_SCALES], spec_target)?);
    let spec_diff = tape.sub(pred.pitch_spec, spec_target)?;
    let spec_sq = tape.mul(spec_diff, spec_diff)?;
    let pitch_spec = tape.sum_all(spec_sq);

    let mean_target = tape.constant(Tensor::new(vec![1, 1], vec![batch.pitch_stats[b][0]])?);
    let std_target = tape.constant(Tensor::new(vec![1, 1], vec![batch.pitch_stats[b][1]])?);
    let mean_diff = tape.sub(pred.pitch_mean, mean_target)?;
    let mean_sq = tape.mul(mean_diff, mean_diff)?;
    let std_diff = tape.sub(pred.pitch_std, std_target)?;
    let std_sq = tape.mul(std_diff, std_diff)?;
    let stats = tape.add(mean_sq, std_sq)?;
    let pitch_stats = tape.sum_all(stats);

    let energy_target: Vec<f64> = frames.iter().map(|t| batch.energy[b][*t]).collect();
    let energy_target = tape.constant(Tensor::new(vec![t, 1], energy_target)?);
    let energy_diff = tape.sub(pred.energy, energy_target)?;
    let energy_sq = tape.mul(energy_diff, energy_diff)?;
    let energy = tape.sum_all(energy_sq);

    Ok(TermSums {
        mel,
        duration,
        pitch_spec,
        pitch_stats,
        energy,
    })
}

/// Combine one item's numerators into its share of the batch loss:
/// `sum_terms w_t * sums_t / counts_t`. Summing this over all items gives
/// exactly the batch [`total_loss`], so per-item backward passes may be
/// accumulated independently.
pub fn item_loss(
    tape: &mut Tape,
    sums: &TermSums,
    counts: &BatchCounts,
    weights: &LossWeights,
) -> Result<Var> {
    let mut total = tape.scale(sums.mel, weights.w_mel / counts.mel as f64);
    for (term, w, count) in [
        (sums.duration, weights.w_dur, counts.duration),
        (sums.pitch_spec, weights.w_pitch_spec, counts.pitch_spec),
        (sums.pitch_stats, weights.w_pitch_stats, counts.pitch_stats),
        (sums.energy, weights.w_energy, counts.energy),
    ] {
        let weighted = tape.scale(term, w / count as f64);
        total = tape.add(total, weighted)?;
    }
    Ok(total)
}

/// Weighted multi-term loss over a batch of per-item predictions.
///
/// Every term is a global average over the batch's unmasked positions:
/// masked (padding) entries contribute neither numerator nor denominator,
/// so extending the padding changes nothing.
pub fn total_loss(
    tape: &mut Tape,
    preds: &[Predictions],
    batch: &Batch,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    if preds.len() != batch.size {
        return Err(Error::Shape(format!(
            "{} prediction sets for a batch of {}",
            preds.len(),
            batch.size
        )));
    }
    let counts = batch.counts()?;
    let mut acc: Option<TermSums> = None;
    for (b, pred) in preds.iter().enumerate() {
        let sums = item_term_sums(tape, pred, batch, b)?;
        acc = Some(match acc {
            None => sums,
            Some(prev) => TermSums {
                mel: tape.add(prev.mel, sums.mel)?,
                duration: tape.add(prev.duration, sums.duration)?,
                pitch_spec: tape.add(prev.pitch_spec, sums.pitch_spec)?,
                pitch_stats: tape.add(prev.pitch_stats, sums.pitch_stats)?,
                energy: tape.add(prev.energy, sums.energy)?,
            },
        });
    }
    let sums = acc.expect("non-empty batch");
    let mel = tape.scale(sums.mel, 1.0 / counts.mel as f64);
    let duration = tape.scale(sums.duration, 1.0 / counts.duration as f64);
    let pitch_spec = tape.scale(sums.pitch_spec, 1.0 / counts.pitch_spec as f64);
    let pitch_stats = tape.scale(sums.pitch_stats, 1.0 / counts.pitch_stats as f64);
    let energy = tape.scale(sums.energy, 1.0 / counts.energy as f64);

    let mut total = tape.scale(mel, weights.w_mel);
    for (term, w) in [
        (duration, weights.w_dur),
        (pitch_spec, weights.w_pitch_spec),
        (pitch_stats, weights.w_pitch_stats),
        (energy, weights.w_energy),
    ] {
        let weighted = tape.scale(term, w);
        total = tape.add(total, weighted)?;
    }

    let breakdown = LossBreakdown {
        total: tape.value(total).item(),
        mel: tape.value(mel).item(),
        duration: tape.value(duration).item(),
        pitch_spec: tape.value(pitch_spec).item(),
        pitch_stats: tape.value(pitch_stats).item(),
        energy: tape.value(energy).item(),
    };
    Ok((total, breakdown))
}
