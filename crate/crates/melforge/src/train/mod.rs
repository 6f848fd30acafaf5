//! Teacher-forced training: the deterministic step loop over shuffled,
//! length-bucketed batches, with the multi-term masked loss, Adam updates on
//! a warmup schedule, metrics logging and checkpointing.

mod checkpoint;
mod loss;
mod optim;

pub use checkpoint::Checkpoint;
pub use loss::{
    item_loss, item_term_sums, make_batch, total_loss, Batch, BatchCounts, LossBreakdown,
    LossWeights, TermSums,
};
pub use optim::{adam_step, noam_lr, AdamState, OptimizerConfig};

use rayon::prelude::*;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::UtteranceFeatures;
use crate::dsp::AudioConfig;
use crate::error::{Error, Result};
use crate::model::{
    GraphWeights, Mode, Model, ModelConfig, Predictions, VarianceControls, VarianceSpaces,
    VarianceTargets,
};
use crate::tensor::Tape;
use crate::util::fnv1a64;

/// Loop controls beyond the optimizer itself.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub steps: u64,
    pub seed: u64,
    pub batch_size: usize,
    /// Write a checkpoint every this many steps into `out_dir` (0 = only on
    /// completion).
    pub checkpoint_every: u64,
    /// Directory for periodic checkpoints and the metrics log; optional.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 1000,
            seed: 0,
            batch_size: 8,
            checkpoint_every: 0,
            out_dir: None,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
}

/// Deterministic batch schedule: per epoch, shuffle the corpus with an
/// epoch-derived RNG, sort by frame length inside windows of four batches
/// to reduce padding, then chunk. Step `s` uses batch `s % batches_per_epoch`
/// of epoch `s / batches_per_epoch`.
fn epoch_batches(n_items: usize, batch_size: usize, seed: u64, epoch: u64, lens: &[usize]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ fnv1a64(&epoch.to_le_bytes()));
    order.shuffle(&mut rng);
    let window = (batch_size * 4).max(1);
    for chunk in order.chunks_mut(window) {
        chunk.sort_by_key(|i| (lens[*i], *i));
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn derive_rng(seed: u64, step: u64, item: u64) -> ChaCha20Rng {
    let mut key = seed;
    key ^= fnv1a64(&step.to_le_bytes()).rotate_left(17);
    key ^= fnv1a64(&item.to_le_bytes()).rotate_left(43);
    ChaCha20Rng::seed_from_u64(key)
}

/// Run one teacher-forced forward for every item of a batch on a shared
/// tape, in item order.
fn batch_forward(
    tape: &mut Tape,
    gw: &mut GraphWeights,
    model: &Model,
    spaces: &VarianceSpaces,
    items: &[&UtteranceFeatures],
    seed: u64,
    step: u64,
    dropout: bool,
) -> Result<Vec<Predictions>> {
    let controls = VarianceControls::default();
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let targets = VarianceTargets {
                durations: &item.durations,
                pitch_spec: &item.pitch_spec,
                pitch_contour: &item.pitch,
                energy: &item.energy,
            };
            let mut rng = derive_rng(seed, step, i as u64);
            model.forward(
                tape,
                gw,
                &item.phoneme_ids,
                Some(&targets),
                &controls,
                spaces,
                Mode::Train,
                if dropout { Some(&mut rng) } else { None },
            )
        })
        .collect()
}

/// Raw per-term numerator values, accumulated across items for logging.
#[derive(Debug, Clone, Copy)]
struct TermSums2 {
    mel: f64,
    duration: f64,
    pitch_spec: f64,
    pitch_stats: f64,
    energy: f64,
}

impl TermSums2 {
    fn add(&mut self, other: &TermSums2) {
        self.mel += other.mel;
        self.duration += other.duration;
        self.pitch_spec += other.pitch_spec;
        self.pitch_stats += other.pitch_stats;
        self.energy += other.energy;
    }

    fn breakdown(&self, counts: &BatchCounts, w: &LossWeights) -> LossBreakdown {
        let mel = self.mel / counts.mel as f64;
        let duration = self.duration / counts.duration as f64;
        let pitch_spec = self.pitch_spec / counts.pitch_spec as f64;
        let pitch_stats = self.pitch_stats / counts.pitch_stats as f64;
        let energy = self.energy / counts.energy as f64;
        LossBreakdown {
            total: w.w_mel * mel
                + w.w_dur * duration
                + w.w_pitch_spec * pitch_spec
                + w.w_pitch_stats * pitch_stats
                + w.w_energy * energy,
            mel,
            duration,
            pitch_spec,
            pitch_stats,
            energy,
        }
    }
}

/// One item's training-step work: teacher-forced forward, its share of the
/// batch loss, and a backward pass, all on a private tape.
#[allow(clippy::too_many_arguments)]
fn step_item(
    model: &Model,
    spaces: &VarianceSpaces,
    batch: &Batch,
    item: &UtteranceFeatures,
    index: usize,
    seed: u64,
    step: u64,
    counts: &BatchCounts,
    weights: &LossWeights,
) -> Result<(std::collections::BTreeMap<String, crate::tensor::Tensor>, TermSums2)> {
    let mut tape = Tape::new();
    let mut gw = GraphWeights::new(&model.weights, true);
    let targets = VarianceTargets {
        durations: &item.durations,
        pitch_spec: &item.pitch_spec,
        pitch_contour: &item.pitch,
        energy: &item.energy,
    };
    let mut rng = derive_rng(seed, step, index as u64);
    let pred = model.forward(
        &mut tape,
        &mut gw,
        &item.phoneme_ids,
        Some(&targets),
        &VarianceControls::default(),
        spaces,
        Mode::Train,
        Some(&mut rng),
    )?;
    let sums = item_term_sums(&mut tape, &pred, batch, index)?;
    let raw = TermSums2 {
        mel: tape.value(sums.mel).item(),
        duration: tape.value(sums.duration).item(),
        pitch_spec: tape.value(sums.pitch_spec).item(),
        pitch_stats: tape.value(sums.pitch_stats).item(),
        energy: tape.value(sums.energy).item(),
    };
    let loss = item_loss(&mut tape, &sums, counts, weights)?;
    let grads = tape.backward(loss)?;
    Ok((gw.gradients_by_name(&grads), raw))
}

/// Teacher-forced loss of the model over a set of utterances, without
/// dropout or updates. Used for fit evaluation.
pub fn evaluate_teacher_forced(
    model: &Model,
    spaces: &VarianceSpaces,
    corpus: &[UtteranceFeatures],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let refs: Vec<&UtteranceFeatures> = corpus.iter().collect();
    let batch = make_batch(&refs)?;
    let mut tape = Tape::new();
    let mut gw = GraphWeights::new(&model.weights, false);
    let preds = batch_forward(&mut tape, &mut gw, model, spaces, &refs, 0, 0, false)?;
    let (_, breakdown) = total_loss(&mut tape, &preds, &batch, weights)?;
    Ok(breakdown)
}

/// The training loop. Fully determined by `(corpus order, configs, seed)`:
/// batch schedule, dropout masks and updates all derive from the seed and
/// the step counter, so runs are bit-reproducible and resumable.
///
/// A non-finite loss aborts with an error; the last periodic checkpoint (if
/// any) stays on disk.
pub fn train(
    corpus: &[UtteranceFeatures],
    model_cfg: &ModelConfig,
    audio_cfg: &AudioConfig,
    opt_cfg: &OptimizerConfig,
    loss_weights: &LossWeights,
    spaces: &VarianceSpaces,
    symbols: &[String],
    options: &TrainOptions,
) -> Result<TrainOutput> {
    if corpus.is_empty() {
        return Err(Error::Format("training corpus is empty".into()));
    }
    if options.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    opt_cfg.validate()?;
    loss_weights.validate()?;
    for item in corpus {
        item.validate()?;
    }

    let model = Model::new(model_cfg.clone(), options.seed)?;
    resume(
        model,
        AdamState::default(),
        0,
        corpus,
        audio_cfg,
        opt_cfg,
        loss_weights,
        spaces,
        symbols,
        options,
    )
}

/// Continue training from an existing checkpoint for `options.steps`
/// additional steps, replaying the same deterministic schedule.
pub fn train_from(
    ckpt: &Checkpoint,
    corpus: &[UtteranceFeatures],
    opt_cfg: &OptimizerConfig,
    loss_weights: &LossWeights,
    options: &TrainOptions,
) -> Result<TrainOutput> {
    let model = Model {
        cfg: ckpt.model_cfg.clone(),
        weights: ckpt.weights.clone(),
    };
    let mut moments = ckpt.moments.clone();
    if moments.m.is_empty() {
        moments = AdamState::for_weights(&model.weights);
    }
    let mut opts = options.clone();
    opts.seed = ckpt.seed;
    resume(
        model,
        moments,
        ckpt.step,
        corpus,
        &ckpt.audio_cfg,
        opt_cfg,
        loss_weights,
        &ckpt.spaces,
        &ckpt.symbols,
        &opts,
    )
}

#[allow(clippy::too_many_arguments)]
fn resume(
    mut model: Model,
    mut moments: AdamState,
    start_step: u64,
    corpus: &[UtteranceFeatures],
    audio_cfg: &AudioConfig,
    opt_cfg: &OptimizerConfig,
    loss_weights: &LossWeights,
    spaces: &VarianceSpaces,
    symbols: &[String],
    options: &TrainOptions,
) -> Result<TrainOutput> {
    if moments.m.is_empty() {
        moments = AdamState::for_weights(&model.weights);
    }
    let lens: Vec<usize> = corpus.iter().map(|c| c.frame_count()).collect();
    let batches_per_epoch = corpus.len().div_ceil(options.batch_size) as u64;
    let mut log = Vec::new();
    let mut cached_epoch: Option<(u64, Vec<Vec<usize>>)> = None;

    let make_checkpoint = |model: &Model, moments: &AdamState, step: u64| Checkpoint {
        model_cfg: model.cfg.clone(),
        audio_cfg: audio_cfg.clone(),
        spaces: spaces.clone(),
        weights: model.weights.clone(),
        moments: moments.clone(),
        step,
        seed: options.seed,
        symbols: symbols.to_vec(),
    };

    for step in start_step + 1..=start_step + options.steps {
        let epoch = (step - 1) / batches_per_epoch;
        if cached_epoch.as_ref().map(|(e, _)| *e) != Some(epoch) {
            cached_epoch = Some((
                epoch,
                epoch_batches(corpus.len(), options.batch_size, options.seed, epoch, &lens),
            ));
        }
        let batches = &cached_epoch.as_ref().unwrap().1;
        let batch_ids = &batches[((step - 1) % batches_per_epoch) as usize];
        let items: Vec<&UtteranceFeatures> = batch_ids.iter().map(|i| &corpus[*i]).collect();
        let batch = make_batch(&items)?;
        let counts = batch.counts()?;

        // Per-item forward/backward in parallel, each on its own tape; the
        // per-item losses are scaled so their plain sum equals the batch
        // loss, and gradients reduce in fixed item order for determinism.
        let per_item: Vec<(std::collections::BTreeMap<String, crate::tensor::Tensor>, TermSums2)> =
            items
                .par_iter()
                .enumerate()
                .map(|(i, item)| step_item(
                    &model, spaces, &batch, item, i, options.seed, step, &counts, loss_weights,
                ))
                .collect::<Result<Vec<_>>>()?;

        let mut by_name = per_item[0].0.clone();
        let mut sums = per_item[0].1;
        for (grads, s) in per_item.iter().skip(1) {
            for (name, g) in grads {
                let slot = by_name.get_mut(name).expect("same parameter set");
                let merged: Vec<f64> = slot
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(a, b)| a + b)
                    .collect();
                *slot = crate::tensor::Tensor::new(slot.shape().to_vec(), merged)?;
            }
            sums.add(s);
        }
        let breakdown = sums.breakdown(&counts, loss_weights);
        if !breakdown.total.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became non-finite at step {step}; last checkpoint retained"
            )));
        }
        let lr = noam_lr(step, opt_cfg)?;
        adam_step(&mut model.weights, &by_name, &mut moments, step, lr, opt_cfg)?;

        log.push(StepLog {
            step,
            lr,
            loss: breakdown,
        });

        if options.checkpoint_every > 0 && step % options.checkpoint_every == 0 {
            if let Some(dir) = &options.out_dir {
                let ckpt = make_checkpoint(&model, &moments, step);
                ckpt.save(dir.join(format!("checkpoint-{step}.mfsc")))?;
                write_metrics_csv(&log, &dir.join("metrics.csv"))?;
            }
        }
    }

    let checkpoint = make_checkpoint(&model, &moments, start_step + options.steps);
    if let Some(dir) = &options.out_dir {
        checkpoint.save(dir.join("checkpoint-final.mfsc"))?;
        write_metrics_csv(&log, &dir.join("metrics.csv"))?;
    }
    Ok(TrainOutput { checkpoint, log })
}

/// Metrics log as CSV: step, lr, total, mel, dur, pitch_spec, pitch_stats,
/// energy.
pub fn write_metrics_csv(log: &[StepLog], path: &Path) -> Result<()> {
    let mut out = String::from("step,lr,total,mel,dur,pitch_spec,pitch_stats,energy\n");
    for entry in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            entry.step,
            entry.lr,
            entry.loss.total,
            entry.loss.mel,
            entry.loss.duration,
            entry.loss.pitch_spec,
            entry.loss.pitch_stats,
            entry.loss.energy
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
