//! The operations behind the CLI verbs: feature extraction over a corpus,
//! synthesis from a checkpoint, objective evaluation, and pitch-contour
//! dumps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::features::UtteranceFeatures;
use super::manifest::CorpusManifest;
use crate::align::{durations_to_frames, parse_alignment};
use crate::config::ConfigMap;
use crate::dsp::{
    cwt_decompose, energy_from_stft, estimate_f0, extract_mel, stft, AudioConfig, CwtConfig,
    MelSpectrogram, PitchContour,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_corpus, EvalReport, EvalUtterance};
use crate::model::{
    GraphWeights, Mode, Model, QuantizerSpec, VarianceControls, VarianceSpaces, VarianceTargets,
};
use crate::sections::SectionFile;
use crate::tensor::{Tape, Tensor};
use crate::train::Checkpoint;
use crate::vocab::PhonemeVocab;

/// Default F0 search range for the built-in estimator, Hz.
pub const F0_RANGE: (f64, f64) = (70.0, 400.0);

/// Result of a corpus extraction run.
#[derive(Debug)]
pub struct ExtractOutcome {
    pub extracted: Vec<String>,
    /// (utterance id, reason) for every failure; extraction continues past
    /// individual bad utterances.
    pub failures: Vec<(String, String)>,
    pub spaces: VarianceSpaces,
}

fn load_f0_csv(path: &Path, expected_frames: usize) -> Result<PitchContour> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut f0 = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("frame") {
            continue;
        }
        // accept either "f0" or "frame,f0"
        let value = line.rsplit(',').next().unwrap_or(line);
        let hz: f64 = value.parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: format!("bad f0 value {value:?}"),
        })?;
        f0.push(hz);
    }
    if f0.len() != expected_frames {
        return Err(Error::Shape(format!(
            "{}: {} f0 values for {expected_frames} frames",
            path.display(),
            f0.len()
        )));
    }
    Ok(PitchContour::from_f0(f0))
}

fn extract_one(
    manifest: &CorpusManifest,
    entry_index: usize,
    cfg: &AudioConfig,
    cwt: &CwtConfig,
    vocab: &PhonemeVocab,
) -> Result<UtteranceFeatures> {
    let entry = &manifest.entries[entry_index];
    let wave = crate::dsp::wav::read_wav(manifest.resolve(&entry.wav))?;
    if wave.sample_rate != cfg.sample_rate {
        return Err(Error::Format(format!(
            "{}: sample rate {} does not match configured {} (resampling is out of scope)",
            entry.wav.display(),
            wave.sample_rate,
            cfg.sample_rate
        )));
    }
    let frames = stft(&wave, cfg)?;
    let mel = extract_mel(&wave, cfg)?;
    let energy = energy_from_stft(&frames);
    let t = mel.len();

    let raw_contour = match &entry.f0 {
        Some(path) => load_f0_csv(&manifest.resolve(path), t)?,
        None => estimate_f0(&wave, cfg, F0_RANGE.0, F0_RANGE.1)?,
    };
    let pitch = crate::dsp::preprocess_pitch(&raw_contour)?;
    let pitch_spec = cwt_decompose(&pitch, cwt)?;

    let alignment = parse_alignment(manifest.resolve(&entry.alignment), vocab)?;
    let phoneme_ids = vocab.encode(&entry.phonemes)?;
    if phoneme_ids.len() != alignment.len() {
        return Err(Error::Format(format!(
            "{}: manifest lists {} phonemes but alignment has {}",
            entry.id,
            phoneme_ids.len(),
            alignment.len()
        )));
    }
    let durations = durations_to_frames(&alignment, cfg, t)?;

    let features = UtteranceFeatures {
        id: entry.id.clone(),
        phoneme_ids,
        durations,
        pitch,
        pitch_spec,
        energy,
        mel,
    };
    features.validate()?;
    Ok(features)
}

/// Extract features for a whole corpus into `out_dir` (one cache file per
/// utterance plus a corpus-level `stats.mfsc` holding the quantizer ranges
/// and wavelet gains). Per-utterance failures are collected, not fatal.
pub fn extract(
    manifest: &CorpusManifest,
    cfg: &AudioConfig,
    vocab: &PhonemeVocab,
    n_bins: usize,
    out_dir: impl AsRef<Path>,
) -> Result<ExtractOutcome> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let feat_dir = out_dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let cwt = CwtConfig::calibrated(cfg.frame_period())?;

    let mut extracted = Vec::new();
    let mut failures = Vec::new();
    let mut pitch_range: Option<(f64, f64)> = None;
    let mut energy_range: Option<(f64, f64)> = None;
    let widen = |range: &mut Option<(f64, f64)>, values: &[f64]| {
        for v in values {
            let (lo, hi) = range.get_or_insert((*v, *v));
            *lo = lo.min(*v);
            *hi = hi.max(*v);
        }
    };
    // per-utterance extraction is independent; run it on the worker pool
    // and fold the results back in manifest order
    use rayon::prelude::*;
    let results: Vec<(String, Result<UtteranceFeatures>)> = (0..manifest.len())
        .into_par_iter()
        .map(|i| {
            let id = manifest.entries[i].id.clone();
            (id, extract_one(manifest, i, cfg, &cwt, vocab))
        })
        .collect();
    for (id, result) in results {
        match result {
            Ok(features) => {
                widen(&mut pitch_range, &features.pitch.f0);
                widen(&mut energy_range, &features.energy.energy);
                features.save(feat_dir.join(format!("{id}.mfsc")))?;
                extracted.push(id);
            }
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    if extracted.is_empty() {
        return Err(Error::Format(format!(
            "no utterance could be extracted; first failure: {}",
            failures
                .first()
                .map(|(id, e)| format!("{id}: {e}"))
                .unwrap_or_default()
        )));
    }
    let (plo, phi) = pitch_range.expect("at least one utterance");
    let (elo, ehi) = energy_range.expect("at least one utterance");
    let spaces = VarianceSpaces {
        pitch_quantizer: QuantizerSpec::pitch(plo, phi.max(plo * (1.0 + 1e-9)) + 1e-9, n_bins)?,
        energy_quantizer: QuantizerSpec::energy(elo, ehi.max(elo + 1e-9) + 1e-9, n_bins)?,
        cwt,
    };
    let mut config = ConfigMap::new();
    config.set_variance_spaces(&spaces);
    config.set("n_bins", n_bins);
    let mut stats = SectionFile::new();
    stats.put_text("config", &config.to_text())?;
    stats.write(out_dir.join("stats.mfsc"))?;
    Ok(ExtractOutcome {
        extracted,
        failures,
        spaces,
    })
}

/// Load the corpus-level quantizer/wavelet stats written by [`extract`].
pub fn load_spaces(out_dir: impl AsRef<Path>) -> Result<VarianceSpaces> {
    let stats = SectionFile::read(out_dir.as_ref().join("stats.mfsc"))?;
    ConfigMap::parse(&stats.get_text("config")?, "stats")?.variance_spaces()
}

/// Load every cached feature file for the manifest's utterances, in
/// manifest order.
pub fn load_features(
    manifest: &CorpusManifest,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<UtteranceFeatures>> {
    let feat_dir = out_dir.as_ref().join("features");
    manifest
        .entries
        .iter()
        .map(|e| UtteranceFeatures::load(feat_dir.join(format!("{}.mfsc", e.id))))
        .collect()
}

/// Everything `synth` produces for one phoneme sequence.
#[derive(Debug)]
pub struct SynthesisResult {
    pub mel: MelSpectrogram,
    pub durations: Vec<usize>,
    pub total_frames: usize,
    pub seconds: f64,
    /// Pre-quantization pitch contour after controls, Hz per frame.
    pub pitch_hz: Vec<f64>,
    /// Pre-quantization energy after controls, per frame.
    pub energy: Vec<f64>,
}

/// Free-running synthesis from a checkpoint. With `forced_durations`, the
/// given per-phoneme frame counts replace the duration predictor (the
/// ground-truth-duration evaluation protocol).
pub fn synthesize(
    ckpt: &Checkpoint,
    phonemes: &str,
    controls: &VarianceControls,
    forced_durations: Option<&crate::align::DurationSequence>,
) -> Result<SynthesisResult> {
    controls.validate()?;
    let vocab = ckpt.vocab()?;
    let ids = vocab.encode(phonemes)?;
    let model = Model {
        cfg: ckpt.model_cfg.clone(),
        weights: ckpt.weights.clone(),
    };
    let mut tape = Tape::new();
    let mut gw = GraphWeights::new(&model.weights, false);
    let preds = match forced_durations {
        None => model.forward(
            &mut tape,
            &mut gw,
            &ids,
            None,
            controls,
            &ckpt.spaces,
            Mode::Infer,
            None,
        )?,
        Some(durations) => {
            // dummy targets carry only the durations; Infer mode ignores the rest
            let placeholder_pitch = PitchContour::from_f0(vec![]);
            let placeholder_spec = crate::dsp::PitchSpectrogram {
                components: vec![],
                utt_mean: 0.0,
                utt_std: 1.0,
                tau0: 0.005,
            };
            let targets = VarianceTargets {
                durations,
                pitch_spec: &placeholder_spec,
                pitch_contour: &placeholder_pitch,
                energy: &crate::dsp::EnergySequence { energy: vec![] },
            };
            model.forward(
                &mut tape,
                &mut gw,
                &ids,
                Some(&targets),
                controls,
                &ckpt.spaces,
                Mode::Infer,
                None,
            )?
        }
    };
    let mel_tensor: &Tensor = tape.value(preds.mel);
    let mel = MelSpectrogram::new(
        mel_tensor
            .data()
            .chunks(ckpt.model_cfg.n_mels)
            .map(|c| c.to_vec())
            .collect(),
        ckpt.model_cfg.n_mels,
    )?;
    let total_frames: usize = preds.durations_used.iter().sum();
    Ok(SynthesisResult {
        mel,
        seconds: total_frames as f64 * ckpt.audio_cfg.frame_period(),
        durations: preds.durations_used,
        total_frames,
        pitch_hz: preds.applied_pitch_hz.unwrap_or_default(),
        energy: preds.applied_energy.unwrap_or_default(),
    })
}

/// The objective-evaluation protocol: for each utterance, synthesize once
/// with ground-truth durations (for length-matched energy MAE) and once
/// free-running (for pitch moments and DTW against the reference contour).
pub fn run_eval(
    ckpt: &Checkpoint,
    manifest: &CorpusManifest,
    features: &[UtteranceFeatures],
) -> Result<EvalReport> {
    if manifest.len() != features.len() {
        let missing: Vec<&str> = manifest
            .entries
            .iter()
            .map(|e| e.id.as_str())
            .filter(|id| !features.iter().any(|f| f.id == *id))
            .collect();
        return Err(Error::Format(format!(
            "manifest and feature cache disagree; missing features for {missing:?}"
        )));
    }
    let mut utterances = Vec::with_capacity(features.len());
    for (entry, feats) in manifest.entries.iter().zip(features) {
        let controls = VarianceControls::default();
        let forced = synthesize(ckpt, &entry.phonemes, &controls, Some(&feats.durations))?;
        let free = synthesize(ckpt, &entry.phonemes, &controls, None)?;
        utterances.push(EvalUtterance {
            id: entry.id.clone(),
            synth_pitch: free.pitch_hz,
            reference_pitch: feats.pitch.f0.clone(),
            synth_energy: crate::dsp::EnergySequence {
                energy: forced.energy,
            },
            reference_energy: feats.energy.clone(),
        });
    }
    evaluate_corpus(&utterances)
}

/// Voiced-only pitch rows as CSV: `frame,f0_hz`.
pub fn pitch_csv(contour: &PitchContour) -> String {
    let mut out = String::from("frame,f0_hz\n");
    for (t, (hz, voiced)) in contour.f0.iter().zip(&contour.voiced).enumerate() {
        if *voiced {
            let _ = writeln!(out, "{t},{hz}");
        }
    }
    out
}

/// Mel as CSV, one frame per row.
pub fn mel_csv(mel: &MelSpectrogram) -> String {
    let mut out = String::new();
    for row in &mel.frames {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// Write a synthesized mel as a tagged section file.
pub fn save_mel(mel: &MelSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    let mut f = SectionFile::new();
    f.put_f64s(
        "mel",
        vec![mel.len(), mel.n_mels],
        mel.frames.iter().flatten().copied().collect(),
    )?;
    f.write(path)
}

/// Read a mel written by [`save_mel`].
pub fn load_mel(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let f = SectionFile::read(path)?;
    let (shape, flat) = f.get_f64s("mel")?;
    if shape.len() != 2 {
        return Err(Error::Shape(format!("mel shape {shape:?} is not 2-D")));
    }
    MelSpectrogram::new(flat.chunks(shape[1]).map(|c| c.to_vec()).collect(), shape[1])
}

/// Feature-cache path convention used by extract/load.
pub fn feature_path(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join("features").join(format!("{id}.mfsc"))
}
