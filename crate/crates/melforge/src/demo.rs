//! Seeded synthetic "speech" corpus: harmonic vowels, noise consonants and
//! real silences, with frame-exact alignments. Good enough to exercise the
//! whole pipeline (F0 estimation finds the vowel pitch, alignments convert
//! exactly to frame durations) without shipping any audio data.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::align::{AlignedPhoneme, PhonemeAlignment};
use crate::dsp::{AudioConfig, Waveform};
use crate::error::{Error, Result};

/// The demo phoneme inventory: silence, three vowels, four consonants.
pub fn demo_symbols() -> Vec<String> {
    ["_", "AA", "IY", "UW", "B", "S", "M", "K"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// One generated utterance: audio, its phoneme string and the exact
/// alignment.
#[derive(Debug, Clone)]
pub struct DemoUtterance {
    pub id: String,
    pub wave: Waveform,
    pub phonemes: Vec<String>,
    pub alignment: PhonemeAlignment,
}

fn vowel_harmonics(symbol: &str) -> Vec<f64> {
    match symbol {
        // rough spectral tilts; enough to make the vowels distinct
        "AA" => vec![0.50, 0.35, 0.22, 0.10, 0.05, 0.02],
        "IY" => vec![0.40, 0.12, 0.06, 0.18, 0.14, 0.08],
        "UW" => vec![0.55, 0.25, 0.06, 0.03, 0.01, 0.01],
        _ => vec![0.4, 0.2, 0.1],
    }
}

/// Generate one utterance. Durations are whole frames so the alignment
/// times land exactly on frame boundaries.
pub fn generate_utterance(id: &str, cfg: &AudioConfig, rng: &mut ChaCha20Rng) -> DemoUtterance {
    let vowels = ["AA", "IY", "UW"];
    let consonants = ["B", "S", "M", "K"];
    let syllables = rng.random_range(2..=3usize);
    let mut phonemes: Vec<String> = vec!["_".to_string()];
    for _ in 0..syllables {
        phonemes.push(consonants[rng.random_range(0..consonants.len())].to_string());
        phonemes.push(vowels[rng.random_range(0..vowels.len())].to_string());
    }
    phonemes.push("_".to_string());

    let frames_for = |symbol: &str, rng: &mut ChaCha20Rng| -> usize {
        match symbol {
            "_" => rng.random_range(3..=5),
            "AA" | "IY" | "UW" => rng.random_range(8..=13),
            _ => rng.random_range(2..=5),
        }
    };
    let durations: Vec<usize> = phonemes.iter().map(|p| frames_for(p, rng)).collect();
    let total_frames: usize = durations.iter().sum();
    let hop = cfg.hop_size;
    let total_samples = total_frames * hop;
    let sr = cfg.sample_rate as f64;

    // slowly declining f0 with gentle vibrato
    let base_f0 = rng.random_range(170.0..240.0);
    let vib_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let f0_at = |s: usize| -> f64 {
        let t = s as f64 / total_samples as f64;
        let vib = 1.0 + 0.05 * (std::f64::consts::TAU * s as f64 / (sr * 0.8) + vib_phase).sin();
        base_f0 * (1.0 - 0.12 * t) * vib
    };

    let mut samples = vec![0.0f64; total_samples];
    let mut harmonic_phases = [0.0f64; 8];
    let mut frame_cursor = 0usize;
    let mut entries = Vec::with_capacity(phonemes.len());
    for (p, symbol) in phonemes.iter().enumerate() {
        let start_frame = frame_cursor;
        let end_frame = frame_cursor + durations[p];
        frame_cursor = end_frame;
        let start_s = start_frame * hop;
        let end_s = end_frame * hop;
        entries.push(AlignedPhoneme {
            symbol: symbol.clone(),
            start: start_s as f64 / sr,
            end: end_s as f64 / sr,
        });
        let span = end_s - start_s;
        let ramp = (span / 10).clamp(8, 160);
        let envelope = |i: usize| -> f64 {
            let rise = (i as f64 / ramp as f64).min(1.0);
            let fall = ((span - i) as f64 / ramp as f64).min(1.0);
            rise.min(fall)
        };
        match symbol.as_str() {
            "_" => {} // genuine silence
            "AA" | "IY" | "UW" => {
                let amps = vowel_harmonics(symbol);
                for i in 0..span {
                    let s = start_s + i;
                    let f0 = f0_at(s);
                    let mut v = 0.0;
                    for (h, amp) in amps.iter().enumerate() {
                        harmonic_phases[h] +=
                            std::f64::consts::TAU * (h + 1) as f64 * f0 / sr;
                        v += amp * harmonic_phases[h].sin();
                    }
                    samples[s] = 0.45 * envelope(i) * v;
                }
            }
            "M" | "B" => {
                // voiced murmur: fundamental only, quiet, plus a whisper of noise
                for i in 0..span {
                    let s = start_s + i;
                    let f0 = f0_at(s);
                    harmonic_phases[0] += std::f64::consts::TAU * f0 / sr;
                    let noise: f64 = rng.random_range(-1.0..1.0);
                    samples[s] = envelope(i) * (0.12 * harmonic_phases[0].sin() + 0.01 * noise);
                }
            }
            _ => {
                // unvoiced frication: first-difference noise (high-pass tilt)
                let mut prev: f64 = 0.0;
                for i in 0..span {
                    let s = start_s + i;
                    let white: f64 = rng.random_range(-1.0..1.0);
                    samples[s] = envelope(i) * 0.08 * (white - prev);
                    prev = white;
                }
            }
        }
    }

    DemoUtterance {
        id: id.to_string(),
        wave: Waveform::new(samples, cfg.sample_rate).expect("non-empty synthetic utterance"),
        phonemes,
        alignment: PhonemeAlignment::new(entries).expect("contiguous by construction"),
    }
}

/// Generate a corpus of `count` utterances.
pub fn generate_corpus(count: usize, cfg: &AudioConfig, seed: u64) -> Vec<DemoUtterance> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| generate_utterance(&format!("demo_{i:03}"), cfg, &mut rng))
        .collect()
}

/// Write a complete on-disk demo dataset: wavs, alignment TSVs, the symbols
/// file and a JSON-lines manifest. Returns the manifest path.
pub fn write_demo_corpus(
    dir: impl AsRef<Path>,
    count: usize,
    cfg: &AudioConfig,
    seed: u64,
) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    let wav_dir = dir.join("wavs");
    let align_dir = dir.join("align");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    std::fs::create_dir_all(&align_dir).map_err(|e| Error::io(&align_dir, e))?;

    let symbols_path = dir.join("symbols.txt");
    std::fs::write(&symbols_path, demo_symbols().join("\n") + "\n")
        .map_err(|e| Error::io(&symbols_path, e))?;

    let mut manifest = String::new();
    for utt in generate_corpus(count, cfg, seed) {
        let wav_path = wav_dir.join(format!("{}.wav", utt.id));
        crate::dsp::wav::write_wav(&wav_path, &utt.wave)?;
        let align_path = align_dir.join(format!("{}.tsv", utt.id));
        std::fs::write(&align_path, utt.alignment.to_tsv())
            .map_err(|e| Error::io(&align_path, e))?;
        manifest.push_str(&format!(
            "{{\"id\":\"{}\",\"wav\":\"wavs/{}.wav\",\"phonemes\":\"{}\",\"alignment\":\"align/{}.tsv\"}}\n",
            utt.id,
            utt.id,
            utt.phonemes.join(" "),
            utt.id
        ));
    }
    let manifest_path = dir.join("manifest.jsonl");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}
