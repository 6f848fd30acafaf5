//! Command-line surface for the synthesis pipeline: corpus generation,
//! feature extraction, training, synthesis with variance control,
//! objective evaluation, and pitch dumps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use melforge::config::ConfigMap;
use melforge::data::{
    self, load_features, load_spaces, CorpusManifest, SynthesisResult, UtteranceFeatures,
};
use melforge::dsp::{griffin_lim, wav::write_wav, PitchContour};
use melforge::model::VarianceControls;
use melforge::train::{
    train, train_from, Checkpoint, TrainOptions,
};
use melforge::vocab::PhonemeVocab;
use melforge::{Error, Result};

#[derive(Parser)]
#[command(name = "melforge", version, about = "Phoneme-to-mel synthesis pipeline")]
struct Cli {
    /// Flat key=value config file (model, audio, optimizer, loss weights).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for anything stochastic (init, shuffling, dropout).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic demo corpus (wavs, alignments, symbols, manifest).
    GenDemo {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of utterances.
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Extract features (mel, pitch, energy, durations) for a corpus.
    Extract {
        /// JSON-lines corpus manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Phoneme symbols file, one per line.
        #[arg(long)]
        symbols: PathBuf,
        /// Output directory for the feature cache.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the acoustic model on an extracted feature cache.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Feature-cache directory produced by `extract`.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        symbols: PathBuf,
        /// Output directory for checkpoints and the metrics log.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: u64,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        /// Periodic checkpoint interval in steps (0 = final only).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: u64,
    },
    /// Synthesize a mel-spectrogram (and optionally audio) from phonemes.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Space-separated phoneme symbols.
        #[arg(long)]
        phonemes: String,
        /// Output mel file (tagged binary).
        #[arg(long)]
        out: PathBuf,
        /// Also write the mel as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also reconstruct audio here via phase estimation.
        #[arg(long)]
        wav: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        griffin_lim_iters: usize,
        #[command(flatten)]
        controls: ControlArgs,
    },
    /// Objective evaluation of a checkpoint against extracted features.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Output directory for report.csv / report.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump a voiced pitch contour as CSV (from a feature cache or from synthesis).
    DumpPitch {
        /// A feature cache file (.mfsc) written by `extract`.
        #[arg(long, conflicts_with_all = ["checkpoint", "phonemes"])]
        features: Option<PathBuf>,
        #[arg(long, requires = "phonemes")]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires = "checkpoint")]
        phonemes: Option<String>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        controls: ControlArgs,
    },
}

#[derive(Args)]
struct ControlArgs {
    #[arg(long, default_value_t = 1.0)]
    duration_mult: f64,
    #[arg(long, default_value_t = 1.0)]
    pitch_mult: f64,
    #[arg(long, default_value_t = 1.0)]
    energy_mult: f64,
}

impl ControlArgs {
    fn to_controls(&self) -> VarianceControls {
        VarianceControls {
            duration_mult: self.duration_mult,
            pitch_mult: self.pitch_mult,
            energy_mult: self.energy_mult,
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, anything else is usage
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigMap> {
    match path {
        Some(p) => ConfigMap::load(p),
        None => Ok(ConfigMap::new()),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = load_config(&cli.config)?;
    match cli.command {
        Command::GenDemo { out, count } => {
            let audio_cfg = config.audio_config()?;
            let manifest = melforge::demo::write_demo_corpus(&out, count, &audio_cfg, cli.seed)?;
            println!("wrote {count} utterances; manifest at {}", manifest.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Extract {
            manifest,
            symbols,
            out,
        } => {
            let audio_cfg = config.audio_config()?;
            let n_bins = config.get_usize("n_bins", 256)?;
            let manifest = CorpusManifest::load(manifest)?;
            let vocab = PhonemeVocab::load(symbols)?;
            let outcome = data::extract(&manifest, &audio_cfg, &vocab, n_bins, &out)?;
            println!(
                "extracted {} utterances into {}",
                outcome.extracted.len(),
                out.display()
            );
            println!(
                "pitch range {:.2}..{:.2} Hz, energy range {:.4}..{:.4}",
                outcome.spaces.pitch_quantizer.lo,
                outcome.spaces.pitch_quantizer.hi,
                outcome.spaces.energy_quantizer.lo,
                outcome.spaces.energy_quantizer.hi
            );
            if outcome.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{} utterances failed:", outcome.failures.len());
                for (id, reason) in &outcome.failures {
                    eprintln!("  {id}: {reason}");
                }
                Ok(ExitCode::from(2))
            }
        }
        Command::Train {
            manifest,
            features,
            symbols,
            out,
            steps,
            resume,
            batch_size,
            checkpoint_every,
        } => {
            let manifest = CorpusManifest::load(manifest)?;
            let vocab = PhonemeVocab::load(symbols)?;
            let corpus = load_features(&manifest, &features)?;
            let spaces = load_spaces(&features)?;
            let audio_cfg = config.audio_config()?;
            let loss_weights = config.loss_weights()?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let options = TrainOptions {
                steps,
                seed: cli.seed,
                batch_size,
                checkpoint_every,
                out_dir: Some(out.clone()),
            };
            let output = match resume {
                Some(path) => {
                    let ckpt = Checkpoint::load(path)?;
                    let opt_cfg = config.optimizer_config(ckpt.model_cfg.hidden)?;
                    train_from(&ckpt, &corpus, &opt_cfg, &loss_weights, &options)?
                }
                None => {
                    let model_cfg = config.model_config(vocab.len())?;
                    let opt_cfg = config.optimizer_config(model_cfg.hidden)?;
                    train(
                        &corpus,
                        &model_cfg,
                        &audio_cfg,
                        &opt_cfg,
                        &loss_weights,
                        &spaces,
                        vocab.symbols(),
                        &options,
                    )?
                }
            };
            if let Some(last) = output.log.last() {
                println!(
                    "step {}: total {:.5} mel {:.5} dur {:.5}",
                    last.step, last.loss.total, last.loss.mel, last.loss.duration
                );
            }
            println!(
                "checkpoint at {}",
                out.join("checkpoint-final.mfsc").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth {
            checkpoint,
            phonemes,
            out,
            csv,
            wav,
            griffin_lim_iters,
            controls,
        } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let result: SynthesisResult =
                data::synthesize(&ckpt, &phonemes, &controls.to_controls(), None)?;
            println!(
                "predicted {} frames ({:.3} s)",
                result.total_frames, result.seconds
            );
            data::save_mel(&result.mel, &out)?;
            if let Some(csv_path) = csv {
                std::fs::write(&csv_path, data::mel_csv(&result.mel))
                    .map_err(|e| Error::io(&csv_path, e))?;
            }
            if let Some(wav_path) = wav {
                let audio = griffin_lim(&result.mel, &ckpt.audio_cfg, griffin_lim_iters)?;
                write_wav(&wav_path, &audio)?;
                println!("audio at {}", wav_path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            checkpoint,
            manifest,
            features,
            out,
        } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let manifest = CorpusManifest::load(manifest)?;
            let corpus = load_features(&manifest, &features)?;
            let report = data::run_eval(&ckpt, &manifest, &corpus)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let csv_path = out.join("report.csv");
            std::fs::write(&csv_path, report.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
            let txt_path = out.join("report.txt");
            std::fs::write(&txt_path, report.to_table()).map_err(|e| Error::io(&txt_path, e))?;
            print!("{}", report.to_table());
            Ok(ExitCode::SUCCESS)
        }
        Command::DumpPitch {
            features,
            checkpoint,
            phonemes,
            out,
            controls,
        } => {
            let contour = match (features, checkpoint, phonemes) {
                (Some(path), None, None) => UtteranceFeatures::load(path)?.pitch,
                (None, Some(ckpt_path), Some(ph)) => {
                    let ckpt = Checkpoint::load(ckpt_path)?;
                    let result = data::synthesize(&ckpt, &ph, &controls.to_controls(), None)?;
                    PitchContour::from_f0(result.pitch_hz)
                }
                _ => {
                    return Err(Error::Config(
                        "dump-pitch needs either --features or --checkpoint with --phonemes"
                            .into(),
                    ))
                }
            };
            std::fs::write(&out, data::pitch_csv(&contour)).map_err(|e| Error::io(&out, e))?;
            println!(
                "wrote {} voiced frames to {}",
                contour.voiced_count(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
