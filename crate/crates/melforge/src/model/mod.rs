//! The acoustic model: a feed-forward Transformer encoder over phonemes, a
//! variance adaptor that injects duration, pitch and energy information, and
//! a mel-spectrogram decoder.

mod adaptor;
mod blocks;
mod predictor;

pub use adaptor::{
    length_regulate, predicted_durations, variance_adaptor, AdaptorOutput, VarianceControls,
    VarianceTargets,
};
pub use blocks::{decode_mel, encode, fft_block, sinusoidal_positions};
pub use predictor::{pitch_predictor, variance_predictor, PitchPrediction};

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dsp::CwtConfig;
use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};
use crate::util::{fnv1a64, round_f32};

/// Layer-norm epsilon used across the network.
pub const LN_EPS: f64 = 1e-5;

/// Network hyperparameters. The defaults are the full-scale configuration;
/// [`ModelConfig::tiny`] is the desk-scale variant used by the fast tests.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub conv_kernels: (usize, usize),
    pub conv_filter: usize,
    pub predictor_kernel: usize,
    pub predictor_filter: usize,
    pub predictor_dropout: f64,
    pub enc_dec_dropout: f64,
    pub n_bins: usize,
    pub n_mels: usize,
    pub cwt_scales: usize,
    /// When true (default) the energy predictor sees the hidden sequence
    /// with the pitch embedding already added; when false both predictors
    /// see the raw expanded hidden.
    pub stacked_variance_embeddings: bool,
}

impl ModelConfig {
    /// Full-scale configuration (~24M trainable parameters at the reference
    /// 76-symbol vocabulary).
    pub fn base(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            hidden: 256,
            heads: 2,
            encoder_layers: 4,
            decoder_layers: 4,
            conv_kernels: (9, 1),
            conv_filter: 1024,
            predictor_kernel: 3,
            predictor_filter: 256,
            predictor_dropout: 0.5,
            enc_dec_dropout: 0.1,
            n_bins: 256,
            n_mels: 80,
            cwt_scales: 10,
            stacked_variance_embeddings: true,
        }
    }

    /// Small CPU-friendly configuration for overfit experiments and tests.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            hidden: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            conv_filter: 256,
            predictor_filter: 64,
            predictor_dropout: 0.1,
            ..ModelConfig::base(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.n_bins < 2 {
            return Err(Error::Config("n_bins must be >= 2".into()));
        }
        if self.conv_kernels.0 % 2 == 0
            || self.conv_kernels.1 % 2 == 0
            || self.predictor_kernel % 2 == 0
        {
            return Err(Error::Config("conv kernels must be odd".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Shapes of every trainable parameter, keyed by name.
    pub fn parameter_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let mut shapes = BTreeMap::new();
        let h = self.hidden;
        let dk = self.head_dim();
        let mut insert = |name: String, shape: Vec<usize>| {
            shapes.insert(name, shape);
        };
        insert("phoneme_embedding".into(), vec![self.vocab_size, h]);
        insert("pitch_embedding".into(), vec![self.n_bins, h]);
        insert("energy_embedding".into(), vec![self.n_bins, h]);
        for (stack, layers) in [
            ("encoder", self.encoder_layers),
            ("decoder", self.decoder_layers),
        ] {
            for l in 0..layers {
                let p = format!("{stack}.{l}");
                for head in 0..self.heads {
                    for proj in ["wq", "wk", "wv"] {
                        insert(format!("{p}.attn.{head}.{proj}"), vec![h, dk]);
                    }
                    for proj in ["bq", "bk", "bv"] {
                        insert(format!("{p}.attn.{head}.{proj}"), vec![dk]);
                    }
                    insert(format!("{p}.attn.{head}.wo"), vec![dk, h]);
                }
                insert(format!("{p}.attn.bo"), vec![h]);
                insert(format!("{p}.attn_norm.gamma"), vec![h]);
                insert(format!("{p}.attn_norm.beta"), vec![h]);
                insert(
                    format!("{p}.conv1.w"),
                    vec![self.conv_kernels.0, h, self.conv_filter],
                );
                insert(format!("{p}.conv1.b"), vec![self.conv_filter]);
                insert(
                    format!("{p}.conv2.w"),
                    vec![self.conv_kernels.1, self.conv_filter, h],
                );
                insert(format!("{p}.conv2.b"), vec![h]);
                insert(format!("{p}.conv_norm.gamma"), vec![h]);
                insert(format!("{p}.conv_norm.beta"), vec![h]);
            }
        }
        insert("mel_out.w".into(), vec![h, self.n_mels]);
        insert("mel_out.b".into(), vec![self.n_mels]);
        let pf = self.predictor_filter;
        let k = self.predictor_kernel;
        for (name, out) in [
            ("duration_predictor", 1),
            ("pitch_predictor", self.cwt_scales),
            ("energy_predictor", 1),
        ] {
            insert(format!("{name}.conv1.w"), vec![k, h, pf]);
            insert(format!("{name}.conv1.b"), vec![pf]);
            insert(format!("{name}.norm1.gamma"), vec![pf]);
            insert(format!("{name}.norm1.beta"), vec![pf]);
            insert(format!("{name}.conv2.w"), vec![k, pf, pf]);
            insert(format!("{name}.conv2.b"), vec![pf]);
            insert(format!("{name}.norm2.gamma"), vec![pf]);
            insert(format!("{name}.norm2.beta"), vec![pf]);
            insert(format!("{name}.out.w"), vec![pf, out]);
            insert(format!("{name}.out.b"), vec![out]);
        }
        for head in ["stats_mean", "stats_std"] {
            insert(format!("pitch_predictor.{head}.w"), vec![pf, 1]);
            insert(format!("pitch_predictor.{head}.b"), vec![1]);
        }
        shapes
    }

    /// Total trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .values()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

/// Named parameter collection. Values are f64 tensors holding
/// f32-representable numbers (persistent state is 32-bit).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    params: BTreeMap<String, Tensor>,
}

impl ModelWeights {
    /// Deterministic initialization: each parameter gets its own RNG stream
    /// derived from `(seed, name)`, so init is order-independent.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = BTreeMap::new();
        for (name, shape) in cfg.parameter_shapes() {
            let tensor = init_parameter(&name, &shape, cfg, seed)?;
            params.insert(name, tensor);
        }
        Ok(ModelWeights { params })
    }

    pub fn from_params(params: BTreeMap<String, Tensor>) -> Self {
        ModelWeights { params }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Index(format!("unknown parameter {name:?}")))
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        match self.params.get_mut(name) {
            Some(slot) => {
                if slot.shape() != value.shape() {
                    return Err(Error::Shape(format!(
                        "parameter {name:?} has shape {:?}, got {:?}",
                        slot.shape(),
                        value.shape()
                    )));
                }
                *slot = value;
                Ok(())
            }
            None => Err(Error::Index(format!("unknown parameter {name:?}"))),
        }
    }

    /// Names in a fixed (lexicographic) order; every consumer that iterates
    /// parameters relies on this order for determinism.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn validate_finite(&self) -> Result<()> {
        for (name, t) in &self.params {
            t.validate_finite()
                .map_err(|e| Error::Numeric(format!("parameter {name:?}: {e}")))?;
        }
        Ok(())
    }
}

fn init_parameter(name: &str, shape: &[usize], cfg: &ModelConfig, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ fnv1a64(name.as_bytes()));
    let n: usize = shape.iter().product();
    let data: Vec<f64> = if name.ends_with(".b") || name.ends_with("beta") || name.ends_with("bo")
        || name.ends_with("bq") || name.ends_with("bk") || name.ends_with("bv")
    {
        vec![0.0; n]
    } else if name.ends_with("gamma") {
        vec![1.0; n]
    } else if name.ends_with("_embedding") {
        let scale = 1.0 / (cfg.hidden as f64).sqrt();
        (0..n)
            .map(|_| round_f32(rng.random_range(-scale..scale)))
            .collect()
    } else {
        // Xavier-uniform over (fan_in, fan_out); convs fold the kernel into both fans.
        let (fan_in, fan_out) = match shape.len() {
            2 => (shape[0], shape[1]),
            3 => (shape[0] * shape[1], shape[0] * shape[2]),
            _ => (n, n),
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        (0..n)
            .map(|_| round_f32(rng.random_range(-bound..bound)))
            .collect()
    };
    Tensor::new(shape.to_vec(), data)
}

/// Binds named weights onto a tape, once each, remembering the mapping so
/// gradients can be read back by name after backward.
pub struct GraphWeights<'w> {
    weights: &'w ModelWeights,
    bound: HashMap<String, Var>,
    trainable: bool,
}

impl<'w> GraphWeights<'w> {
    pub fn new(weights: &'w ModelWeights, trainable: bool) -> Self {
        GraphWeights {
            weights,
            bound: HashMap::new(),
            trainable,
        }
    }

    pub fn bind(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let tensor = self.weights.get(name)?.clone();
        let var = tape.leaf(tensor, self.trainable);
        self.bound.insert(name.to_string(), var);
        Ok(var)
    }

    /// Per-name gradients in parameter order; zeros for parameters that
    /// never entered the graph.
    pub fn gradients_by_name(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, tensor) in self.weights.iter() {
            let g = self
                .bound
                .get(name)
                .and_then(|v| grads.get(*v))
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tensor.shape().to_vec()));
            out.insert(name.to_string(), g);
        }
        out
    }
}

/// Value-range quantizers for pitch and energy embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerKind {
    /// Equal-width bins in log domain.
    LogScalePitch,
    /// Equal-width bins in linear domain.
    UniformEnergy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerSpec {
    pub kind: QuantizerKind,
    pub lo: f64,
    pub hi: f64,
    pub n_bins: usize,
}

impl QuantizerSpec {
    pub fn pitch(lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        if !(lo > 0.0) {
            return Err(Error::Config(format!("pitch quantizer lo must be > 0, got {lo}")));
        }
        Self::validated(QuantizerKind::LogScalePitch, lo, hi, n_bins)
    }

    pub fn energy(lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        Self::validated(QuantizerKind::UniformEnergy, lo, hi, n_bins)
    }

    fn validated(kind: QuantizerKind, lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!(
                "quantizer needs finite lo < hi, got {lo} / {hi}"
            )));
        }
        if n_bins < 2 {
            return Err(Error::Config("quantizer needs n_bins >= 2".into()));
        }
        Ok(QuantizerSpec {
            kind,
            lo,
            hi,
            n_bins,
        })
    }

    /// Bin index in `[0, n_bins)`; inputs are clamped to the range and the
    /// mapping is monotone non-decreasing.
    pub fn quantize(&self, x: f64) -> Result<usize> {
        if !x.is_finite() {
            return Err(Error::Numeric(format!("cannot quantize non-finite value {x}")));
        }
        let x = x.clamp(self.lo, self.hi);
        let (a, b, v) = match self.kind {
            QuantizerKind::LogScalePitch => (self.lo.ln(), self.hi.ln(), x.ln()),
            QuantizerKind::UniformEnergy => (self.lo, self.hi, x),
        };
        let frac = (v - a) / (b - a);
        Ok(((frac * self.n_bins as f64) as usize).min(self.n_bins - 1))
    }

    /// The `n_bins + 1` bin edges in value space.
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n_bins)
            .map(|i| {
                let frac = i as f64 / self.n_bins as f64;
                match self.kind {
                    QuantizerKind::LogScalePitch => {
                        (self.lo.ln() + frac * (self.hi.ln() - self.lo.ln())).exp()
                    }
                    QuantizerKind::UniformEnergy => self.lo + frac * (self.hi - self.lo),
                }
            })
            .collect()
    }
}

/// Everything beyond weights that synthesis needs: quantizer ranges and the
/// wavelet configuration (with its recomposition gains).
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSpaces {
    pub pitch_quantizer: QuantizerSpec,
    pub energy_quantizer: QuantizerSpec,
    pub cwt: CwtConfig,
}

/// Forward-pass mode: teacher-forced training or free-running inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// All raw predictions from one forward pass, as tape handles plus the
/// concrete values the adaptor applied.
pub struct Predictions {
    pub mel: Var,
    pub log_duration: Var,
    pub pitch_spec: Var,
    pub pitch_mean: Var,
    pub pitch_std: Var,
    pub energy: Var,
    /// Durations used to expand the phoneme sequence.
    pub durations_used: Vec<usize>,
    /// Inference only: the pre-quantization pitch contour after controls.
    pub applied_pitch_hz: Option<Vec<f64>>,
    /// Inference only: the pre-quantization energy after controls.
    pub applied_energy: Option<Vec<f64>>,
}

/// The model: configuration plus weights.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub weights: ModelWeights,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let weights = ModelWeights::init(&cfg, seed)?;
        Ok(Model { cfg, weights })
    }

    /// Full forward pass: encoder, variance adaptor, mel decoder.
    ///
    /// Dropout is active only when `mode` is [`Mode::Train`] and an RNG is
    /// supplied; teacher-forced evaluation passes `None` and is bit-exactly
    /// deterministic.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        gw: &mut GraphWeights,
        phoneme_ids: &[usize],
        targets: Option<&VarianceTargets>,
        controls: &VarianceControls,
        spaces: &VarianceSpaces,
        mode: Mode,
        rng: Option<&mut ChaCha20Rng>,
    ) -> Result<Predictions> {
        if phoneme_ids.is_empty() {
            return Err(Error::Format("empty phoneme sequence".into()));
        }
        if mode == Mode::Train && targets.is_none() {
            return Err(Error::Config("train mode requires variance targets".into()));
        }
        let mut fallback = ChaCha20Rng::seed_from_u64(0);
        let (training, rng) = match (mode, rng) {
            (Mode::Train, Some(r)) => (true, r),
            _ => (false, &mut fallback),
        };
        let mask = vec![true; phoneme_ids.len()];
        let hidden = encode(tape, gw, &self.cfg, phoneme_ids, &mask, training, rng)?;
        let adapted = variance_adaptor(
            tape, gw, &self.cfg, hidden, targets, controls, spaces, mode, training, rng,
        )?;
        let frame_mask = vec![true; adapted.expanded_len];
        let mel = decode_mel(
            tape,
            gw,
            &self.cfg,
            adapted.hidden,
            &frame_mask,
            training,
            rng,
        )?;
        Ok(Predictions {
            mel,
            log_duration: adapted.log_duration,
            pitch_spec: adapted.pitch_spec,
            pitch_mean: adapted.pitch_mean,
            pitch_std: adapted.pitch_std,
            energy: adapted.energy,
            durations_used: adapted.durations_used,
            applied_pitch_hz: adapted.applied_pitch_hz,
            applied_energy: adapted.applied_energy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_parameter_count_near_reference() {
        let cfg = ModelConfig::base(76);
        let count = cfg.parameter_count() as f64;
        let reference = 27e6;
        let deviation = (count - reference).abs() / reference;
        assert!(
            deviation <= 0.15,
            "parameter count {count} deviates {deviation:.3} from {reference}"
        );
    }

    #[test]
    fn weights_init_is_deterministic_and_f32_exact() {
        let cfg = ModelConfig::tiny(8);
        let a = ModelWeights::init(&cfg, 42).unwrap();
        let b = ModelWeights::init(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = ModelWeights::init(&cfg, 43).unwrap();
        assert_ne!(a, c);
        for (_, t) in a.iter() {
            for v in t.data() {
                assert_eq!(*v, round_f32(*v));
            }
        }
    }

    #[test]
    fn instantiated_count_matches_shape_count() {
        let cfg = ModelConfig::tiny(8);
        let w = ModelWeights::init(&cfg, 1).unwrap();
        assert_eq!(w.parameter_count(), cfg.parameter_count());
    }

    #[test]
    fn quantizer_boundaries_exact() {
        let q = QuantizerSpec::energy(2.0, 10.0, 256).unwrap();
        assert_eq!(q.quantize(2.0).unwrap(), 0);
        assert_eq!(q.quantize(10.0).unwrap(), 255);
        assert_eq!(q.quantize(1.0).unwrap(), 0); // clamped below
        assert_eq!(q.quantize(11.0).unwrap(), 255); // clamped above
        let p = QuantizerSpec::pitch(70.0, 400.0, 256).unwrap();
        assert_eq!(p.quantize(70.0).unwrap(), 0);
        assert_eq!(p.quantize(400.0).unwrap(), 255);
    }

    #[test]
    fn pitch_geometric_midpoint_hits_center_bin() {
        let p = QuantizerSpec::pitch(70.0, 400.0, 256).unwrap();
        let mid = (70.0f64 * 400.0).sqrt();
        let bin = p.quantize(mid).unwrap();
        assert!(bin == 127 || bin == 128, "bin {bin}");
    }

    #[test]
    fn energy_arithmetic_midpoint_hits_center_bin() {
        let q = QuantizerSpec::energy(0.0, 8.0, 256).unwrap();
        let bin = q.quantize(4.0).unwrap();
        assert!(bin == 127 || bin == 128, "bin {bin}");
    }

    #[test]
    fn quantizer_monotone_and_surjective() {
        let q = QuantizerSpec::pitch(50.0, 500.0, 256).unwrap();
        let mut prev = 0;
        let mut seen = vec![false; 256];
        for i in 0..=25_600 {
            let x = 50.0 + (500.0 - 50.0) * i as f64 / 25_600.0;
            let bin = q.quantize(x).unwrap();
            assert!(bin >= prev, "not monotone at {x}");
            prev = bin;
            seen[bin] = true;
        }
        assert!(seen.iter().all(|s| *s), "sweep missed a bin");
    }

    #[test]
    fn pitch_edges_have_constant_ratio() {
        let p = QuantizerSpec::pitch(70.0, 400.0, 256).unwrap();
        let edges = p.edges();
        let ratio = edges[1] / edges[0];
        for w in edges.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() <= 1e-9);
        }
    }

    #[test]
    fn quantizer_rejects_non_finite_and_bad_ranges() {
        let q = QuantizerSpec::energy(0.0, 1.0, 256).unwrap();
        assert!(q.quantize(f64::NAN).is_err());
        assert!(QuantizerSpec::pitch(0.0, 10.0, 256).is_err());
        assert!(QuantizerSpec::energy(5.0, 5.0, 256).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::base(76);
        cfg.hidden = 255; // not divisible by heads
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::base(76);
        cfg.conv_kernels = (8, 1);
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::base(76).validate().is_ok());
    }
}
