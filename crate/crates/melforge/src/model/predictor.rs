//! Variance predictors: the shared 2-layer convolutional trunk with ReLU,
//! layer norm and dropout after each convolution, a linear output head, and
//! the pitch predictor's extra global mean/std head.

use rand_chacha::ChaCha20Rng;

use super::{GraphWeights, ModelConfig, LN_EPS};
use crate::error::Result;
use crate::tensor::{PadMode, Tape, Var};

/// Floor added to the softplus std head so the predicted deviation stays
/// strictly positive.
const STD_FLOOR: f64 = 1e-4;

/// Conv(k) -> ReLU -> LN -> dropout, twice, then linear to `out_dim`.
/// Returns `(output [L, out_dim], trunk [L, filter])`; the trunk is the
/// post-convolutional hidden sequence the pitch statistics head averages.
///
/// Predictor convolutions use replicate padding so constant inputs stay
/// constant across time regardless of sequence length.
pub fn variance_predictor(
    tape: &mut Tape,
    gw: &mut GraphWeights,
    cfg: &ModelConfig,
    x: Var,
    prefix: &str,
    training: bool,
    rng: &mut ChaCha20Rng,
) -> Result<(Var, Var)> {
    let w1 = gw.bind(tape, &format!("{prefix}.conv1.w"))?;
    let b1 = gw.bind(tape, &format!("{prefix}.conv1.b"))?;
    let c1 = tape.conv1d(x, w1, b1, PadMode::Replicate)?;
    let r1 = tape.relu(c1);
    let g1 = gw.bind(tape, &format!("{prefix}.norm1.gamma"))?;
    let be1 = gw.bind(tape, &format!("{prefix}.norm1.beta"))?;
    let n1 = tape.layer_norm(r1, g1, be1, LN_EPS)?;
    let d1 = tape.dropout(n1, cfg.predictor_dropout, training, rng)?;

    let w2 = gw.bind(tape, &format!("{prefix}.conv2.w"))?;
    let b2 = gw.bind(tape, &format!("{prefix}.conv2.b"))?;
    let c2 = tape.conv1d(d1, w2, b2, PadMode::Replicate)?;
    let r2 = tape.relu(c2);
    let g2 = gw.bind(tape, &format!("{prefix}.norm2.gamma"))?;
    let be2 = gw.bind(tape, &format!("{prefix}.norm2.beta"))?;
    let n2 = tape.layer_norm(r2, g2, be2, LN_EPS)?;
    let trunk = tape.dropout(n2, cfg.predictor_dropout, training, rng)?;

    let wo = gw.bind(tape, &format!("{prefix}.out.w"))?;
    let bo = gw.bind(tape, &format!("{prefix}.out.b"))?;
    let out = tape.matmul(trunk, wo)?;
    let out = tape.bias_add(out, bo)?;
    Ok((out, trunk))
}

/// Pitch predictor output: per-frame spectrogram components plus the global
/// contour statistics.
pub struct PitchPrediction {
    /// `[T, cwt_scales]` wavelet components.
    pub spec: Var,
    /// `[1, 1]` predicted contour mean (log domain).
    pub mean: Var,
    /// `[1, 1]` predicted contour std, strictly positive.
    pub std: Var,
}

/// The per-frame spectrogram head plus the global head: the trunk's time
/// average projected to mean and (softplus-positive) std.
pub fn pitch_predictor(
    tape: &mut Tape,
    gw: &mut GraphWeights,
    cfg: &ModelConfig,
    x: Var,
    training: bool,
    rng: &mut ChaCha20Rng,
) -> Result<PitchPrediction> {
    let (spec, trunk) =
        variance_predictor(tape, gw, cfg, x, "pitch_predictor", training, rng)?;
    let global = tape.reduce_mean(trunk, 0)?;
    let wm = gw.bind(tape, "pitch_predictor.stats_mean.w")?;
    let bm = gw.bind(tape, "pitch_predictor.stats_mean.b")?;
    let mean = tape.matmul(global, wm)?;
    let mean = tape.bias_add(mean, bm)?;
    let ws = gw.bind(tape, "pitch_predictor.stats_std.w")?;
    let bs = gw.bind(tape, "pitch_predictor.stats_std.b")?;
    let std_raw = tape.matmul(global, ws)?;
    let std_raw = tape.bias_add(std_raw, bs)?;
    let std_pos = tape.softplus(std_raw);
    let std = tape.add_scalar(std_pos, STD_FLOOR);
    Ok(PitchPrediction { spec, mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelWeights};
    use crate::tensor::gradcheck::{self, random_tensor};
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(21)
    }

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::tiny(6);
        cfg.hidden = 12;
        cfg.predictor_filter = 10;
        cfg
    }

    #[test]
    fn output_shape_and_eval_determinism() {
        let cfg = tiny_cfg();
        let weights = ModelWeights::init(&cfg, 31).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let mut gw = GraphWeights::new(&weights, false);
            let x = tape.constant(random_tensor(vec![9, cfg.hidden], 1.0, 90));
            let (out, _) = variance_predictor(
                &mut tape,
                &mut gw,
                &cfg,
                x,
                "duration_predictor",
                false,
                &mut rng(),
            )
            .unwrap();
            assert_eq!(tape.value(out).shape(), &[9, 1]);
            tape.value(out).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pitch_predictor_shapes() {
        let cfg = tiny_cfg();
        let weights = ModelWeights::init(&cfg, 32).unwrap();
        let mut tape = Tape::new();
        let mut gw = GraphWeights::new(&weights, false);
        let x = tape.constant(random_tensor(vec![7, cfg.hidden], 1.0, 91));
        let p = pitch_predictor(&mut tape, &mut gw, &cfg, x, false, &mut rng()).unwrap();
        assert_eq!(tape.value(p.spec).shape(), &[7, cfg.cwt_scales]);
        assert_eq!(tape.value(p.mean).shape(), &[1, 1]);
        assert_eq!(tape.value(p.std).shape(), &[1, 1]);
        assert!(tape.value(p.std).item() > 0.0);
    }

    #[test]
    fn constant_hidden_stats_invariant_to_length() {
        // Replicate padding keeps a constant input constant through the
        // convs, so the time average (and thus mean/std) cannot depend on T.
        let cfg = tiny_cfg();
        let weights = ModelWeights::init(&cfg, 33).unwrap();
        let stats_for = |t_len: usize| {
            let mut tape = Tape::new();
            let mut gw = GraphWeights::new(&weights, false);
            let row: Vec<f64> = (0..cfg.hidden).map(|i| 0.3 + 0.1 * i as f64).collect();
            let data: Vec<f64> = (0..t_len).flat_map(|_| row.clone()).collect();
            let x = tape.constant(Tensor::new(vec![t_len, cfg.hidden], data).unwrap());
            let p = pitch_predictor(&mut tape, &mut gw, &cfg, x, false, &mut rng()).unwrap();
            (tape.value(p.mean).item(), tape.value(p.std).item())
        };
        let (m5, s5) = stats_for(5);
        let (m50, s50) = stats_for(50);
        assert!((m5 - m50).abs() <= 1e-9, "{m5} vs {m50}");
        assert!((s5 - s50).abs() <= 1e-9, "{s5} vs {s50}");
    }

    #[test]
    fn predictor_gradient_matches_finite_differences() {
        let cfg = tiny_cfg();
        let weights = ModelWeights::init(&cfg, 34).unwrap();
        let x = random_tensor(vec![5, cfg.hidden], 1.0, 92);
        let check = gradcheck::check(&[x], gradcheck::DEFAULT_STEP, |tape, vars| {
            let mut gw = GraphWeights::new(&weights, false);
            let (out, _) = variance_predictor(
                tape,
                &mut gw,
                &cfg,
                vars[0],
                "energy_predictor",
                false,
                &mut ChaCha20Rng::seed_from_u64(0),
            )?;
            let sq = tape.mul(out, out)?;
            Ok(tape.sum_all(sq))
        })
        .unwrap();
        assert!(
            check.max_relative_error <= 1e-4,
            "max rel err {}",
            check.max_relative_error
        );
    }

    #[test]
    fn pitch_heads_gradient_matches_finite_differences() {
        let cfg = tiny_cfg();
        let weights = ModelWeights::init(&cfg, 35).unwrap();
        let x = random_tensor(vec![4, cfg.hidden], 1.0, 93);
        let check = gradcheck::check(&[x], gradcheck::DEFAULT_STEP, |tape, vars| {
            let mut gw = GraphWeights::new(&weights, false);
            let p = pitch_predictor(
                tape,
                &mut gw,
                &cfg,
                vars[0],
                false,
                &mut ChaCha20Rng::seed_from_u64(0),
            )?;
            let spec_sq = tape.mul(p.spec, p.spec)?;
            let spec_term = tape.sum_all(spec_sq);
            let stats = tape.add(p.mean, p.std)?;
            let stats_term = tape.sum_all(stats);
            let total = tape.add(spec_term, stats_term)?;
            Ok(total)
        })
        .unwrap();
        assert!(
            check.max_relative_error <= 1e-4,
            "max rel err {}",
            check.max_relative_error
        );
    }
}
