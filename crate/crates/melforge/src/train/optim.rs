//! Adam with warmup-then-decay learning-rate scheduling and global-norm
//! gradient clipping. Parameter updates are computed in f64 and rounded to
//! f32-representable values, matching the checkpoint payload precision.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::tensor::Tensor;
use crate::util::round_f32;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    pub d_model: usize,
    pub grad_clip: Option<f64>,
}

impl OptimizerConfig {
    pub fn for_model_dim(d_model: usize) -> Self {
        OptimizerConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            warmup_steps: 4000,
            d_model,
            grad_clip: Some(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::Config(format!(
                "betas must lie in (0,1), got {} / {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.warmup_steps == 0 || self.d_model == 0 {
            return Err(Error::Config(
                "warmup_steps and d_model must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Warmup schedule: `d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
/// Linear ramp to the peak at `step == warmup`, then inverse-sqrt decay.
pub fn noam_lr(step: u64, cfg: &OptimizerConfig) -> Result<f64> {
    if step == 0 {
        return Err(Error::Config("schedule is defined for steps >= 1".into()));
    }
    let s = step as f64;
    let w = cfg.warmup_steps as f64;
    Ok((cfg.d_model as f64).powf(-0.5) * (s.powf(-0.5)).min(s * w.powf(-1.5)))
}

/// First/second moment estimates per parameter, f32-representable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn for_weights(weights: &ModelWeights) -> Self {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, t) in weights.iter() {
            m.insert(name.to_string(), vec![0.0; t.len()]);
            v.insert(name.to_string(), vec![0.0; t.len()]);
        }
        AdamState { m, v }
    }
}

/// One bias-corrected Adam update over every parameter. `step` is 1-based.
/// Non-finite gradients abort loudly; the optional global-norm clip rescales
/// all gradients together before the update.
pub fn adam_step(
    weights: &mut ModelWeights,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    step: u64,
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if step == 0 {
        return Err(Error::Config("adam step counter is 1-based".into()));
    }
    let mut sq_norm = 0.0;
    for (name, g) in grads {
        for v in g.data() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in {name:?}; aborting training"
                )));
            }
            sq_norm += v * v;
        }
    }
    let clip_scale = match cfg.grad_clip {
        Some(clip) if sq_norm.sqrt() > clip => clip / sq_norm.sqrt(),
        _ => 1.0,
    };
    let bias1 = 1.0 - cfg.beta1.powi(step as i32);
    let bias2 = 1.0 - cfg.beta2.powi(step as i32);

    let names: Vec<String> = weights.names().map(str::to_string).collect();
    for name in names {
        let g = grads
            .get(&name)
            .ok_or_else(|| Error::Index(format!("missing gradient for {name:?}")))?;
        let m = state
            .m
            .get_mut(&name)
            .ok_or_else(|| Error::Index(format!("missing first moment for {name:?}")))?;
        let v = state
            .v
            .get_mut(&name)
            .ok_or_else(|| Error::Index(format!("missing second moment for {name:?}")))?;
        let current = weights.get(&name)?;
        let mut updated = current.data().to_vec();
        for i in 0..updated.len() {
            let gi = g.data()[i] * clip_scale;
            m[i] = round_f32(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi);
            v[i] = round_f32(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi);
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            updated[i] = round_f32(updated[i] - lr * m_hat / (v_hat.sqrt() + cfg.eps));
        }
        let shape = current.shape().to_vec();
        weights.set(&name, Tensor::new(shape, updated)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn cfg() -> OptimizerConfig {
        OptimizerConfig::for_model_dim(256)
    }

    #[test]
    fn noam_values_match_arithmetic() {
        let c = cfg();
        // step == warmup: both branch arguments coincide
        let at_warmup = noam_lr(4000, &c).unwrap();
        let expect = 0.0625 * (4000f64).powf(-0.5);
        assert!((at_warmup - expect).abs() < 1e-12);
        assert!((at_warmup - 9.8821e-4).abs() < 1e-7);
        // step 1
        let first = noam_lr(1, &c).unwrap();
        assert!((first - 0.0625 * 4000f64.powf(-1.5)).abs() < 1e-15);
        assert!((first - 2.4705e-7).abs() < 1e-11);
        assert!(noam_lr(0, &c).is_err());
    }

    #[test]
    fn noam_rises_then_falls_continuously() {
        let c = cfg();
        let mut prev = 0.0;
        for step in 1..4000 {
            let lr = noam_lr(step, &c).unwrap();
            assert!(lr > prev, "not increasing at {step}");
            prev = lr;
        }
        let peak = noam_lr(4000, &c).unwrap();
        // continuity at the corner
        assert!((noam_lr(3999, &c).unwrap() - peak).abs() / peak < 1e-3);
        let mut prev = peak;
        for step in 4001..8000 {
            let lr = noam_lr(step, &c).unwrap();
            assert!(lr < prev, "not decreasing at {step}");
            prev = lr;
        }
    }

    fn scalar_weights(value: f64) -> ModelWeights {
        use std::collections::BTreeMap;
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::scalar(value));
        ModelWeights::from_params(params)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut w = scalar_weights(1.5);
        let mut state = AdamState::for_weights(&w);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(0.0));
        adam_step(&mut w, &grads, &mut state, 1, 1e-3, &cfg()).unwrap();
        assert_eq!(w.get("w").unwrap().item(), 1.5);
        assert_eq!(state.m["w"][0], 0.0);
        assert_eq!(state.v["w"][0], 0.0);
    }

    #[test]
    fn zero_gradient_decays_accumulated_moments() {
        let mut w = scalar_weights(1.5);
        let mut state = AdamState::for_weights(&w);
        state.m.insert("w".into(), vec![0.25]);
        state.v.insert("w".into(), vec![0.09]);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(0.0));
        adam_step(&mut w, &grads, &mut state, 2, 1e-3, &cfg()).unwrap();
        assert!((state.m["w"][0] - round_f32(0.9 * 0.25)).abs() < 1e-12);
        assert!((state.v["w"][0] - round_f32(0.98 * 0.09)).abs() < 1e-12);
    }

    #[test]
    fn first_step_approximates_signed_lr() {
        let mut c = cfg();
        c.grad_clip = None;
        c.eps = 1e-12;
        let mut w = scalar_weights(0.0);
        let mut state = AdamState::for_weights(&w);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(0.37));
        adam_step(&mut w, &grads, &mut state, 1, 1e-3, &c).unwrap();
        // update ~= lr * sign(g) as eps -> 0
        assert!((w.get("w").unwrap().item() + 1e-3).abs() < 1e-6);
    }

    #[test]
    fn two_steps_match_hand_stepped_oracle() {
        let mut c = cfg();
        c.grad_clip = None;
        let lr = 0.01;
        let mut w = scalar_weights(2.0);
        let mut state = AdamState::for_weights(&w);
        // quadratic loss f(w) = w^2, grad = 2w
        let (mut om, mut ov, mut ow) = (0.0f64, 0.0f64, 2.0f64);
        for step in 1..=2u64 {
            let g = 2.0 * w.get("w").unwrap().item();
            let mut grads = BTreeMap::new();
            grads.insert("w".to_string(), Tensor::scalar(g));
            adam_step(&mut w, &grads, &mut state, step, lr, &c).unwrap();

            // oracle replicates the documented contract, including the
            // f32 rounding of persistent state
            let og = 2.0 * ow;
            om = round_f32(c.beta1 * om + (1.0 - c.beta1) * og);
            ov = round_f32(c.beta2 * ov + (1.0 - c.beta2) * og * og);
            let m_hat = om / (1.0 - c.beta1.powi(step as i32));
            let v_hat = ov / (1.0 - c.beta2.powi(step as i32));
            ow = round_f32(ow - lr * m_hat / (v_hat.sqrt() + c.eps));
            assert!(
                (w.get("w").unwrap().item() - ow).abs() <= 1e-12,
                "step {step}: {} vs {ow}",
                w.get("w").unwrap().item()
            );
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut w = scalar_weights(1.0);
        let mut state = AdamState::for_weights(&w);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(f64::NAN));
        assert!(adam_step(&mut w, &grads, &mut state, 1, 1e-3, &cfg()).is_err());
    }

    #[test]
    fn global_norm_clip_rescales() {
        let mut c = cfg();
        c.grad_clip = Some(1.0);
        c.eps = 1e-12;
        let mut w = scalar_weights(0.0);
        let mut state = AdamState::for_weights(&w);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(100.0));
        adam_step(&mut w, &grads, &mut state, 1, 1e-3, &c).unwrap();
        // post-clip gradient is exactly 1.0, so the first-step update is
        // lr * 1/(1+eps)
        assert!((w.get("w").unwrap().item() + 1e-3).abs() < 1e-6);
        assert!((state.m["w"][0] - round_f32(0.1)).abs() < 1e-9);
    }

    #[test]
    fn optimizer_config_from_model() {
        let model_cfg = ModelConfig::base(76);
        let c = OptimizerConfig::for_model_dim(model_cfg.hidden);
        assert_eq!(c.d_model, 256);
        assert!(c.validate().is_ok());
        let bad = OptimizerConfig {
            beta1: 1.0,
            ..c.clone()
        };
        assert!(bad.validate().is_err());
    }
}
