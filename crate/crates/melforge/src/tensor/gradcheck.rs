//! Central finite-difference verification for tape gradients.
//!
//! Every differentiable primitive and every composed network in this crate
//! is certified against this module: build the same scalar-valued graph
//! twice per perturbed element and compare the analytic gradient to the
//! two-sided difference quotient.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Default perturbation for 64-bit checks.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Relative error `|analytic - numeric| / max(|analytic|, 1e-8)`, the
/// acceptance definition.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1e-8)
}

/// Result of one finite-difference sweep.
#[derive(Debug)]
pub struct GradCheck {
    /// Worst relative error over all checked elements.
    pub max_relative_error: f64,
    /// Flat location of the worst element as (input index, element index).
    pub worst: (usize, usize),
}

/// Compare analytic gradients of `build` (a scalar-valued graph over the
/// given inputs) against central finite differences with step `h`.
///
/// `build` must be deterministic: it is re-run twice per input element.
pub fn check<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = GradCheck {
        max_relative_error: 0.0,
        worst: (0, 0),
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).expect("leaf gradient present");
        for e in 0..input.len() {
            let orig = input.data()[e];

            let mut plus = input.data().to_vec();
            plus[e] = orig + h;
            work[i] = Tensor::new(input.shape().to_vec(), plus)?;
            let f_plus = eval(&work)?;

            let mut minus = input.data().to_vec();
            minus[e] = orig - h;
            work[i] = Tensor::new(input.shape().to_vec(), minus)?;
            let f_minus = eval(&work)?;

            work[i] = input.clone();

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let rel = relative_error(analytic.data()[e], numeric);
            if rel > worst.max_relative_error {
                worst.max_relative_error = rel;
                worst.worst = (i, e);
            }
        }
    }
    Ok(worst)
}

/// Deterministic pseudo-random tensor for test fixtures, uniform in
/// `[-scale, scale]`, seeded so oracles are reproducible.
pub fn random_tensor(shape: Vec<usize>, scale: f64, seed: u64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(-scale..scale))
        .collect::<Vec<f64>>();
    Tensor::new(shape, data).expect("random tensor shape")
}
