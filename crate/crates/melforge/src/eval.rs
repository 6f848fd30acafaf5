//! Objective prosody metrics: pitch-distribution moments, dynamic time
//! warping distance between contours, energy MAE, and corpus-level
//! aggregation into a report.

use std::fmt::Write as _;

use crate::dsp::EnergySequence;
use crate::error::{Error, Result};

/// Standard deviation, skewness and excess kurtosis of a pitch
/// distribution. Fields are absent when the sample is too small (or has
/// zero variance) to define them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PitchMoments {
    pub sigma: Option<f64>,
    pub gamma: Option<f64>,
    pub kappa: Option<f64>,
}

/// Sample moments: n-1 std, adjusted Fisher-Pearson skewness, excess
/// kurtosis with the small-sample correction. Needs 2/3/4 values
/// respectively; degenerate cases leave fields absent rather than zero.
pub fn pitch_moments(values: &[f64]) -> PitchMoments {
    let n = values.len();
    let mut out = PitchMoments::default();
    if n < 2 {
        return out;
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let sample_var = m2 * nf / (nf - 1.0);
    out.sigma = Some(sample_var.sqrt());
    if m2 <= 0.0 {
        return out;
    }
    if n >= 3 {
        let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf;
        let g1 = m3 / m2.powf(1.5);
        out.gamma = Some(g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0));
    }
    if n >= 4 {
        let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
        let g2 = m4 / (m2 * m2) - 3.0;
        out.kappa = Some(((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0)));
    }
    out
}

/// Moments of the log-scaled distribution; a sensitivity companion to
/// [`pitch_moments`], since the domain convention (Hz vs log-Hz) is not
/// universal across toolkits. Requires strictly positive values.
pub fn pitch_moments_log_hz(values_hz: &[f64]) -> Result<PitchMoments> {
    if let Some(bad) = values_hz.iter().find(|v| **v <= 0.0) {
        return Err(Error::Numeric(format!(
            "log-domain moments need positive frequencies, got {bad}"
        )));
    }
    let logs: Vec<f64> = values_hz.iter().map(|v| v.ln()).collect();
    Ok(pitch_moments(&logs))
}

/// Classic dynamic time warping with |a_i - b_j| local cost and steps
/// {down, right, diagonal}, reported as the minimum total path cost divided
/// by the path length. Among cost-optimal paths the shortest is used for
/// the normalization, which makes the value well-defined and symmetric.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    let (total, len) = dtw_cost_and_len(a, b)?;
    Ok(total / len as f64)
}

/// Total optimal cost and the minimum path length achieving it.
pub fn dtw_cost_and_len(a: &[f64], b: &[f64]) -> Result<(f64, usize)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Format("DTW inputs must be non-empty".into()));
    }
    let (n, m) = (a.len(), b.len());
    let idx = |i: usize, j: usize| i * m + j;

    // pass 1: optimal accumulated cost
    let mut cost = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let local = (a[i] - b[j]).abs();
            if i == 0 && j == 0 {
                cost[0] = local;
                continue;
            }
            let mut best = f64::INFINITY;
            if i > 0 {
                best = best.min(cost[idx(i - 1, j)]);
            }
            if j > 0 {
                best = best.min(cost[idx(i, j - 1)]);
            }
            if i > 0 && j > 0 {
                best = best.min(cost[idx(i - 1, j - 1)]);
            }
            cost[idx(i, j)] = best + local;
        }
    }

    // pass 2: minimum path length over predecessors that achieve the optimum
    let mut min_len = vec![usize::MAX; n * m];
    min_len[0] = 1;
    for i in 0..n {
        for j in 0..m {
            if i == 0 && j == 0 {
                continue;
            }
            let local = (a[i] - b[j]).abs();
            let here = cost[idx(i, j)];
            let mut best = usize::MAX;
            let consider = |pi: usize, pj: usize, best: &mut usize| {
                if cost[idx(pi, pj)] + local == here {
                    *best = (*best).min(min_len[idx(pi, pj)]);
                }
            };
            if i > 0 {
                consider(i - 1, j, &mut best);
            }
            if j > 0 {
                consider(i, j - 1, &mut best);
            }
            if i > 0 && j > 0 {
                consider(i - 1, j - 1, &mut best);
            }
            min_len[idx(i, j)] = best + 1;
        }
    }
    Ok((cost[idx(n - 1, m - 1)], min_len[idx(n - 1, m - 1)]))
}

/// Mean absolute error between two equal-length energy sequences. Plain
/// MAE; normalization policy belongs to the caller (see
/// [`evaluate_corpus`], which min-max-normalizes by the reference range).
pub fn energy_mae(pred: &EnergySequence, reference: &EnergySequence) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::Shape(format!(
            "energy length mismatch: {} vs {}",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Format("energy sequences are empty".into()));
    }
    let sum: f64 = pred
        .energy
        .iter()
        .zip(&reference.energy)
        .map(|(p, r)| (p - r).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Mean/variance-normalize a contour for the DTW local cost.
fn normalize_contour(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-9);
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Min-max map onto [0,1] using the reference range; identity when the
/// reference is constant.
fn minmax_by_reference(values: &[f64], reference: &[f64]) -> Vec<f64> {
    let lo = reference.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return values.to_vec();
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Per-utterance inputs to corpus evaluation: the synthesized features and
/// their ground-truth counterparts.
#[derive(Debug, Clone)]
pub struct EvalUtterance {
    pub id: String,
    /// Voiced F0 values (Hz) of the synthesized audio or predicted contour.
    pub synth_pitch: Vec<f64>,
    /// Voiced F0 values (Hz) of the reference.
    pub reference_pitch: Vec<f64>,
    /// Frame-level energy from ground-truth-duration synthesis.
    pub synth_energy: EnergySequence,
    /// Frame-level reference energy (same length).
    pub reference_energy: EnergySequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceReport {
    pub id: String,
    pub synth_moments: PitchMoments,
    pub reference_moments: PitchMoments,
    pub dtw: f64,
    pub energy_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub utterances: Vec<UtteranceReport>,
    /// Moments of all voiced synthesized frames pooled across the corpus.
    pub pooled_synth_moments: PitchMoments,
    pub pooled_reference_moments: PitchMoments,
    pub mean_dtw: f64,
    pub mean_energy_mae: f64,
}

/// Aggregate the three metrics over matched utterance pairs. Pitch moments
/// are computed on voiced Hz values (per utterance and pooled), DTW on
/// per-utterance mean/variance-normalized contours, and energy MAE on
/// energies min-max-normalized by the reference range.
pub fn evaluate_corpus(utterances: &[EvalUtterance]) -> Result<EvalReport> {
    if utterances.is_empty() {
        return Err(Error::Format("nothing to evaluate".into()));
    }
    let mut reports = Vec::with_capacity(utterances.len());
    let mut pooled_synth = Vec::new();
    let mut pooled_ref = Vec::new();
    for u in utterances {
        if u.synth_pitch.is_empty() || u.reference_pitch.is_empty() {
            return Err(Error::Format(format!(
                "utterance {}: empty pitch sequence",
                u.id
            )));
        }
        let dtw = dtw_distance(
            &normalize_contour(&u.synth_pitch),
            &normalize_contour(&u.reference_pitch),
        )?;
        let pred_norm = minmax_by_reference(&u.synth_energy.energy, &u.reference_energy.energy);
        let ref_norm =
            minmax_by_reference(&u.reference_energy.energy, &u.reference_energy.energy);
        let mae = energy_mae(
            &EnergySequence { energy: pred_norm },
            &EnergySequence { energy: ref_norm },
        )?;
        pooled_synth.extend_from_slice(&u.synth_pitch);
        pooled_ref.extend_from_slice(&u.reference_pitch);
        reports.push(UtteranceReport {
            id: u.id.clone(),
            synth_moments: pitch_moments(&u.synth_pitch),
            reference_moments: pitch_moments(&u.reference_pitch),
            dtw,
            energy_mae: mae,
        });
    }
    let n = reports.len() as f64;
    Ok(EvalReport {
        pooled_synth_moments: pitch_moments(&pooled_synth),
        pooled_reference_moments: pitch_moments(&pooled_ref),
        mean_dtw: reports.iter().map(|r| r.dtw).sum::<f64>() / n,
        mean_energy_mae: reports.iter().map(|r| r.energy_mae).sum::<f64>() / n,
        utterances: reports,
    })
}

fn fmt_moment(m: Option<f64>) -> String {
    match m {
        Some(v) => format!("{v:.4}"),
        None => "-".to_string(),
    }
}

impl EvalReport {
    /// CSV rows: one per utterance plus a pooled/mean summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "id,synth_sigma,synth_gamma,synth_kappa,ref_sigma,ref_gamma,ref_kappa,dtw,energy_mae\n",
        );
        let row = |id: &str, s: &PitchMoments, r: &PitchMoments, dtw: f64, mae: f64| {
            format!(
                "{id},{},{},{},{},{},{},{dtw:.6},{mae:.6}\n",
                fmt_moment(s.sigma),
                fmt_moment(s.gamma),
                fmt_moment(s.kappa),
                fmt_moment(r.sigma),
                fmt_moment(r.gamma),
                fmt_moment(r.kappa),
            )
        };
        for u in &self.utterances {
            out.push_str(&row(
                &u.id,
                &u.synth_moments,
                &u.reference_moments,
                u.dtw,
                u.energy_mae,
            ));
        }
        out.push_str(&row(
            "POOLED/MEAN",
            &self.pooled_synth_moments,
            &self.pooled_reference_moments,
            self.mean_dtw,
            self.mean_energy_mae,
        ));
        out
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>9} {:>9} {:>9} {:>9} {:>11}",
            "utterance", "sigma", "gamma", "kappa", "dtw", "energy_mae"
        );
        for u in &self.utterances {
            let _ = writeln!(
                out,
                "{:<16} {:>9} {:>9} {:>9} {:>9.4} {:>11.4}",
                u.id,
                fmt_moment(u.synth_moments.sigma),
                fmt_moment(u.synth_moments.gamma),
                fmt_moment(u.synth_moments.kappa),
                u.dtw,
                u.energy_mae
            );
        }
        let _ = writeln!(
            out,
            "{:<16} {:>9} {:>9} {:>9} {:>9.4} {:>11.4}",
            "POOLED/MEAN",
            fmt_moment(self.pooled_synth_moments.sigma),
            fmt_moment(self.pooled_synth_moments.gamma),
            fmt_moment(self.pooled_synth_moments.kappa),
            self.mean_dtw,
            self.mean_energy_mae
        );
        let _ = writeln!(
            out,
            "{:<16} {:>9} {:>9} {:>9}",
            "REFERENCE",
            fmt_moment(self.pooled_reference_moments.sigma),
            fmt_moment(self.pooled_reference_moments.gamma),
            fmt_moment(self.pooled_reference_moments.kappa),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sequence_has_zero_sigma_absent_higher_moments() {
        let m = pitch_moments(&[5.0; 10]);
        assert_eq!(m.sigma, Some(0.0));
        assert_eq!(m.gamma, None);
        assert_eq!(m.kappa, None);
    }

    #[test]
    fn symmetric_sequence_has_zero_skewness() {
        let m = pitch_moments(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(m.gamma.unwrap().abs() < 1e-12);
    }

    #[test]
    fn insufficient_samples_leave_fields_absent() {
        assert_eq!(pitch_moments(&[1.0]).sigma, None);
        let two = pitch_moments(&[1.0, 2.0]);
        assert!(two.sigma.is_some());
        assert_eq!(two.gamma, None);
        let three = pitch_moments(&[1.0, 2.0, 4.0]);
        assert!(three.gamma.is_some());
        assert_eq!(three.kappa, None);
    }

    /// Brute-force oracle with explicit sums, kept independent of the
    /// implementation above.
    fn moments_oracle(x: &[f64]) -> (f64, f64, f64) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let s2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let g1 = m3 / m2.powf(1.5);
        let skew = (n * (n - 1.0)).sqrt() / (n - 2.0) * g1;
        let g2 = m4 / (m2 * m2) - 3.0;
        let kurt = (n - 1.0) / ((n - 2.0) * (n - 3.0)) * ((n + 1.0) * g2 + 6.0);
        (s2.sqrt(), skew, kurt)
    }

    #[test]
    fn twenty_sample_fixture_matches_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(17);
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(80.0..300.0)).collect();
        let m = pitch_moments(&x);
        let (s, g, k) = moments_oracle(&x);
        assert!((m.sigma.unwrap() - s).abs() <= 1e-9);
        assert!((m.gamma.unwrap() - g).abs() <= 1e-9);
        assert!((m.kappa.unwrap() - k).abs() <= 1e-9);
    }

    #[test]
    fn log_domain_moments_differ_but_stay_close_for_narrow_ranges() {
        let hz = vec![180.0, 200.0, 210.0, 190.0, 205.0, 185.0];
        let linear = pitch_moments(&hz);
        let logged = pitch_moments_log_hz(&hz).unwrap();
        // different domains, same shape character for a narrow distribution
        assert!(logged.sigma.unwrap() < linear.sigma.unwrap());
        assert!((logged.gamma.unwrap() - linear.gamma.unwrap()).abs() < 0.2);
        assert!(pitch_moments_log_hz(&[100.0, 0.0]).is_err());
    }

    #[test]
    fn moments_translation_and_scale_behavior() {
        let x = vec![3.0, 9.0, 1.0, 4.5, 7.25, 2.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 100.0).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * -2.5).collect();
        let (mx, ms, mc) = (
            pitch_moments(&x),
            pitch_moments(&shifted),
            pitch_moments(&scaled),
        );
        assert!((mx.gamma.unwrap() - ms.gamma.unwrap()).abs() < 1e-9);
        assert!((mx.kappa.unwrap() - ms.kappa.unwrap()).abs() < 1e-9);
        assert!((mc.sigma.unwrap() - 2.5 * mx.sigma.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn dtw_identity_and_single_cell() {
        let a = vec![1.0, 4.0, 2.0, 8.0];
        assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(dtw_distance(&[3.0], &[7.5]).unwrap(), 4.5);
        assert!(dtw_distance(&[], &[1.0]).is_err());
    }

    /// Exhaustive enumeration of monotone warping paths.
    fn dtw_brute(a: &[f64], b: &[f64]) -> (f64, usize) {
        fn walk(
            a: &[f64],
            b: &[f64],
            i: usize,
            j: usize,
            cost: f64,
            len: usize,
            best: &mut (f64, usize),
        ) {
            let cost = cost + (a[i] - b[j]).abs();
            let len = len + 1;
            if i == a.len() - 1 && j == b.len() - 1 {
                if cost < best.0 || (cost == best.0 && len < best.1) {
                    *best = (cost, len);
                }
                return;
            }
            if i + 1 < a.len() {
                walk(a, b, i + 1, j, cost, len, best);
            }
            if j + 1 < b.len() {
                walk(a, b, i, j + 1, cost, len, best);
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                walk(a, b, i + 1, j + 1, cost, len, best);
            }
        }
        let mut best = (f64::INFINITY, usize::MAX);
        walk(a, b, 0, 0, 0.0, 0, &mut best);
        best
    }

    #[test]
    fn dtw_matches_exhaustive_enumeration() {
        let a = vec![1.0, 2.0, 3.0];
        let b = vec![1.0, 3.0];
        let (cost, len) = dtw_cost_and_len(&a, &b).unwrap();
        let (bcost, blen) = dtw_brute(&a, &b);
        assert_eq!(cost, bcost);
        assert_eq!(len, blen);
    }

    proptest::proptest! {
        #[test]
        fn dtw_equals_brute_force_on_short_integer_sequences(
            a in proptest::collection::vec(0i32..12, 1..6),
            b in proptest::collection::vec(0i32..12, 1..6),
        ) {
            let af: Vec<f64> = a.iter().map(|v| *v as f64).collect();
            let bf: Vec<f64> = b.iter().map(|v| *v as f64).collect();
            let (cost, len) = dtw_cost_and_len(&af, &bf).unwrap();
            let (bcost, blen) = dtw_brute(&af, &bf);
            proptest::prop_assert_eq!(cost, bcost);
            proptest::prop_assert_eq!(len, blen);
            // symmetry for this cost/step set
            let (rcost, rlen) = dtw_cost_and_len(&bf, &af).unwrap();
            proptest::prop_assert_eq!(cost, rcost);
            proptest::prop_assert_eq!(len, rlen);
        }
    }

    #[test]
    fn energy_mae_cases() {
        let a = EnergySequence {
            energy: vec![1.0, 2.0, 3.0],
        };
        assert_eq!(energy_mae(&a, &a).unwrap(), 0.0);
        let b = EnergySequence {
            energy: vec![1.5, 2.5, 3.5],
        };
        assert!((energy_mae(&b, &a).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(energy_mae(&a, &b).unwrap(), energy_mae(&b, &a).unwrap());
        let short = EnergySequence { energy: vec![1.0] };
        assert!(energy_mae(&a, &short).is_err());

        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(23);
        let p: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..5.0)).collect();
        let q: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..5.0)).collect();
        let want = p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>() / 10.0;
        let got = energy_mae(
            &EnergySequence { energy: p },
            &EnergySequence { energy: q },
        )
        .unwrap();
        assert!((got - want).abs() <= 1e-12);
    }

    fn eval_fixture(id: &str, shift: f64) -> EvalUtterance {
        let base: Vec<f64> = (0..30)
            .map(|i| 150.0 + 40.0 * ((i as f64) * 0.4).sin())
            .collect();
        EvalUtterance {
            id: id.into(),
            synth_pitch: base.iter().map(|v| v + shift).collect(),
            reference_pitch: base.clone(),
            synth_energy: EnergySequence {
                energy: (0..30).map(|i| 1.0 + 0.1 * i as f64 + shift * 0.01).collect(),
            },
            reference_energy: EnergySequence {
                energy: (0..30).map(|i| 1.0 + 0.1 * i as f64).collect(),
            },
        }
    }

    #[test]
    fn self_evaluation_is_zero() {
        let report = evaluate_corpus(&[eval_fixture("a", 0.0)]).unwrap();
        assert_eq!(report.utterances[0].dtw, 0.0);
        assert_eq!(report.utterances[0].energy_mae, 0.0);
        assert_eq!(
            report.utterances[0].synth_moments,
            report.utterances[0].reference_moments
        );
    }

    #[test]
    fn single_utterance_report_equals_its_metrics() {
        let report = evaluate_corpus(&[eval_fixture("solo", 5.0)]).unwrap();
        assert_eq!(report.mean_dtw, report.utterances[0].dtw);
        assert_eq!(report.mean_energy_mae, report.utterances[0].energy_mae);
    }

    #[test]
    fn two_utterance_means_match_hand_average() {
        let report =
            evaluate_corpus(&[eval_fixture("a", 3.0), eval_fixture("b", 10.0)]).unwrap();
        let want_dtw = (report.utterances[0].dtw + report.utterances[1].dtw) / 2.0;
        let want_mae =
            (report.utterances[0].energy_mae + report.utterances[1].energy_mae) / 2.0;
        assert!((report.mean_dtw - want_dtw).abs() <= 1e-12);
        assert!((report.mean_energy_mae - want_mae).abs() <= 1e-12);
        assert_eq!(report.utterances.len(), 2);
    }

    #[test]
    fn report_serializes() {
        let report = evaluate_corpus(&[eval_fixture("a", 1.0)]).unwrap();
        let csv = report.to_csv();
        assert!(csv.lines().count() == 3); // header + row + summary
        assert!(report.to_table().contains("POOLED/MEAN"));
    }
}
