//! Phoneme-level alignments: parsing the TSV interchange format produced by
//! external forced aligners, converting time intervals to per-phoneme frame
//! counts, and the boundary-difference metric.

use std::fmt::Write as _;
use std::path::Path;

use crate::dsp::AudioConfig;
use crate::error::{Error, Result};
use crate::vocab::PhonemeVocab;

/// Tolerance for "contiguous" interval boundaries, in seconds.
const CONTIGUITY_TOL: f64 = 1e-4;

/// One aligned phoneme interval.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPhoneme {
    pub symbol: String,
    pub start: f64,
    pub end: f64,
}

/// Ordered, contiguous, non-overlapping phoneme intervals for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeAlignment {
    pub entries: Vec<AlignedPhoneme>,
}

/// Per-phoneme frame counts; sums exactly to the utterance frame count
/// after reconciliation.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationSequence {
    pub frames_per_phoneme: Vec<usize>,
}

impl DurationSequence {
    pub fn total(&self) -> usize {
        self.frames_per_phoneme.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.frames_per_phoneme.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames_per_phoneme.is_empty()
    }
}

impl PhonemeAlignment {
    pub fn new(entries: Vec<AlignedPhoneme>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Format("alignment has no entries".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if !(e.end > e.start) {
                return Err(Error::Format(format!(
                    "entry {i} ({}) has end {} <= start {}",
                    e.symbol, e.end, e.start
                )));
            }
            if i > 0 {
                let prev_end = entries[i - 1].end;
                if (e.start - prev_end).abs() > CONTIGUITY_TOL {
                    return Err(Error::Format(format!(
                        "entry {i} ({}) starts at {} but previous ends at {prev_end}",
                        e.symbol, e.start
                    )));
                }
                if e.start < prev_end - CONTIGUITY_TOL {
                    return Err(Error::Format(format!(
                        "entry {i} ({}) overlaps previous interval",
                        e.symbol
                    )));
                }
            }
        }
        Ok(PhonemeAlignment { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn symbols(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.symbol.as_str()).collect()
    }

    /// Total spanned time in seconds.
    pub fn span(&self) -> f64 {
        self.entries.last().map(|e| e.end).unwrap_or(0.0)
    }

    /// Serialize back to the TSV interchange format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}", e.symbol, e.start, e.end);
        }
        out
    }
}

/// Parse an alignment TSV: `phoneme<TAB>start_seconds<TAB>end_seconds` per
/// line, UTF-8, `#` comments and blank lines allowed. Every symbol is
/// validated against the vocabulary; structural problems report the line.
pub fn parse_alignment(path: impl AsRef<Path>, vocab: &PhonemeVocab) -> Result<PhonemeAlignment> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_alignment_str(&text, vocab, &path.display().to_string())
}

pub fn parse_alignment_str(
    text: &str,
    vocab: &PhonemeVocab,
    source: &str,
) -> Result<PhonemeAlignment> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut entries = Vec::new();
    let mut prev_end: Option<f64> = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (symbol, start, end) = match (fields.next(), fields.next(), fields.next()) {
            (Some(s), Some(a), Some(b)) => (s.trim(), a.trim(), b.trim()),
            _ => {
                return Err(parse_err(
                    lineno,
                    "expected phoneme<TAB>start<TAB>end".to_string(),
                ))
            }
        };
        if !vocab.contains(symbol) {
            return Err(parse_err(lineno, format!("unknown phoneme {symbol:?}")));
        }
        let start: f64 = start
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad start time {start:?}")))?;
        let end: f64 = end
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad end time {end:?}")))?;
        if !(end > start) {
            return Err(parse_err(lineno, format!("end {end} <= start {start}")));
        }
        if let Some(pe) = prev_end {
            if start < pe - CONTIGUITY_TOL {
                return Err(parse_err(
                    lineno,
                    format!("interval starts at {start} but previous ends at {pe} (overlap)"),
                ));
            }
            if (start - pe).abs() > CONTIGUITY_TOL {
                return Err(parse_err(
                    lineno,
                    format!("gap between previous end {pe} and start {start}"),
                ));
            }
        }
        prev_end = Some(end);
        entries.push(AlignedPhoneme {
            symbol: symbol.to_string(),
            start,
            end,
        });
    }
    PhonemeAlignment::new(entries)
}

/// Convert interval boundaries to per-phoneme frame counts against a known
/// total frame count `t_frames`: each phoneme gets
/// `round(end/period) - round(start/period)` frames and the residual lands
/// on the final phoneme (cascading backwards if a clamp at zero is needed),
/// so the sum is exactly `t_frames`.
pub fn durations_to_frames(
    alignment: &PhonemeAlignment,
    cfg: &AudioConfig,
    t_frames: usize,
) -> Result<DurationSequence> {
    let n = alignment.len();
    if t_frames < n {
        return Err(Error::Format(format!(
            "{t_frames} frames cannot cover {n} phonemes"
        )));
    }
    let period = cfg.frame_period();
    let mut frames: Vec<i64> = alignment
        .entries
        .iter()
        .map(|e| {
            let d = (e.end / period).round() - (e.start / period).round();
            d as i64
        })
        .collect();
    let mut residual = t_frames as i64 - frames.iter().sum::<i64>();
    // push the residual onto the tail, clamping each phoneme at zero
    for i in (0..n).rev() {
        frames[i] += residual;
        if frames[i] < 0 {
            residual = frames[i];
            frames[i] = 0;
        } else {
            residual = 0;
            break;
        }
    }
    if residual != 0 {
        return Err(Error::Format(format!(
            "alignment spans {} frames more than the utterance",
            -residual
        )));
    }
    Ok(DurationSequence {
        frames_per_phoneme: frames.iter().map(|d| *d as usize).collect(),
    })
}

/// Mean absolute difference of internal phoneme boundaries, in seconds.
pub fn boundary_diff(a: &PhonemeAlignment, b: &PhonemeAlignment) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Format(format!(
            "phoneme count mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Ok(0.0);
    }
    let n = a.len() - 1;
    let sum: f64 = (0..n)
        .map(|i| (a.entries[i].end - b.entries[i].end).abs())
        .sum();
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> PhonemeVocab {
        PhonemeVocab::new(
            ["_", "AH0", "B", "S", "IY1"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn parses_single_line() {
        let a = parse_alignment_str("AH0\t0.000\t0.120\n", &vocab(), "test").unwrap();
        assert_eq!(a.entries[0].symbol, "AH0");
        assert_eq!(a.entries[0].start, 0.0);
        assert_eq!(a.entries[0].end, 0.12);
    }

    #[test]
    fn overlap_is_parse_error_with_line() {
        let text = "AH0\t0.0000\t0.1200\nB\t0.1000\t0.2000\n";
        let err = parse_alignment_str(text, &vocab(), "test").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn unknown_symbol_is_parse_error() {
        let err = parse_alignment_str("ZZ\t0.0\t0.1\n", &vocab(), "test").unwrap_err();
        assert!(err.to_string().contains("ZZ"));
    }

    #[test]
    fn three_entry_fixture_validates() {
        let text = "# comment line\nB\t0.0000\t0.0500\nAH0\t0.0500\t0.2100\nS\t0.2100\t0.3000\n";
        let a = parse_alignment_str(text, &vocab(), "test").unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a.symbols(), vec!["B", "AH0", "S"]);
    }

    #[test]
    fn parse_serialize_parse_is_idempotent() {
        let text = "B\t0.0000\t0.0500\nAH0\t0.0500\t0.2100\nS\t0.2100\t0.3000\n";
        let a = parse_alignment_str(text, &vocab(), "test").unwrap();
        let b = parse_alignment_str(&a.to_tsv(), &vocab(), "test").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_tsv(), b.to_tsv());
    }

    fn cfg() -> AudioConfig {
        AudioConfig::default()
    }

    #[test]
    fn single_phoneme_gets_all_frames() {
        let a = PhonemeAlignment::new(vec![AlignedPhoneme {
            symbol: "AH0".into(),
            start: 0.0,
            end: 1.0,
        }])
        .unwrap();
        let d = durations_to_frames(&a, &cfg(), 87).unwrap();
        assert_eq!(d.frames_per_phoneme, vec![87]);
    }

    #[test]
    fn two_equal_phonemes_split_evenly() {
        // 10 frames of 256/22050 s each
        let period = cfg().frame_period();
        let a = PhonemeAlignment::new(vec![
            AlignedPhoneme {
                symbol: "B".into(),
                start: 0.0,
                end: 5.0 * period,
            },
            AlignedPhoneme {
                symbol: "S".into(),
                start: 5.0 * period,
                end: 10.0 * period,
            },
        ])
        .unwrap();
        let d = durations_to_frames(&a, &cfg(), 10).unwrap();
        assert_eq!(d.frames_per_phoneme, vec![5, 5]);
    }

    #[test]
    fn residual_lands_on_final_phoneme() {
        // boundaries rounding to 9 total with T=10: last phoneme +1
        let period = cfg().frame_period();
        let a = PhonemeAlignment::new(vec![
            AlignedPhoneme {
                symbol: "B".into(),
                start: 0.0,
                end: 4.0 * period,
            },
            AlignedPhoneme {
                symbol: "S".into(),
                start: 4.0 * period,
                end: 9.0 * period,
            },
        ])
        .unwrap();
        let d = durations_to_frames(&a, &cfg(), 10).unwrap();
        assert_eq!(d.frames_per_phoneme, vec![4, 6]);
        assert_eq!(d.total(), 10);
    }

    #[test]
    fn negative_residual_cascades_backwards() {
        let period = cfg().frame_period();
        let a = PhonemeAlignment::new(vec![
            AlignedPhoneme {
                symbol: "B".into(),
                start: 0.0,
                end: 6.0 * period,
            },
            AlignedPhoneme {
                symbol: "S".into(),
                start: 6.0 * period,
                end: 8.0 * period,
            },
        ])
        .unwrap();
        // alignment wants 8 frames but the utterance has 5
        let d = durations_to_frames(&a, &cfg(), 5).unwrap();
        assert_eq!(d.total(), 5);
        assert_eq!(d.frames_per_phoneme, vec![5, 0]);
    }

    #[test]
    fn too_few_frames_is_error() {
        let a = PhonemeAlignment::new(vec![
            AlignedPhoneme {
                symbol: "B".into(),
                start: 0.0,
                end: 0.1,
            },
            AlignedPhoneme {
                symbol: "S".into(),
                start: 0.1,
                end: 0.2,
            },
        ])
        .unwrap();
        assert!(durations_to_frames(&a, &cfg(), 1).is_err());
    }

    fn shifted(a: &PhonemeAlignment, by: f64) -> PhonemeAlignment {
        PhonemeAlignment {
            entries: a
                .entries
                .iter()
                .map(|e| AlignedPhoneme {
                    symbol: e.symbol.clone(),
                    start: e.start + by,
                    end: e.end + by,
                })
                .collect(),
        }
    }

    fn fixture() -> PhonemeAlignment {
        PhonemeAlignment::new(vec![
            AlignedPhoneme {
                symbol: "_".into(),
                start: 0.0,
                end: 0.10,
            },
            AlignedPhoneme {
                symbol: "B".into(),
                start: 0.10,
                end: 0.25,
            },
            AlignedPhoneme {
                symbol: "IY1".into(),
                start: 0.25,
                end: 0.40,
            },
        ])
        .unwrap()
    }

    #[test]
    fn identical_alignments_have_zero_diff() {
        let a = fixture();
        assert_eq!(boundary_diff(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn uniform_shift_reports_the_shift() {
        let a = fixture();
        let b = shifted(&a, 0.010);
        let d = boundary_diff(&a, &b).unwrap();
        assert!((d - 0.010).abs() < 1e-12);
    }

    #[test]
    fn mean_of_known_boundary_diffs() {
        // 5 phonemes -> 4 internal boundaries with diffs {5,10,15,20} ms
        let mk = |ends: [f64; 5]| {
            let mut entries = Vec::new();
            let mut start = 0.0;
            for (i, e) in ends.iter().enumerate() {
                entries.push(AlignedPhoneme {
                    symbol: if i % 2 == 0 { "B" } else { "S" }.into(),
                    start,
                    end: *e,
                });
                start = *e;
            }
            PhonemeAlignment::new(entries).unwrap()
        };
        let a = mk([0.1, 0.2, 0.3, 0.4, 0.5]);
        let b = mk([0.105, 0.210, 0.315, 0.420, 0.5]);
        let d = boundary_diff(&a, &b).unwrap();
        assert!((d - 0.0125).abs() < 1e-12);
    }

    #[test]
    fn boundary_diff_symmetry_and_triangle() {
        let a = fixture();
        let b = shifted(&a, 0.003);
        let c = shifted(&a, -0.002);
        let ab = boundary_diff(&a, &b).unwrap();
        let ba = boundary_diff(&b, &a).unwrap();
        assert_eq!(ab, ba);
        let ac = boundary_diff(&a, &c).unwrap();
        let bc = boundary_diff(&b, &c).unwrap();
        assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn count_mismatch_is_error() {
        let a = fixture();
        let b = PhonemeAlignment::new(vec![AlignedPhoneme {
            symbol: "B".into(),
            start: 0.0,
            end: 0.4,
        }])
        .unwrap();
        assert!(boundary_diff(&a, &b).is_err());
    }
}
