//! Segmentation scores, corpus statistics and the length/attention
//! correlation.
//!
//! All P/R/F values are micro-averaged: counts are summed over the corpus
//! before dividing. Boundaries are internal only.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::segmentation::{AttentionMatrix, SegmentedSentence};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{pred} predicted sentences but {gold} gold sentences")]
    CountMismatch { pred: usize, gold: usize },
    #[error("sentence {sentence}: predicted and gold unit streams differ")]
    UnitMismatch { sentence: usize },
    #[error("empty corpus")]
    Empty,
    #[error("correlation undefined: {0}")]
    Undefined(String),
    #[error("report line {line}: {message}")]
    Report { line: usize, message: String },
}

/// Precision, recall and F-measure with the counts behind them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// `num / den`, except that an empty denominator scores 1 when both sides
/// are empty corpus-wide and 0 otherwise.
fn ratio(num: usize, den: usize, other: usize) -> f64 {
    if den == 0 {
        if other == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Prf {
    pub fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        let precision = ratio(matched, predicted, gold);
        let recall = ratio(matched, gold, predicted);
        Prf {
            matched,
            predicted,
            gold,
            precision,
            recall,
            f: harmonic(precision, recall),
        }
    }
}

fn check(pred: &[SegmentedSentence], gold: &[SegmentedSentence]) -> Result<(), EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::CountMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.units != g.units {
            return Err(EvalError::UnitMismatch { sentence: i + 1 });
        }
    }
    Ok(())
}

pub fn boundary_prf(pred: &[SegmentedSentence], gold: &[SegmentedSentence]) -> Result<Prf, EvalError> {
    check(pred, gold)?;
    let (mut m, mut np, mut ng) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        m += p.boundaries.intersection(&g.boundaries).count();
        np += p.boundaries.len();
        ng += g.boundaries.len();
    }
    Ok(Prf::from_counts(m, np, ng))
}

pub fn token_prf(pred: &[SegmentedSentence], gold: &[SegmentedSentence]) -> Result<Prf, EvalError> {
    check(pred, gold)?;
    let (mut m, mut np, mut ng) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let gs: HashSet<(usize, usize)> = g.spans().into_iter().collect();
        let ps = p.spans();
        m += ps.iter().filter(|s| gs.contains(s)).count();
        np += ps.len();
        ng += gs.len();
    }
    Ok(Prf::from_counts(m, np, ng))
}

/// Fraction of sentences whose boundary set is exactly right, with the
/// number of such sentences.
pub fn exact_match(pred: &[SegmentedSentence], gold: &[SegmentedSentence]) -> Result<(f64, usize), EvalError> {
    check(pred, gold)?;
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = pred.iter().zip(gold).filter(|(p, g)| p.boundaries == g.boundaries).count();
    Ok((n as f64 / pred.len() as f64, n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub types: usize,
    /// Characters per token.
    pub avg_token_len: f64,
    /// Tokens per sentence.
    pub avg_sent_len: f64,
}

pub fn corpus_stats(corpus: &[SegmentedSentence]) -> Result<CorpusStats, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut types = HashSet::new();
    let (mut tokens, mut chars) = (0, 0);
    for s in corpus {
        for t in s.tokens() {
            tokens += 1;
            chars += t.chars().count();
            types.insert(t);
        }
    }
    Ok(CorpusStats {
        sentences: corpus.len(),
        tokens,
        types: types.len(),
        avg_token_len: chars as f64 / tokens as f64,
        avg_sent_len: tokens as f64 / corpus.len() as f64,
    })
}

/// Pearson coefficient between source word length and the attention mass
/// the word receives (column sum over all rows, EOS row included).
///
/// One observation per source token instance; `word_lengths[k]` lists the
/// lengths of sentence `k` with the EOS entry last. The EOS column is
/// pooled only when `include_eos` is set.
pub fn length_attention_correlation(
    matrices: &[AttentionMatrix],
    word_lengths: &[Vec<f64>],
    include_eos: bool,
) -> Result<f64, EvalError> {
    if matrices.len() != word_lengths.len() {
        return Err(EvalError::CountMismatch {
            pred: matrices.len(),
            gold: word_lengths.len(),
        });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, (m, lens)) in matrices.iter().zip(word_lengths).enumerate() {
        let mass = m.column_mass();
        if mass.len() != lens.len() {
            return Err(EvalError::UnitMismatch { sentence: k + 1 });
        }
        let keep = if include_eos { lens.len() } else { lens.len().saturating_sub(1) };
        xs.extend_from_slice(&lens[..keep]);
        ys.extend_from_slice(&mass[..keep]);
    }
    pearson(&xs, &ys)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    let n = xs.len();
    if n < 2 {
        return Err(EvalError::Undefined(format!("{n} observations")));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(EvalError::Undefined("word lengths have zero variance".into()));
    }
    if syy == 0.0 {
        // constant attention mass: no covariance with length
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Places a boundary at each internal position with probability 1/2.
pub fn random_segmentation(units: &[Vec<String>], seed: u64) -> Vec<SegmentedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    units
        .iter()
        .map(|u| {
            let b = (1..u.len()).filter(|_| rng.random_bool(0.5)).collect();
            SegmentedSentence::new(u.clone(), b)
        })
        .collect()
}

/// Everything written to a metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub boundary: Prf,
    pub token: Prf,
    pub exact: f64,
    pub exact_count: usize,
    pub stats: CorpusStats,
    pub correlation: Option<f64>,
}

/// Report keys in file order; `correlation` is present only when computed.
pub const REPORT_KEYS: [&str; 12] = [
    "BP",
    "BR",
    "BF",
    "WP",
    "WR",
    "WF",
    "X",
    "tokens",
    "types",
    "avg_token_len",
    "avg_sent_len",
    "correlation",
];

impl MetricsReport {
    /// Scores `pred` against `gold`; corpus statistics describe `pred`.
    pub fn compute(pred: &[SegmentedSentence], gold: &[SegmentedSentence]) -> Result<Self, EvalError> {
        let (exact, exact_count) = exact_match(pred, gold)?;
        Ok(MetricsReport {
            boundary: boundary_prf(pred, gold)?,
            token: token_prf(pred, gold)?,
            exact,
            exact_count,
            stats: corpus_stats(pred)?,
            correlation: None,
        })
    }

    /// `(key, value)` as written: P/R/F/X scaled by 100, the rest raw.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("BP", 100.0 * self.boundary.precision),
            ("BR", 100.0 * self.boundary.recall),
            ("BF", 100.0 * self.boundary.f),
            ("WP", 100.0 * self.token.precision),
            ("WR", 100.0 * self.token.recall),
            ("WF", 100.0 * self.token.f),
            ("X", 100.0 * self.exact),
            ("tokens", self.stats.tokens as f64),
            ("types", self.stats.types as f64),
            ("avg_token_len", self.stats.avg_token_len),
            ("avg_sent_len", self.stats.avg_sent_len),
        ];
        if let Some(c) = self.correlation {
            out.push(("correlation", c));
        }
        out
    }

    pub fn to_text(&self) -> String {
        format_entries(&self.entries())
    }
}

pub fn format_entries<K: AsRef<str>>(entries: &[(K, f64)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        writeln!(s, "{}\t{}", k.as_ref(), v).expect("writing to a String");
    }
    s
}

/// Reads `NAME<TAB>value` lines, preserving order.
pub fn parse_report(text: &str) -> Result<BTreeMap<String, f64>, EvalError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let err = |message: &str| EvalError::Report {
            line: i + 1,
            message: message.to_string(),
        };
        let (k, v) = line.split_once('\t').ok_or_else(|| err("expected NAME<TAB>value"))?;
        let v: f64 = v.parse().map_err(|_| err("bad number"))?;
        if out.insert(k.to_string(), v).is_some() {
            return Err(err("duplicate key"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn seg(line: &str) -> SegmentedSentence {
        let mut units = Vec::new();
        let mut b = BTreeSet::new();
        for (k, w) in line.split(' ').enumerate() {
            if k > 0 {
                b.insert(units.len());
            }
            units.extend(w.chars().map(String::from));
        }
        SegmentedSentence::new(units, b)
    }

    fn corpus(lines: &[&str]) -> Vec<SegmentedSentence> {
        lines.iter().map(|l| seg(l)).collect()
    }

    #[test]
    fn identity_scores_one() {
        let c = corpus(&["ab c de", "x", "yz"]);
        let r = MetricsReport::compute(&c, &c).unwrap();
        assert_eq!((r.boundary.precision, r.boundary.recall, r.boundary.f), (1.0, 1.0, 1.0));
        assert_eq!((r.token.precision, r.token.recall, r.token.f), (1.0, 1.0, 1.0));
        assert_eq!(r.exact, 1.0);
    }

    #[test]
    fn boundary_example() {
        let b = boundary_prf(&corpus(&["ab cde"]), &corpus(&["ab c de"])).unwrap();
        assert_eq!((b.precision, b.recall), (1.0, 0.5));
        assert!((b.f - 2.0 / 3.0).abs() < 1e-15);
        let none = boundary_prf(&corpus(&["abcde"]), &corpus(&["ab c de"])).unwrap();
        assert_eq!((none.recall, none.f), (0.0, 0.0));
    }

    #[test]
    fn token_example() {
        let t = token_prf(&corpus(&["ab cde"]), &corpus(&["ab c de"])).unwrap();
        assert_eq!(t.matched, 1);
        assert_eq!((t.precision, t.recall), (0.5, 1.0 / 3.0));
        assert!((t.f - 0.4).abs() < 1e-15);
    }

    #[test]
    fn empty_denominators() {
        let b = boundary_prf(&corpus(&["abc"]), &corpus(&["abc"])).unwrap();
        assert_eq!((b.precision, b.recall, b.f), (1.0, 1.0, 1.0));
        let b = boundary_prf(&corpus(&["abc"]), &corpus(&["a bc"])).unwrap();
        assert_eq!((b.precision, b.recall, b.f), (0.0, 0.0, 0.0));
    }

    #[test]
    fn exact_match_counts_single_words() {
        let (x, n) = exact_match(&corpus(&["a", "ab", "a b", "abc"]), &corpus(&["a", "a b", "ab", "a bc"])).unwrap();
        assert_eq!((x, n), (0.25, 1));
    }

    #[test]
    fn stream_mismatch_names_sentence() {
        let e = boundary_prf(&corpus(&["ab", "cd"]), &corpus(&["ab", "ce"])).unwrap_err();
        assert_eq!(e, EvalError::UnitMismatch { sentence: 2 });
    }

    #[test]
    fn stats() {
        let s = corpus_stats(&corpus(&["ab c", "ab"])).unwrap();
        assert_eq!((s.tokens, s.types), (3, 2));
        assert!((s.avg_token_len - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.avg_sent_len, 1.5);
        let s = corpus_stats(&corpus(&["abc"])).unwrap();
        assert_eq!((s.tokens, s.types, s.avg_token_len, s.avg_sent_len), (1, 1, 3.0, 1.0));
    }

    #[test]
    fn correlation_cases() {
        let m = |rows: &[&[f64]]| AttentionMatrix::new(0, crate::gradcore::Matrix::from_rows(rows));
        let prop = m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(prop.column_mass(), vec![1.0, 2.0, 3.0]);
        let r = length_attention_correlation(std::slice::from_ref(&prop), &[vec![2.0, 4.0, 6.0]], true).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        // EOS column dropped: two points left, still perfectly linear
        let r = length_attention_correlation(&[prop], &[vec![2.0, 4.0, 6.0]], false).unwrap();
        assert!((r - 1.0).abs() < 1e-12);

        let flat = m(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let r = length_attention_correlation(&[flat.clone(), flat.clone()], &[vec![3.0, 1.0], vec![5.0, 1.0]], true).unwrap();
        assert_eq!(r, 0.0);
        let e = length_attention_correlation(&[flat.clone(), flat], &[vec![2.0, 2.0], vec![2.0, 2.0]], true);
        assert!(matches!(e, Err(EvalError::Undefined(_))));
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(EvalError::Undefined(_))));
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(r.abs() < 1e-15);
    }

    #[test]
    fn report_round_trip() {
        let mut r = MetricsReport::compute(&corpus(&["ab cde", "x"]), &corpus(&["ab c de", "x"])).unwrap();
        r.correlation = Some(0.681);
        let text = r.to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
        assert_eq!(keys, REPORT_KEYS);
        let back = parse_report(&text).unwrap();
        for (k, v) in r.entries() {
            assert_eq!(back[k], v);
        }
        assert!(parse_report("BP 1").is_err());
    }

    #[test]
    fn random_baseline_is_seeded() {
        let u: Vec<Vec<String>> = vec![(0..30).map(|i| i.to_string()).collect()];
        assert_eq!(random_segmentation(&u, 3), random_segmentation(&u, 3));
        assert_ne!(random_segmentation(&u, 3), random_segmentation(&u, 4));
    }
}
