//! Align-to-segment: force-decode, take the argmax source word of every
//! emitted unit, and break wherever consecutive units point at different
//! words.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::corpus::{join_with_boundaries, sequential_batches, SentencePair};
use crate::gradcore::{Graph, Matrix};
use crate::model::{forward_teacher_forced, HyperParams, ModelError, ModelParameters};

/// Sentences per forced-decoding batch.
pub const DECODE_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("sentence {index}: attention matrix belongs to sentence {found}")]
    IdMismatch { index: usize, found: usize },
    #[error("sentence {index}: attention matrix has {rows} rows, expected {expected}")]
    RowCount { index: usize, rows: usize, expected: usize },
    #[error("{pairs} sentences but {matrices} attention matrices")]
    CountMismatch { pairs: usize, matrices: usize },
    #[error("attention dump line {line}: {message}")]
    Dump { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("attention dump I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Soft alignment of one sentence: `I` rows (one per emitted unit, the EOS
/// step last) by `J` columns (source tokens, EOS last).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    pub sentence_id: usize,
    pub weights: Matrix,
}

impl AttentionMatrix {
    pub fn new(sentence_id: usize, weights: Matrix) -> Self {
        AttentionMatrix { sentence_id, weights }
    }

    /// Column sums over all rows, EOS row included.
    pub fn column_mass(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.weights.cols()];
        for r in 0..self.weights.rows() {
            for (o, v) in out.iter_mut().zip(self.weights.row(r)) {
                *o += v;
            }
        }
        out
    }
}

/// A unit sequence with internal break positions. Boundary `p` (1-based)
/// sits between unit `p` and unit `p + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedSentence {
    pub units: Vec<String>,
    pub boundaries: BTreeSet<usize>,
}

impl SegmentedSentence {
    pub fn new(units: Vec<String>, boundaries: BTreeSet<usize>) -> Self {
        debug_assert!(boundaries.iter().all(|&p| p >= 1 && p < units.len()));
        SegmentedSentence { units, boundaries }
    }

    /// Token spans as inclusive 1-based `(start, end)` pairs.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        spans_from_boundaries(self.units.len(), &self.boundaries)
    }

    pub fn tokens(&self) -> Vec<String> {
        self.spans()
            .into_iter()
            .map(|(s, e)| self.units[s - 1..e].concat())
            .collect()
    }

    pub fn to_line(&self) -> String {
        join_with_boundaries(&self.units, &self.boundaries)
    }
}

pub fn spans_from_boundaries(n: usize, boundaries: &BTreeSet<usize>) -> Vec<(usize, usize)> {
    if n == 0 {
        return Vec::new();
    }
    let mut spans = Vec::with_capacity(boundaries.len() + 1);
    let mut start = 1;
    for &b in boundaries {
        spans.push((start, b));
        start = b + 1;
    }
    spans.push((start, n));
    spans
}

/// One attention matrix per sentence, in corpus order, with dropout off.
pub fn force_decode_corpus(
    pairs: &[SentencePair],
    params: &ModelParameters,
    hp: &HyperParams,
) -> Result<Vec<AttentionMatrix>, ModelError> {
    let mut out = Vec::with_capacity(pairs.len());
    for batch in sequential_batches(pairs, DECODE_BATCH) {
        let mut g = Graph::new();
        let fwd = forward_teacher_forced(&mut g, params, hp, &batch, None)?;
        out.extend(fwd.attention_matrices(&g, &batch));
    }
    Ok(out)
}

/// Column index (0-based) of the row maximum for every row but the last
/// (the EOS step). Ties go to the lowest index.
pub fn align(a: &AttentionMatrix) -> Vec<usize> {
    let w = &a.weights;
    let n = w.rows().saturating_sub(1);
    (0..n)
        .map(|i| {
            let row = w.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn boundaries_from_alignment(alignment: &[usize]) -> BTreeSet<usize> {
    alignment
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(p, _)| p + 1)
        .collect()
}

/// Segments every sentence given its units and attention matrix.
pub fn segment_corpus(
    units: &[Vec<String>],
    matrices: &[AttentionMatrix],
) -> Result<Vec<SegmentedSentence>, SegmentError> {
    if units.len() != matrices.len() {
        return Err(SegmentError::CountMismatch {
            pairs: units.len(),
            matrices: matrices.len(),
        });
    }
    units
        .iter()
        .zip(matrices)
        .enumerate()
        .map(|(index, (u, m))| {
            if m.sentence_id != index {
                return Err(SegmentError::IdMismatch {
                    index,
                    found: m.sentence_id,
                });
            }
            if m.weights.rows() != u.len() + 1 {
                return Err(SegmentError::RowCount {
                    index,
                    rows: m.weights.rows(),
                    expected: u.len() + 1,
                });
            }
            Ok(SegmentedSentence::new(u.clone(), boundaries_from_alignment(&align(m))))
        })
        .collect()
}

pub fn write_attention_dump<W: Write>(mut w: W, matrices: &[AttentionMatrix]) -> std::io::Result<()> {
    for m in matrices {
        writeln!(w, "# {} {} {}", m.sentence_id, m.weights.rows(), m.weights.cols())?;
        for r in 0..m.weights.rows() {
            let cells: Vec<String> = m.weights.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", cells.join("\t"))?;
        }
    }
    Ok(())
}

pub fn read_attention_dump<R: BufRead>(r: R) -> Result<Vec<AttentionMatrix>, SegmentError> {
    let err = |line: usize, message: &str| SegmentError::Dump {
        line,
        message: message.to_string(),
    };
    let mut out = Vec::new();
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    while let Some((ln, header)) = lines.next() {
        let header = header?;
        if header.is_empty() {
            continue;
        }
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "#" {
            return Err(err(ln, "expected `# id I J`"));
        }
        let nums: Result<Vec<usize>, _> = fields[1..].iter().map(|f| f.parse::<usize>()).collect();
        let nums = nums.map_err(|_| err(ln, "bad header number"))?;
        let (id, rows, cols) = (nums[0], nums[1], nums[2]);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (rl, line) = lines.next().ok_or_else(|| err(ln, "truncated block"))?;
            let line = line?;
            let before = data.len();
            for cell in line.split('\t') {
                data.push(cell.parse::<f64>().map_err(|_| err(rl, "bad number"))?);
            }
            if data.len() - before != cols {
                return Err(err(rl, "wrong column count"));
            }
        }
        let weights = Matrix::from_vec(rows, cols, data).map_err(|_| err(ln, "bad block"))?;
        out.push(AttentionMatrix::new(id, weights));
    }
    Ok(out)
}
