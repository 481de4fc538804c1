//! Parallel text loading, vocabularies and padded mini-batches.
//!
//! Source lines are whitespace-tokenized words. Target lines are streams of
//! units (one Unicode scalar each by default, or symbols from an inventory
//! file); in gold files the spaces mark the reference word boundaries.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gradcore::Matrix;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Spellings of the reserved indices `0..4`.
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line count mismatch: source has {source_lines} lines, target has {target_lines}")]
    LineCountMismatch { source_lines: usize, target_lines: usize },
    #[error("{side} line {line} is empty")]
    EmptyLine { side: Side, line: usize },
    #[error("{side} line {line} is not valid UTF-8")]
    NotUtf8 { side: Side, line: usize },
    #[error("corpus is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Source => "source",
            Side::Target => "target",
        })
    }
}

/// Symbol table with the four reserved entries at indices 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            symbols: Vec::new(),
            index: HashMap::new(),
        };
        for s in RESERVED {
            v.symbols.push(s.to_string());
            v.index.insert(s.to_string(), v.symbols.len() - 1);
        }
        v
    }

    /// Vocabulary whose non-reserved entries are `symbols`, in order.
    pub fn from_symbols<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary::new();
        for s in symbols {
            v.add(s.into());
        }
        v
    }

    /// Index of `symbol`, inserting it at the end if unseen.
    pub fn add(&mut self, symbol: impl Into<String>) -> usize {
        let symbol = symbol.into();
        if let Some(&i) = self.index.get(&symbol) {
            return i;
        }
        self.symbols.push(symbol.clone());
        self.index.insert(symbol, self.symbols.len() - 1);
        self.symbols.len() - 1
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    /// Index of `symbol`, or [`UNK`] when unseen.
    pub fn lookup(&self, symbol: &str) -> usize {
        self.get(symbol).unwrap_or(UNK)
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    /// Size including the reserved entries.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.len() == RESERVED.len()
    }

    /// Non-reserved symbols in index order.
    pub fn symbols(&self) -> &[String] {
        &self.symbols[RESERVED.len()..]
    }
}

/// How a target line is cut into units.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum UnitSplitter {
    /// One Unicode scalar value per unit.
    #[default]
    Chars,
    /// Greedy longest match against a symbol inventory; characters matching
    /// no symbol become single-character units.
    Inventory(Vec<String>),
}

impl UnitSplitter {
    pub fn inventory<I: IntoIterator<Item = String>>(symbols: I) -> Self {
        let mut syms: Vec<String> = symbols.into_iter().filter(|s| !s.is_empty()).collect();
        syms.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then_with(|| a.cmp(b)));
        syms.dedup();
        UnitSplitter::Inventory(syms)
    }

    /// Reads one symbol per line; blank lines are ignored.
    pub fn from_inventory_file(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::inventory(
            text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from),
        ))
    }

    pub fn split(&self, word: &str) -> Vec<String> {
        match self {
            UnitSplitter::Chars => word.chars().map(String::from).collect(),
            UnitSplitter::Inventory(syms) => {
                let mut out = Vec::new();
                let mut rest = word;
                while let Some(c) = rest.chars().next() {
                    let hit = syms.iter().find(|s| rest.starts_with(s.as_str()));
                    let len = hit.map_or(c.len_utf8(), |s| s.len());
                    out.push(rest[..len].to_string());
                    rest = &rest[len..];
                }
                out
            }
        }
    }
}

/// One line pair as text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelSentence {
    pub source_words: Vec<String>,
    /// Target units without any spacing.
    pub target_units: Vec<String>,
    /// Reference boundaries: `p` means a break after the first `p` units.
    pub gold_boundaries: Option<BTreeSet<usize>>,
}

impl ParallelSentence {
    /// Character counts of the source words followed by 1 for the end-of-sentence token.
    pub fn source_word_lengths(&self) -> Vec<usize> {
        self.source_words
            .iter()
            .map(|w| w.chars().count().max(1))
            .chain(std::iter::once(1))
            .collect()
    }

    /// The target stream with spaces re-inserted at the gold boundaries.
    pub fn gold_line(&self) -> Option<String> {
        self.gold_boundaries
            .as_ref()
            .map(|b| join_with_boundaries(&self.target_units, b))
    }

    pub fn unsegmented_target(&self) -> String {
        self.target_units.concat()
    }
}

/// Concatenates `units`, putting a single space after unit `p` for each `p` in `boundaries`.
pub fn join_with_boundaries(units: &[String], boundaries: &BTreeSet<usize>) -> String {
    let mut out = String::new();
    for (i, u) in units.iter().enumerate() {
        if i > 0 && boundaries.contains(&i) {
            out.push(' ');
        }
        out.push_str(u);
    }
    out
}

/// Parses a target line. With `gold`, spaces mark boundaries; otherwise they are dropped.
pub fn parse_target_line(line: &str, gold: bool, splitter: &UnitSplitter) -> (Vec<String>, Option<BTreeSet<usize>>) {
    let mut units = Vec::new();
    let mut boundaries = BTreeSet::new();
    for word in line.split_whitespace() {
        if !units.is_empty() {
            boundaries.insert(units.len());
        }
        units.extend(splitter.split(word));
    }
    (units, gold.then_some(boundaries))
}

fn split_lines(bytes: &[u8], side: Side) -> Result<Vec<String>, CorpusError> {
    let mut lines = Vec::new();
    if bytes.is_empty() {
        return Ok(lines);
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let s = std::str::from_utf8(raw).map_err(|_| CorpusError::NotUtf8 { side, line: i + 1 })?;
        lines.push(s.to_string());
    }
    Ok(lines)
}

/// Parses in-memory corpus contents. Line numbers in errors are 1-based.
pub fn parse_parallel(
    source: &[u8],
    target: &[u8],
    gold: bool,
    splitter: &UnitSplitter,
) -> Result<Vec<ParallelSentence>, CorpusError> {
    let src = split_lines(source, Side::Source)?;
    let tgt = split_lines(target, Side::Target)?;
    if src.len() != tgt.len() {
        return Err(CorpusError::LineCountMismatch {
            source_lines: src.len(),
            target_lines: tgt.len(),
        });
    }
    let mut out = Vec::with_capacity(src.len());
    for (i, (s, t)) in src.iter().zip(&tgt).enumerate() {
        let source_words: Vec<String> = s.split_whitespace().map(String::from).collect();
        if source_words.is_empty() {
            return Err(CorpusError::EmptyLine {
                side: Side::Source,
                line: i + 1,
            });
        }
        let (target_units, gold_boundaries) = parse_target_line(t, gold, splitter);
        if target_units.is_empty() {
            return Err(CorpusError::EmptyLine {
                side: Side::Target,
                line: i + 1,
            });
        }
        out.push(ParallelSentence {
            source_words,
            target_units,
            gold_boundaries,
        });
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>, CorpusError> {
    std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an aligned pair of corpus files.
pub fn load_parallel(
    source_path: &Path,
    target_path: &Path,
    gold: bool,
    splitter: &UnitSplitter,
) -> Result<Vec<ParallelSentence>, CorpusError> {
    parse_parallel(&read(source_path)?, &read(target_path)?, gold, splitter)
}

/// Source and target vocabularies, indices assigned by first occurrence.
pub fn build_vocabularies(sentences: &[ParallelSentence]) -> (Vocabulary, Vocabulary) {
    let mut src = Vocabulary::new();
    let mut tgt = Vocabulary::new();
    for s in sentences {
        for w in &s.source_words {
            src.add(w.as_str());
        }
        for u in &s.target_units {
            tgt.add(u.as_str());
        }
    }
    (src, tgt)
}

/// An index-encoded sentence pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    /// `w_1..w_J`, the last one being [`EOS`].
    pub source: Vec<usize>,
    /// [`BOS`], then `Ω_1..Ω_I` with `Ω_I` = [`EOS`].
    pub target: Vec<usize>,
    /// `|w_j|` for each source position, 1 for EOS.
    pub source_word_lengths: Vec<f64>,
    pub gold_boundaries: Option<BTreeSet<usize>>,
}

impl SentencePair {
    /// `J`, counting EOS.
    pub fn source_len(&self) -> usize {
        self.source.len()
    }

    /// `I`, the number of decoding steps (real units plus EOS).
    pub fn target_len(&self) -> usize {
        self.target.len() - 1
    }

    /// Number of real target units.
    pub fn num_units(&self) -> usize {
        self.target.len() - 2
    }
}

/// Encoded corpus plus how many symbols fell back to UNK on each side.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub pairs: Vec<SentencePair>,
    pub source_unknown: usize,
    pub target_unknown: usize,
}

pub fn encode_corpus(sentences: &[ParallelSentence], src: &Vocabulary, tgt: &Vocabulary) -> Encoded {
    let mut source_unknown = 0;
    let mut target_unknown = 0;
    let pairs = sentences
        .iter()
        .map(|s| {
            let mut source: Vec<usize> = s
                .source_words
                .iter()
                .map(|w| {
                    let i = src.lookup(w);
                    source_unknown += usize::from(i == UNK);
                    i
                })
                .collect();
            source.push(EOS);
            let mut target = vec![BOS];
            target.extend(s.target_units.iter().map(|u| {
                let i = tgt.lookup(u);
                target_unknown += usize::from(i == UNK);
                i
            }));
            target.push(EOS);
            SentencePair {
                source,
                target,
                source_word_lengths: s.source_word_lengths().into_iter().map(|l| l as f64).collect(),
                gold_boundaries: s.gold_boundaries.clone(),
            }
        })
        .collect();
    Encoded {
        pairs,
        source_unknown,
        target_unknown,
    }
}

/// A padded, masked group of sentence pairs.
///
/// Grids are row-major with one row per sentence. Column `j` of the source
/// grid is source position `j`; column `t` of the target grid is target
/// position `t` (0 = BOS). Target masks cover decoding steps `1..=I`, so
/// column `i - 1` of `target_mask` is step `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Corpus indices of the sentences, in row order.
    pub ids: Vec<usize>,
    pub max_source: usize,
    pub max_steps: usize,
    pub source: Vec<usize>,
    pub source_mask: Matrix,
    pub target: Vec<usize>,
    pub target_mask: Matrix,
    pub source_lengths: Vec<usize>,
    pub target_lengths: Vec<usize>,
    /// `|w_j|` per position, 1 at padding.
    pub word_lengths: Matrix,
}

impl Batch {
    pub fn new(pairs: &[SentencePair], ids: &[usize]) -> Self {
        Self::with_min_dims(pairs, ids, 0, 0)
    }

    /// Like [`Batch::new`] but padded to at least `min_source` source
    /// positions and `min_steps` decoding steps.
    pub fn with_min_dims(pairs: &[SentencePair], ids: &[usize], min_source: usize, min_steps: usize) -> Self {
        let rows: Vec<&SentencePair> = ids.iter().map(|&i| &pairs[i]).collect();
        let b = rows.len();
        let max_source = rows.iter().map(|p| p.source_len()).max().unwrap_or(0).max(min_source);
        let max_steps = rows.iter().map(|p| p.target_len()).max().unwrap_or(0).max(min_steps);
        let mut source = vec![PAD; b * max_source];
        let mut source_mask = Matrix::zeros(b, max_source);
        let mut word_lengths = Matrix::filled(b, max_source, 1.0);
        let mut target = vec![PAD; b * (max_steps + 1)];
        let mut target_mask = Matrix::zeros(b, max_steps);
        for (r, p) in rows.iter().enumerate() {
            for (j, (&w, &len)) in p.source.iter().zip(&p.source_word_lengths).enumerate() {
                source[r * max_source + j] = w;
                source_mask.set(r, j, 1.0);
                word_lengths.set(r, j, len);
            }
            for (t, &u) in p.target.iter().enumerate() {
                target[r * (max_steps + 1) + t] = u;
            }
            for i in 0..p.target_len() {
                target_mask.set(r, i, 1.0);
            }
        }
        Batch {
            ids: ids.to_vec(),
            max_source,
            max_steps,
            source,
            source_mask,
            target,
            target_mask,
            source_lengths: rows.iter().map(|p| p.source_len()).collect(),
            target_lengths: rows.iter().map(|p| p.target_len()).collect(),
            word_lengths,
        }
    }

    pub fn size(&self) -> usize {
        self.ids.len()
    }

    /// Source indices at position `j` for every row.
    pub fn source_column(&self, j: usize) -> Vec<usize> {
        (0..self.size()).map(|r| self.source[r * self.max_source + j]).collect()
    }

    /// Target indices at position `t` (0 = BOS) for every row.
    pub fn target_column(&self, t: usize) -> Vec<usize> {
        (0..self.size())
            .map(|r| self.target[r * (self.max_steps + 1) + t])
            .collect()
    }

    /// Source mask column `j` as a `B x 1` matrix.
    pub fn source_mask_column(&self, j: usize) -> Matrix {
        Matrix::column(&(0..self.size()).map(|r| self.source_mask.get(r, j)).collect::<Vec<_>>())
    }

    /// Mask of decoding step `i` (1-based) as a `B x 1` matrix.
    pub fn step_mask(&self, i: usize) -> Matrix {
        Matrix::column(&(0..self.size()).map(|r| self.target_mask.get(r, i - 1)).collect::<Vec<_>>())
    }

    /// Number of real decoding steps in the batch.
    pub fn num_target_tokens(&self) -> usize {
        self.target_lengths.iter().sum()
    }
}

/// Mini-batches for one training epoch.
///
/// Shuffles with a generator keyed by `(seed, epoch)`, stable-sorts by target
/// length, then cuts consecutive chunks of `batch_size`.
pub fn epoch_batches(pairs: &[SentencePair], batch_size: usize, seed: u64, epoch: u64) -> Vec<Batch> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| pairs[i].target_len());
    order.chunks(batch_size).map(|ids| Batch::new(pairs, ids)).collect()
}

/// Batches in corpus order, for forced decoding.
pub fn sequential_batches(pairs: &[SentencePair], batch_size: usize) -> Vec<Batch> {
    let ids: Vec<usize> = (0..pairs.len()).collect();
    ids.chunks(batch_size.max(1)).map(|c| Batch::new(pairs, c)).collect()
}
