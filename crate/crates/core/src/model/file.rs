//! Plain-text model files.
//!
//! ```text
//! alignseg-model<TAB>version=1<TAB>embedding_dim=64<TAB>...<TAB>seed=1
//! vocab<TAB>source<TAB><n>
//! <symbol>            (n lines, reserved entries excluded)
//! vocab<TAB>target<TAB><n>
//! <symbol>
//! param<TAB><name><TAB><rows><TAB><cols>
//! <v> <v> ...         (one line per row, shortest round-trip decimals)
//! ```

use std::io::Write;
use std::path::Path;

use super::{HyperParams, ModelError, ModelParameters, HYPERPARAM_KEYS};
use crate::corpus::Vocabulary;
use crate::gradcore::{Matrix, ParameterStore};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "alignseg-model";

/// A trained model with everything needed to decode new text.
#[derive(Debug, Clone)]
pub struct Model {
    pub hp: HyperParams,
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
    pub params: ModelParameters,
}

impl Model {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        write!(w, "{MAGIC}\tversion={MODEL_FORMAT_VERSION}")?;
        for (k, v) in self.hp.to_pairs() {
            write!(w, "\t{k}={v}")?;
        }
        writeln!(w)?;
        for (side, vocab) in [("source", &self.source_vocab), ("target", &self.target_vocab)] {
            writeln!(w, "vocab\t{side}\t{}", vocab.symbols().len())?;
            for s in vocab.symbols() {
                writeln!(w, "{s}")?;
            }
        }
        for (_, name, m) in self.params.store.iter() {
            writeln!(w, "param\t{name}\t{}\t{}", m.rows(), m.cols())?;
            for r in 0..m.rows() {
                let line: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("model text is UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let err = |line: usize, message: String| ModelError::Format { line, message };

        let (ln, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let mut fields = header.split('\t');
        if fields.next() != Some(MAGIC) {
            return Err(err(ln, "not a model file".into()));
        }
        match fields.next() {
            Some(v) if v == format!("version={MODEL_FORMAT_VERSION}") => {}
            other => return Err(err(ln, format!("unsupported version {other:?}"))),
        }
        let mut hp = HyperParams::default();
        let mut seen = 0;
        for f in fields {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| err(ln, format!("malformed field `{f}`")))?;
            hp.set(k, v).map_err(|e| err(ln, e.to_string()))?;
            seen += 1;
        }
        if seen != HYPERPARAM_KEYS.len() {
            return Err(err(ln, format!("expected {} hyperparameters, found {seen}", HYPERPARAM_KEYS.len())));
        }
        hp.validate().map_err(|e| err(ln, e.to_string()))?;

        let mut vocabs = Vec::new();
        for side in ["source", "target"] {
            let (ln, l) = lines.next().ok_or_else(|| err(0, format!("missing {side} vocabulary")))?;
            let parts: Vec<&str> = l.split('\t').collect();
            if parts.len() != 3 || parts[0] != "vocab" || parts[1] != side {
                return Err(err(ln, format!("expected `vocab\t{side}\t<n>`")));
            }
            let n: usize = parts[2].parse().map_err(|_| err(ln, "bad vocabulary size".into()))?;
            let mut syms = Vec::with_capacity(n);
            for _ in 0..n {
                let (_, s) = lines.next().ok_or_else(|| err(ln, "truncated vocabulary".into()))?;
                syms.push(s.to_string());
            }
            let v = Vocabulary::from_symbols(syms);
            if v.symbols().len() != n {
                return Err(err(ln, "duplicate vocabulary symbol".into()));
            }
            vocabs.push(v);
        }
        let target_vocab = vocabs.pop().expect("two vocabularies");
        let source_vocab = vocabs.pop().expect("two vocabularies");

        let mut store = ParameterStore::new();
        while let Some((ln, l)) = lines.next() {
            if l.is_empty() {
                continue;
            }
            let parts: Vec<&str> = l.split('\t').collect();
            if parts.len() != 4 || parts[0] != "param" {
                return Err(err(ln, "expected `param\t<name>\t<rows>\t<cols>`".into()));
            }
            let rows: usize = parts[2].parse().map_err(|_| err(ln, "bad row count".into()))?;
            let cols: usize = parts[3].parse().map_err(|_| err(ln, "bad column count".into()))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (rl, row) = lines.next().ok_or_else(|| err(ln, "truncated parameter".into()))?;
                let before = data.len();
                for tok in row.split(' ').filter(|t| !t.is_empty()) {
                    data.push(tok.parse::<f64>().map_err(|_| err(rl, format!("bad number `{tok}`")))?);
                }
                if data.len() - before != cols {
                    return Err(err(rl, format!("expected {cols} values")));
                }
            }
            let m = Matrix::from_vec(rows, cols, data)?;
            store.insert(parts[1], m).map_err(|e| err(ln, e.to_string()))?;
        }
        let params = ModelParameters::from_store(store, &hp, source_vocab.len(), target_vocab.len())?;
        Ok(Model {
            hp,
            source_vocab,
            target_vocab,
            params,
        })
    }
}
