//! Command-line driver: train, segment, evaluate, stats, multirun, synth and
//! gradcheck.
//!
//! Exit statuses: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

pub mod config;
pub mod gradcheck;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{Mode, RatioSource, RunConfig};

use crate::corpus::{
    build_vocabularies, encode_corpus, load_parallel, parse_target_line, CorpusError, ParallelSentence,
    SentencePair, UnitSplitter,
};
use crate::evaluation::{
    corpus_stats, format_entries, length_attention_correlation, CorpusStats, EvalError,
    MetricsReport,
};
use crate::model::{HyperParams, LossMode, Model, ModelError};
use crate::segmentation::{
    force_decode_corpus, read_attention_dump, segment_corpus, write_attention_dump, AttentionMatrix, SegmentError,
    SegmentedSentence,
};
use crate::synth::{generate, SynthConfig};
use crate::training::{compute_ratio, train, EpochLog, LossBreakdown, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Grad(g) => CliError::Numeric(g.to_string()),
            ModelError::InvalidHyperParams(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SegmentError> for CliError {
    fn from(e: SegmentError) -> Self {
        match e {
            SegmentError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::EmptyCorpus | TrainError::NoGold => CliError::Data(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "alignseg", version, about = "Bilingual word segmentation from attention alignments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by the model-building commands.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// `key = value` configuration file, applied before any flag.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting (repeatable), e.g. `--set epochs=300`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Preset: base, bias, aux or aux_ratio.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    /// Target lines are space-segmented references.
    #[arg(long)]
    gold: bool,
    /// One target symbol per line; units are matched longest first.
    #[arg(long)]
    inventory: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    attention_dump: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write the resolved configuration here before starting.
    #[arg(long)]
    echo: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(CliError::Usage)?,
            None => RunConfig::default(),
        };
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| pairs.push((k.to_string(), v));
        if let Some(m) = &self.mode {
            put("mode", m.clone());
        }
        for (k, p) in [
            ("source", &self.source),
            ("target", &self.target),
            ("inventory", &self.inventory),
            ("model", &self.model),
            ("output", &self.output),
            ("attention_dump", &self.attention_dump),
            ("report", &self.report),
            ("log", &self.log),
            ("echo", &self.echo),
            ("out_dir", &self.out_dir),
        ] {
            if let Some(p) = p {
                put(k, p.display().to_string());
            }
        }
        if self.gold {
            put("gold", "true".into());
        }
        if let Some(v) = self.seed {
            put("seed", v.to_string());
        }
        if let Some(v) = self.epochs {
            put("epochs", v.to_string());
        }
        if let Some(v) = self.runs {
            put("runs", v.to_string());
        }
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in pairs {
            cfg.set(&k, &v).map_err(CliError::Usage)?;
        }
        cfg.validate().map_err(CliError::Usage)?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write it with its loss log.
    Train(ConfigArgs),
    /// Force-decode a corpus and write its segmentation.
    Segment(ConfigArgs),
    /// Score a segmentation against a reference.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Metrics file (stdout when absent).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Attention dump of the predicted corpus, for the length correlation.
        #[arg(long, requires = "source")]
        attention: Option<PathBuf>,
        /// Source side matching the attention dump.
        #[arg(long)]
        source: Option<PathBuf>,
        /// Leave EOS columns out of the correlation.
        #[arg(long)]
        exclude_eos: bool,
        #[arg(long)]
        inventory: Option<PathBuf>,
    },
    /// Token, type and length statistics of a segmented file.
    Stats {
        file: PathBuf,
        #[arg(long)]
        inventory: Option<PathBuf>,
    },
    /// Train, segment and evaluate over consecutive seeds.
    Multirun(ConfigArgs),
    /// Write a synthetic parallel corpus with known segmentation.
    Synth {
        #[arg(long, default_value_t = 500)]
        sentences: usize,
        #[arg(long, default_value_t = 20)]
        vocab: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        min_image: usize,
        #[arg(long, default_value_t = 6)]
        max_image: usize,
        #[arg(long, default_value_t = 3)]
        min_words: usize,
        #[arg(long, default_value_t = 8)]
        max_words: usize,
        #[arg(long, default_value_t = 8)]
        alphabet: usize,
        /// Source sentences.
        #[arg(long)]
        source_out: PathBuf,
        /// Segmented reference target.
        #[arg(long)]
        gold_out: PathBuf,
        /// Unsegmented target.
        #[arg(long)]
        target_out: Option<PathBuf>,
        /// `source<TAB>image` lexicon.
        #[arg(long)]
        lexicon_out: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences on a toy model.
    Gradcheck,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status. Errors are reported on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train(a) => cmd_train(&a.resolve()?).map(|_| ()),
        Command::Segment(a) => cmd_segment(&a.resolve()?),
        Command::Evaluate {
            pred,
            gold,
            report,
            attention,
            source,
            exclude_eos,
            inventory,
        } => {
            let splitter = splitter(inventory.as_deref())?;
            let corr = match (&attention, &source) {
                (Some(a), Some(s)) => Some((a.as_path(), s.as_path())),
                _ => None,
            };
            let r = cmd_evaluate(&pred, &gold, &splitter, corr, !exclude_eos)?;
            match report {
                Some(p) => write_file(&p, &r.to_text())?,
                None => print!("{}", r.to_text()),
            }
            Ok(())
        }
        Command::Stats { file, inventory } => {
            let corpus = read_segmented(&file, &splitter(inventory.as_deref())?)?;
            print!("{}", stats_text("", &corpus_stats(&corpus)?));
            Ok(())
        }
        Command::Multirun(a) => cmd_multirun(&a.resolve()?).map(|s| {
            print!("{}", s.to_text());
        }),
        Command::Synth {
            sentences,
            vocab,
            seed,
            min_image,
            max_image,
            min_words,
            max_words,
            alphabet,
            source_out,
            gold_out,
            target_out,
            lexicon_out,
        } => {
            let cfg = SynthConfig {
                sentences,
                source_vocab: vocab,
                seed,
                min_image,
                max_image,
                min_words,
                max_words,
                alphabet,
            };
            let c = generate(&cfg).map_err(CliError::Usage)?;
            write_file(&source_out, &c.source_text())?;
            write_file(&gold_out, &c.gold_text())?;
            if let Some(p) = target_out {
                write_file(&p, &c.unsegmented_text())?;
            }
            if let Some(p) = lexicon_out {
                let text: String = c.lexicon.iter().map(|(s, t)| format!("{s}\t{t}\n")).collect();
                write_file(&p, &text)?;
            }
            Ok(())
        }
        Command::Gradcheck => {
            let cases = gradcheck::run_gradcheck().map_err(|e| CliError::Numeric(e.to_string()))?;
            print!("{}", gradcheck::format_cases(&cases));
            if cases.iter().all(|c| c.passed()) {
                Ok(())
            } else {
                Err(CliError::Numeric(format!(
                    "gradient check above tolerance {}",
                    gradcheck::GRADCHECK_TOLERANCE
                )))
            }
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Usage(format!("missing `{key}`")))
}

fn require_input<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    let path = require(p, key)?;
    if !path.is_file() {
        return Err(CliError::Usage(format!("{key} `{}` is not a readable file", path.display())));
    }
    Ok(path)
}

fn check_output(p: &Path) -> Result<(), CliError> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => Err(CliError::Usage(format!(
            "directory of `{}` does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn splitter(inventory: Option<&Path>) -> Result<UnitSplitter, CliError> {
    match inventory {
        Some(p) => Ok(UnitSplitter::from_inventory_file(p)?),
        None => Ok(UnitSplitter::Chars),
    }
}

/// Reads a space-segmented file.
pub fn read_segmented(path: &Path, splitter: &UnitSplitter) -> Result<Vec<SegmentedSentence>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text
        .lines()
        .map(|l| {
            let (units, b) = parse_target_line(l.trim_end_matches('\r'), true, splitter);
            SegmentedSentence::new(units, b.unwrap_or_default())
        })
        .collect())
}

pub fn gold_segmentation(sentences: &[ParallelSentence]) -> Option<Vec<SegmentedSentence>> {
    sentences
        .iter()
        .map(|s| {
            s.gold_boundaries
                .clone()
                .map(|b| SegmentedSentence::new(s.target_units.clone(), b))
        })
        .collect()
}

fn stats_text(prefix: &str, s: &CorpusStats) -> String {
    format_entries(&[
        (format!("{prefix}tokens"), s.tokens as f64),
        (format!("{prefix}types"), s.types as f64),
        (format!("{prefix}avg_token_len"), s.avg_token_len),
        (format!("{prefix}avg_sent_len"), s.avg_sent_len),
    ])
}

/// Everything one train-and-segment run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub matrices: Vec<AttentionMatrix>,
    pub segmented: Vec<SegmentedSentence>,
}

/// Resolves the length ratio for `aux_ratio` training.
pub fn resolve_ratio(cfg: &RunConfig, pairs: &[SentencePair]) -> Result<f64, CliError> {
    match cfg.ratio_source {
        RatioSource::Explicit => Ok(cfg.hp.ratio),
        RatioSource::FirstGold => compute_ratio(pairs, cfg.ratio_include_eos).map_err(|e| {
            CliError::Usage(format!("{e}; pass gold=true or ratio_source=explicit"))
        }),
    }
}

/// Trains on `sentences` and force-decodes the same corpus.
pub fn train_and_segment<F: FnMut(&EpochLog)>(
    sentences: &[ParallelSentence],
    hp: &HyperParams,
    observer: F,
) -> Result<RunOutcome, CliError> {
    let (source_vocab, target_vocab) = build_vocabularies(sentences);
    let pairs = encode_corpus(sentences, &source_vocab, &target_vocab).pairs;
    let (params, log) = train(&pairs, hp, source_vocab.len(), target_vocab.len(), observer)?;
    let model = Model {
        hp: hp.clone(),
        source_vocab,
        target_vocab,
        params,
    };
    let matrices = force_decode_corpus(&pairs, &model.params, hp)?;
    let units: Vec<Vec<String>> = sentences.iter().map(|s| s.target_units.clone()).collect();
    let segmented = segment_corpus(&units, &matrices)?;
    Ok(RunOutcome {
        model,
        log,
        matrices,
        segmented,
    })
}

fn load_training_corpus(cfg: &RunConfig) -> Result<Vec<ParallelSentence>, CliError> {
    let source = require_input(&cfg.source, "source")?;
    let target = require_input(&cfg.target, "target")?;
    let split = splitter(cfg.inventory.as_deref())?;
    Ok(load_parallel(source, target, cfg.gold, &split)?)
}

/// Fills in the ratio for `aux_ratio` and writes the config echo.
fn prepare(cfg: &RunConfig, sentences: &[ParallelSentence]) -> Result<(HyperParams, Option<f64>), CliError> {
    let mut hp = cfg.hp.clone();
    let mut ratio = None;
    if hp.loss_mode == LossMode::AuxRatio {
        let (sv, tv) = build_vocabularies(sentences);
        let pairs = encode_corpus(sentences, &sv, &tv).pairs;
        let r = resolve_ratio(cfg, &pairs)?;
        hp.ratio = r;
        hp.validate()?;
        ratio = Some(r);
    }
    if let Some(echo) = &cfg.echo {
        check_output(echo)?;
        let resolved = RunConfig {
            hp: hp.clone(),
            ratio_source: if ratio.is_some() { RatioSource::Explicit } else { cfg.ratio_source },
            ..cfg.clone()
        };
        write_file(echo, &resolved.to_text())?;
    }
    Ok((hp, ratio))
}

fn log_path(cfg: &RunConfig, model: &Path) -> PathBuf {
    cfg.log.clone().unwrap_or_else(|| {
        let mut s = model.as_os_str().to_owned();
        s.push(".log");
        PathBuf::from(s)
    })
}

fn write_log_header(w: &mut impl Write, ratio: Option<f64>) -> std::io::Result<()> {
    if let Some(r) = ratio {
        writeln!(w, "# ratio\t{r}")?;
    }
    writeln!(w, "{}", EpochLog::HEADER)
}

/// Trains a model from the configured corpus and writes it with its loss log.
pub fn cmd_train(cfg: &RunConfig) -> Result<LossBreakdown, CliError> {
    let model_path = require(&cfg.model, "model")?;
    check_output(model_path)?;
    let log_path = log_path(cfg, model_path);
    check_output(&log_path)?;
    let sentences = load_training_corpus(cfg)?;
    let (hp, ratio) = prepare(cfg, &sentences)?;

    let mut log = create(&log_path)?;
    write_log_header(&mut log, ratio).map_err(|e| io_err(&log_path, e))?;
    let (source_vocab, target_vocab) = build_vocabularies(&sentences);
    let pairs = encode_corpus(&sentences, &source_vocab, &target_vocab).pairs;
    let mut write_err = None;
    let (params, entries) = train(&pairs, &hp, source_vocab.len(), target_vocab.len(), |e| {
        if write_err.is_none() {
            if let Err(err) = writeln!(log, "{}", e.to_line()).and_then(|_| log.flush()) {
                write_err = Some(err);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(&log_path, e));
    }
    let model = Model {
        hp,
        source_vocab,
        target_vocab,
        params,
    };
    model.save(model_path).map_err(|e| CliError::Data(format!("{}: {e}", model_path.display())))?;
    let last = entries.last().map(|e| e.loss).unwrap_or(LossBreakdown::new(0.0, 0.0, 0.0));
    println!(
        "nll\t{}\naux\t{}\nlambda\t{}\ntotal\t{}",
        last.nll, last.aux, last.lambda_aux, last.total
    );
    Ok(last)
}

/// Segments the configured corpus with a trained model.
pub fn cmd_segment(cfg: &RunConfig) -> Result<(), CliError> {
    let model_path = require_input(&cfg.model, "model")?;
    let output = require(&cfg.output, "output")?;
    check_output(output)?;
    if let Some(d) = &cfg.attention_dump {
        check_output(d)?;
    }
    let sentences = load_training_corpus(cfg)?;
    let model = Model::load(model_path).map_err(|e| CliError::Data(format!("{}: {e}", model_path.display())))?;
    let enc = encode_corpus(&sentences, &model.source_vocab, &model.target_vocab);
    let matrices = force_decode_corpus(&enc.pairs, &model.params, &model.hp)?;
    let units: Vec<Vec<String>> = sentences.iter().map(|s| s.target_units.clone()).collect();
    let segmented = segment_corpus(&units, &matrices)?;

    let mut out = create(output)?;
    for s in &segmented {
        writeln!(out, "{}", s.to_line()).map_err(|e| io_err(output, e))?;
    }
    out.flush().map_err(|e| io_err(output, e))?;
    if let Some(d) = &cfg.attention_dump {
        let mut w = create(d)?;
        write_attention_dump(&mut w, &matrices)
            .and_then(|_| w.flush())
            .map_err(|e| io_err(d, e))?;
    }
    eprintln!(
        "segmented {} sentences; unknown symbols: {} source, {} target",
        segmented.len(),
        enc.source_unknown,
        enc.target_unknown
    );
    Ok(())
}

fn source_word_lengths(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text
        .lines()
        .map(|l| {
            let mut v: Vec<f64> = l
                .split_whitespace()
                .map(|w| w.chars().count().max(1) as f64)
                .collect();
            v.push(1.0);
            v
        })
        .collect())
}

/// Scores `pred` against `gold` and prints both corpora's statistics.
pub fn cmd_evaluate(
    pred: &Path,
    gold: &Path,
    splitter: &UnitSplitter,
    correlation: Option<(&Path, &Path)>,
    include_eos: bool,
) -> Result<MetricsReport, CliError> {
    let p = read_segmented(pred, splitter)?;
    let g = read_segmented(gold, splitter)?;
    if p.len() != g.len() {
        return Err(CliError::Data(format!(
            "{} has {} lines but {} has {}",
            pred.display(),
            p.len(),
            gold.display(),
            g.len()
        )));
    }
    if let Some(i) = p.iter().zip(&g).position(|(a, b)| a.units != b.units) {
        return Err(CliError::Data(format!("line {}: predicted and gold unit streams differ", i + 1)));
    }
    let mut report = MetricsReport::compute(&p, &g)?;
    if let Some((dump, source)) = correlation {
        let f = File::open(dump).map_err(|e| io_err(dump, e))?;
        let matrices = read_attention_dump(BufReader::new(f))?;
        let lengths = source_word_lengths(source)?;
        report.correlation = Some(length_attention_correlation(&matrices, &lengths, include_eos)?);
    }
    print!("{}", stats_text("pred_", &report.stats));
    print!("{}", stats_text("gold_", &corpus_stats(&g)?));
    Ok(report)
}

/// Per-run reports and their per-metric mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiRunSummary {
    pub seeds: Vec<u64>,
    pub reports: Vec<MetricsReport>,
    /// `(key, mean, sample standard deviation)`; σ is 0 for a single run.
    pub metrics: Vec<(String, f64, f64)>,
}

impl MultiRunSummary {
    pub fn from_reports(seeds: Vec<u64>, reports: Vec<MetricsReport>) -> Self {
        let mut metrics = Vec::new();
        if let Some(first) = reports.first() {
            for (k, _) in first.entries() {
                let vals: Vec<f64> = reports
                    .iter()
                    .filter_map(|r| r.entries().into_iter().find(|(kk, _)| *kk == k).map(|(_, v)| v))
                    .collect();
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let sd = if vals.len() > 1 {
                    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                metrics.push((k.to_string(), mean, sd));
            }
        }
        MultiRunSummary { seeds, reports, metrics }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("metric\tmean\tstd\n");
        for (k, m, sd) in &self.metrics {
            s.push_str(&format!("{k}\t{m}\t{sd}\n"));
        }
        s
    }
}

/// Runs train, segment and evaluate for seeds `seed..seed+runs`, writing
/// each run under `out_dir/seed_<n>/` and the summary to
/// `out_dir/summary.tsv`.
pub fn cmd_multirun(cfg: &RunConfig) -> Result<MultiRunSummary, CliError> {
    let out_dir = require(&cfg.out_dir, "out_dir")?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let sentences = load_training_corpus(cfg)?;
    let gold = gold_segmentation(&sentences)
        .ok_or_else(|| CliError::Usage("multirun needs a gold-segmented target (gold = true)".into()))?;
    let (hp, ratio) = prepare(cfg, &sentences)?;
    let word_lengths: Vec<Vec<f64>> = {
        let (sv, tv) = build_vocabularies(&sentences);
        encode_corpus(&sentences, &sv, &tv)
            .pairs
            .into_iter()
            .map(|p| p.source_word_lengths)
            .collect()
    };

    let mut seeds = Vec::new();
    let mut reports = Vec::new();
    for k in 0..cfg.runs as u64 {
        let seed = hp.seed + k;
        let run_hp = HyperParams { seed, ..hp.clone() };
        let dir = out_dir.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let log_path = dir.join("loss.log");
        let mut log = create(&log_path)?;
        write_log_header(&mut log, ratio).map_err(|e| io_err(&log_path, e))?;
        let outcome = train_and_segment(&sentences, &run_hp, |e| {
            let _ = writeln!(log, "{}", e.to_line());
        })?;
        log.flush().map_err(|e| io_err(&log_path, e))?;
        let model_path = dir.join("model.txt");
        outcome
            .model
            .save(&model_path)
            .map_err(|e| CliError::Data(format!("{}: {e}", model_path.display())))?;
        let seg: String = outcome.segmented.iter().map(|s| format!("{}\n", s.to_line())).collect();
        write_file(&dir.join("segmented.txt"), &seg)?;
        let mut report = MetricsReport::compute(&outcome.segmented, &gold)?;
        report.correlation =
            length_attention_correlation(&outcome.matrices, &word_lengths, cfg.correlation_include_eos).ok();
        write_file(&dir.join("report.tsv"), &report.to_text())?;
        eprintln!("seed {seed}: BF {:.2}", 100.0 * report.boundary.f);
        seeds.push(seed);
        reports.push(report);
    }
    let summary = MultiRunSummary::from_reports(seeds, reports);
    write_file(&out_dir.join("summary.tsv"), &summary.to_text())?;
    Ok(summary)
}
