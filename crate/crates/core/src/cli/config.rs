//! Flat `key = value` run configuration.
//!
//! Keys are the hyperparameter names plus the paths and switches below.
//! `mode` is a preset that sets `attention_mode` and `loss_mode` together;
//! later keys override earlier ones, so either flag can still be changed
//! after a preset.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::model::{AttentionMode, HyperParams, LossMode, HYPERPARAM_KEYS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Base,
    Bias,
    Aux,
    AuxRatio,
}

impl Mode {
    pub fn apply(self, hp: &mut HyperParams) {
        let (a, l) = match self {
            Mode::Base => (AttentionMode::Plain, LossMode::Base),
            Mode::Bias => (AttentionMode::LengthBias, LossMode::Base),
            Mode::Aux => (AttentionMode::Plain, LossMode::Aux),
            Mode::AuxRatio => (AttentionMode::Plain, LossMode::AuxRatio),
        };
        hp.attention_mode = a;
        hp.loss_mode = l;
    }

    /// The preset matching the flags, if any.
    pub fn of(hp: &HyperParams) -> Option<Mode> {
        match (hp.attention_mode, hp.loss_mode) {
            (AttentionMode::Plain, LossMode::Base) => Some(Mode::Base),
            (AttentionMode::LengthBias, LossMode::Base) => Some(Mode::Bias),
            (AttentionMode::Plain, LossMode::Aux) => Some(Mode::Aux),
            (AttentionMode::Plain, LossMode::AuxRatio) => Some(Mode::AuxRatio),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Base => "base",
            Mode::Bias => "bias",
            Mode::Aux => "aux",
            Mode::AuxRatio => "aux_ratio",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Mode::Base),
            "bias" => Ok(Mode::Bias),
            "aux" => Ok(Mode::Aux),
            "aux_ratio" => Ok(Mode::AuxRatio),
            _ => Err(format!("unknown mode `{s}` (base, bias, aux, aux_ratio)")),
        }
    }
}

/// Where the `aux_ratio` length ratio comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioSource {
    /// Estimated from the first 100 gold-segmented training sentences.
    FirstGold,
    /// The `ratio` key as given.
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hp: HyperParams,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Target lines are space-segmented references.
    pub gold: bool,
    /// Symbol inventory for multi-character target units.
    pub inventory: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub attention_dump: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub log: Option<PathBuf>,
    /// Where to write the resolved configuration.
    pub echo: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub runs: usize,
    pub ratio_source: RatioSource,
    pub ratio_include_eos: bool,
    pub correlation_include_eos: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hp: HyperParams::default(),
            source: None,
            target: None,
            gold: false,
            inventory: None,
            model: None,
            output: None,
            attention_dump: None,
            report: None,
            log: None,
            echo: None,
            out_dir: None,
            runs: 10,
            ratio_source: RatioSource::FirstGold,
            ratio_include_eos: false,
            correlation_include_eos: true,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("bad boolean `{v}` for {key}")),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let path = || Some(PathBuf::from(value));
        match key {
            "mode" => value.parse::<Mode>()?.apply(&mut self.hp),
            "source" => self.source = path(),
            "target" => self.target = path(),
            "gold" => self.gold = parse_bool(key, value)?,
            "inventory" => self.inventory = path(),
            "model" => self.model = path(),
            "output" => self.output = path(),
            "attention_dump" => self.attention_dump = path(),
            "report" => self.report = path(),
            "log" => self.log = path(),
            "echo" => self.echo = path(),
            "out_dir" => self.out_dir = path(),
            "runs" => self.runs = value.parse().map_err(|_| format!("bad value `{value}` for runs"))?,
            "ratio_source" => {
                self.ratio_source = match value {
                    "first_100_gold" => RatioSource::FirstGold,
                    "explicit" => RatioSource::Explicit,
                    _ => return Err(format!("unknown ratio_source `{value}` (first_100_gold, explicit)")),
                }
            }
            "ratio_include_eos" => self.ratio_include_eos = parse_bool(key, value)?,
            "correlation_include_eos" => self.correlation_include_eos = parse_bool(key, value)?,
            _ if HYPERPARAM_KEYS.contains(&key) => self.hp.set(key, value).map_err(|e| e.to_string())?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            self.set(k.trim(), v.trim()).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_text(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Every setting, one `key = value` per line; reloads to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(m) = Mode::of(&self.hp) {
            out.push_str(&format!("# mode {m}\n"));
        }
        for (k, v) in self.hp.to_pairs() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        let paths = [
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
        ];
        for (k, p) in paths {
            if let Some(p) = p {
                out.push_str(&format!("{k} = {}\n", p.display()));
            }
        }
        let ratio_source = match self.ratio_source {
            RatioSource::FirstGold => "first_100_gold",
            RatioSource::Explicit => "explicit",
        };
        out.push_str(&format!("gold = {}\n", self.gold));
        out.push_str(&format!("runs = {}\n", self.runs));
        out.push_str(&format!("ratio_source = {ratio_source}\n"));
        out.push_str(&format!("ratio_include_eos = {}\n", self.ratio_include_eos));
        out.push_str(&format!("correlation_include_eos = {}\n", self.correlation_include_eos));
        out
    }

    pub fn validate(&self) -> Result<(), String> {
        self.hp.validate().map_err(|e| e.to_string())?;
        if self.runs == 0 {
            return Err("runs must be at least 1".into());
        }
        Ok(())
    }
}
