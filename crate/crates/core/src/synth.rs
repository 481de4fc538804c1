//! Synthetic parallel corpora with a known segmentation.
//!
//! Each source word is mapped to a distinct target string; a target line is
//! the concatenation of its source words' images, so the gold segmentation
//! has exactly one token per source word.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SOURCE_LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sentences: usize,
    pub source_vocab: usize,
    pub seed: u64,
    /// Inclusive range of target image lengths.
    pub min_image: usize,
    pub max_image: usize,
    /// Inclusive range of words per sentence.
    pub min_words: usize,
    pub max_words: usize,
    /// Number of distinct target characters.
    pub alphabet: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 500,
            source_vocab: 20,
            seed: 1,
            min_image: 2,
            max_image: 6,
            min_words: 3,
            max_words: 8,
            alphabet: 8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.sentences == 0 || self.source_vocab == 0 {
            return Err("sentences and source_vocab must be at least 1".into());
        }
        if self.min_image == 0 || self.min_image > self.max_image {
            return Err(format!("bad image length range {}..={}", self.min_image, self.max_image));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(format!("bad words-per-sentence range {}..={}", self.min_words, self.max_words));
        }
        if !(2..=26).contains(&self.alphabet) {
            return Err(format!("alphabet size {} outside 2..=26", self.alphabet));
        }
        let capacity: f64 = (self.min_image..=self.max_image)
            .map(|l| (self.alphabet as f64).powi(l as i32))
            .sum();
        if capacity < 2.0 * self.source_vocab as f64 {
            return Err("too few possible images for an injective mapping".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    /// `(source word, target image)`, one entry per source word.
    pub lexicon: Vec<(String, String)>,
    pub source_lines: Vec<String>,
    /// Images joined by single spaces.
    pub gold_lines: Vec<String>,
}

fn random_string(rng: &mut ChaCha8Rng, letters: &[u8], len: usize) -> String {
    (0..len).map(|_| *letters.choose(rng).expect("non-empty") as char).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus, String> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let target_letters = &SOURCE_LETTERS[..cfg.alphabet];

    let mut seen_src = HashSet::new();
    let mut seen_tgt = HashSet::new();
    let mut lexicon = Vec::with_capacity(cfg.source_vocab);
    while lexicon.len() < cfg.source_vocab {
        let sl = rng.random_range(2..=9);
        let src = random_string(&mut rng, SOURCE_LETTERS, sl);
        if !seen_src.insert(src.clone()) {
            continue;
        }
        let tgt = loop {
            let tl = rng.random_range(cfg.min_image..=cfg.max_image);
            let t = random_string(&mut rng, target_letters, tl);
            if seen_tgt.insert(t.clone()) {
                break t;
            }
        };
        lexicon.push((src, tgt));
    }

    let mut source_lines = Vec::with_capacity(cfg.sentences);
    let mut gold_lines = Vec::with_capacity(cfg.sentences);
    for _ in 0..cfg.sentences {
        let n = rng.random_range(cfg.min_words..=cfg.max_words);
        let words: Vec<&(String, String)> = (0..n).map(|_| lexicon.choose(&mut rng).expect("non-empty")).collect();
        source_lines.push(words.iter().map(|w| w.0.as_str()).collect::<Vec<_>>().join(" "));
        gold_lines.push(words.iter().map(|w| w.1.as_str()).collect::<Vec<_>>().join(" "));
    }
    Ok(SynthCorpus {
        lexicon,
        source_lines,
        gold_lines,
    })
}

impl SynthCorpus {
    pub fn source_text(&self) -> String {
        self.source_lines.iter().map(|l| format!("{l}\n")).collect()
    }

    pub fn gold_text(&self) -> String {
        self.gold_lines.iter().map(|l| format!("{l}\n")).collect()
    }

    /// Gold lines with spaces removed.
    pub fn unsegmented_text(&self) -> String {
        self.gold_lines.iter().map(|l| format!("{}\n", l.replace(' ', ""))).collect()
    }
}
