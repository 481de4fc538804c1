//! Independent oracles and random generators shared by the integration
//! tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use alignseg::corpus::{
    build_vocabularies, encode_corpus, parse_parallel, sequential_batches, SentencePair, UnitSplitter,
};
use alignseg::gradcore::{Graph, Matrix};
use alignseg::model::{forward_teacher_forced, init_parameters, AttentionMode, HyperParams};
use alignseg::segmentation::SegmentedSentence;
use rand::Rng;

/// First column holding the row maximum, found by testing every column
/// against all others.
pub fn first_argmax(row: &[f64]) -> usize {
    (0..row.len())
        .find(|&j| row.iter().all(|&v| v <= row[j]))
        .expect("non-empty row without NaN")
}

/// Boundaries from maximal runs of equal alignment over all rows but the
/// last, as cumulative run lengths.
pub fn change_point_oracle(rows: &[Vec<f64>]) -> BTreeSet<usize> {
    let real = &rows[..rows.len() - 1];
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for r in real {
        let a = first_argmax(r);
        match runs.last_mut() {
            Some((col, len)) if *col == a => *len += 1,
            _ => runs.push((a, 1)),
        }
    }
    let mut out = BTreeSet::new();
    let mut pos = 0;
    for (_, len) in runs.iter().take(runs.len().saturating_sub(1)) {
        pos += len;
        out.insert(pos);
    }
    out
}

/// Row-stochastic `I x J` matrix; coarse weights make ties common.
pub fn random_stochastic<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let coarse = rng.random_bool(0.5);
            let mut r: Vec<f64> = (0..cols)
                .map(|_| {
                    if coarse {
                        rng.random_range(0..4) as f64
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect();
            if r.iter().all(|&v| v == 0.0) {
                r[rng.random_range(0..cols)] = 1.0;
            }
            let s: f64 = r.iter().sum();
            r.iter().map(|v| v / s).collect()
        })
        .collect()
}

/// A line of letters with spaces at random positions.
pub fn random_line<R: Rng>(rng: &mut R, units: &[char], p: f64) -> String {
    let mut s = String::new();
    for (i, c) in units.iter().enumerate() {
        if i > 0 && rng.random_bool(p) {
            s.push(' ');
        }
        s.push(*c);
    }
    s
}

pub fn random_units<R: Rng>(rng: &mut R, max: usize) -> Vec<char> {
    let n = rng.random_range(1..=max);
    (0..n).map(|_| (b'a' + rng.random_range(0..5u8)) as char).collect()
}

/// Scores computed from rendered lines: a boundary is a space, identified
/// by how many units precede it; a token is a `(start, end)` unit span of a
/// space-separated word.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleScores {
    pub bp: f64,
    pub br: f64,
    pub bf: f64,
    pub wp: f64,
    pub wr: f64,
    pub wf: f64,
    pub x: f64,
}

fn line_sets(line: &str) -> (HashSet<usize>, HashSet<(usize, usize)>) {
    let mut breaks = HashSet::new();
    let mut tokens = HashSet::new();
    let mut start = 0;
    for (k, word) in line.split(' ').enumerate() {
        if k > 0 {
            breaks.insert(start);
        }
        let len = word.chars().count();
        tokens.insert((start, start + len));
        start += len;
    }
    (breaks, tokens)
}

fn safe_ratio(num: usize, den: usize, other: usize) -> f64 {
    match (den, other) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => num as f64 / den as f64,
    }
}

fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn metric_oracle(pred: &[String], gold: &[String]) -> OracleScores {
    let (mut bm, mut bp, mut bg) = (0, 0, 0);
    let (mut tm, mut tp, mut tg) = (0, 0, 0);
    let mut exact = 0;
    for (p, g) in pred.iter().zip(gold) {
        let (pb, pt) = line_sets(p);
        let (gb, gt) = line_sets(g);
        bm += pb.iter().filter(|b| gb.contains(b)).count();
        bp += pb.len();
        bg += gb.len();
        tm += pt.iter().filter(|t| gt.contains(t)).count();
        tp += pt.len();
        tg += gt.len();
        exact += usize::from(p == g);
    }
    let bpr = safe_ratio(bm, bp, bg);
    let brr = safe_ratio(bm, bg, bp);
    let wpr = safe_ratio(tm, tp, tg);
    let wrr = safe_ratio(tm, tg, tp);
    OracleScores {
        bp: bpr,
        br: brr,
        bf: f_measure(bpr, brr),
        wp: wpr,
        wr: wrr,
        wf: f_measure(wpr, wrr),
        x: exact as f64 / pred.len() as f64,
    }
}

pub fn segmented(line: &str) -> SegmentedSentence {
    let (units, b) = alignseg::corpus::parse_target_line(line, true, &UnitSplitter::Chars);
    SegmentedSentence::new(units, b.unwrap())
}

/// Encodes a small random parallel corpus with sentences of varied lengths.
pub fn random_corpus<R: Rng>(rng: &mut R, sentences: usize) -> (Vec<SentencePair>, usize, usize) {
    let words = ["la", "maison", "bleue", "chat", "dort", "ici", "un", "x"];
    let mut src = String::new();
    let mut tgt = String::new();
    for _ in 0..sentences {
        let n = rng.random_range(1..=6);
        let ws: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
        src.push_str(&ws.join(" "));
        src.push('\n');
        let m = rng.random_range(1..=12);
        tgt.extend((0..m).map(|_| (b'a' + rng.random_range(0..6u8)) as char));
        tgt.push('\n');
    }
    let s = parse_parallel(src.as_bytes(), tgt.as_bytes(), false, &UnitSplitter::Chars).unwrap();
    let (sv, tv) = build_vocabularies(&s);
    (encode_corpus(&s, &sv, &tv).pairs, sv.len(), tv.len())
}

/// Worst row-sum error over real rows, and whether every padded source
/// column of every real row is exactly zero, over a full batched forced
/// decode.
pub fn attention_normalization(
    pairs: &[SentencePair],
    sv: usize,
    tv: usize,
    mode: AttentionMode,
    seed: u64,
) -> (f64, bool) {
    let hp = HyperParams {
        embedding_dim: 8,
        encoder_hidden: 8,
        decoder_hidden: 8,
        attention_hidden: 8,
        attention_mode: mode,
        ..HyperParams::default()
    };
    let params = init_parameters(&hp, sv, tv, seed).unwrap();
    let mut worst: f64 = 0.0;
    let mut zeros = true;
    for batch in sequential_batches(pairs, 7) {
        let mut g = Graph::new();
        let out = forward_teacher_forced(&mut g, &params, &hp, &batch, None).unwrap();
        for (i, a) in out.attention.iter().enumerate() {
            let m: &Matrix = g.value(*a);
            for r in 0..batch.size() {
                if i >= batch.target_lengths[r] {
                    continue;
                }
                let row = m.row(r);
                let j = batch.source_lengths[r];
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                zeros &= row[j..].iter().all(|&v| v == 0.0);
            }
        }
    }
    (worst, zeros)
}
