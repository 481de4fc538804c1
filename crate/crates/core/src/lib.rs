//! Bilingual unsupervised word segmentation.
//!
//! A word-to-unit attentional encoder-decoder is trained on a parallel
//! corpus; forced decoding yields one attention matrix per sentence, and a
//! target boundary is placed wherever two consecutive units align to
//! different source words.

pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod gradcore;
pub mod model;
pub mod segmentation;
pub mod synth;
pub mod training;
