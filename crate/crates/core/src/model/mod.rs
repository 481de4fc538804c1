//! Attentional encoder-decoder from source words to target units.
//!
//! A bidirectional GRU encodes the source; each decoding step attends over
//! the encoder states with an additive (MLP) scorer, predicts the next unit
//! from the previous unit, the previous state and the context ("generate
//! first"), and only then advances the decoder GRU with the ground-truth
//! unit. All sentences in a batch are processed together, one row each.

mod file;
mod hparams;
mod params;

use rand::RngCore;
use thiserror::Error;

pub use file::{Model, MODEL_FORMAT_VERSION};
pub use hparams::{AttentionMode, HyperParams, LossMode, HYPERPARAM_KEYS};
pub use params::{
    glorot_bound, init_parameters, parameter_shapes, GruIds, Layout, ModelParameters, EMBEDDING_INIT_STD,
};

use crate::corpus::Batch;
use crate::gradcore::{GradError, Graph, Matrix, ParameterStore, Var};
use crate::segmentation::AttentionMatrix;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("model has no parameter `{0}`")]
    MissingParameter(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("model file I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Encoder output for a batch.
#[derive(Debug, Clone)]
pub struct EncoderStates {
    /// `h_j` for each source position: `B x 2·encoder_hidden`.
    pub states: Vec<Var>,
    /// `U_a h_j` for each position, precomputed once per batch.
    pub keys: Vec<Var>,
    /// Backward-direction state at the first source position.
    pub backward_first: Var,
    /// `B x J` source mask.
    pub mask: Matrix,
    /// `B x J` source word lengths (1 at padding).
    pub word_lengths: Matrix,
}

/// Per-step outputs of a teacher-forced pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Logits for steps `1..=max_steps`: `B x target_vocab` each.
    pub logits: Vec<Var>,
    /// Attention row used at each step: `B x J` each (length-biased in that mode).
    pub attention: Vec<Var>,
}

impl ForwardOutput {
    /// Cuts the batch-wide attention rows into one `I x J` matrix per sentence.
    pub fn attention_matrices(&self, g: &Graph, batch: &Batch) -> Vec<AttentionMatrix> {
        batch
            .ids
            .iter()
            .enumerate()
            .map(|(r, &id)| {
                let rows = batch.target_lengths[r];
                let cols = batch.source_lengths[r];
                let mut m = Matrix::zeros(rows, cols);
                for (i, &a) in self.attention.iter().take(rows).enumerate() {
                    m.row_mut(i).copy_from_slice(&g.value(a).row(r)[..cols]);
                }
                AttentionMatrix::new(id, m)
            })
            .collect()
    }
}

/// `x W + b`.
fn linear(g: &mut Graph, store: &ParameterStore, x: Var, w: crate::gradcore::ParamId, b: crate::gradcore::ParamId) -> Result<Var, GradError> {
    let wv = g.param(store, w);
    let bv = g.param(store, b);
    let xw = g.matmul(x, wv)?;
    g.add(xw, bv)
}

/// One GRU step: `h' = (1 - z) * n + z * h`.
pub fn gru_cell(g: &mut Graph, store: &ParameterStore, ids: &GruIds, x: Var, h: Var) -> Result<Var, GradError> {
    let xr = linear(g, store, x, ids.w_ir, ids.b_ir)?;
    let hr = linear(g, store, h, ids.w_hr, ids.b_hr)?;
    let r_pre = g.add(xr, hr)?;
    let r = g.sigmoid(r_pre);
    let xz = linear(g, store, x, ids.w_iz, ids.b_iz)?;
    let hz = linear(g, store, h, ids.w_hz, ids.b_hz)?;
    let z_pre = g.add(xz, hz)?;
    let z = g.sigmoid(z_pre);
    let xn = linear(g, store, x, ids.w_in, ids.b_in)?;
    let hn = linear(g, store, h, ids.w_hn, ids.b_hn)?;
    let gated = g.mul(hn, r)?;
    let n_pre = g.add(xn, gated)?;
    let n = g.tanh(n_pre);
    let one_minus_z = g.affine(z, -1.0, 1.0);
    let keep_new = g.mul(n, one_minus_z)?;
    let keep_old = g.mul(h, z)?;
    g.add(keep_new, keep_old)
}

/// `mask * new + (1 - mask) * old`, row-wise with a `B x 1` mask.
fn carry_over(g: &mut Graph, new: Var, old: Var, mask: &Matrix) -> Result<Var, GradError> {
    let m = g.constant(mask.clone());
    let inv = g.constant(mask.map(|v| 1.0 - v));
    let a = g.mul(new, m)?;
    let b = g.mul(old, inv)?;
    g.add(a, b)
}

fn embed(
    g: &mut Graph,
    store: &ParameterStore,
    table: crate::gradcore::ParamId,
    indices: &[usize],
    dropout: f64,
    rng: &mut Option<&mut dyn RngCore>,
) -> Result<Var, GradError> {
    let t = g.param(store, table);
    let e = g.gather(t, indices)?;
    match rng {
        Some(r) => g.dropout(e, dropout, *r),
        None => Ok(e),
    }
}

/// Runs both encoder directions over the batch.
///
/// Padded positions leave the recurrent state untouched, so the backward
/// direction starts each sentence from a zero state at its own last token.
/// Dropout is applied to source embeddings when `rng` is given.
pub fn encode(
    g: &mut Graph,
    params: &ModelParameters,
    hp: &HyperParams,
    batch: &Batch,
    rng: &mut Option<&mut dyn RngCore>,
) -> Result<EncoderStates, GradError> {
    let store = &params.store;
    let lay = &params.layout;
    let b = batch.size();
    let j_max = batch.max_source;
    let mut embs = Vec::with_capacity(j_max);
    for j in 0..j_max {
        embs.push(embed(g, store, lay.source_embedding, &batch.source_column(j), hp.dropout_rate, rng)?);
    }
    let masks: Vec<Matrix> = (0..j_max).map(|j| batch.source_mask_column(j)).collect();
    let zero = g.constant(Matrix::zeros(b, hp.encoder_hidden));

    let mut fwd = Vec::with_capacity(j_max);
    let mut h = zero;
    for j in 0..j_max {
        let new = gru_cell(g, store, &lay.encoder_forward, embs[j], h)?;
        h = carry_over(g, new, h, &masks[j])?;
        fwd.push(h);
    }
    let mut bwd = vec![zero; j_max];
    let mut h = zero;
    for j in (0..j_max).rev() {
        let new = gru_cell(g, store, &lay.encoder_backward, embs[j], h)?;
        h = carry_over(g, new, h, &masks[j])?;
        bwd[j] = h;
    }

    let u = g.param(store, lay.attention_u);
    let mut states = Vec::with_capacity(j_max);
    let mut keys = Vec::with_capacity(j_max);
    for j in 0..j_max {
        let hj = g.concat_cols(&[fwd[j], bwd[j]])?;
        keys.push(g.matmul(hj, u)?);
        states.push(hj);
    }
    Ok(EncoderStates {
        states,
        keys,
        backward_first: bwd.first().copied().unwrap_or(zero),
        mask: batch.source_mask.clone(),
        word_lengths: batch.word_lengths.clone(),
    })
}

/// Attention for one decoding step given the previous decoder state.
///
/// Energies `v_a^T tanh(W_a s + U_a h_j)` are divided by the temperature and
/// softmaxed over unmasked positions. In length-bias mode the weights are
/// multiplied by `|w_j|` and renormalized; that row drives the context.
/// Returns the row (`B x J`) and the context (`B x 2·encoder_hidden`).
pub fn attend(
    g: &mut Graph,
    params: &ModelParameters,
    hp: &HyperParams,
    s_prev: Var,
    enc: &EncoderStates,
) -> Result<(Var, Var), GradError> {
    let store = &params.store;
    let lay = &params.layout;
    let w = g.param(store, lay.attention_w);
    let v = g.param(store, lay.attention_v);
    let query = g.matmul(s_prev, w)?;
    let mut energies = Vec::with_capacity(enc.keys.len());
    for &k in &enc.keys {
        let pre = g.add(k, query)?;
        let act = g.tanh(pre);
        energies.push(g.matmul(act, v)?);
    }
    let mut e = g.concat_cols(&energies)?;
    if hp.temperature != 1.0 {
        e = g.affine(e, 1.0 / hp.temperature, 0.0);
    }
    let mut alpha = g.masked_softmax(e, &enc.mask)?;
    if hp.attention_mode == AttentionMode::LengthBias {
        let lengths = g.constant(enc.word_lengths.clone());
        let weighted = g.mul(alpha, lengths)?;
        alpha = g.row_normalize(weighted)?;
    }
    let mut context: Option<Var> = None;
    for (j, &h) in enc.states.iter().enumerate() {
        let a = g.slice_cols(alpha, j, 1)?;
        let term = g.mul(h, a)?;
        context = Some(match context {
            Some(c) => g.add(c, term)?,
            None => term,
        });
    }
    let context = context.ok_or(GradError::FullyMaskedRow { row: 0 })?;
    Ok((alpha, context))
}

/// Output layer `g(ω_{i-1}, s_{i-1}, c_i)`: affine, tanh, affine.
pub fn output_logits(
    g: &mut Graph,
    params: &ModelParameters,
    prev_embedding: Var,
    s_prev: Var,
    context: Var,
) -> Result<Var, GradError> {
    let store = &params.store;
    let lay = &params.layout;
    let input = g.concat_cols(&[prev_embedding, s_prev, context])?;
    let hidden = linear(g, store, input, lay.output_w1, lay.output_b1)?;
    let hidden = g.tanh(hidden);
    linear(g, store, hidden, lay.output_w2, lay.output_b2)
}

/// Decoder update `s_i = GRU(s_{i-1}, [e(Ω_i); c_i])`.
pub fn advance_decoder(
    g: &mut Graph,
    params: &ModelParameters,
    current_embedding: Var,
    s_prev: Var,
    context: Var,
) -> Result<Var, GradError> {
    let input = g.concat_cols(&[current_embedding, context])?;
    gru_cell(g, &params.store, &params.layout.decoder, input, s_prev)
}

/// Generate-first decoding step: logits from the previous state, then the
/// state update with the ground-truth current unit.
pub fn decode_step(
    g: &mut Graph,
    params: &ModelParameters,
    prev_embedding: Var,
    current_embedding: Var,
    s_prev: Var,
    context: Var,
) -> Result<(Var, Var), GradError> {
    let logits = output_logits(g, params, prev_embedding, s_prev, context)?;
    let s = advance_decoder(g, params, current_embedding, s_prev, context)?;
    Ok((logits, s))
}

/// Teacher-forced pass over a batch. Dropout on both embedding layers is
/// active exactly when `rng` is given.
pub fn forward_teacher_forced(
    g: &mut Graph,
    params: &ModelParameters,
    hp: &HyperParams,
    batch: &Batch,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<ForwardOutput, GradError> {
    let store = &params.store;
    let lay = &params.layout;
    let enc = encode(g, params, hp, batch, &mut rng)?;

    let bw = g.param(store, lay.bridge_w);
    let bb = g.param(store, lay.bridge_b);
    let s0 = g.matmul(enc.backward_first, bw)?;
    let s0 = g.add(s0, bb)?;
    let mut s = g.tanh(s0);

    let steps = batch.max_steps;
    let mut prev_emb = embed(g, store, lay.target_embedding, &batch.target_column(0), hp.dropout_rate, &mut rng)?;
    let mut logits = Vec::with_capacity(steps);
    let mut attention = Vec::with_capacity(steps);
    for i in 1..=steps {
        let (alpha, context) = attend(g, params, hp, s, &enc)?;
        logits.push(output_logits(g, params, prev_emb, s, context)?);
        attention.push(alpha);
        if i < steps {
            let cur_emb = embed(g, store, lay.target_embedding, &batch.target_column(i), hp.dropout_rate, &mut rng)?;
            s = advance_decoder(g, params, cur_emb, s, context)?;
            prev_emb = cur_emb;
        }
    }
    Ok(ForwardOutput { logits, attention })
}
