//! Losses, the auxiliary-loss schedule, Adam and the epoch loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{epoch_batches, Batch, SentencePair};
use crate::gradcore::{smooth_abs, GradError, Gradients, Graph, Matrix, ParameterStore, Var};
use crate::model::{forward_teacher_forced, init_parameters, HyperParams, LossMode, ModelError, ModelParameters};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Sentences used to estimate the target/source length ratio.
pub const RATIO_SENTENCES: usize = 100;

/// RNG stream for dropout masks, kept apart from the batching streams.
const DROPOUT_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("non-finite gradient for `{param}` at epoch {epoch}, batch {batch}")]
    NonFiniteGradient { epoch: usize, batch: usize, param: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("auxiliary loss needs at least one attention row")]
    NoRows,
    #[error("no gold-segmented sentences to estimate the length ratio from")]
    NoGold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub nll: f64,
    pub aux: f64,
    pub lambda_aux: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(nll: f64, aux: f64, lambda_aux: f64) -> Self {
        LossBreakdown {
            nll,
            aux,
            lambda_aux,
            total: nll + lambda_aux * aux,
        }
    }
}

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tnll\taux\tlambda\ttotal";

    pub fn to_line(&self) -> String {
        let l = &self.loss;
        format!("{}\t{}\t{}\t{}\t{}", self.epoch, l.nll, l.aux, l.lambda_aux, l.total)
    }
}

/// `max(k - W, 0) / K`.
pub fn lambda_aux(k: usize, wait: usize, epochs: usize) -> f64 {
    if epochs == 0 {
        return 0.0;
    }
    k.saturating_sub(wait) as f64 / epochs as f64
}

/// Mean negative log-likelihood over the batch's real target positions.
pub fn nll_loss(g: &mut Graph, logits: &[Var], batch: &Batch) -> Result<Var, GradError> {
    let n = batch.num_target_tokens() as f64;
    let mut total: Option<Var> = None;
    for (k, &l) in logits.iter().enumerate() {
        let i = k + 1;
        let weights: Vec<f64> = batch.step_mask(i).as_slice().iter().map(|m| m / n).collect();
        let ce = g.cross_entropy(l, &batch.target_column(i), &weights)?;
        total = Some(match total {
            Some(t) => g.add(t, ce)?,
            None => ce,
        });
    }
    total.ok_or(GradError::BadArgument {
        op: "nll_loss",
        detail: "no decoding steps".into(),
    })
}

/// Sentence-mean of `smooth_abs(I - r·J - Σ_{i<I} <A_i, A_{i+1}>)`, with
/// I and J counting EOS and padded rows left out of the sum.
pub fn aux_loss(g: &mut Graph, attention: &[Var], batch: &Batch, ratio: f64) -> Result<Var, GradError> {
    let b = batch.size();
    let offsets: Vec<f64> = (0..b)
        .map(|r| batch.target_lengths[r] as f64 - ratio * batch.source_lengths[r] as f64)
        .collect();
    let mut x = g.constant(Matrix::column(&offsets));
    for i in 1..attention.len() {
        let dot = g.row_dot(attention[i - 1], attention[i])?;
        // the pair (i, i+1) exists only if row i+1 is real
        let mask = g.constant(batch.step_mask(i + 1));
        let dot = g.mul(dot, mask)?;
        let neg = g.affine(dot, -1.0, 0.0);
        x = g.add(x, neg)?;
    }
    let per_sentence = g.smooth_abs(x);
    Ok(g.mean(per_sentence))
}

/// Closed form of the auxiliary loss for a single `I x J` matrix.
pub fn aux_loss_value(a: &Matrix, ratio: f64) -> Result<f64, TrainError> {
    if a.rows() == 0 {
        return Err(TrainError::NoRows);
    }
    let dots: f64 = (1..a.rows())
        .map(|i| a.row(i - 1).iter().zip(a.row(i)).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    Ok(smooth_abs(a.rows() as f64 - ratio * a.cols() as f64 - dots))
}

/// Gold target tokens per source token over the first
/// [`RATIO_SENTENCES`] gold-segmented sentences. Source counts exclude EOS
/// unless `include_eos` is set.
pub fn compute_ratio(pairs: &[SentencePair], include_eos: bool) -> Result<f64, TrainError> {
    let (mut tgt, mut src) = (0usize, 0usize);
    for p in pairs.iter().filter(|p| p.gold_boundaries.is_some()).take(RATIO_SENTENCES) {
        tgt += p.gold_boundaries.as_ref().map_or(0, |b| b.len() + 1);
        src += if include_eos { p.source_len() } else { p.source_len() - 1 };
    }
    if src == 0 {
        return Err(TrainError::NoGold);
    }
    Ok(tgt as f64 / src as f64)
}

/// The `r` applied inside the auxiliary loss: 1 for plain AUX.
pub fn effective_ratio(hp: &HyperParams) -> f64 {
    match hp.loss_mode {
        LossMode::AuxRatio => hp.ratio,
        _ => 1.0,
    }
}

/// Loss nodes of one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub nll: Var,
    pub aux: Option<Var>,
    pub total: Var,
}

/// Builds `nll + λ·aux` for a batch. The auxiliary term is computed when
/// the loss mode asks for it, but only joins the total when `λ > 0`.
pub fn batch_loss(
    g: &mut Graph,
    params: &ModelParameters,
    hp: &HyperParams,
    batch: &Batch,
    lambda: f64,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<BatchLoss, GradError> {
    let out = forward_teacher_forced(g, params, hp, batch, rng)?;
    let nll = nll_loss(g, &out.logits, batch)?;
    if hp.loss_mode == LossMode::Base {
        return Ok(BatchLoss {
            nll,
            aux: None,
            total: nll,
        });
    }
    let aux = aux_loss(g, &out.attention, batch, effective_ratio(hp))?;
    let total = if lambda > 0.0 {
        let scaled = g.affine(aux, lambda, 0.0);
        g.add(nll, scaled)?
    } else {
        nll
    };
    Ok(BatchLoss {
        nll,
        aux: Some(aux),
        total,
    })
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(store: &ParameterStore) -> Self {
        let zeros: Vec<Matrix> = store.iter().map(|(_, _, v)| Matrix::zeros(v.rows(), v.cols())).collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient
/// entry is non-finite; the offending parameter's name is returned instead.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<(), String> {
    for id in store.ids() {
        if !grads.get(id).is_finite() {
            return Err(store.name(id).to_string());
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let g = grads.get(id).as_slice();
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        let p = store.value_mut(id).as_mut_slice();
        for e in 0..p.len() {
            m[e] = ADAM_BETA1 * m[e] + (1.0 - ADAM_BETA1) * g[e];
            v[e] = ADAM_BETA2 * v[e] + (1.0 - ADAM_BETA2) * g[e] * g[e];
            let mhat = m[e] / c1;
            let vhat = v[e] / c2;
            p[e] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Trains from a fresh initialization. `observer` sees every epoch's
/// losses as soon as the epoch ends.
pub fn train<F: FnMut(&EpochLog)>(
    pairs: &[SentencePair],
    hp: &HyperParams,
    source_vocab: usize,
    target_vocab: usize,
    mut observer: F,
) -> Result<(ModelParameters, Vec<EpochLog>), TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    hp.validate()?;
    let mut params = init_parameters(hp, source_vocab, target_vocab, hp.seed)?;
    let mut opt = OptimizerState::new(&params.store);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(DROPOUT_STREAM);
    let dropout = hp.dropout_rate > 0.0;

    let mut log = Vec::with_capacity(hp.epochs);
    for epoch in 1..=hp.epochs {
        let lambda = match hp.loss_mode {
            LossMode::Base => 0.0,
            _ => lambda_aux(epoch, hp.wait, hp.epochs),
        };
        let (mut nll_sum, mut aux_sum, mut tokens, mut sentences) = (0.0, 0.0, 0usize, 0usize);
        for (bi, batch) in epoch_batches(pairs, hp.batch_size, hp.seed, epoch as u64).iter().enumerate() {
            let mut g = Graph::new();
            let r: Option<&mut dyn rand::RngCore> = if dropout { Some(&mut rng) } else { None };
            let loss = batch_loss(&mut g, &params, hp, batch, lambda, r)?;
            let total = g.value(loss.total).item();
            if !total.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: bi + 1 });
            }
            let n = batch.num_target_tokens();
            nll_sum += g.value(loss.nll).item() * n as f64;
            tokens += n;
            if let Some(a) = loss.aux {
                aux_sum += g.value(a).item() * batch.size() as f64;
            }
            sentences += batch.size();
            let grads = g.backward(loss.total, &params.store)?;
            adam_step(&mut params.store, &grads, &mut opt, hp.learning_rate).map_err(|param| {
                TrainError::NonFiniteGradient {
                    epoch,
                    batch: bi + 1,
                    param,
                }
            })?;
        }
        let entry = EpochLog {
            epoch,
            loss: LossBreakdown::new(nll_sum / tokens as f64, aux_sum / sentences as f64, lambda),
        };
        observer(&entry);
        log.push(entry);
    }
    Ok((params, log))
}
