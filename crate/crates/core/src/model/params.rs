use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{HyperParams, ModelError};
use crate::gradcore::{Matrix, ParamId, ParameterStore};

/// Standard deviation of the embedding initializer.
pub const EMBEDDING_INIT_STD: f64 = 0.1;

/// Ids of one GRU's gate weights (PyTorch gate layout: reset, update, candidate).
#[derive(Debug, Clone, Copy)]
pub struct GruIds {
    pub w_ir: ParamId,
    pub w_iz: ParamId,
    pub w_in: ParamId,
    pub w_hr: ParamId,
    pub w_hz: ParamId,
    pub w_hn: ParamId,
    pub b_ir: ParamId,
    pub b_iz: ParamId,
    pub b_in: ParamId,
    pub b_hr: ParamId,
    pub b_hz: ParamId,
    pub b_hn: ParamId,
}

const GRU_WEIGHTS: [&str; 6] = ["w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn"];
const GRU_BIASES: [&str; 6] = ["b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn"];

impl GruIds {
    fn resolve(store: &ParameterStore, prefix: &str) -> Result<Self, ModelError> {
        let id = |n: &str| lookup(store, &format!("{prefix}.{n}"));
        Ok(GruIds {
            w_ir: id("w_ir")?,
            w_iz: id("w_iz")?,
            w_in: id("w_in")?,
            w_hr: id("w_hr")?,
            w_hz: id("w_hz")?,
            w_hn: id("w_hn")?,
            b_ir: id("b_ir")?,
            b_iz: id("b_iz")?,
            b_in: id("b_in")?,
            b_hr: id("b_hr")?,
            b_hz: id("b_hz")?,
            b_hn: id("b_hn")?,
        })
    }
}

/// Where each named weight lives in the store.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub source_embedding: ParamId,
    pub target_embedding: ParamId,
    pub encoder_forward: GruIds,
    pub encoder_backward: GruIds,
    pub bridge_w: ParamId,
    pub bridge_b: ParamId,
    pub decoder: GruIds,
    /// `W_a`: decoder state to attention space.
    pub attention_w: ParamId,
    /// `U_a`: encoder state to attention space.
    pub attention_u: ParamId,
    /// `v_a`: attention space to energy.
    pub attention_v: ParamId,
    pub output_w1: ParamId,
    pub output_b1: ParamId,
    pub output_w2: ParamId,
    pub output_b2: ParamId,
}

fn lookup(store: &ParameterStore, name: &str) -> Result<ParamId, ModelError> {
    store
        .id(name)
        .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
}

impl Layout {
    pub fn resolve(store: &ParameterStore) -> Result<Self, ModelError> {
        let id = |n: &str| lookup(store, n);
        Ok(Layout {
            source_embedding: id("source_embedding")?,
            target_embedding: id("target_embedding")?,
            encoder_forward: GruIds::resolve(store, "encoder_forward")?,
            encoder_backward: GruIds::resolve(store, "encoder_backward")?,
            bridge_w: id("bridge.w")?,
            bridge_b: id("bridge.b")?,
            decoder: GruIds::resolve(store, "decoder")?,
            attention_w: id("attention.w")?,
            attention_u: id("attention.u")?,
            attention_v: id("attention.v")?,
            output_w1: id("output.w1")?,
            output_b1: id("output.b1")?,
            output_w2: id("output.w2")?,
            output_b2: id("output.b2")?,
        })
    }
}

/// Every trainable tensor of the encoder-decoder, by name.
#[derive(Debug, Clone)]
pub struct ModelParameters {
    pub store: ParameterStore,
    pub layout: Layout,
}

/// Expected `(name, rows, cols)` of every parameter, in store order.
///
/// Weights multiply row vectors from the right (`x W`), so a map from `a` to
/// `b` features is `a x b`.
pub fn parameter_shapes(hp: &HyperParams, source_vocab: usize, target_vocab: usize) -> Vec<(String, usize, usize)> {
    let e = hp.embedding_dim;
    let he = hp.encoder_hidden;
    let hd = hp.decoder_hidden;
    let a = hp.attention_hidden;
    let mut out = vec![
        ("source_embedding".to_string(), source_vocab, e),
        ("target_embedding".to_string(), target_vocab, e),
    ];
    let mut gru = |prefix: &str, input: usize, hidden: usize| {
        for w in GRU_WEIGHTS {
            let rows = if w.starts_with("w_i") { input } else { hidden };
            out.push((format!("{prefix}.{w}"), rows, hidden));
        }
        for b in GRU_BIASES {
            out.push((format!("{prefix}.{b}"), 1, hidden));
        }
    };
    gru("encoder_forward", e, he);
    gru("encoder_backward", e, he);
    gru("decoder", e + 2 * he, hd);
    out.extend([
        ("bridge.w".to_string(), he, hd),
        ("bridge.b".to_string(), 1, hd),
        ("attention.w".to_string(), hd, a),
        ("attention.u".to_string(), 2 * he, a),
        ("attention.v".to_string(), a, 1),
        ("output.w1".to_string(), e + hd + 2 * he, hd),
        ("output.b1".to_string(), 1, hd),
        ("output.w2".to_string(), hd, target_vocab),
        ("output.b2".to_string(), 1, target_vocab),
    ]);
    out
}

/// Glorot's normalized initialization bound, `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Fresh parameters, deterministic in `seed`.
///
/// Biases start at 0 and embeddings are drawn from N(0, 0.1). GRU matrices
/// are uniform on `±1/sqrt(hidden)`; all other weight matrices use Glorot's
/// normalized uniform.
pub fn init_parameters(
    hp: &HyperParams,
    source_vocab: usize,
    target_vocab: usize,
    seed: u64,
) -> Result<ModelParameters, ModelError> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, EMBEDDING_INIT_STD).expect("valid std");
    let mut store = ParameterStore::new();
    for (name, rows, cols) in parameter_shapes(hp, source_vocab, target_vocab) {
        let leaf = name.rsplit('.').next().unwrap_or(&name);
        let value = if name.ends_with("_embedding") {
            let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            Matrix::from_vec(rows, cols, data)?
        } else if leaf.starts_with('b') {
            Matrix::zeros(rows, cols)
        } else if leaf.starts_with("w_") {
            // GRU gate matrix; `cols` is the hidden size.
            uniform(rows, cols, 1.0 / (cols as f64).sqrt(), &mut rng)
        } else {
            uniform(rows, cols, glorot_bound(rows, cols), &mut rng)
        };
        store.insert(name, value)?;
    }
    let layout = Layout::resolve(&store)?;
    Ok(ModelParameters { store, layout })
}

impl ModelParameters {
    /// Wraps a store loaded from disk, checking names and shapes.
    pub fn from_store(
        store: ParameterStore,
        hp: &HyperParams,
        source_vocab: usize,
        target_vocab: usize,
    ) -> Result<Self, ModelError> {
        for (name, rows, cols) in parameter_shapes(hp, source_vocab, target_vocab) {
            let id = lookup(&store, &name)?;
            let got = store.value(id).shape();
            if got != (rows, cols) {
                return Err(ModelError::ParameterShape {
                    name,
                    expected: (rows, cols),
                    found: got,
                });
            }
        }
        let layout = Layout::resolve(&store)?;
        Ok(ModelParameters { store, layout })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HyperParams {
        HyperParams {
            embedding_dim: 5,
            encoder_hidden: 6,
            decoder_hidden: 7,
            attention_hidden: 4,
            ..HyperParams::default()
        }
    }

    #[test]
    fn biases_start_at_zero() {
        let p = init_parameters(&small(), 9, 8, 3).unwrap();
        for (_, name, v) in p.store.iter() {
            let leaf = name.rsplit('.').next().unwrap();
            if leaf.starts_with('b') {
                assert!(v.as_slice().iter().all(|&x| x == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn glorot_bounds_hold() {
        assert!((glorot_bound(64, 128) - 0.176_776_695_296_636_9).abs() < 1e-12);
        let p = init_parameters(&small(), 9, 8, 3).unwrap();
        let w1 = p.store.value(p.layout.output_w1);
        let bound = glorot_bound(w1.rows(), w1.cols());
        assert!(w1.as_slice().iter().all(|v| v.abs() <= bound));
        let gru = p.store.value(p.layout.decoder.w_hn);
        let b = 1.0 / (7f64).sqrt();
        assert!(gru.as_slice().iter().all(|v| v.abs() <= b));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = init_parameters(&small(), 9, 8, 3).unwrap();
        let b = init_parameters(&small(), 9, 8, 3).unwrap();
        assert_eq!(a.store, b.store);
        let c = init_parameters(&small(), 9, 8, 4).unwrap();
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn shapes_are_consistent() {
        let hp = small();
        let p = init_parameters(&hp, 9, 8, 3).unwrap();
        assert_eq!(p.store.value(p.layout.attention_u).shape(), (12, 4));
        assert_eq!(p.store.value(p.layout.attention_w).shape(), (7, 4));
        assert_eq!(p.store.value(p.layout.attention_v).shape(), (4, 1));
        let again = ModelParameters::from_store(p.store.clone(), &hp, 9, 8).unwrap();
        assert_eq!(again.store, p.store);
        assert!(ModelParameters::from_store(p.store, &hp, 10, 8).is_err());
    }

    #[test]
    fn embeddings_look_normal() {
        let hp = HyperParams {
            embedding_dim: 50,
            ..small()
        };
        let p = init_parameters(&hp, 200, 8, 1).unwrap();
        let e = p.store.value(p.layout.source_embedding).as_slice();
        let n = e.len() as f64;
        let mean = e.iter().sum::<f64>() / n;
        let sd = (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.01 && (sd - 0.1).abs() < 0.01, "{mean} {sd}");
    }
}
