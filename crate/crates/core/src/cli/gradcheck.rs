//! Finite-difference check of the full model on a toy problem.

use crate::corpus::{build_vocabularies, encode_corpus, parse_parallel, Batch, UnitSplitter};
use crate::gradcore::{finite_diff_check, GradCheckReport, GradError, Graph};
use crate::model::{forward_teacher_forced, init_parameters, AttentionMode, HyperParams, LossMode, ModelParameters};
use crate::training::{aux_loss, nll_loss};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const TOY_INIT_SCALE: f64 = 3.0;

/// Which loss a case differentiates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CheckedLoss {
    Nll,
    Aux { ratio: f64 },
    Combined { lambda: f64, ratio: f64 },
}

#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub attention_mode: AttentionMode,
    pub loss: CheckedLoss,
    pub report: GradCheckReport,
}

impl GradCheckCase {
    pub fn label(&self) -> String {
        let loss = match self.loss {
            CheckedLoss::Nll => "nll".to_string(),
            CheckedLoss::Aux { ratio } => format!("aux(r={ratio})"),
            CheckedLoss::Combined { lambda, ratio } => format!("nll+{lambda}*aux(r={ratio})"),
        };
        format!("{} {loss}", self.attention_mode)
    }

    pub fn passed(&self) -> bool {
        self.report.max_relative_error() < GRADCHECK_TOLERANCE
    }
}

pub fn toy_hyperparams() -> HyperParams {
    HyperParams {
        embedding_dim: 4,
        encoder_hidden: 5,
        decoder_hidden: 6,
        attention_hidden: 4,
        dropout_rate: 0.0,
        ..HyperParams::default()
    }
}

/// Every loss in both attention modes on two toy sentences of different
/// lengths (so padding is exercised).
pub fn run_gradcheck() -> Result<Vec<GradCheckCase>, GradError> {
    let sentences = parse_parallel(
        "maison bleue\nle chat dort ici\n".as_bytes(),
        "abcde\nfgahbci\n".as_bytes(),
        false,
        &UnitSplitter::Chars,
    )
    .expect("toy corpus parses");
    let (sv, tv) = build_vocabularies(&sentences);
    let pairs = encode_corpus(&sentences, &sv, &tv).pairs;
    let batch = Batch::new(&pairs, &[0, 1]);

    let losses = [
        CheckedLoss::Nll,
        CheckedLoss::Aux { ratio: 1.0 },
        CheckedLoss::Aux { ratio: 2.0 },
        CheckedLoss::Combined { lambda: 0.5, ratio: 1.0 },
    ];
    let mut cases = Vec::new();
    for mode in [AttentionMode::Plain, AttentionMode::LengthBias] {
        let hp = HyperParams {
            attention_mode: mode,
            loss_mode: LossMode::AuxRatio,
            ..toy_hyperparams()
        };
        for loss in losses {
            let params = init_parameters(&hp, sv.len(), tv.len(), 7).expect("toy parameters");
            let layout = params.layout;
            let mut store = params.store;
            // At the default init scale many gradients sit near the
            // finite-difference noise floor.
            let ids: Vec<_> = store.ids().collect();
            for id in ids {
                for x in store.value_mut(id).as_mut_slice() {
                    *x *= TOY_INIT_SCALE;
                }
            }
            let report = finite_diff_check(&mut store, GRADCHECK_STEP, |s| {
                let p = ModelParameters {
                    store: s.clone(),
                    layout,
                };
                let mut g = Graph::new();
                let out = forward_teacher_forced(&mut g, &p, &hp, &batch, None)?;
                let root = match loss {
                    CheckedLoss::Nll => nll_loss(&mut g, &out.logits, &batch)?,
                    CheckedLoss::Aux { ratio } => aux_loss(&mut g, &out.attention, &batch, ratio)?,
                    CheckedLoss::Combined { lambda, ratio } => {
                        let nll = nll_loss(&mut g, &out.logits, &batch)?;
                        let aux = aux_loss(&mut g, &out.attention, &batch, ratio)?;
                        let scaled = g.affine(aux, lambda, 0.0);
                        g.add(nll, scaled)?
                    }
                };
                Ok((g, root))
            })?;
            cases.push(GradCheckCase {
                attention_mode: mode,
                loss,
                report,
            });
        }
    }
    Ok(cases)
}

/// Human-readable table: one block per case, one line per parameter.
pub fn format_cases(cases: &[GradCheckCase]) -> String {
    let mut out = String::new();
    for c in cases {
        out.push_str(&format!(
            "{}\tmax_rel_err={:.3e}\t{}\n",
            c.label(),
            c.report.max_relative_error(),
            if c.passed() { "ok" } else { "FAIL" }
        ));
        for p in &c.report.params {
            out.push_str(&format!("  {}\t{:.3e}\n", p.name, p.max_relative_error));
        }
    }
    out
}
