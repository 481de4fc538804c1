//! Central finite-difference verification of analytic gradients.

use super::{GradError, Graph, ParameterStore, Var};

/// Worst relative error found for one named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients with `(f(p + step) - f(p - step)) / (2 step)`
/// for every entry of every parameter in `store`.
///
/// `loss` builds a fresh graph from the store and returns it with its scalar
/// root. It must be deterministic (no dropout). The store is restored exactly
/// after each perturbation.
pub fn finite_diff_check<F>(store: &mut ParameterStore, step: f64, mut loss: F) -> Result<GradCheckReport, GradError>
where
    F: FnMut(&ParameterStore) -> Result<(Graph, Var), GradError>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(GradError::BadArgument {
            op: "finite_diff_check",
            detail: format!("step {step} must be positive"),
        });
    }
    let (graph, root) = loss(store)?;
    let analytic = graph.backward(root, store)?;
    drop(graph);

    let mut eval = |store: &ParameterStore, name: &str| -> Result<f64, GradError> {
        let (g, r) = loss(store)?;
        let v = g.value(r).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(GradError::NonFiniteLoss { param: name.to_string() })
        }
    };

    let ids: Vec<_> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let name = store.name(id).to_string();
        let n = store.value(id).len();
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let orig = store.value(id).as_slice()[k];
            store.value_mut(id).as_mut_slice()[k] = orig + step;
            let plus = eval(store, &name);
            store.value_mut(id).as_mut_slice()[k] = orig - step;
            let minus = eval(store, &name);
            store.value_mut(id).as_mut_slice()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * step);
            worst = worst.max(relative_error(analytic.get(id).as_slice()[k], numeric));
        }
        params.push(ParamCheck {
            name,
            entries: n,
            max_relative_error: worst,
        });
    }
    Ok(GradCheckReport { params })
}
