//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Base step; the actual step for an entry is `step * max(1, |value|)`.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator `|analytic| + |numeric|`.
    pub denom_floor: f64,
    /// Check at most this many entries per parameter (sampled without
    /// replacement); `None` checks all of them.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            denom_floor: 1e-6,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub worst_entry: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

fn evaluate<F>(store: &ParamStore, f: &mut F) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    let value = tape.value(loss);
    if value.len() != 1 {
        return Err(Error::Contract(format!("objective returned shape {:?}", value.shape())));
    }
    let v = value.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("objective value {v}")));
    }
    Ok(v)
}

/// Analytic gradients of `f` for `ids` via one reverse pass.
pub fn analytic_gradients<F>(store: &ParamStore, ids: &[ParamId], f: &mut F) -> Result<Vec<(ParamId, Vec<f64>)>>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    let grads = tape.backward(loss)?;
    let nodes: std::collections::HashMap<_, _> = tape.param_nodes().collect();
    Ok(ids
        .iter()
        .map(|&id| {
            let g = nodes
                .get(&id)
                .and_then(|&v| grads.get(v))
                .map_or_else(|| vec![0.0; store.tensor(id).len()], <[f64]>::to_vec);
            (id, g)
        })
        .collect())
}

/// Compares supplied analytic gradients against central differences of `f`.
pub fn compare_with_numeric<F>(
    store: &mut ParamStore,
    analytic: &[(ParamId, Vec<f64>)],
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Vec::with_capacity(analytic.len());
    for (id, grad) in analytic {
        let len = store.tensor(*id).len();
        if grad.len() != len {
            return Err(Error::ValueCount {
                shape: store.tensor(*id).shape().to_vec(),
                expected: len,
                actual: grad.len(),
            });
        }
        let entries: Vec<usize> = match cfg.max_entries {
            Some(k) if k < len => {
                let mut idx = sample(&mut rng, len, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..len).collect(),
        };
        let mut check = ParamCheck {
            name: store.get(*id).name.clone(),
            entries_checked: entries.len(),
            max_rel_error: 0.0,
            worst_entry: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
            passed: true,
        };
        for &e in &entries {
            let original = store.tensor(*id).data()[e];
            let h = cfg.step * original.abs().max(1.0);
            store.get_mut(*id).tensor.data_mut()[e] = original + h;
            let plus = evaluate(store, &mut f);
            store.get_mut(*id).tensor.data_mut()[e] = original - h;
            let minus = evaluate(store, &mut f);
            store.get_mut(*id).tensor.data_mut()[e] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let err = relative_error(grad[e], numeric, cfg.denom_floor);
            if err >= check.max_rel_error {
                check.max_rel_error = err;
                check.worst_entry = e;
                check.analytic_at_worst = grad[e];
                check.numeric_at_worst = numeric;
            }
        }
        check.passed = check.max_rel_error <= cfg.tol;
        params.push(check);
    }
    Ok(GradCheckReport { tol: cfg.tol, params })
}

/// Checks reverse-mode gradients of `f` for each parameter in `ids`.
///
/// `f` must rebuild the whole computation on the tape it is given and be
/// deterministic in the parameter values.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let analytic = analytic_gradients(store, ids, &mut f)?;
    compare_with_numeric(store, &analytic, f, cfg)
}
