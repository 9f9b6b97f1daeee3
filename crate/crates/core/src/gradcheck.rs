//! Central finite-difference check of analytic gradients.

use crate::error::{Error, Result};
use crate::model::RankingModel;
use crate::params::ParamStore;
use crate::text::EncodedGroup;
use crate::train::{
    generate_pairs, pairwise_loss, pairwise_loss_grad, pointwise_loss, pointwise_loss_grad,
    LossKind,
};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` of each named parameter's
    /// gradient, in store order.
    pub per_param: Vec<(String, f64)>,
    /// Largest per-entry relative error, for diagnostics only: entries far
    /// below the tensor's norm are dominated by finite-difference roundoff.
    pub worst_entry: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.tolerance
    }
}

/// Below this magnitude both gradients are treated as roundoff around zero.
pub const ZERO_GRADIENT: f64 = 1e-8;

/// `|a − n| / max(|a|, |n|)`, or the absolute difference when both are
/// within [`ZERO_GRADIENT`] of zero, where central differences at
/// h = 1e-6 only resolve roundoff (~1e-10).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    scaled(
        analytic.abs().max(numeric.abs()),
        (analytic - numeric).abs(),
    )
}

/// The same measure on whole vectors, using Euclidean norms.
pub fn vector_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    scaled(scale, diff)
}

fn scaled(scale: f64, diff: f64) -> f64 {
    if scale < ZERO_GRADIENT {
        diff
    } else {
        diff / scale
    }
}

/// Compare the gradients currently held in `store` against central differences
/// `(L(θ+h) − L(θ−h)) / 2h` of `loss`, entry by entry.
///
/// The caller must have run the backward pass so that `store`'s gradient
/// buffers hold the analytic gradient of `loss` at the current values.
pub fn numerical_grad_check<F>(
    store: &mut ParamStore,
    h: f64,
    tolerance: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Usage(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let base = loss(store)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!(
            "loss is not finite at the probe point: {base}"
        )));
    }

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut per_param = Vec::with_capacity(ids.len());
    let mut worst_entry = 0.0f64;
    for id in ids {
        let name = store.get(id).name().to_string();
        let analytic = store.grad(id).to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for (i, &a) in analytic.iter().enumerate() {
            let original = store.value(id)[i];
            store.value_mut(id)[i] = original + h;
            let plus = loss(store);
            store.value_mut(id)[i] = original - h;
            let minus = loss(store);
            store.value_mut(id)[i] = original;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while probing `{name}`[{i}]"
                )));
            }
            let n = (plus - minus) / (2.0 * h);
            worst_entry = worst_entry.max(relative_error(a, n));
            numeric.push(n);
        }
        per_param.push((name, vector_relative_error(&analytic, &numeric)));
    }
    Ok(GradCheckReport {
        per_param,
        worst_entry,
        tolerance,
    })
}

/// Mean training loss of `model` over `groups`, the objective the trainer minimises.
pub fn model_loss(model: &RankingModel, groups: &[EncodedGroup], loss: LossKind) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (gi, g) in groups.iter().enumerate() {
        match loss {
            LossKind::Pairwise => {
                for p in generate_pairs(gi, &g.labels) {
                    let s_pos = model.score(&g.query, &g.docs[p.positive])?;
                    let s_neg = model.score(&g.query, &g.docs[p.negative])?;
                    total += pairwise_loss(s_pos, s_neg);
                    n += 1;
                }
            }
            LossKind::Pointwise => {
                for (doc, &label) in g.docs.iter().zip(&g.labels) {
                    total += pointwise_loss(model.score(&g.query, doc)?, label);
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::Usage("no loss terms in the probe batch".into()));
    }
    Ok(total / n as f64)
}

/// Backpropagate [`model_loss`] into the model's gradient buffers.
pub fn model_loss_backward(
    model: &mut RankingModel,
    groups: &[EncodedGroup],
    loss: LossKind,
) -> Result<()> {
    let terms: usize = groups
        .iter()
        .enumerate()
        .map(|(gi, g)| match loss {
            LossKind::Pairwise => generate_pairs(gi, &g.labels).len(),
            LossKind::Pointwise => g.docs.len(),
        })
        .sum();
    if terms == 0 {
        return Err(Error::Usage("no loss terms in the probe batch".into()));
    }
    let scale = 1.0 / terms as f64;
    model.store_mut().zero_grad();
    for (gi, g) in groups.iter().enumerate() {
        match loss {
            LossKind::Pairwise => {
                for p in generate_pairs(gi, &g.labels) {
                    let (pos, neg) = (&g.docs[p.positive], &g.docs[p.negative]);
                    let (s_pos, t_pos) = model.forward(&g.query, pos)?;
                    let (s_neg, t_neg) = model.forward(&g.query, neg)?;
                    let d = pairwise_loss_grad(s_pos, s_neg) * scale;
                    model.backward(&g.query, pos, &t_pos, d)?;
                    model.backward(&g.query, neg, &t_neg, -d)?;
                }
            }
            LossKind::Pointwise => {
                for (doc, &label) in g.docs.iter().zip(&g.labels) {
                    let (s, t) = model.forward(&g.query, doc)?;
                    model.backward(&g.query, doc, &t, pointwise_loss_grad(s, label) * scale)?;
                }
            }
        }
    }
    Ok(())
}

/// Check every parameter gradient of a whole model under one loss.
pub fn model_grad_check(
    model: &mut RankingModel,
    groups: &[EncodedGroup],
    loss: LossKind,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    model_loss_backward(model, groups, loss)?;
    let mut probe = model.clone();
    numerical_grad_check(model.store_mut(), h, tolerance, |s| {
        probe.store_mut().clone_from(s);
        model_loss(&probe, groups, loss)
    })
}
