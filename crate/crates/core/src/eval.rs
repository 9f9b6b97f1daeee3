//! NDCG@k, per-fold evaluation, and factorization-machine component analysis.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, QueryGroup};
use crate::error::{Error, Result};
use crate::fields::{ComponentId, FieldId, FieldPair, InteractionMode};
use crate::model::{ModelConfig, RankingModel};
use crate::text::EncodedGroup;
use crate::train::TrainedModel;

pub const HISTOGRAM_BINS: usize = 64;

/// NDCG@k with binary gains.
///
/// Documents are ranked by descending score; equal scores keep ascending index
/// order. Lists with no relevant document score 0.
pub fn ndcg_at_k(scores: &[f64], labels: &[u8], k: usize) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("ndcg_at_k", labels.len(), scores.len()));
    }
    if k == 0 {
        return Err(Error::Usage("NDCG cutoff must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let discount = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = order
        .iter()
        .take(k)
        .enumerate()
        .map(|(rank, &i)| f64::from(labels[i]) * discount(rank))
        .sum();
    let relevant = labels.iter().filter(|&&l| l > 0).count();
    let idcg: f64 = (0..relevant.min(k)).map(discount).sum();
    Ok(if idcg == 0.0 { 0.0 } else { dcg / idcg })
}

/// Mean NDCG@k over groups with at least two documents.
///
/// Returns `(mean, groups evaluated, single-document groups skipped)`.
pub fn mean_ndcg(
    model: &RankingModel,
    groups: &[EncodedGroup],
    k: usize,
) -> Result<(f64, usize, usize)> {
    let mut total = 0.0;
    let (mut used, mut skipped) = (0usize, 0usize);
    for g in groups {
        if g.is_single_doc() {
            skipped += 1;
            continue;
        }
        let scores = g
            .docs
            .iter()
            .map(|d| model.score(&g.query, d))
            .collect::<Result<Vec<_>>>()?;
        total += ndcg_at_k(&scores, &g.labels, k)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Eval("no multi-document groups to evaluate".into()));
    }
    Ok((total / used as f64, used, skipped))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldEval {
    pub fold: usize,
    pub mean_ndcg: f64,
    pub groups_evaluated: usize,
    pub single_doc_excluded: usize,
}

pub fn evaluate_groups(
    trained: &TrainedModel,
    groups: &[QueryGroup],
    corpus: &Corpus,
    fold: usize,
    k: usize,
) -> Result<FoldEval> {
    let encoded = trained.encoder.encode_groups(groups, corpus);
    let (mean_ndcg, groups_evaluated, single_doc_excluded) =
        mean_ndcg(&trained.model, &encoded, k)?;
    Ok(FoldEval {
        fold,
        mean_ndcg,
        groups_evaluated,
        single_doc_excluded,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    #[serde(default)]
    pub description: String,
    pub config_hash: String,
    pub k: usize,
    pub param_count: usize,
    pub folds: Vec<FoldEval>,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    pub fn new(
        variant: impl Into<String>,
        config: &ModelConfig,
        k: usize,
        param_count: usize,
        folds: Vec<FoldEval>,
    ) -> Self {
        let means: Vec<f64> = folds.iter().map(|f| f.mean_ndcg).collect();
        let (mean, std) = mean_std(&means);
        EvalReport {
            variant: variant.into(),
            description: String::new(),
            config_hash: config.config_hash(),
            k,
            param_count,
            folds,
            mean,
            std,
        }
    }

    pub fn fold_means(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.mean_ndcg).collect()
    }
}

/// Mean and sample standard deviation (n − 1 denominator; 0 for n < 2).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluate one model per fold on that fold's validation partition.
pub fn evaluate_model(
    variant: &str,
    models: &[TrainedModel],
    validation: &[&[QueryGroup]],
    corpus: &Corpus,
    k: usize,
) -> Result<EvalReport> {
    if models.is_empty() || models.len() != validation.len() {
        return Err(Error::Eval(format!(
            "{} trained models for {} validation partitions",
            models.len(),
            validation.len()
        )));
    }
    let folds = models
        .iter()
        .zip(validation)
        .enumerate()
        .map(|(i, (m, v))| evaluate_groups(m, v, corpus, i, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(
        variant,
        models[0].model.config(),
        k,
        models[0].model.param_count(),
        folds,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentRow {
    pub fold: usize,
    pub event_id: u64,
    pub recipe_id: u64,
    pub label: u8,
    pub scores: Vec<f64>,
    pub final_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentScoreTable {
    pub components: Vec<ComponentId>,
    pub rows: Vec<ComponentRow>,
    /// Pearson correlation of each component with the label, over all rows.
    pub correlations: Vec<(ComponentId, f64)>,
}

impl ComponentScoreTable {
    pub fn column(&self, index: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.scores[index]).collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.rows.iter().map(|r| f64::from(r.label)).collect()
    }

    /// Rows of a single fold, with correlations recomputed on them.
    pub fn fold(&self, fold: usize) -> Result<ComponentScoreTable> {
        let mut t = ComponentScoreTable {
            components: self.components.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| r.fold == fold)
                .cloned()
                .collect(),
            correlations: Vec::new(),
        };
        t.correlations = feature_label_correlation(&t)?;
        Ok(t)
    }

    /// Concatenate tables; correlations are recomputed. When the tables list
    /// different components, rows are widened to the sorted union and a
    /// component a model lacks scores 0.
    pub fn merge(tables: Vec<ComponentScoreTable>) -> Result<ComponentScoreTable> {
        let first = tables
            .first()
            .ok_or_else(|| Error::Eval("no component tables to merge".into()))?;
        let components: Vec<ComponentId> =
            if tables.iter().all(|t| t.components == first.components) {
                first.components.clone()
            } else {
                let union: BTreeSet<ComponentId> = tables
                    .iter()
                    .flat_map(|t| t.components.iter().copied())
                    .collect();
                union.into_iter().collect()
            };
        let mut rows = Vec::new();
        for t in tables {
            if t.components == components {
                rows.extend(t.rows);
                continue;
            }
            let at: Vec<Option<usize>> = components
                .iter()
                .map(|c| t.components.iter().position(|x| x == c))
                .collect();
            rows.extend(t.rows.into_iter().map(|r| ComponentRow {
                scores: at.iter().map(|i| i.map_or(0.0, |i| r.scores[i])).collect(),
                ..r
            }));
        }
        let mut merged = ComponentScoreTable {
            components,
            rows,
            correlations: Vec::new(),
        };
        merged.correlations = feature_label_correlation(&merged)?;
        Ok(merged)
    }
}

/// Per-document component scores of an fwfm model on multi-document groups.
pub fn component_table(
    trained: &TrainedModel,
    groups: &[QueryGroup],
    corpus: &Corpus,
    fold: usize,
) -> Result<ComponentScoreTable> {
    let model = &trained.model;
    let components = model.component_ids();
    let mut rows = Vec::new();
    for g in trained.encoder.encode_groups(groups, corpus) {
        if g.is_single_doc() {
            continue;
        }
        for ((doc, &label), &recipe_id) in g.docs.iter().zip(&g.labels).zip(&g.recipe_ids) {
            let fv = model.field_vectors(&g.query, doc);
            let scores: Vec<f64> = model
                .fwfm_component_scores(&fv)?
                .into_iter()
                .map(|(_, v)| v)
                .collect();
            let final_score = model.score_fields(&fv)?;
            rows.push(ComponentRow {
                fold,
                event_id: g.event_id,
                recipe_id,
                label,
                scores,
                final_score,
            });
        }
    }
    let mut table = ComponentScoreTable {
        components,
        rows,
        correlations: Vec::new(),
    };
    table.correlations = feature_label_correlation(&table)?;
    Ok(table)
}

/// Pearson correlation; a zero-variance input gives 0.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n == 0 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x[..n].iter().zip(&y[..n]) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

pub fn feature_label_correlation(table: &ComponentScoreTable) -> Result<Vec<(ComponentId, f64)>> {
    if table.rows.len() < 2 {
        return Err(Error::Eval(format!(
            "correlation needs at least 2 rows, table has {}",
            table.rows.len()
        )));
    }
    let labels = table.labels();
    Ok(table
        .components
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, pearson(&table.column(i), &labels)))
        .collect())
}

/// Components chosen by label correlation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub pairs: Vec<FieldPair>,
    pub first_order: Vec<FieldId>,
}

impl Selection {
    /// `base` restricted to the selected interactions and first-order terms.
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            interaction_mode: InteractionMode::selected(&self.pairs),
            use_first_order: !self.first_order.is_empty(),
            first_order_fields: Some(self.first_order.clone()),
            ..base.clone()
        }
    }
}

/// Keep the `top_m` components with the largest |correlation|.
///
/// Ties keep canonical component order. With `top_m = None`, every component
/// whose |correlation| exceeds the mean |correlation| is kept.
pub fn select_features_by_correlation(
    correlations: &[(ComponentId, f64)],
    top_m: Option<usize>,
) -> Result<Selection> {
    let n = correlations.len();
    let m = match top_m {
        Some(0) => return Err(Error::Config("cannot select zero features".into())),
        Some(m) if m > n => {
            return Err(Error::Config(format!(
                "top_m = {m} exceeds the {n} available components"
            )))
        }
        Some(m) => m,
        None => {
            if n == 0 {
                return Err(Error::Config("no components to select from".into()));
            }
            let mean = correlations.iter().map(|(_, c)| c.abs()).sum::<f64>() / n as f64;
            correlations
                .iter()
                .filter(|(_, c)| c.abs() > mean)
                .count()
                .max(1)
        }
    };
    let mut ranked: Vec<(ComponentId, f64)> = correlations.to_vec();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    let mut pairs = Vec::new();
    let mut first_order = Vec::new();
    for (c, _) in ranked.into_iter().take(m) {
        match c {
            ComponentId::FirstOrder(f) => first_order.push(f),
            ComponentId::Pair(p) => pairs.push(p),
        }
    }
    pairs.sort();
    first_order.sort();
    Ok(Selection { pairs, first_order })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub component: String,
    pub label: u8,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

/// Fixed-bin histograms of each component, split by label.
///
/// Bins span the component's observed range over both labels; a constant
/// component puts every value in the first bin.
pub fn component_distributions(table: &ComponentScoreTable, bins: usize) -> Vec<HistogramRow> {
    let bins = bins.max(1);
    let mut out = Vec::new();
    for (i, c) in table.components.iter().enumerate() {
        let col = table.column(i);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            continue;
        }
        let width = (hi - lo) / bins as f64;
        let bin_of = |v: f64| {
            if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            }
        };
        for label in [0u8, 1] {
            let mut counts = vec![0usize; bins];
            for (v, r) in col.iter().zip(&table.rows) {
                if r.label == label {
                    counts[bin_of(*v)] += 1;
                }
            }
            for (b, count) in counts.into_iter().enumerate() {
                out.push(HistogramRow {
                    component: c.name(),
                    label,
                    bin_lo: lo + width * b as f64,
                    bin_hi: if b + 1 == bins {
                        hi
                    } else {
                        lo + width * (b + 1) as f64
                    },
                    count,
                });
            }
        }
    }
    out
}

/// CSV with header `component,label,bin_lo,bin_hi,count`.
pub fn write_histograms<W: Write>(w: W, rows: &[HistogramRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
