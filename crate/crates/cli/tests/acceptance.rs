//! Acceptance gate: one pass/fail line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p fieldrank-cli --test acceptance`; an optional
//! argument keeps only criteria whose name contains it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use fieldrank::data::{build_query_groups, temporal_split, Corpus, DocumentRecord, SearchEvent};
use fieldrank::eval::{ndcg_at_k, ComponentScoreTable};
use fieldrank::experiment::{
    ingest, run, Dataset, ExperimentConfig, ExperimentResult, VariantSpec,
};
use fieldrank::fields::{interaction_pairs, ComponentId, FieldId, FieldPair, InteractionMode};
use fieldrank::gradcheck::{model_grad_check, numerical_grad_check, GradCheckReport};
use fieldrank::params::ParamStore;
use fieldrank::stats::{paired_t_test, student_t_two_sided, tukey_hsd, TukeyConfig};
use fieldrank::synth::{write_dataset, SynthSpec};
use fieldrank::tensor::{
    cosine, dot_product, hadamard, mean_pool, Activation, DenseLayer, Embedding, Mlp,
};
use fieldrank::text::{EncodedDoc, EncodedGroup};
use fieldrank::train::{HyperParams, LossKind};
use fieldrank::{Architecture, ModelConfig, RankingModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

type Check = Result<(bool, String), String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- gradients

const H: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-5;
const VOCAB: usize = 12;
const COUNTRIES: usize = 3;

fn tokens(rng: &mut ChaCha8Rng, max: usize) -> Vec<u32> {
    let n = rng.random_range(1..=max);
    (0..n).map(|_| rng.random_range(0..VOCAB as u32)).collect()
}

fn random_doc(rng: &mut ChaCha8Rng) -> EncodedDoc {
    EncodedDoc {
        title: tokens(rng, 3),
        description: tokens(rng, 4),
        ingredients: tokens(rng, 3),
        country: rng.random_range(0..COUNTRIES as u32),
    }
}

fn probe_batch(rng: &mut ChaCha8Rng) -> Vec<EncodedGroup> {
    (0..2)
        .map(|g| {
            let n = 3;
            let mut labels = vec![0u8; n];
            labels[n - 1] = 1;
            EncodedGroup {
                query: tokens(rng, 2),
                docs: (0..n).map(|_| random_doc(rng)).collect(),
                labels,
                recipe_ids: (0..n as u64).collect(),
                event_id: g,
            }
        })
        .collect()
}

/// Random parameter values in (-1, 1): gradients well above finite-difference roundoff.
fn spread(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for v in store.value_mut(id) {
            *v = rng.random_range(-1.0..1.0);
        }
    }
}

fn small_config(
    architecture: Architecture,
    mode: InteractionMode,
    first_order: bool,
    seed: u64,
) -> ModelConfig {
    ModelConfig {
        text_dim: 4,
        country_dim: 2,
        mlp_widths: vec![5, 3],
        seed,
        ..ModelConfig::new(architecture, mode, first_order)
    }
}

fn layer_checks(seed: u64) -> Result<Vec<(String, GradCheckReport)>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a7e);
    let mut out = Vec::new();
    let input: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mix: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    for act in [Activation::Identity, Activation::Relu, Activation::Sigmoid] {
        let mut store = ParamStore::new();
        let layer = DenseLayer::new(&mut store, "dense", 4, 3, act, &mut rng).map_err(err)?;
        spread(&mut store, &mut rng);
        let cache = layer.forward(&store, &input).map_err(err)?;
        layer.backward(&mut store, &cache, &mix);
        let r = numerical_grad_check(&mut store, H, GRAD_TOL, |s| {
            Ok(layer
                .forward(s, &input)?
                .output()
                .iter()
                .zip(&mix)
                .map(|(o, w)| o * w)
                .sum())
        })
        .map_err(err)?;
        out.push((format!("dense/{act:?}"), r));
    }

    // embedding pool -> MLP
    let mut store = ParamStore::new();
    let emb = Embedding::new(&mut store, "emb", 6, 3, 0.5, &mut rng).map_err(err)?;
    let mlp =
        Mlp::new(&mut store, "mlp", 3, &[4], 1, Activation::Sigmoid, &mut rng).map_err(err)?;
    spread(&mut store, &mut rng);
    let idx = [1u32, 4, 4];
    let caches = mlp.forward(&store, &emb.pool(&store, &idx)).map_err(err)?;
    let g = mlp.backward(&mut store, &caches, &[1.0]);
    emb.pool_backward(&mut store, &idx, &g);
    let r = numerical_grad_check(&mut store, H, GRAD_TOL, |s| {
        Ok(mlp
            .forward(s, &emb.pool(s, &idx))?
            .last()
            .expect("layers")
            .output()[0])
    })
    .map_err(err)?;
    out.push(("embedding+mlp".into(), r));

    // parameter-free ops, with their inputs held as parameters
    let mut store = ParamStore::new();
    let vals = |rng: &mut ChaCha8Rng| {
        (0..4)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    let u = store.add("u", 1, 4, vals(&mut rng)).map_err(err)?;
    let v = store.add("v", 1, 4, vals(&mut rng)).map_err(err)?;
    let w = store.add("w", 1, 4, vals(&mut rng)).map_err(err)?;
    let c = vals(&mut rng);
    // L = cos(u, v) + <u ⊙ w, c> + <mean(u, w), v>
    let loss = |s: &ParamStore| -> fieldrank::Result<f64> {
        let (u, v, w) = (s.value(u), s.value(v), s.value(w));
        Ok(cosine(u, v)?
            + dot_product(&hadamard(u, w)?, &c)?
            + dot_product(&mean_pool(&[u, w], 4)?, v)?)
    };
    {
        let (uv, vv, wv) = (
            store.value(u).to_vec(),
            store.value(v).to_vec(),
            store.value(w).to_vec(),
        );
        let (gu1, gv1) = fieldrank::tensor::cosine_backward(&uv, &vv, 1.0);
        let (gu2, gw2) = fieldrank::tensor::hadamard_backward(&uv, &wv, &c);
        let pooled = mean_pool(&[&uv, &wv], 4).map_err(err)?;
        let (gp, gv3) = fieldrank::tensor::dot_backward(&pooled, &vv, 1.0);
        let gpool = fieldrank::tensor::mean_pool_backward(2, &gp);
        for i in 0..4 {
            store.grad_mut(u)[i] = gu1[i] + gu2[i] + gpool[i];
            store.grad_mut(v)[i] = gv1[i] + gv3[i];
            store.grad_mut(w)[i] = gw2[i] + gpool[i];
        }
    }
    let r = numerical_grad_check(&mut store, H, GRAD_TOL, loss).map_err(err)?;
    out.push(("cosine+hadamard+dot+mean_pool".into(), r));
    Ok(out)
}

fn gradient_correctness() -> Check {
    let mut worst = (0.0f64, String::new());
    let mut checks = 0;
    let mut record = |label: String, r: &GradCheckReport| {
        checks += 1;
        if let Some((param, e)) = r.worst() {
            if *e >= worst.0 {
                worst = (*e, format!("{label} {param}"));
            }
        }
    };
    for seed in 0..10u64 {
        for (label, r) in layer_checks(seed)? {
            record(format!("seed {seed} {label}"), &r);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = probe_batch(&mut rng);
        let configs = [
            small_config(
                Architecture::Representation,
                InteractionMode::QueryField,
                false,
                seed,
            ),
            small_config(
                Architecture::ImplicitConcat,
                InteractionMode::QueryField,
                false,
                seed,
            ),
            small_config(Architecture::Nrmf, InteractionMode::QueryField, false, seed),
            small_config(Architecture::Nrmf, InteractionMode::All, true, seed),
            small_config(Architecture::Fwfm, InteractionMode::QueryField, true, seed),
            small_config(Architecture::Fwfm, InteractionMode::All, true, seed),
        ];
        for config in configs {
            for loss in [LossKind::Pairwise, LossKind::Pointwise] {
                let mut model = RankingModel::new(config.clone(), VOCAB, COUNTRIES).map_err(err)?;
                spread(model.store_mut(), &mut rng);
                let r = model_grad_check(&mut model, &batch, loss, H, GRAD_TOL).map_err(err)?;
                record(
                    format!(
                        "seed {seed} {} {:?} {loss:?}",
                        config.architecture.name(),
                        config.interaction_mode
                    ),
                    &r,
                );
            }
        }
    }
    Ok((
        worst.0 < GRAD_TOL,
        format!(
            "{checks} checks, max rel err {:.2e} ({}) < {GRAD_TOL:e}",
            worst.0, worst.1
        ),
    ))
}

// ---------------------------------------------------------------- NDCG

/// DCG by explicit rank counting: a document's rank is the number of documents
/// scored higher, or equal with a lower index.
fn ndcg_reference(scores: &[f64], labels: &[u8], k: usize) -> f64 {
    let n = scores.len();
    let mut dcg = 0.0;
    for j in 0..n {
        let rank = (0..n)
            .filter(|&i| scores[i] > scores[j] || (scores[i] == scores[j] && i < j))
            .count();
        if rank < k && labels[j] == 1 {
            dcg += 1.0 / ((rank + 2) as f64).log2();
        }
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let ideal: f64 = (0..positives.min(k))
        .map(|r| 1.0 / ((r + 2) as f64).log2())
        .sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

fn ndcg_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut max_diff, mut invariance_failures) = (0.0f64, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..=30);
        // a coarse grid so ties occur
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-64i32..=64) as f64 / 16.0)
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        let k = rng.random_range(1..=25);
        let got = ndcg_at_k(&scores, &labels, k).map_err(err)?;
        max_diff = max_diff.max((got - ndcg_reference(&scores, &labels, k)).abs());
        let transformed: Vec<f64> = scores.iter().map(|x| x * x * x + 2.0 * x + 1.0).collect();
        if ndcg_at_k(&transformed, &labels, k).map_err(err)? != got {
            invariance_failures += 1;
        }
    }
    Ok((
        max_diff < 1e-12 && invariance_failures == 0,
        format!("1000 instances, max |diff| {max_diff:.1e}, {invariance_failures} monotone-transform mismatches"),
    ))
}

// ---------------------------------------------------------------- FwFM decomposition

fn fwfm_decomposition() -> Check {
    let all = interaction_pairs(&InteractionMode::All).map_err(err)?.len();
    let qf = interaction_pairs(&InteractionMode::QueryField)
        .map_err(err)?
        .len();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut max_diff = 0.0f64;
    let mut inputs = 0;
    for mode_ix in 0..3 {
        for m in 0..10u64 {
            let mode = match mode_ix {
                0 => InteractionMode::All,
                1 => InteractionMode::QueryField,
                _ => {
                    let mut pairs = interaction_pairs(&InteractionMode::All).map_err(err)?;
                    pairs.shuffle(&mut rng);
                    pairs.truncate(rng.random_range(1..=10));
                    InteractionMode::selected(&pairs)
                }
            };
            let config = ModelConfig {
                seed: m,
                ..ModelConfig::new(Architecture::Fwfm, mode, true)
            };
            let mut model = RankingModel::new(config, VOCAB, COUNTRIES).map_err(err)?;
            spread(model.store_mut(), &mut rng);
            for _ in 0..100 {
                let query = tokens(&mut rng, 3);
                let fv = model.field_vectors(&query, &random_doc(&mut rng));
                let sum: f64 = model
                    .fwfm_component_scores(&fv)
                    .map_err(err)?
                    .iter()
                    .map(|(_, v)| v)
                    .sum();
                max_diff = max_diff.max((sum - model.score_fields(&fv).map_err(err)?).abs());
                inputs += 1;
            }
        }
    }
    Ok((
        max_diff < 1e-12 && all == 10 && qf == 4,
        format!("{inputs} inputs over 3 modes, max |Σ − score| {max_diff:.1e}; pairs all={all} query-field={qf}"),
    ))
}

// ---------------------------------------------------------------- pipeline

fn random_log(rng: &mut ChaCha8Rng) -> (Corpus, Vec<SearchEvent>) {
    let doc_ids = 60u64;
    let corpus = Corpus::from_records((1..=doc_ids).filter(|_| rng.random_bool(0.85)).map(|id| {
        DocumentRecord {
            recipe_id: id,
            title: format!("t{id}"),
            description: String::new(),
            ingredients: vec![],
            country: "AA".into(),
        }
    }));
    let n = rng.random_range(40..=300);
    let events = (0..n)
        .map(|i| {
            let len = rng.random_range(1..=12);
            let fetched: Vec<u64> = (0..len)
                .map(|_| rng.random_range(1..=doc_ids + 5))
                .collect();
            let position = rng.random_range(1..=len);
            SearchEvent {
                event_id: i,
                session_id: i / 3,
                query: format!("q{}", rng.random_range(0..20)),
                page: 0,
                recipe_id: fetched[position - 1],
                position,
                fetched_recipe_ids: fetched,
                total_hits: len as u64,
                // few distinct values, so ties in time are common
                timestamp: rng.random_range(0..50),
            }
        })
        .collect();
    (corpus, events)
}

fn pipeline_law() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut logs = 0;
    let mut problems: Vec<String> = Vec::new();
    while logs < 200 {
        let (corpus, events) = random_log(&mut rng);
        let built = build_query_groups(&events, &corpus);
        if built.groups.len() < fieldrank::data::MIN_GROUPS_FOR_SPLIT {
            continue;
        }
        logs += 1;
        for g in &built.groups {
            let positives = g.labels.iter().filter(|&&l| l == 1).count();
            if positives != 1 || g.labels.last() != Some(&1) {
                problems.push(format!("event {}: labels {:?}", g.event_id, g.labels));
            }
        }
        let folds = temporal_split(&built.groups).map_err(err)?;
        let mut seen = std::collections::BTreeSet::new();
        let mut last_time = i64::MIN;
        for (f, fold) in folds.folds.iter().enumerate() {
            for g in fold.train.iter().chain(&fold.validation) {
                if !seen.insert(g.event_id) {
                    problems.push(format!("event {} in two partitions", g.event_id));
                }
                if g.timestamp < last_time {
                    problems.push(format!(
                        "fold {f}: time goes backwards at event {}",
                        g.event_id
                    ));
                }
                last_time = g.timestamp;
            }
            let size = fold.train.len() + fold.validation.len();
            if (fold.train.len() as f64 - 0.75 * size as f64).abs() > 1.0 {
                problems.push(format!("fold {f}: {} of {size} in train", fold.train.len()));
            }
        }
        if seen.len() != built.groups.len() {
            problems.push(format!(
                "{} of {} groups placed in folds",
                seen.len(),
                built.groups.len()
            ));
        }
    }
    let first = problems
        .first()
        .map(|p| format!(", first: {p}"))
        .unwrap_or_default();
    Ok((
        problems.is_empty(),
        format!("{logs} random logs, {} violations{first}", problems.len()),
    ))
}

// ---------------------------------------------------------------- statistics

fn statistics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut max_diff = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(3..=30);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let shift = rng.random_range(-0.3..0.3);
        let b: Vec<f64> = a
            .iter()
            .map(|x| x + shift + rng.random_range(-0.5..0.5))
            .collect();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let nf = n as f64;
        let mean = d.iter().sum::<f64>() / nf;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        let t_ref = mean / (sd / nf.sqrt());
        let dist = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(err)?;
        let p_ref = 2.0 * (1.0 - dist.cdf(t_ref.abs()));
        let got = paired_t_test(&a, &b).map_err(err)?;
        max_diff = max_diff
            .max((got.statistic - t_ref).abs())
            .max((got.p - p_ref).abs());
    }

    // m = 2: Tukey's q is √2·t of the pooled two-sample test
    let cfg = TukeyConfig {
        draws: 200_000,
        seed: 0,
    };
    let mut max_tukey = 0.0f64;
    for n in [5usize, 10, 20] {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.1)).collect();
        let r = tukey_hsd(&[x, y], &cfg).map_err(err)?;
        let t = r.pairs[0].q / 2f64.sqrt();
        max_tukey = max_tukey.max((r.pairs[0].p - student_t_two_sided(t, r.df)).abs());
    }

    let groups: Vec<Vec<f64>> = (0..4)
        .map(|g| {
            (0..10)
                .map(|_| rng.random_range(0.0..1.0) + 0.1 * g as f64)
                .collect()
        })
        .collect();
    let a = tukey_hsd(
        &groups,
        &TukeyConfig {
            draws: 200_000,
            seed: 1,
        },
    )
    .map_err(err)?;
    let b = tukey_hsd(
        &groups,
        &TukeyConfig {
            draws: 200_000,
            seed: 2,
        },
    )
    .map_err(err)?;
    let stability = a
        .pairs
        .iter()
        .zip(&b.pairs)
        .map(|(x, y)| (x.p - y.p).abs())
        .fold(0.0, f64::max);

    Ok((
        max_diff < 1e-6 && max_tukey < 0.005 && stability < 0.005,
        format!(
            "paired t max |diff| {max_diff:.1e} on 50 fixtures; Tukey m=2 vs pooled t {max_tukey:.4}; seed spread {stability:.4}"
        ),
    ))
}

// ---------------------------------------------------------------- experiments

fn variant(
    name: &str,
    architecture: Architecture,
    mode: InteractionMode,
    first_order: bool,
) -> VariantSpec {
    VariantSpec {
        name: name.into(),
        model: ModelConfig::new(architecture, mode, first_order),
        select_from: None,
        match_params_of: None,
    }
}

fn experiment(
    root: &Path,
    name: &str,
    spec: &SynthSpec,
    variants: Vec<VariantSpec>,
) -> Result<(Dataset, ExperimentResult), String> {
    let dir = root.join(name);
    write_dataset(&dir, spec).map_err(err)?;
    let config = ExperimentConfig {
        documents: dir.join("documents.jsonl"),
        logs: dir.join("logs.csv"),
        variants,
        hyper: HyperParams::default(),
        k: 20,
        seed: 0,
        out: None,
        jobs: None,
        paired_tests: Vec::new(),
        tukey: Vec::new(),
        tukey_draws: None,
        save_checkpoints: false,
    };
    let data = ingest(&config.documents, &config.logs).map_err(err)?;
    let result = run(&config, &data).map_err(err)?;
    Ok((data, result))
}

fn fold_means(result: &ExperimentResult, name: &str) -> Result<Vec<f64>, String> {
    result
        .variants
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| v.report.fold_means())
        .ok_or_else(|| format!("variant {name} missing from results"))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean over folds of validation NDCG@k under uniformly random scores.
fn random_baseline(data: &Dataset, k: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut per_fold = Vec::new();
    for fold in &data.folds.folds {
        let mut vals = Vec::new();
        for g in fold.validation.iter().filter(|g| !g.is_single_doc()) {
            let scores: Vec<f64> = (0..g.len()).map(|_| rng.random::<f64>()).collect();
            vals.push(ndcg_at_k(&scores, &g.labels, k).map_err(err)?);
        }
        per_fold.push(mean(&vals));
    }
    Ok(mean(&per_fold))
}

fn end_to_end(data: &Dataset, result: &ExperimentResult) -> Check {
    let model = mean(&fold_means(result, "fwfm-qf")?);
    let baseline = random_baseline(data, 20)?;
    Ok((
        model >= 0.85 && baseline < model,
        format!(
            "FwFM query-field 1st+2nd NDCG@20 {model:.4} (>= 0.85); random scores {baseline:.4}"
        ),
    ))
}

fn component_correlations(result: &ExperimentResult) -> Check {
    let (_, outcome) = result
        .variants
        .iter()
        .find(|(n, _)| n == "fwfm-all")
        .ok_or("variant fwfm-all missing")?;
    let tables: Vec<ComponentScoreTable> = outcome
        .folds
        .iter()
        .filter_map(|f| f.components.clone())
        .collect();
    let merged = ComponentScoreTable::merge(tables).map_err(err)?;
    let corr: BTreeMap<ComponentId, f64> = merged.correlations.iter().copied().collect();
    let qt = ComponentId::Pair(FieldPair::new(FieldId::Query, FieldId::Title).map_err(err)?);
    let (top, top_c) = merged
        .correlations
        .iter()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .copied()
        .ok_or("no components")?;
    let query_only = corr
        .get(&ComponentId::FirstOrder(FieldId::Query))
        .copied()
        .ok_or("no query component")?;
    Ok((
        top == qt && query_only.abs() <= 0.05,
        format!(
            "highest |corr| {} = {top_c:.4}; query-title {:.4}; query first-order {query_only:.4}",
            top.name(),
            corr[&qt]
        ),
    ))
}

fn query_field_beats_all(root: &Path) -> Check {
    let spec = SynthSpec {
        description_title_mix: 0.0,
        ..SynthSpec::default()
    };
    let variants = vec![
        variant(
            "nrmf-qf",
            Architecture::Nrmf,
            InteractionMode::QueryField,
            false,
        ),
        variant("nrmf-all", Architecture::Nrmf, InteractionMode::All, false),
        variant(
            "fwfm-qf",
            Architecture::Fwfm,
            InteractionMode::QueryField,
            false,
        ),
        variant("fwfm-all", Architecture::Fwfm, InteractionMode::All, false),
    ];
    let (_, result) = experiment(root, "noise-fields", &spec, variants)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for arch in ["nrmf", "fwfm"] {
        let qf = fold_means(&result, &format!("{arch}-qf"))?;
        let all = fold_means(&result, &format!("{arch}-all"))?;
        let t = paired_t_test(&qf, &all).map_err(err)?;
        ok &= mean(&qf) >= mean(&all);
        parts.push(format!(
            "{arch} query-field {:.4} vs all {:.4} (t={:.2}, p={:.4})",
            mean(&qf),
            mean(&all),
            t.statistic,
            t.p
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn first_order_helps(root: &Path) -> Check {
    let spec = SynthSpec {
        w_popularity: 6.0,
        ..SynthSpec::default()
    };
    let variants = vec![
        variant(
            "fwfm-1st-2nd",
            Architecture::Fwfm,
            InteractionMode::QueryField,
            true,
        ),
        variant(
            "fwfm-2nd",
            Architecture::Fwfm,
            InteractionMode::QueryField,
            false,
        ),
    ];
    let (_, result) = experiment(root, "popularity", &spec, variants)?;
    let with = fold_means(&result, "fwfm-1st-2nd")?;
    let without = fold_means(&result, "fwfm-2nd")?;
    let t = paired_t_test(&with, &without).map_err(err)?;
    Ok((
        mean(&with) >= mean(&without),
        format!(
            "FwFM 1st+2nd {:.4} vs 2nd only {:.4} (t={:.2}, p={:.4})",
            mean(&with),
            mean(&without),
            t.statistic,
            t.p
        ),
    ))
}

// ---------------------------------------------------------------- determinism

fn files_under(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(err)? {
            let path = entry.map_err(err)?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).map_err(err)?.to_path_buf();
                out.insert(rel, fs::read(&path).map_err(err)?);
            }
        }
    }
    Ok(out)
}

fn fieldrank(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fieldrank"))
        .args(args)
        .output()
        .map_err(err)?;
    if !out.status.success() {
        return Err(format!(
            "fieldrank {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(())
}

fn deterministic_bundles(root: &Path) -> Check {
    let data = root.join("det-data");
    let s = |p: &Path| p.to_str().expect("utf-8 temp path").to_string();
    fieldrank(&["synth", "--out", &s(&data)])?;
    let config = serde_json::json!({
        "documents": data.join("documents.jsonl"),
        "logs": data.join("logs.csv"),
        "variants": [
            { "name": "fwfm-all", "model": { "architecture": "fwfm", "interaction_mode": "all", "use_first_order": true } },
            { "name": "fwfm-qf", "model": { "architecture": "fwfm", "interaction_mode": "query-field", "use_first_order": true } },
            { "name": "fwfm-selected", "model": { "architecture": "fwfm" }, "select_from": { "variant": "fwfm-all" } },
            { "name": "nrmf-qf", "model": { "architecture": "nrmf", "interaction_mode": "query-field" } }
        ],
        "paired_tests": [["fwfm-qf", "nrmf-qf"]],
        "tukey": [["fwfm-all", "fwfm-qf", "fwfm-selected"]],
        "tukey_draws": 20000,
        "seed": 3
    });
    let config_path = root.join("det.json");
    fs::write(
        &config_path,
        serde_json::to_vec_pretty(&config).map_err(err)?,
    )
    .map_err(err)?;
    let (a, b) = (root.join("bundle-a"), root.join("bundle-b"));
    // different worker counts must not change a byte
    fieldrank(&[
        "ablate",
        "--config",
        &s(&config_path),
        "--out",
        &s(&a),
        "--jobs",
        "1",
    ])?;
    fieldrank(&[
        "ablate",
        "--config",
        &s(&config_path),
        "--out",
        &s(&b),
        "--jobs",
        "3",
    ])?;
    let (fa, fb) = (files_under(&a)?, files_under(&b)?);
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    Ok((
        differing.is_empty() && !fa.is_empty(),
        format!(
            "{} files compared, {} differ{}",
            fa.len(),
            differing.len(),
            differing
                .first()
                .map(|f| format!(", first: {f}"))
                .unwrap_or_default()
        ),
    ))
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let root = tempfile::tempdir().expect("temp dir");
    let root_path = root.path().to_path_buf();

    // shared by the end-to-end and correlation criteria
    let default_run = std::cell::OnceCell::new();
    let default_data = || {
        default_run.get_or_init(|| {
            experiment(
                &root_path,
                "default",
                &SynthSpec::default(),
                vec![
                    variant(
                        "fwfm-qf",
                        Architecture::Fwfm,
                        InteractionMode::QueryField,
                        true,
                    ),
                    variant("fwfm-all", Architecture::Fwfm, InteractionMode::All, true),
                ],
            )
        })
    };

    let criteria: Vec<Criterion<'_>> = vec![
        ("gradient correctness", Box::new(gradient_correctness)),
        ("ndcg oracle equivalence", Box::new(ndcg_oracle)),
        ("fwfm decomposition", Box::new(fwfm_decomposition)),
        ("pipeline law", Box::new(pipeline_law)),
        ("statistics oracle", Box::new(statistics_oracle)),
        (
            "synthetic end-to-end signal",
            Box::new(|| {
                let (data, result) = default_data().as_ref().map_err(Clone::clone)?;
                end_to_end(data, result)
            }),
        ),
        (
            "query-field beats all on noise fields",
            Box::new(|| query_field_beats_all(&root_path)),
        ),
        (
            "first-order terms help with popularity",
            Box::new(|| first_order_helps(&root_path)),
        ),
        (
            "query-title correlation dominates",
            Box::new(|| {
                let (_, result) = default_data().as_ref().map_err(Clone::clone)?;
                component_correlations(result)
            }),
        ),
        (
            "deterministic ablate bundles",
            Box::new(|| deterministic_bundles(&root_path)),
        ),
    ];

    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in &criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!(
            "[{}] {name} ({:.1}s): {detail}",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("\n{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
