//! Ablation grids: ingest, temporal folds, train/evaluate every variant on
//! every fold, compare variants, and write a report bundle.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{
    build_query_groups, parse_documents, parse_search_log, pipeline_stats, temporal_split,
    write_incidents, Corpus, FoldSet, Incident, PipelineStats, QueryGroup, RejectCounts,
};
use crate::error::{Error, Result};
use crate::eval::{
    component_distributions, component_table, evaluate_groups, select_features_by_correlation,
    write_histograms, ComponentScoreTable, EvalReport, FoldEval, Selection, HISTOGRAM_BINS,
};
use crate::model::{Architecture, ModelConfig, RankingModel};
use crate::report;
use crate::stats::{paired_record, tukey_records, StatRecord, TukeyConfig};
use crate::text::Encoder;
use crate::train::{train_model, HyperParams, TrainLog, TrainedModel};

/// Restrict a fwfm variant to the components most correlated with the label
/// in another fwfm variant's fold models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectFrom {
    pub variant: String,
    /// Number of components to keep; `None` keeps those above mean |corr|.
    #[serde(default)]
    pub top_m: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub select_from: Option<SelectFrom>,
    /// Resize this variant's MLP widths so its parameter count is as close as
    /// possible to the named variant's.
    #[serde(default)]
    pub match_params_of: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub documents: PathBuf,
    pub logs: PathBuf,
    pub variants: Vec<VariantSpec>,
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses the available parallelism.
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub paired_tests: Vec<(String, String)>,
    #[serde(default)]
    pub tukey: Vec<Vec<String>>,
    #[serde(default)]
    pub tukey_draws: Option<usize>,
    #[serde(default = "default_true")]
    pub save_checkpoints: bool,
}

fn default_k() -> usize {
    20
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Read a config; relative data and output paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.documents = base.join(&cfg.documents);
        cfg.logs = base.join(&cfg.logs);
        if let Some(out) = &cfg.out {
            cfg.out = Some(base.join(out));
        }
        Ok(cfg)
    }

    pub fn variant(&self, name: &str) -> Option<&VariantSpec> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// Structural checks run before any data is read.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.variants.is_empty() {
            return bad("experiment declares no variants".into());
        }
        if self.k == 0 {
            return bad("NDCG cutoff k must be at least 1".into());
        }
        let mut seen = BTreeSet::new();
        for v in &self.variants {
            let safe = !v.name.is_empty()
                && v.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '+'));
            if !safe || v.name.starts_with('.') {
                return bad(format!(
                    "variant name `{}` must be non-empty and use only letters, digits, '-', '_', '.', '+'",
                    v.name
                ));
            }
            if !seen.insert(v.name.as_str()) {
                return bad(format!("variant name `{}` is used twice", v.name));
            }
        }
        for v in &self.variants {
            if let Some(sel) = &v.select_from {
                let Some(src) = self.variant(&sel.variant) else {
                    return bad(format!(
                        "variant `{}` selects from unknown variant `{}`",
                        v.name, sel.variant
                    ));
                };
                if src.model.architecture != Architecture::Fwfm || src.select_from.is_some() {
                    return bad(format!(
                        "variant `{}` must select from a plain fwfm variant, `{}` is not one",
                        v.name, sel.variant
                    ));
                }
                if v.model.architecture != Architecture::Fwfm {
                    return bad(format!("selected variant `{}` must be fwfm", v.name));
                }
            }
            if let Some(target) = &v.match_params_of {
                if self.variant(target).is_none() {
                    return bad(format!(
                        "variant `{}` matches parameters of unknown variant `{target}`",
                        v.name
                    ));
                }
                if v.select_from.is_some()
                    || !matches!(
                        v.model.architecture,
                        Architecture::ImplicitConcat | Architecture::Nrmf
                    )
                {
                    return bad(format!(
                        "variant `{}`: parameter matching needs an implicit-concat or nrmf variant",
                        v.name
                    ));
                }
            }
        }
        for (a, b) in &self.paired_tests {
            for n in [a, b] {
                if self.variant(n).is_none() {
                    return bad(format!("paired test names unknown variant `{n}`"));
                }
            }
        }
        for group in &self.tukey {
            if group.len() < 2 {
                return bad("a Tukey comparison needs at least two variants".into());
            }
            for n in group {
                if self.variant(n).is_none() {
                    return bad(format!("Tukey comparison names unknown variant `{n}`"));
                }
            }
        }
        for (what, p) in [("documents", &self.documents), ("logs", &self.logs)] {
            if !p.is_file() {
                return bad(format!("{what} file {} does not exist", p.display()));
            }
        }
        Ok(())
    }
}

/// Ingested, labeled, and split data.
#[derive(Debug)]
pub struct Dataset {
    pub corpus: Corpus,
    pub groups: Vec<QueryGroup>,
    pub folds: FoldSet,
    pub stats: PipelineStats,
    pub incidents: Vec<Incident>,
}

pub fn ingest(documents: &Path, logs: &Path) -> Result<Dataset> {
    let parsed = parse_documents(BufReader::new(File::open(documents)?))?;
    let log = parse_search_log(BufReader::new(File::open(logs)?))?;
    let built = build_query_groups(&log.events, &parsed.corpus);
    let folds = temporal_split(&built.groups)?;
    let rejects = RejectCounts {
        documents: parsed.rejected,
        events: log.rejected + built.rejected,
        missing_click: built.dropped_missing_click,
    };
    let stats = pipeline_stats(&built.groups, Some(&folds), rejects);
    let mut incidents = parsed.incidents;
    incidents.extend(log.incidents);
    incidents.extend(built.incidents);
    Ok(Dataset {
        corpus: parsed.corpus,
        groups: built.groups,
        folds,
        stats,
        incidents,
    })
}

/// Seed of the model trained for `fold` under experiment seed `seed`.
pub fn fold_seed(seed: u64, model_seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(model_seed.rotate_left(17))
        .wrapping_add(fold as u64)
}

/// Widths of the same depth as `config.mlp_widths`, all equal, that bring
/// the parameter count closest to `target`.
pub fn match_param_count(
    config: &ModelConfig,
    target: usize,
    vocab: usize,
    countries: usize,
) -> Result<ModelConfig> {
    let depth = config.mlp_widths.len().max(1);
    let mut best: Option<(usize, ModelConfig)> = None;
    for w in 1..=1024 {
        let candidate = ModelConfig {
            mlp_widths: vec![w; depth],
            ..config.clone()
        };
        let n = RankingModel::new(candidate.clone(), vocab, countries)?.param_count();
        let gap = n.abs_diff(target);
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, candidate));
        }
        if n > target {
            break;
        }
    }
    Ok(best.expect("at least one width tried").1)
}

/// What one (variant, fold) job produced.
#[derive(Debug)]
pub struct FoldOutcome {
    pub eval: FoldEval,
    pub log: TrainLog,
    pub components: Option<ComponentScoreTable>,
    pub checkpoint: Vec<u8>,
    pub selection: Option<Selection>,
    pub param_count: usize,
}

#[derive(Debug)]
pub struct VariantOutcome {
    pub report: EvalReport,
    pub folds: Vec<FoldOutcome>,
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub dataset_stats: PipelineStats,
    pub variants: Vec<(String, VariantOutcome)>,
    pub stats: Vec<StatRecord>,
}

fn run_fold(
    name: &str,
    config: &ModelConfig,
    fold: usize,
    data: &Dataset,
    hyper: &HyperParams,
    k: usize,
    selection: Option<Selection>,
) -> Result<FoldOutcome> {
    let split = &data.folds.folds[fold];
    let (trained, log) = train_model(config, split, &data.corpus, hyper)
        .map_err(|e| e.in_stage(format!("train {name} fold {fold}")))?;
    let eval = evaluate_groups(&trained, &split.validation, &data.corpus, fold, k)
        .map_err(|e| e.in_stage(format!("evaluate {name} fold {fold}")))?;
    let components = if config.architecture == Architecture::Fwfm {
        Some(
            component_table(&trained, &split.validation, &data.corpus, fold)
                .map_err(|e| e.in_stage(format!("component scores {name} fold {fold}")))?,
        )
    } else {
        None
    };
    let mut bytes = Vec::new();
    checkpoint::write_checkpoint(&mut bytes, &trained)?;
    Ok(FoldOutcome {
        eval,
        log,
        components,
        checkpoint: bytes,
        selection,
        param_count: trained.model.param_count(),
    })
}

/// Correlation-based selection from the source variant's model on the
/// training partition of `fold`.
fn select_for_fold(
    source: &TrainedModel,
    data: &Dataset,
    fold: usize,
    top_m: Option<usize>,
) -> Result<Selection> {
    let table = component_table(source, &data.folds.folds[fold].train, &data.corpus, fold)?;
    select_features_by_correlation(&table.correlations, top_m)
}

fn describe(v: &VariantSpec, config: &ModelConfig) -> String {
    if let Some(sel) = &v.select_from {
        return format!(
            "{}, selected from {}",
            config.architecture.name(),
            sel.variant
        );
    }
    let mode = match &config.interaction_mode {
        crate::fields::InteractionMode::QueryField => "query-field".to_string(),
        crate::fields::InteractionMode::All => "all".to_string(),
        crate::fields::InteractionMode::Selected(p) => format!("{} selected pairs", p.len()),
    };
    match config.architecture {
        Architecture::Representation | Architecture::ImplicitConcat => {
            config.architecture.name().to_string()
        }
        Architecture::Nrmf | Architecture::Fwfm => format!(
            "{}, {mode}, {}",
            config.architecture.name(),
            if config.use_first_order {
                "1st+2nd"
            } else {
                "2nd only"
            }
        ),
    }
}

/// Train and evaluate every variant on every fold, then run the declared tests.
pub fn run(config: &ExperimentConfig, data: &Dataset) -> Result<ExperimentResult> {
    let folds = data.folds.folds.len();
    let encoder0 = Encoder::fit(
        &data.folds.folds[0].train,
        &data.corpus,
        config.hyper.min_count,
    )
    .map_err(|e| e.in_stage("vocabulary"))?;
    let (vocab0, countries0) = (encoder0.vocab.len(), encoder0.countries.len());

    // Resolve per-variant base configs.
    let mut bases: Vec<ModelConfig> = Vec::with_capacity(config.variants.len());
    for v in &config.variants {
        let mut base = v.model.clone();
        if let Some(target) = &v.match_params_of {
            let t = config.variant(target).expect("validated");
            let n = RankingModel::new(t.model.clone(), vocab0, countries0)?.param_count();
            base = match_param_count(&base, n, vocab0, countries0)?;
            log::info!(
                "{}: widths {:?} to match {} parameters of {target}",
                v.name,
                base.mlp_widths,
                n
            );
        }
        bases.push(base);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;

    let fold_config = |vi: usize, fold: usize| ModelConfig {
        seed: fold_seed(config.seed, bases[vi].seed, fold),
        ..bases[vi].clone()
    };
    let plain: Vec<usize> = (0..config.variants.len())
        .filter(|&i| config.variants[i].select_from.is_none())
        .collect();
    let selected: Vec<usize> = (0..config.variants.len())
        .filter(|&i| config.variants[i].select_from.is_some())
        .collect();

    let jobs: Vec<(usize, usize)> = plain
        .iter()
        .flat_map(|&v| (0..folds).map(move |f| (v, f)))
        .collect();
    let first: Vec<Result<FoldOutcome>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(vi, f)| {
                run_fold(
                    &config.variants[vi].name,
                    &fold_config(vi, f),
                    f,
                    data,
                    &config.hyper,
                    config.k,
                    None,
                )
            })
            .collect()
    });
    let mut outcomes: Vec<Option<Vec<FoldOutcome>>> =
        (0..config.variants.len()).map(|_| None).collect();
    let mut first = first.into_iter();
    for &vi in &plain {
        outcomes[vi] = Some(first.by_ref().take(folds).collect::<Result<Vec<_>>>()?);
    }

    let jobs: Vec<(usize, usize)> = selected
        .iter()
        .flat_map(|&v| (0..folds).map(move |f| (v, f)))
        .collect();
    let second: Vec<Result<FoldOutcome>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(vi, f)| {
                let v = &config.variants[vi];
                let sel = v.select_from.as_ref().expect("selected variant");
                let src = config
                    .variants
                    .iter()
                    .position(|s| s.name == sel.variant)
                    .expect("validated");
                let source = checkpoint::read_checkpoint(
                    outcomes[src].as_ref().expect("plain variants ran first")[f]
                        .checkpoint
                        .as_slice(),
                )?;
                let selection = select_for_fold(&source, data, f, sel.top_m)
                    .map_err(|e| e.in_stage(format!("select {} fold {f}", v.name)))?;
                let cfg = selection.apply(&fold_config(vi, f));
                run_fold(
                    &v.name,
                    &cfg,
                    f,
                    data,
                    &config.hyper,
                    config.k,
                    Some(selection),
                )
            })
            .collect()
    });
    let mut second = second.into_iter();
    for &vi in &selected {
        outcomes[vi] = Some(second.by_ref().take(folds).collect::<Result<Vec<_>>>()?);
    }

    let mut variants = Vec::with_capacity(config.variants.len());
    for ((v, base), out) in config.variants.iter().zip(&bases).zip(outcomes) {
        let folds_out = out.expect("every variant ran");
        let hash_config = ModelConfig {
            seed: config.seed,
            ..base.clone()
        };
        let mut report = EvalReport::new(
            &v.name,
            &hash_config,
            config.k,
            folds_out[0].param_count,
            folds_out.iter().map(|f| f.eval.clone()).collect(),
        );
        report.description = describe(v, base);
        variants.push((
            v.name.clone(),
            VariantOutcome {
                report,
                folds: folds_out,
            },
        ));
    }

    let means = |name: &str| -> Vec<f64> {
        variants
            .iter()
            .find(|(n, _)| n == name)
            .expect("validated")
            .1
            .report
            .fold_means()
    };
    let mut stats = Vec::new();
    for (a, b) in &config.paired_tests {
        stats.push(
            paired_record(a, &means(a), b, &means(b)).map_err(|e| e.in_stage("paired t-test"))?,
        );
    }
    let tukey_cfg = TukeyConfig {
        draws: config.tukey_draws.unwrap_or(TukeyConfig::default().draws),
        seed: config.seed,
    };
    for group in &config.tukey {
        let samples: Vec<Vec<f64>> = group.iter().map(|n| means(n)).collect();
        stats.extend(tukey_records(group, &samples, &tukey_cfg).map_err(|e| e.in_stage("tukey"))?);
    }

    Ok(ExperimentResult {
        dataset_stats: data.stats.clone(),
        variants,
        stats,
    })
}

pub const FAILED_MARKER: &str = "FAILED";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Write the bundle: `eval/`, `stats/`, `logs/`, `checkpoints/`, summaries.
pub fn write_bundle(
    out: &Path,
    config: &ExperimentConfig,
    data: &Dataset,
    result: &ExperimentResult,
) -> Result<()> {
    for dir in ["eval", "stats", "logs", "checkpoints"] {
        fs::create_dir_all(out.join(dir))?;
    }
    write_json(&out.join("logs/pipeline.json"), &result.dataset_stats)?;
    let mut incidents = Vec::new();
    write_incidents(&mut incidents, &data.incidents)?;
    fs::write(out.join("logs/incidents.txt"), incidents)?;

    for (name, v) in &result.variants {
        write_json(&out.join(format!("eval/{name}.json")), &v.report)?;
        for (f, fo) in v.folds.iter().enumerate() {
            let mut csv = Vec::new();
            fo.log.write_csv(&mut csv)?;
            fs::write(out.join(format!("logs/{name}.fold{f}.csv")), csv)?;
            if config.save_checkpoints {
                fs::write(
                    out.join(format!("checkpoints/{name}.fold{f}.ckpt")),
                    &fo.checkpoint,
                )?;
            }
        }
        let selections: Vec<&Selection> = v
            .folds
            .iter()
            .filter_map(|f| f.selection.as_ref())
            .collect();
        if !selections.is_empty() {
            write_json(
                &out.join(format!("eval/{name}.selection.json")),
                &selections,
            )?;
        }
        let tables: Vec<ComponentScoreTable> = v
            .folds
            .iter()
            .filter_map(|f| f.components.clone())
            .collect();
        if !tables.is_empty() {
            let merged = ComponentScoreTable::merge(tables)?;
            write_json(&out.join(format!("eval/{name}.components.json")), &merged)?;
            let mut csv = Vec::new();
            write_histograms(&mut csv, &component_distributions(&merged, HISTOGRAM_BINS))?;
            fs::write(out.join(format!("eval/{name}.histograms.csv")), csv)?;
        }
    }
    let paired: Vec<&StatRecord> = result
        .stats
        .iter()
        .filter(|s| s.test == "paired-t")
        .collect();
    let tukey: Vec<&StatRecord> = result
        .stats
        .iter()
        .filter(|s| s.test == "tukey-hsd")
        .collect();
    let mut stats_files = Vec::new();
    if !paired.is_empty() {
        write_json(&out.join("stats/paired_t.json"), &paired)?;
        stats_files.push("paired_t.json".to_string());
    }
    if !tukey.is_empty() {
        write_json(&out.join("stats/tukey.json"), &tukey)?;
        stats_files.push("tukey.json".to_string());
    }
    let index = report::BundleIndex {
        k: config.k,
        variants: result.variants.iter().map(|(n, _)| n.clone()).collect(),
        stats: stats_files,
    };
    write_json(&out.join(report::INDEX_FILE), &index)?;
    let bundle = report::Bundle::load(out)?;
    fs::write(out.join("summary.txt"), report::render_text(&bundle))?;
    fs::write(out.join("summary.csv"), report::render_csv(&bundle)?)?;
    Ok(())
}

/// Run the whole experiment into `out`, leaving a `FAILED` marker naming the
/// stage on error.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<ExperimentResult> {
    let outcome = (|| -> Result<ExperimentResult> {
        config.validate().map_err(|e| e.in_stage("config"))?;
        fs::create_dir_all(out).map_err(|e| Error::from(e).in_stage("output"))?;
        let marker = out.join(FAILED_MARKER);
        if marker.exists() {
            fs::remove_file(&marker)?;
        }
        let data = ingest(&config.documents, &config.logs).map_err(|e| e.in_stage("ingest"))?;
        log::info!(
            "ingested {} groups ({} single-document) into {} folds",
            data.stats.groups,
            data.stats.single_doc_groups,
            data.folds.folds.len()
        );
        let result = run(config, &data)?;
        write_bundle(out, config, &data, &result).map_err(|e| e.in_stage("write bundle"))?;
        Ok(result)
    })();
    if let Err(e) = &outcome {
        if out.is_dir() {
            let _ = fs::write(out.join(FAILED_MARKER), format!("{}\n", e.chain()));
        }
    }
    outcome
}
