use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use fieldrank::checkpoint;
use fieldrank::data::write_incidents;
use fieldrank::eval::evaluate_groups;
use fieldrank::experiment::{self, fold_seed, ExperimentConfig};
use fieldrank::report::{self, Bundle};
use fieldrank::stats::{paired_record, tukey_records, StatRecord, TukeyConfig};
use fieldrank::synth::{self, SynthSpec};
use fieldrank::text::Encoder;
use fieldrank::train::train_model;

#[derive(Parser, Debug)]
#[command(
    name = "fieldrank",
    version,
    about = "Multi-field neural ranking experiments over click logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON config file (experiment config; a synthetic-data spec for `synth`)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for fold x variant jobs (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// NDCG cutoff
    #[arg(long, global = true, value_name = "N")]
    k: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus, click log, and ground-truth manifest
    Synth,
    /// Parse documents and logs, label query groups, and report the folds
    Ingest {
        #[arg(long, value_name = "PATH")]
        documents: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        logs: Option<PathBuf>,
    },
    /// Train one variant on one fold and save its checkpoint
    Train {
        #[arg(long)]
        variant: String,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Evaluate a checkpoint on a fold's validation partition
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Run a full variant grid over all folds and write a report bundle
    Ablate,
    /// Significance tests between variants of an existing bundle
    Stats {
        /// Paired t-test between two variants, as `A,B`
        #[arg(long = "pair", value_name = "A,B")]
        pairs: Vec<String>,
        /// Tukey HSD across variants, as `A,B,C`
        #[arg(long = "tukey", value_name = "A,B,...")]
        tukey: Vec<String>,
        /// Monte Carlo draws for Tukey HSD
        #[arg(long, default_value_t = 200_000)]
        draws: usize,
    },
    /// Re-render summary.txt and summary.csv of a bundle
    Report,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<fieldrank::Error> for Failure {
    fn from(e: fieldrank::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require<'a, T>(v: &'a Option<T>, flag: &str, cmd: &str) -> Result<&'a T, Failure> {
    v.as_ref()
        .ok_or_else(|| usage(format!("`{cmd}` requires {flag}")))
}

fn load_experiment(common: &Common, cmd: &str) -> Result<ExperimentConfig, Failure> {
    let path = require(&common.config, "--config PATH", cmd)?;
    let mut cfg = ExperimentConfig::load(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(k) = common.k {
        cfg.k = k;
        cfg.hyper.k = k;
    }
    if common.jobs.is_some() {
        cfg.jobs = common.jobs;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg_out: Option<&PathBuf>, cmd: &str) -> Result<PathBuf, Failure> {
    cfg_out.cloned().ok_or_else(|| {
        usage(format!(
            "`{cmd}` requires --out DIR (or `out` in the config)"
        ))
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    println!(
        "{}",
        serde_json::to_string_pretty(value).context("serializing output")?
    );
    Ok(())
}

fn cmd_synth(common: &Common) -> Result<(), Failure> {
    let out = require(&common.out, "--out DIR", "synth")?;
    let mut spec = match &common.config {
        Some(p) => serde_json::from_slice::<SynthSpec>(
            &fs::read(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing synthetic spec {}", p.display()))?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let data = synth::write_dataset(out, &spec)?;
    print_json(&synth::manifest(&spec, &data))
}

fn cmd_ingest(
    common: &Common,
    documents: &Option<PathBuf>,
    logs: &Option<PathBuf>,
) -> Result<(), Failure> {
    let (docs, logs, min_count) = match (documents, logs, &common.config) {
        (Some(d), Some(l), _) => (
            d.clone(),
            l.clone(),
            fieldrank::train::HyperParams::default().min_count,
        ),
        (None, None, Some(_)) => {
            let cfg = load_experiment(common, "ingest")?;
            (cfg.documents, cfg.logs, cfg.hyper.min_count)
        }
        _ => {
            return Err(usage(
                "`ingest` requires --documents and --logs, or --config PATH",
            ))
        }
    };
    let data = experiment::ingest(&docs, &logs)?;
    if let Some(out) = &common.out {
        fs::create_dir_all(out.join("logs")).context("creating output directory")?;
        fs::write(
            out.join("logs/pipeline.json"),
            serde_json::to_vec_pretty(&data.stats).context("serializing")?,
        )
        .context("writing pipeline summary")?;
        let mut inc = Vec::new();
        write_incidents(&mut inc, &data.incidents)?;
        fs::write(out.join("logs/incidents.txt"), inc).context("writing incidents")?;
        fs::create_dir_all(out.join("vocab")).context("creating vocab directory")?;
        for (i, fold) in data.folds.folds.iter().enumerate() {
            let enc = Encoder::fit(&fold.train, &data.corpus, min_count)?;
            let mut dump = Vec::new();
            enc.vocab.dump(&mut dump)?;
            fs::write(out.join(format!("vocab/fold{i}.tsv")), dump)
                .context("writing vocabulary")?;
        }
    }
    print_json(&data.stats)
}

fn cmd_train(common: &Common, variant: &str, fold: usize) -> Result<(), Failure> {
    let cfg = load_experiment(common, "train")?;
    let out = out_dir(cfg.out.as_ref(), "train")?;
    cfg.validate()?;
    let spec = cfg
        .variant(variant)
        .ok_or_else(|| usage(format!("no variant named `{variant}` in the config")))?;
    if spec.select_from.is_some() || spec.match_params_of.is_some() {
        return Err(usage(format!(
            "variant `{variant}` depends on other variants; run it through `ablate`"
        )));
    }
    let data = experiment::ingest(&cfg.documents, &cfg.logs)?;
    let split = data.folds.folds.get(fold).ok_or_else(|| {
        usage(format!(
            "fold {fold} out of range (0..{})",
            data.folds.folds.len()
        ))
    })?;
    let model_cfg = fieldrank::ModelConfig {
        seed: fold_seed(cfg.seed, spec.model.seed, fold),
        ..spec.model.clone()
    };
    let (trained, log) = train_model(&model_cfg, split, &data.corpus, &cfg.hyper)?;
    let eval = evaluate_groups(&trained, &split.validation, &data.corpus, fold, cfg.k)?;
    fs::create_dir_all(out.join("checkpoints")).context("creating output directory")?;
    fs::create_dir_all(out.join("logs")).context("creating output directory")?;
    checkpoint::save(
        &out.join(format!("checkpoints/{variant}.fold{fold}.ckpt")),
        &trained,
    )?;
    let mut csv = Vec::new();
    log.write_csv(&mut csv)?;
    fs::write(out.join(format!("logs/{variant}.fold{fold}.csv")), csv)
        .context("writing training log")?;
    print_json(&eval)
}

fn cmd_eval(common: &Common, ckpt: &Path, fold: usize) -> Result<(), Failure> {
    let cfg = load_experiment(common, "eval")?;
    let trained = checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let data = experiment::ingest(&cfg.documents, &cfg.logs)?;
    let split = data.folds.folds.get(fold).ok_or_else(|| {
        usage(format!(
            "fold {fold} out of range (0..{})",
            data.folds.folds.len()
        ))
    })?;
    print_json(&evaluate_groups(
        &trained,
        &split.validation,
        &data.corpus,
        fold,
        cfg.k,
    )?)
}

fn cmd_ablate(common: &Common) -> Result<(), Failure> {
    let cfg = load_experiment(common, "ablate")?;
    let out = out_dir(cfg.out.as_ref(), "ablate")?;
    experiment::run_experiment(&cfg, &out)?;
    print!(
        "{}",
        fs::read_to_string(out.join("summary.txt")).context("reading summary")?
    );
    Ok(())
}

fn split_names(arg: &str, min: usize) -> Result<Vec<String>, Failure> {
    let names: Vec<String> = arg
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if names.len() < min {
        return Err(usage(format!(
            "`{arg}` must list at least {min} comma-separated variants"
        )));
    }
    Ok(names)
}

fn cmd_stats(
    common: &Common,
    pairs: &[String],
    tukey: &[String],
    draws: usize,
) -> Result<(), Failure> {
    let out = require(&common.out, "--out DIR (the bundle)", "stats")?;
    if pairs.is_empty() && tukey.is_empty() {
        return Err(usage("`stats` needs at least one --pair or --tukey"));
    }
    let mut bundle = Bundle::load(out)?;
    let means = |name: &str| -> Result<Vec<f64>, Failure> {
        bundle
            .reports
            .iter()
            .find(|r| r.variant == name)
            .map(|r| r.fold_means())
            .ok_or_else(|| usage(format!("bundle has no variant `{name}`")))
    };
    let mut paired = Vec::new();
    for p in pairs {
        let names = split_names(p, 2)?;
        if names.len() != 2 {
            return Err(usage(format!(
                "--pair takes exactly two variants, got `{p}`"
            )));
        }
        paired.push(paired_record(
            &names[0],
            &means(&names[0])?,
            &names[1],
            &means(&names[1])?,
        )?);
    }
    let cfg = TukeyConfig {
        draws,
        seed: common.seed.unwrap_or(0),
    };
    let mut tk = Vec::new();
    for g in tukey {
        let names = split_names(g, 2)?;
        let samples = names
            .iter()
            .map(|n| means(n))
            .collect::<Result<Vec<_>, _>>()?;
        tk.extend(tukey_records(&names, &samples, &cfg)?);
    }
    fs::create_dir_all(out.join("stats")).context("creating stats directory")?;
    for (file, records) in [("paired_t.json", &paired), ("tukey.json", &tk)] {
        if records.is_empty() {
            continue;
        }
        fs::write(
            out.join("stats").join(file),
            serde_json::to_vec_pretty(records).context("serializing")?,
        )
        .context("writing stats")?;
        if !bundle.index.stats.iter().any(|s| s == file) {
            bundle.index.stats.push(file.to_string());
        }
    }
    fs::write(
        out.join(report::INDEX_FILE),
        serde_json::to_vec_pretty(&bundle.index).context("serializing")?,
    )
    .context("writing bundle index")?;
    let all: Vec<StatRecord> = paired.into_iter().chain(tk).collect();
    render(out)?;
    print_json(&all)
}

fn render(out: &Path) -> Result<String, Failure> {
    let bundle = Bundle::load(out)?;
    let text = report::render_text(&bundle);
    fs::write(out.join("summary.txt"), &text).context("writing summary.txt")?;
    fs::write(out.join("summary.csv"), report::render_csv(&bundle)?)
        .context("writing summary.csv")?;
    Ok(text)
}

fn cmd_report(common: &Common) -> Result<(), Failure> {
    let out = require(&common.out, "--out DIR (the bundle)", "report")?;
    print!("{}", render(out)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    match &cli.command {
        Command::Synth => cmd_synth(c),
        Command::Ingest { documents, logs } => cmd_ingest(c, documents, logs),
        Command::Train { variant, fold } => cmd_train(c, variant, *fold),
        Command::Eval { checkpoint, fold } => cmd_eval(c, checkpoint, *fold),
        Command::Ablate => cmd_ablate(c),
        Command::Stats {
            pairs,
            tukey,
            draws,
        } => cmd_stats(c, pairs, tukey, *draws),
        Command::Report => cmd_report(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
