//! The `pairmask` command line.
//!
//! Every subcommand accepts `--config <file>` with `key = value` lines naming
//! long flags; flags given on the command line win. The fully resolved
//! settings are written next to the main output as `<output>.config`, in the
//! same format, so a run can be repeated with `--config`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::{
    disjoint_pairs, generate_planted_dataset, latin_square, read_jsonl, write_jsonl, PlantedTaskConfig,
};
use crate::error::{ensure, Error, Result};
use crate::explainers::{explain, AttributionReport, ExplainerConfig, Method};
use crate::metrics::{
    aopc, degradation_curves, degradation_score, posthoc_curve, rationale_recovery, DegradationCurves, MetricConfig,
};
use crate::models::{train_classifier, Architecture, ClassifierParams, PairExample, TrainConfig};
use crate::render::{render_all, Format};

#[derive(Debug, Parser)]
#[command(name = "pairmask", version, about = "Group-mask explanations for sentence-pair classifiers")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a planted-rationale task as train/dev/test JSONL files.
    GenData(GenDataArgs),
    /// Train a reference classifier.
    TrainModel(TrainArgs),
    /// Explain a model's predictions on a dataset.
    Explain(ExplainArgs),
    /// Score attribution reports.
    Evaluate(EvaluateArgs),
    /// Render attribution reports as heatmaps.
    Render(RenderArgs),
    /// Generate, train, explain, evaluate and render in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Preset flags from a `key = value` file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, env = "PAIRMASK_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Args)]
struct TaskArgs {
    #[arg(long, default_value_t = 200)]
    vocab_size: usize,
    /// Size of the reserved trigger range.
    #[arg(long, default_value_t = 20)]
    trigger_tokens: usize,
    #[arg(long, default_value_t = 8)]
    n1: usize,
    #[arg(long, default_value_t = 8)]
    n2: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Trigger dictionary: `pairs` (m fixed pairs) or `latin` (every pair of m x m triggers).
    #[arg(long, default_value = "pairs")]
    dictionary: String,
    /// Triggers per sentence used by the dictionary.
    #[arg(long, default_value_t = 10)]
    triggers_per_side: usize,
    #[arg(long, default_value_t = 4000)]
    train_size: usize,
    #[arg(long, default_value_t = 500)]
    dev_size: usize,
    #[arg(long, default_value_t = 500)]
    test_size: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
}

impl TaskArgs {
    fn to_config(&self, seed: u64) -> Result<PlantedTaskConfig> {
        let triples = match self.dictionary.as_str() {
            "latin" => latin_square(self.triggers_per_side, self.classes),
            "pairs" => disjoint_pairs(self.triggers_per_side, self.classes),
            other => return Err(Error::contract(format!("unknown dictionary '{other}'"))),
        };
        let cfg = PlantedTaskConfig {
            vocab_size: self.vocab_size,
            trigger_tokens: self.trigger_tokens,
            n1: self.n1,
            n2: self.n2,
            classes: self.classes,
            triples,
            train: self.train_size,
            dev: self.dev_size,
            test: self.test_size,
            noise: self.noise,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    task: TaskArgs,
    /// Output directory for train.jsonl, dev.jsonl and test.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct ModelArgs {
    #[arg(long, default_value = "bow-pair")]
    arch: Architecture,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.005)]
    train_learning_rate: f64,
    #[arg(long, default_value_t = 0.95)]
    target_dev_accuracy: f64,
}

impl ModelArgs {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            hidden: self.hidden,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            learning_rate: self.train_learning_rate,
            target_dev_accuracy: self.target_dev_accuracy,
            classes: None,
            vocab_size: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// Training JSONL.
    #[arg(long)]
    data: PathBuf,
    /// Dev JSONL for early stopping; the training data is used when absent.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct ExplainerArgs {
    #[arg(long, default_value_t = 10.0)]
    gamma1: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma2: f64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    mask_learning_rate: f64,
    /// Weight of the keep-probability penalty in the individual-mask loss.
    #[arg(long, default_value_t = ExplainerConfig::default().sparsity)]
    sparsity: f64,
}

impl ExplainerArgs {
    fn to_config(&self, method: Method, seed: u64) -> ExplainerConfig {
        ExplainerConfig {
            method,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            tau: self.tau,
            samples: self.samples,
            epochs: self.epochs,
            learning_rate: self.mask_learning_rate,
            k: self.k,
            sparsity: self.sparsity,
            seed,
            ..ExplainerConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
struct Workers {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
}

impl Workers {
    fn install<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        let threads = self.workers.unwrap_or(0);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::contract(format!("cannot start {threads} workers: {e}")))?;
        pool.install(f)
    }
}

#[derive(Debug, Clone, Args)]
struct ExplainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    explainer: ExplainerArgs,
    #[command(flatten)]
    workers: Workers,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "gmask")]
    method: Method,
    /// Explain only the first N examples.
    #[arg(long)]
    limit: Option<usize>,
    /// Report JSONL path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    workers: Workers,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Report JSONL files, comma separated or repeated.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    reports: Vec<PathBuf>,
    /// Metrics to compute: aopc, posthoc, degradation, recovery.
    #[arg(long, value_delimiter = ',', default_value = "aopc,posthoc,degradation,recovery")]
    metrics: Vec<String>,
    /// AOPC removal depth.
    #[arg(long, default_value_t = 10)]
    depth: usize,
    /// Words that must contain the gold rationale for recovery.
    #[arg(long, default_value_t = 2)]
    topk: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct RenderArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    reports: PathBuf,
    #[arg(long, default_value = "html")]
    format: Format,
    /// Render only the first N reports.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    explainer: ExplainerArgs,
    #[command(flatten)]
    workers: Workers,
    /// Explainers to run.
    #[arg(long, value_delimiter = ',', default_value = "gmask,imask,random,loo")]
    methods: Vec<Method>,
    /// Test examples to explain and evaluate.
    #[arg(long, default_value_t = 100)]
    limit: usize,
    #[arg(long, default_value = "pipeline-out")]
    out_dir: PathBuf,
}

const SUBCOMMANDS: [&str; 6] = ["gen-data", "train-model", "explain", "evaluate", "render", "pipeline"];

/// Parses a `key = value` config file into flag pairs. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected key = value, got '{line}'"),
        })?;
        let key = k.trim().trim_start_matches("--");
        if key.is_empty() || key == "config" {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("invalid key '{}'", k.trim()),
            });
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splices `--config` contents in front of the command-line flags, so that
/// later (command-line) occurrences override them.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let sub = argv
        .iter()
        .position(|a| SUBCOMMANDS.iter().any(|s| a == *s));
    let Some(sub) = sub else { return Ok(argv) };
    let mut path = None;
    let mut it = argv[sub + 1..].iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = it.next().cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::contract(format!("cannot read config {}: {e}", Path::new(&path).display())))?;
    let mut out: Vec<OsString> = argv[..=sub].to_vec();
    for (k, v) in parse_config(&text)? {
        match v.as_str() {
            "true" => out.push(format!("--{k}").into()),
            _ => out.push(format!("--{k}={v}").into()),
        }
    }
    out.extend_from_slice(&argv[sub + 1..]);
    Ok(out)
}

/// Resolved `key = value` lines for every argument of the chosen subcommand.
fn resolved_config(matches: &ArgMatches) -> String {
    let Some((name, sub)) = matches.subcommand() else {
        return String::new();
    };
    let mut out = format!("# pairmask {name}\n");
    let cmd = Cli::command();
    let Some(def) = cmd.find_subcommand(name) else {
        return out;
    };
    // argument ids only; flattened structs also register group ids
    let mut ids: Vec<&str> = def
        .get_arguments()
        .map(|a| a.get_id().as_str())
        .filter(|id| *id != "config")
        .collect();
    ids.sort_unstable();
    for id in ids {
        if let Ok(Some(vals)) = sub.try_get_raw(id) {
            let vals: Vec<String> = vals.map(|v| v.to_string_lossy().into_owned()).collect();
            out.push_str(&format!("{} = {}\n", id.replace('_', "-"), vals.join(",")));
        }
    }
    out
}

fn config_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_else(|| OsString::from("run"));
    name.push(".config");
    out.with_file_name(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_reports(path: &Path, reports: &[AttributionReport]) -> Result<()> {
    let mut text = String::new();
    for r in reports {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_reports(path: &Path) -> Result<Vec<AttributionReport>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: AttributionReport = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    let cfg = args.task.to_config(args.common.seed)?;
    let splits = generate_planted_dataset(&cfg)?;
    fs::create_dir_all(&args.out)?;
    write_jsonl(&args.out.join("train.jsonl"), &splits.train)?;
    write_jsonl(&args.out.join("dev.jsonl"), &splits.dev)?;
    write_jsonl(&args.out.join("test.jsonl"), &splits.test)?;
    write_text(&args.out.join("task.json"), &serde_json::to_string_pretty(&cfg)?)
}

fn train_model(args: &TrainArgs) -> Result<()> {
    let train = read_jsonl(&args.data)?;
    let dev = match &args.dev {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let (params, summary) = train_classifier(&train, &dev, args.model.arch, &args.model.to_config(), args.common.seed)?;
    params.save(&args.out)?;
    eprintln!(
        "trained {} for {} epochs, dev accuracy {:.4}",
        args.model.arch, summary.epochs, summary.dev_accuracy
    );
    Ok(())
}

fn explain_all(
    model: &ClassifierParams,
    data: &[PairExample],
    cfg: &ExplainerConfig,
    workers: &Workers,
) -> Result<Vec<AttributionReport>> {
    workers.install(|| {
        data.par_iter()
            .enumerate()
            .map(|(id, ex)| explain(model, ex, id, cfg))
            .collect()
    })
}

fn explain_cmd(args: &ExplainArgs) -> Result<()> {
    let model = ClassifierParams::load(&args.model)?;
    let mut data = read_jsonl(&args.data)?;
    if let Some(n) = args.limit {
        data.truncate(n);
    }
    let cfg = args.explainer.to_config(args.method, args.common.seed);
    let reports = explain_all(&model, &data, &cfg, &args.workers)?;
    write_reports(&args.out, &reports)
}

/// Pairs every report with the example it names, checking ids and digests.
fn match_reports<'a>(reports: &[AttributionReport], data: &'a [PairExample]) -> Result<Vec<&'a PairExample>> {
    ensure!(!reports.is_empty(), "no reports to evaluate");
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(reports.len());
    for r in reports {
        let ex = data
            .get(r.id)
            .ok_or_else(|| Error::contract(format!("report id {} has no example in the dataset", r.id)))?;
        ensure!(
            r.matches(ex),
            "report id {} does not match example {} of the dataset",
            r.id,
            r.id
        );
        ensure!(seen.insert(r.id), "report id {} appears twice", r.id);
        r.validate()?;
        out.push(ex);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct DegradationResult {
    score: f64,
    curves: DegradationCurves,
}

#[derive(Debug, Default, Serialize)]
struct MethodResult {
    examples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    aopc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    posthoc: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    degradation: Option<DegradationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    recovery: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Evaluation {
    metrics: Vec<String>,
    grids: MetricConfig,
    recovery_topk: usize,
    methods: BTreeMap<String, MethodResult>,
}

const METRICS: [&str; 4] = ["aopc", "posthoc", "degradation", "recovery"];

fn evaluate_reports(
    model: &ClassifierParams,
    data: &[PairExample],
    report_sets: &[Vec<AttributionReport>],
    metrics: &[String],
    grids: &MetricConfig,
    topk: usize,
) -> Result<Evaluation> {
    grids.validate()?;
    for m in metrics {
        ensure!(METRICS.contains(&m.as_str()), "unknown metric '{m}'");
    }
    let wants = |m: &str| metrics.iter().any(|x| x == m);
    let mut methods = BTreeMap::new();
    for reports in report_sets {
        let examples: Vec<PairExample> = match_reports(reports, data)?.into_iter().cloned().collect();
        let method = reports[0].method;
        ensure!(
            reports.iter().all(|r| r.method == method),
            "a report file mixes methods"
        );
        ensure!(
            !methods.contains_key(method.as_str()),
            "reports for method {method} given twice"
        );
        let mut res = MethodResult {
            examples: examples.len(),
            ..Default::default()
        };
        if wants("aopc") {
            res.aopc = Some(aopc(model, &examples, reports, grids.depth)?);
        }
        if wants("posthoc") {
            res.posthoc = Some(posthoc_curve(model, &examples, reports, &grids.v_grid)?);
        }
        if wants("degradation") {
            let curves = degradation_curves(model, &examples, reports, &grids.rho_grid)?;
            res.degradation = Some(DegradationResult {
                score: degradation_score(&curves)?,
                curves,
            });
        }
        if wants("recovery") && examples.iter().all(|e| e.rationale.is_some()) {
            res.recovery = Some(rationale_recovery(reports, &examples, topk)?);
        }
        methods.insert(method.as_str().to_string(), res);
    }
    Ok(Evaluation {
        metrics: metrics.to_vec(),
        grids: grids.clone(),
        recovery_topk: topk,
        methods,
    })
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let model = ClassifierParams::load(&args.model)?;
    let data = read_jsonl(&args.data)?;
    let sets = args
        .reports
        .iter()
        .map(|p| read_reports(p))
        .collect::<Result<Vec<_>>>()?;
    let grids = MetricConfig {
        depth: args.depth,
        ..MetricConfig::default()
    };
    let eval = args
        .workers
        .install(|| evaluate_reports(&model, &data, &sets, &args.metrics, &grids, args.topk))?;
    write_text(&args.out, &(serde_json::to_string_pretty(&eval)? + "\n"))
}

fn render_cmd(args: &RenderArgs) -> Result<()> {
    let data = read_jsonl(&args.data)?;
    let mut reports = read_reports(&args.reports)?;
    if let Some(n) = args.limit {
        reports.truncate(n);
    }
    let examples: Vec<PairExample> = match_reports(&reports, &data)?.into_iter().cloned().collect();
    write_text(&args.out, &render_all(&reports, &examples, args.format)?)
}

fn pipeline(args: &PipelineArgs, config: &str) -> Result<()> {
    let seed = args.common.seed;
    let dir = &args.out_dir;
    fs::create_dir_all(dir)?;
    write_text(&dir.join("pipeline.config"), config)?;

    let task = args.task.to_config(seed)?;
    let splits = generate_planted_dataset(&task)?;
    write_jsonl(&dir.join("train.jsonl"), &splits.train)?;
    write_jsonl(&dir.join("dev.jsonl"), &splits.dev)?;
    write_jsonl(&dir.join("test.jsonl"), &splits.test)?;
    write_text(&dir.join("task.json"), &serde_json::to_string_pretty(&task)?)?;

    let (model, summary) = train_classifier(&splits.train, &splits.dev, args.model.arch, &args.model.to_config(), seed)?;
    model.save(&dir.join("model.json"))?;
    eprintln!(
        "trained {} for {} epochs, dev accuracy {:.4}",
        args.model.arch, summary.epochs, summary.dev_accuracy
    );

    let test: Vec<PairExample> = splits.test.iter().take(args.limit).cloned().collect();
    let mut sets = Vec::new();
    for &method in &args.methods {
        let cfg = args.explainer.to_config(method, seed);
        let reports = explain_all(&model, &test, &cfg, &args.workers)?;
        write_reports(&dir.join(format!("reports-{method}.jsonl")), &reports)?;
        let examples: Vec<PairExample> = match_reports(&reports, &splits.test)?.into_iter().cloned().collect();
        write_text(
            &dir.join(format!("render-{method}.html")),
            &render_all(&reports, &examples, Format::Html)?,
        )?;
        sets.push(reports);
    }
    let metrics: Vec<String> = METRICS.iter().map(|m| m.to_string()).collect();
    let eval = args.workers.install(|| {
        evaluate_reports(&model, &splits.test, &sets, &metrics, &MetricConfig::default(), 2)
    })?;
    write_text(&dir.join("metrics.json"), &(serde_json::to_string_pretty(&eval)? + "\n"))
}

fn dispatch(cli: &Cli, config: &str) -> Result<()> {
    let (out, result) = match &cli.command {
        Command::GenData(a) => (a.out.join("gen-data"), gen_data(a)),
        Command::TrainModel(a) => (a.out.clone(), train_model(a)),
        Command::Explain(a) => (a.out.clone(), explain_cmd(a)),
        Command::Evaluate(a) => (a.out.clone(), evaluate_cmd(a)),
        Command::Render(a) => (a.out.clone(), render_cmd(a)),
        Command::Pipeline(a) => return pipeline(a, config),
    };
    result?;
    write_text(&config_path(&out), config)
}

/// Exit status for an error: 2 for numeric failures, 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        2
    } else {
        1
    }
}

/// Runs the command line `argv` (including the program name) and returns the
/// process exit status. Diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    match dispatch(&cli, &resolved_config(&matches)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let kv = parse_config("# comment\nseed = 7\n\n--k=5\n").unwrap();
        assert_eq!(kv, vec![("seed".into(), "7".into()), ("k".into(), "5".into())]);
        assert!(matches!(parse_config("seed 7"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_path_sits_beside_output() {
        assert_eq!(config_path(Path::new("a/b.json")), PathBuf::from("a/b.json.config"));
    }
}
