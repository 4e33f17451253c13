//! The `deepnote` command line.
//!
//! Settings come from three layers: built-in defaults, an optional TOML file
//! (`--config`), then flags. The effective settings are printed to stderr as
//! one JSON line before any work starts.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//!
//! Config file keys (all optional):
//!
//! ```toml
//! [retrieval]
//! k1 = 1.2
//! b = 0.75
//!
//! [engine]
//! task = "multihop"            # multihop | longform | shortform
//! top_k = 5
//! max_step = 3
//! max_failure = 2
//! queries_per_refinement = 2
//! temperature = 0.1
//! top_p = 1.0
//! max_tokens = 1024
//!
//! [backend]
//! kind = "http"                # http | scripted
//! script = "script.jsonl"      # scripted replies
//! judge_script = "judge.jsonl" # dpo-build judge replies (defaults to `script`)
//! base_url = "https://api.openai.com"
//! model = "gpt-4o-mini"
//! judge_model = ""
//! api_key_env = "DEEPNOTE_API_KEY"
//! max_retries = 3
//! backoff_base_ms = 500
//! backoff_max_ms = 8000
//! timeout_ms = 60000
//! requests_per_minute = 60
//!
//! [eval]
//! mode = "deepnote"            # deepnote | init-only | vanilla
//! parallel = 4
//!
//! [dnalign]
//! seed = 0
//! parallel = 1
//! top_ks = [3, 5, 7]
//! ```

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{load_corpus, load_dataset, TaskStyle};
use crate::dnalign::{write_pairs, DnalignBuilder, DnalignConfig, SamplingGrid, Stage};
use crate::engine::{read_sessions, EngineConfig, Mode, NoteEngine, SessionRecord, SessionWriter};
use crate::llm::{GenerationBackend, HttpBackend, HttpConfig, LlmError, SamplingConfig, ScriptedBackend};
use crate::metrics::{evaluate, DensityAnalyzer, DensityRecord, DensitySummary, EvalOptions};
use crate::retrieval::{Bm25Index, Bm25Params, Retriever};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "deepnote", version, about = "Note-centric adaptive retrieval QA")]
struct Cli {
    /// TOML settings file; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and save a BM25 index over a corpus file.
    Index(IndexArgs),
    /// Answer one question.
    Ask(AskArgs),
    /// Run and score a dataset.
    Eval(EvalArgs),
    /// Build preference pairs.
    DpoBuild(DpoArgs),
    /// Measure knowledge density of saved session references.
    Density(DensityArgs),
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum BackendKind {
    Http,
    Scripted,
}

#[derive(Debug, Args, Default)]
struct BackendArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Line-delimited replies for the scripted backend.
    #[arg(long, value_name = "PATH")]
    script: Option<PathBuf>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    retry_base_ms: Option<u64>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    requests_per_minute: Option<u32>,
}

#[derive(Debug, Args, Default)]
struct EngineArgs {
    /// multihop | longform | shortform
    #[arg(long)]
    task: Option<TaskStyle>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    max_step: Option<usize>,
    #[arg(long)]
    max_failure: Option<usize>,
    #[arg(long)]
    queries_per_refinement: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Debug, Args)]
struct AskArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    question: String,
    /// deepnote | init-only | vanilla
    #[arg(long)]
    mode: Option<Mode>,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Write the session record here, even if the session fails.
    #[arg(long, value_name = "PATH")]
    trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// deepnote | init-only | vanilla
    #[arg(long)]
    mode: Option<Mode>,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long, value_name = "PATH")]
    report: PathBuf,
    /// Session records; defaults to `<report>.traces.jsonl`.
    #[arg(long, value_name = "PATH")]
    traces_out: Option<PathBuf>,
    /// Also measure knowledge density of each reference.
    #[arg(long)]
    density: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Init,
    Qr,
    Ka,
    Ans,
    All,
}

impl StageArg {
    fn stages(self) -> Vec<Stage> {
        match self {
            StageArg::Init => vec![Stage::Init],
            StageArg::Qr => vec![Stage::Qr],
            StageArg::Ka => vec![Stage::Ka],
            StageArg::Ans => vec![Stage::Ans],
            StageArg::All => Stage::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
struct DpoArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    stage: StageArg,
    #[arg(long)]
    seed: Option<u64>,
    /// multihop | longform | shortform
    #[arg(long)]
    task: Option<TaskStyle>,
    #[arg(long)]
    out: PathBuf,
    /// Judge replies for the scripted backend; defaults to `--script`.
    #[arg(long, value_name = "PATH")]
    judge_script: Option<PathBuf>,
    #[arg(long)]
    judge_model: Option<String>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
struct DensityArgs {
    /// Session records written by `ask` or `eval`.
    #[arg(long, value_name = "PATH")]
    traces: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    retrieval: RetrievalSection,
    engine: EngineSection,
    backend: BackendSection,
    eval: EvalSection,
    dnalign: DnalignSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RetrievalSection {
    k1: Option<f64>,
    b: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EngineSection {
    task: Option<TaskStyle>,
    top_k: Option<usize>,
    max_step: Option<usize>,
    max_failure: Option<usize>,
    queries_per_refinement: Option<usize>,
    temperature: Option<f64>,
    top_p: Option<f64>,
    max_tokens: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BackendSection {
    kind: Option<BackendKind>,
    script: Option<PathBuf>,
    judge_script: Option<PathBuf>,
    base_url: Option<String>,
    model: Option<String>,
    judge_model: Option<String>,
    api_key_env: Option<String>,
    max_retries: Option<u32>,
    backoff_base_ms: Option<u64>,
    backoff_max_ms: Option<u64>,
    timeout_ms: Option<u64>,
    requests_per_minute: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalSection {
    mode: Option<Mode>,
    parallel: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DnalignSection {
    seed: Option<u64>,
    parallel: Option<usize>,
    top_ks: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize)]
struct BackendSettings {
    kind: BackendKind,
    script: Option<PathBuf>,
    judge_script: Option<PathBuf>,
    http: HttpConfig,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{rendered}");
            }
            return code;
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let file = match &cli.config {
        Some(p) => load_file_config(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Index(a) => cmd_index(a, &file, out, err),
        Command::Ask(a) => cmd_ask(a, &file, out, err),
        Command::Eval(a) => cmd_eval(a, &file, out, err),
        Command::DpoBuild(a) => cmd_dpo_build(a, &file, out, err),
        Command::Density(a) => cmd_density(a, &file, out, err),
    }
}

fn load_file_config(path: &Path) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn print_effective(err: &mut dyn Write, value: serde_json::Value) {
    let _ = writeln!(err, "effective config: {value}");
}

fn say(out: &mut dyn Write, line: impl std::fmt::Display) -> CliResult {
    writeln!(out, "{line}").map_err(runtime)
}

fn engine_config(a: &EngineArgs, file: &FileConfig) -> CliResult<EngineConfig> {
    let f = &file.engine;
    let d = EngineConfig::default();
    let ds = SamplingConfig::default();
    let cfg = EngineConfig {
        top_k: a.top_k.or(f.top_k).unwrap_or(d.top_k),
        max_step: a.max_step.or(f.max_step).unwrap_or(d.max_step),
        max_failure: a.max_failure.or(f.max_failure).unwrap_or(d.max_failure),
        queries_per_refinement: a
            .queries_per_refinement
            .or(f.queries_per_refinement)
            .unwrap_or(d.queries_per_refinement),
        task_style: a.task.or(f.task).unwrap_or(d.task_style),
        sampling: SamplingConfig {
            temperature: a.temperature.or(f.temperature).unwrap_or(ds.temperature),
            top_p: f.top_p.unwrap_or(ds.top_p),
            max_tokens: f.max_tokens.unwrap_or(ds.max_tokens),
        },
        model: String::new(),
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn backend_settings(a: &BackendArgs, judge_script: Option<&PathBuf>, file: &FileConfig) -> CliResult<BackendSettings> {
    let f = &file.backend;
    let d = HttpConfig::default();
    let http = HttpConfig {
        base_url: a.base_url.clone().or_else(|| f.base_url.clone()).unwrap_or(d.base_url),
        model: a.model.clone().or_else(|| f.model.clone()).unwrap_or(d.model),
        api_key_env: a
            .api_key_env
            .clone()
            .or_else(|| f.api_key_env.clone())
            .unwrap_or(d.api_key_env),
        api_key: None,
        max_retries: a.max_retries.or(f.max_retries).unwrap_or(d.max_retries),
        backoff_base_ms: a.retry_base_ms.or(f.backoff_base_ms).unwrap_or(d.backoff_base_ms),
        backoff_max_ms: f.backoff_max_ms.unwrap_or(d.backoff_max_ms),
        timeout_ms: a.timeout_ms.or(f.timeout_ms).unwrap_or(d.timeout_ms),
        requests_per_minute: a.requests_per_minute.or(f.requests_per_minute),
    };
    let script = a.script.clone().or_else(|| f.script.clone());
    let kind = a.backend.or(f.kind).unwrap_or(if script.is_some() {
        BackendKind::Scripted
    } else {
        BackendKind::Http
    });
    if kind == BackendKind::Scripted && script.is_none() {
        return Err(usage("the scripted backend needs --script"));
    }
    if http.requests_per_minute == Some(0) {
        return Err(usage("requests_per_minute must be >= 1"));
    }
    Ok(BackendSettings {
        kind,
        judge_script: judge_script.cloned().or_else(|| f.judge_script.clone()),
        script,
        http,
    })
}

fn llm_error(e: LlmError) -> CliError {
    match e {
        LlmError::Config(_) => usage(e),
        other => runtime(other),
    }
}

fn make_backend(s: &BackendSettings, script: Option<&Path>) -> CliResult<Arc<dyn GenerationBackend>> {
    match s.kind {
        BackendKind::Scripted => {
            let path = script.ok_or_else(|| usage("the scripted backend needs --script"))?;
            let b = ScriptedBackend::from_file(path).map_err(runtime)?;
            Ok(Arc::new(b))
        }
        BackendKind::Http => Ok(Arc::new(HttpBackend::new(s.http.clone()).map_err(llm_error)?)),
    }
}

fn load_index(path: &Path) -> CliResult<Arc<Bm25Index>> {
    Bm25Index::load(path).map(Arc::new).map_err(runtime)
}

fn cmd_index(a: IndexArgs, file: &FileConfig, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let d = Bm25Params::default();
    let params = Bm25Params {
        k1: a.k1.or(file.retrieval.k1).unwrap_or(d.k1),
        b: a.b.or(file.retrieval.b).unwrap_or(d.b),
    };
    params.validate().map_err(usage)?;
    print_effective(
        err,
        json!({"command": "index", "corpus": a.corpus, "out": a.out, "bm25": params}),
    );
    let corpus = load_corpus(&a.corpus).map_err(runtime)?;
    let index = Bm25Index::build(Arc::new(corpus), params).map_err(runtime)?;
    index.save(&a.out).map_err(runtime)?;
    say(
        out,
        format!(
            "docs={} avg_doc_len={:.2} terms={}",
            index.doc_count(),
            index.avg_doc_len(),
            index.vocabulary_len()
        ),
    )
}

fn cmd_ask(a: AskArgs, file: &FileConfig, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let mut cfg = engine_config(&a.engine, file)?;
    let backend = backend_settings(&a.backend, None, file)?;
    cfg.model = backend.http.model.clone();
    let mode = a.mode.or(file.eval.mode).unwrap_or(Mode::Deepnote);
    if a.question.trim().is_empty() {
        return Err(usage("--question must be non-empty"));
    }
    print_effective(
        err,
        json!({"command": "ask", "index": a.index, "mode": mode, "engine": cfg, "backend": backend,
               "trace_out": a.trace_out}),
    );
    let index = load_index(&a.index)?;
    let llm = make_backend(&backend, backend.script.as_deref())?;
    let engine = NoteEngine::new(cfg, index, llm).map_err(usage)?;
    let outcome = engine.run_mode(mode, &a.question);
    if let Some(p) = &a.trace_out {
        let mut w = SessionWriter::create(p).map_err(runtime)?;
        w.write(&SessionRecord::from_outcome("q0", &a.question, mode, &outcome))
            .map_err(runtime)?;
        w.finish().map_err(runtime)?;
    }
    match outcome {
        Ok(r) => {
            let _ = writeln!(
                err,
                "steps={} failures={} retrievals={}",
                r.steps_executed, r.failures, r.retrieval_count_total
            );
            say(out, r.answer)
        }
        Err(abort) => Err(runtime(abort)),
    }
}

fn default_traces_path(report: &Path) -> PathBuf {
    let mut name = report.file_stem().unwrap_or_default().to_os_string();
    name.push(".traces.jsonl");
    report.with_file_name(name)
}

fn cmd_eval(a: EvalArgs, file: &FileConfig, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let mut cfg = engine_config(&a.engine, file)?;
    let backend = backend_settings(&a.backend, None, file)?;
    cfg.model = backend.http.model.clone();
    let opts = EvalOptions {
        mode: a.mode.or(file.eval.mode).unwrap_or(Mode::Deepnote),
        parallel: a.parallel.or(file.eval.parallel).unwrap_or(4),
        density: a.density,
    };
    if opts.parallel == 0 {
        return Err(usage("--parallel must be >= 1"));
    }
    let traces = a.traces_out.clone().unwrap_or_else(|| default_traces_path(&a.report));
    print_effective(
        err,
        json!({"command": "eval", "index": a.index, "dataset": a.dataset, "mode": opts.mode,
               "parallel": opts.parallel, "density": opts.density, "engine": cfg,
               "backend": backend, "report": a.report, "traces_out": traces}),
    );
    let dataset = load_dataset(&a.dataset, cfg.task_style).map_err(runtime)?;
    let index = load_index(&a.index)?;
    let llm = make_backend(&backend, backend.script.as_deref())?;
    let engine = NoteEngine::new(cfg, index, llm).map_err(usage)?;
    let eval = evaluate(&engine, &dataset, opts).map_err(runtime)?;
    eval.report.write(&a.report).map_err(runtime)?;
    crate::engine::write_sessions(&traces, &eval.sessions).map_err(runtime)?;
    let s = &eval.report.summary;
    say(out, s.table())?;
    say(out, format!("examples={} errors={}", s.examples, s.errors))?;
    if let Some(d) = &s.density {
        say(
            out,
            format!(
                "mean_density={:.4} mean_reference_tokens={:.1}",
                d.mean_density, d.mean_reference_tokens
            ),
        )?;
    }
    Ok(())
}

fn cmd_dpo_build(a: DpoArgs, file: &FileConfig, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let backend = backend_settings(&a.backend, a.judge_script.as_ref(), file)?;
    let d = DnalignConfig::default();
    let grid = SamplingGrid {
        top_ks: file.dnalign.top_ks.clone().unwrap_or(d.grid.top_ks.clone()),
        ..d.grid.clone()
    };
    let cfg = DnalignConfig {
        grid,
        seed: a.seed.or(file.dnalign.seed).unwrap_or(d.seed),
        task_style: a.task.or(file.engine.task).unwrap_or(d.task_style),
        parallel: file.dnalign.parallel.unwrap_or(d.parallel),
        model: backend.http.model.clone(),
        judge_model: a
            .judge_model
            .clone()
            .or_else(|| file.backend.judge_model.clone())
            .unwrap_or_default(),
        ..d
    };
    cfg.grid.validate().map_err(usage)?;
    let stages = a.stage.stages();
    print_effective(
        err,
        json!({"command": "dpo-build", "dataset": a.dataset, "index": a.index,
               "stages": stages, "dnalign": cfg, "backend": backend, "out": a.out}),
    );
    let dataset = load_dataset(&a.dataset, cfg.task_style).map_err(runtime)?;
    let index = load_index(&a.index)?;
    let generator = make_backend(&backend, backend.script.as_deref())?;
    let judge = match (&backend.kind, &backend.judge_script) {
        (BackendKind::Scripted, Some(p)) => make_backend(&backend, Some(p))?,
        _ => generator.clone(),
    };
    let builder = DnalignBuilder::new(cfg, index as Arc<dyn Retriever>, generator, judge).map_err(usage)?;
    let built = builder.build(&dataset, &stages).map_err(|e| match e {
        Error::Llm(l) => llm_error(l),
        other => runtime(other),
    })?;
    let n = write_pairs(&a.out, built.pairs(&stages)).map_err(runtime)?;
    for s in &stages {
        let st = built.stage(*s);
        say(out, format!("{s}={} skipped={}", st.pairs.len(), st.skipped.len()))?;
    }
    say(out, format!("total={n}"))
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum DensityLine<'a> {
    Summary(&'a DensitySummary),
    Row {
        id: &'a str,
        #[serde(flatten)]
        density: Option<DensityRecord>,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

fn cmd_density(a: DensityArgs, file: &FileConfig, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let backend = backend_settings(&a.backend, None, file)?;
    print_effective(
        err,
        json!({"command": "density", "traces": a.traces, "out": a.out, "backend": backend}),
    );
    let sessions = read_sessions(&a.traces).map_err(runtime)?;
    let llm = make_backend(&backend, backend.script.as_deref())?;
    let analyzer = DensityAnalyzer::new(llm).with_model(backend.http.model.clone());

    let mut rows = Vec::with_capacity(sessions.len());
    for s in &sessions {
        let reference = s.reference.as_deref().unwrap_or("");
        let row = if reference.trim().is_empty() {
            (None, Some("session has no reference text".to_string()))
        } else {
            match analyzer.measure(&s.q0, reference) {
                Ok(d) => (Some(d), None),
                Err(Error::Llm(e)) => return Err(runtime(e)),
                Err(e) => (None, Some(e.to_string())),
            }
        };
        rows.push(row);
    }
    let records: Vec<DensityRecord> = rows.iter().filter_map(|r| r.0).collect();
    let summary = DensitySummary::from_records(&records).unwrap_or(DensitySummary {
        count: 0,
        mean_density: 0.0,
        mean_reference_tokens: 0.0,
    });

    let path = &a.out;
    let mut text = serde_json::to_string(&DensityLine::Summary(&summary)).expect("serializes");
    text.push('\n');
    for (s, (d, e)) in sessions.iter().zip(rows) {
        let line = DensityLine::Row {
            id: &s.id,
            density: d,
            error: e,
        };
        text.push_str(&serde_json::to_string(&line).expect("serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    say(
        out,
        format!(
            "examples={} measured={} mean_density={:.4} mean_reference_tokens={:.1}",
            sessions.len(),
            summary.count,
            summary.mean_density,
            summary.mean_reference_tokens
        ),
    )
}
