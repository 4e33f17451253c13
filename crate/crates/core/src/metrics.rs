//! Answer metrics, the batch evaluation harness, and knowledge density.
//!
//! All answer metrics operate on normalized text: lowercase, ASCII
//! punctuation removed, the articles a/an/the dropped, whitespace collapsed.
//! `acc` is gold containment, so a verbose but correct answer still scores.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{QaExample, QaPair, TaskStyle};
use crate::engine::{Mode, NoteEngine, SessionRecord};
use crate::llm::{ChatRequest, GenerationBackend, SamplingConfig};
use crate::prompts::PromptKit;
use crate::retrieval::tokenize;
use crate::{Error, Result};

pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn normalized_tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn exact_match(pred: &str, golds: &[String]) -> f64 {
    let p = normalize_answer(pred);
    indicator(golds.iter().any(|g| normalize_answer(g) == p))
}

fn f1_single(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return indicator(pred.is_empty() && gold.is_empty());
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token-level F1 against any gold.
pub fn token_f1(pred: &str, golds: &[String]) -> f64 {
    let p = normalized_tokens(pred);
    golds
        .iter()
        .map(|g| f1_single(&p, &normalized_tokens(g)))
        .fold(0.0, f64::max)
}

fn contains_tokens(hay: &[String], needle: &[String]) -> bool {
    if needle.is_empty() {
        return hay.is_empty();
    }
    hay.windows(needle.len()).any(|w| w == needle)
}

/// 1 when some gold appears as a contiguous token run inside the prediction.
pub fn cover_accuracy(pred: &str, golds: &[String]) -> f64 {
    let p = normalized_tokens(pred);
    indicator(golds.iter().any(|g| contains_tokens(&p, &normalized_tokens(g))))
}

/// Long-form coverage: the fraction of sub-questions with an alias found in
/// the prediction, and whether all of them were.
pub fn str_em_hit(pred: &str, qa_pairs: &[QaPair]) -> (f64, f64) {
    if qa_pairs.is_empty() {
        return (0.0, 0.0);
    }
    let p = normalize_answer(pred);
    let covered = qa_pairs
        .iter()
        .filter(|qa| {
            qa.aliases.iter().any(|a| {
                let a = normalize_answer(a);
                !a.is_empty() && p.contains(&a)
            })
        })
        .count();
    let em = covered as f64 / qa_pairs.len() as f64;
    (em, indicator(covered == qa_pairs.len()))
}

/// First standalone yes/no token, lowercased.
pub fn extract_yes_no(pred: &str) -> Option<&'static str> {
    pred.split(|c: char| !c.is_alphanumeric())
        .find_map(|w| match w.to_ascii_lowercase().as_str() {
            "yes" => Some("yes"),
            "no" => Some("no"),
            _ => None,
        })
}

pub fn yesno_accuracy(pred: &str, gold: &str) -> f64 {
    let gold = gold.trim().to_ascii_lowercase();
    if gold != "yes" && gold != "no" {
        return 0.0;
    }
    indicator(extract_yes_no(pred) == Some(gold.as_str()))
}

/// Metric names reported for a task style, in display order.
pub fn metric_names(style: TaskStyle) -> &'static [&'static str] {
    match style {
        TaskStyle::Multihop => &["acc", "f1", "em", "avg"],
        TaskStyle::Longform => &["str_em", "str_hit"],
        TaskStyle::Shortform => &["acc"],
    }
}

/// Scores one prediction with the metrics of `style`.
pub fn score(style: TaskStyle, pred: &str, example: &QaExample) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    match style {
        TaskStyle::Multihop => {
            let g = &example.gold_answers;
            let (acc, f1, em) = (cover_accuracy(pred, g), token_f1(pred, g), exact_match(pred, g));
            m.insert("acc".into(), acc);
            m.insert("f1".into(), f1);
            m.insert("em".into(), em);
            m.insert("avg".into(), (acc + f1 + em) / 3.0);
        }
        TaskStyle::Longform => {
            let (em, hit) = str_em_hit(pred, example.qa_pairs.as_deref().unwrap_or_default());
            m.insert("str_em".into(), em);
            m.insert("str_hit".into(), hit);
        }
        TaskStyle::Shortform => {
            let acc = example
                .gold_answers
                .iter()
                .map(|g| yesno_accuracy(pred, g))
                .fold(0.0, f64::max);
            m.insert("acc".into(), acc);
        }
    }
    m
}

/// The headline metric used to rank candidate answers.
pub fn primary_score(style: TaskStyle, pred: &str, example: &QaExample) -> f64 {
    let m = score(style, pred, example);
    match style {
        TaskStyle::Multihop => m["f1"],
        TaskStyle::Longform => m["str_em"],
        TaskStyle::Shortform => m["acc"],
    }
}

fn zero_metrics(style: TaskStyle) -> BTreeMap<String, f64> {
    metric_names(style).iter().map(|n| (n.to_string(), 0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalCounts {
    pub adaptive: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub pred: String,
    pub metrics: BTreeMap<String, f64>,
    pub retrieval_counts: RetrievalCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalStats {
    pub mean_adaptive: f64,
    pub mean_total: f64,
    pub max_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mode: Mode,
    pub task_style: TaskStyle,
    pub examples: usize,
    pub errors: usize,
    /// Means over rows, ×100.
    pub metrics: BTreeMap<String, f64>,
    pub retrieval: RetrievalStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensitySummary>,
}

impl EvalSummary {
    /// A two-line table: metric names, then values at one decimal.
    pub fn table(&self) -> String {
        let names = metric_names(self.task_style);
        let mut head = String::from("mode");
        let mut vals = self.mode.to_string();
        let width = vals.len().max(head.len());
        head = format!("{head:<width$}");
        vals = format!("{vals:<width$}");
        for n in names {
            let v = format!("{:.1}", self.metrics.get(*n).copied().unwrap_or(0.0));
            let w = n.len().max(v.len());
            head.push_str(&format!("  {n:>w$}"));
            vals.push_str(&format!("  {v:>w$}"));
        }
        head.push_str("  retrievals");
        vals.push_str(&format!("  {:>10.2}", self.retrieval.mean_total));
        format!("{head}\n{vals}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub rows: Vec<MetricRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine {
    Summary(EvalSummary),
    Row(MetricRow),
}

impl EvalReport {
    /// Builds the summary from rows. Rows are aggregated in id order so the
    /// result doesn't depend on dataset order.
    pub fn from_rows(mode: Mode, style: TaskStyle, rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Precondition("no rows to aggregate".into()));
        }
        let mut sorted: Vec<&MetricRow> = rows.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let n = rows.len() as f64;
        let metrics = metric_names(style)
            .iter()
            .map(|name| {
                let sum: f64 = sorted
                    .iter()
                    .map(|r| r.metrics.get(*name).copied().unwrap_or(0.0))
                    .sum();
                (name.to_string(), 100.0 * sum / n)
            })
            .collect();
        let retrieval = RetrievalStats {
            mean_adaptive: sorted.iter().map(|r| r.retrieval_counts.adaptive as f64).sum::<f64>() / n,
            mean_total: sorted.iter().map(|r| r.retrieval_counts.total as f64).sum::<f64>() / n,
            max_total: rows.iter().map(|r| r.retrieval_counts.total).max().unwrap_or(0),
        };
        let densities: Vec<DensityRecord> = sorted.iter().filter_map(|r| r.density).collect();
        Ok(EvalReport {
            summary: EvalSummary {
                mode,
                task_style: style,
                examples: rows.len(),
                errors: rows.iter().filter(|r| r.error.is_some()).count(),
                metrics,
                retrieval,
                density: DensitySummary::from_records(&densities),
            },
            rows,
        })
    }

    /// Summary line first, then one line per row.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut emit = |line: &ReportLine| -> Result<()> {
            let s = serde_json::to_string(line).expect("report line serializes");
            writeln!(out, "{s}").map_err(|e| Error::io(path, e))
        };
        emit(&ReportLine::Summary(self.summary.clone()))?;
        for r in &self.rows {
            emit(&ReportLine::Row(r.clone()))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut summary = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: ReportLine = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            match parsed {
                ReportLine::Summary(s) => summary = Some(s),
                ReportLine::Row(r) => rows.push(r),
            }
        }
        let summary = summary.ok_or_else(|| Error::Schema(format!("{}: no summary record", path.display())))?;
        Ok(EvalReport { summary, rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub mode: Mode,
    /// Worker threads; sessions are independent.
    pub parallel: usize,
    /// Also measure knowledge density of each answer's reference.
    pub density: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: Mode::Deepnote,
            parallel: 4,
            density: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    /// One session record per example, in dataset order.
    pub sessions: Vec<SessionRecord>,
}

fn check_example(style: TaskStyle, ex: &QaExample) -> Result<()> {
    let ok = match style {
        TaskStyle::Longform => ex.qa_pairs.as_ref().is_some_and(|p| !p.is_empty()),
        _ => !ex.gold_answers.is_empty(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Schema(format!(
            "example {} does not match task style {style}",
            ex.id
        )))
    }
}

/// Runs every example through `engine` in `opts.mode` and scores it.
///
/// A failing session scores 0 on every metric and carries its error message;
/// it never stops the batch. With more than one worker, a FIFO-scripted
/// backend will interleave its replies, so use keyed scripts or `parallel: 1`.
pub fn evaluate(engine: &NoteEngine, dataset: &[QaExample], opts: EvalOptions) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Precondition("dataset is empty".into()));
    }
    let style = engine.config().task_style;
    for ex in dataset {
        check_example(style, ex)?;
    }
    let workers = opts.parallel.clamp(1, dataset.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(MetricRow, SessionRecord)>>> = Mutex::new(vec![None; dataset.len()]);
    let density = opts.density.then(|| DensityAnalyzer::from_engine(engine));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(ex) = dataset.get(i) else { break };
                let out = run_one(engine, ex, opts.mode, density.as_ref());
                slots.lock().expect("slot lock")[i] = Some(out);
            });
        }
    });

    let (rows, sessions): (Vec<_>, Vec<_>) = slots
        .into_inner()
        .expect("slot lock")
        .into_iter()
        .map(|s| s.expect("every example ran"))
        .unzip();
    let report = EvalReport::from_rows(opts.mode, style, rows)?;
    Ok(Evaluation { report, sessions })
}

fn run_one(
    engine: &NoteEngine,
    ex: &QaExample,
    mode: Mode,
    density: Option<&DensityAnalyzer>,
) -> (MetricRow, SessionRecord) {
    let style = engine.config().task_style;
    let outcome = engine.run_mode(mode, &ex.question);
    let record = SessionRecord::from_outcome(&ex.id, &ex.question, mode, &outcome);
    let counts = RetrievalCounts {
        adaptive: record.retrieval_count_adaptive,
        total: record.retrieval_count_total,
    };
    let row = match outcome {
        Ok(r) => {
            let mut error = None;
            let density = density.and_then(|d| match d.measure(&ex.question, &r.reference) {
                Ok(rec) => Some(rec),
                Err(e) => {
                    error = Some(format!("density: {e}"));
                    None
                }
            });
            MetricRow {
                id: ex.id.clone(),
                metrics: score(style, &r.answer, ex),
                pred: r.answer,
                retrieval_counts: counts,
                density,
                error,
            }
        }
        Err(abort) => {
            log::warn!("example {}: {}", ex.id, abort);
            MetricRow {
                id: ex.id.clone(),
                pred: String::new(),
                metrics: zero_metrics(style),
                retrieval_counts: counts,
                density: None,
                error: Some(abort.error.to_string()),
            }
        }
    };
    (row, record)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRecord {
    pub reference_tokens: usize,
    pub evidence_tokens: usize,
    pub density: f64,
}

impl DensityRecord {
    fn new(reference_tokens: usize, evidence_tokens: usize) -> Self {
        let density = if reference_tokens == 0 {
            0.0
        } else {
            evidence_tokens as f64 / reference_tokens as f64
        };
        DensityRecord {
            reference_tokens,
            evidence_tokens,
            density,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub count: usize,
    pub mean_density: f64,
    pub mean_reference_tokens: f64,
}

impl DensitySummary {
    pub fn from_records(records: &[DensityRecord]) -> Option<Self> {
        if records.is_empty() {
            return None;
        }
        let n = records.len() as f64;
        Some(DensitySummary {
            count: records.len(),
            mean_density: records.iter().map(|r| r.density).sum::<f64>() / n,
            mean_reference_tokens: records.iter().map(|r| r.reference_tokens as f64).sum::<f64>() / n,
        })
    }
}

/// Counts the reference tokens covered by `evidence`.
///
/// The evidence is consumed left to right; at each position the longest run
/// of tokens that occurs verbatim in the reference is matched (earliest
/// occurrence on ties) and its reference positions are marked. Tokens with no
/// match at all are dropped. Marked positions are unioned, so repeated or
/// overlapping spans never push density above 1.
pub fn evidence_density(reference: &str, evidence: &str) -> DensityRecord {
    let r = tokenize(reference);
    let e = tokenize(evidence);
    let mut marked = vec![false; r.len()];
    let mut i = 0;
    while i < e.len() {
        let mut best = (0usize, 0usize); // (len, start)
        for start in 0..r.len() {
            let mut len = 0;
            while i + len < e.len() && start + len < r.len() && e[i + len] == r[start + len] {
                len += 1;
            }
            if len > best.0 {
                best = (len, start);
            }
        }
        if best.0 == 0 {
            i += 1;
            continue;
        }
        marked[best.1..best.1 + best.0].iter_mut().for_each(|m| *m = true);
        i += best.0;
    }
    DensityRecord::new(r.len(), marked.iter().filter(|m| **m).count())
}

/// Asks a model to quote the useful evidence in a reference and measures how
/// much of the reference it covers.
#[derive(Clone)]
pub struct DensityAnalyzer {
    backend: std::sync::Arc<dyn GenerationBackend>,
    prompts: std::sync::Arc<PromptKit>,
    sampling: SamplingConfig,
    model: String,
}

impl DensityAnalyzer {
    pub fn new(backend: std::sync::Arc<dyn GenerationBackend>) -> Self {
        DensityAnalyzer {
            backend,
            prompts: std::sync::Arc::new(PromptKit::default()),
            sampling: SamplingConfig::default(),
            model: String::new(),
        }
    }

    /// Uses the engine's own backend, prompts and sampling.
    pub fn from_engine(engine: &NoteEngine) -> Self {
        DensityAnalyzer {
            backend: engine.backend().clone(),
            prompts: std::sync::Arc::new(engine.prompts().clone()),
            sampling: engine.config().sampling,
            model: engine.config().model.clone(),
        }
    }

    pub fn with_sampling(mut self, sampling: SamplingConfig) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn measure(&self, question: &str, reference: &str) -> Result<DensityRecord> {
        knowledge_density_with(
            self.backend.as_ref(),
            &self.prompts,
            self.sampling,
            &self.model,
            question,
            reference,
        )
    }
}

/// Density of `reference` for `question`, using the built-in prompt and
/// default sampling.
pub fn knowledge_density(backend: &dyn GenerationBackend, question: &str, reference: &str) -> Result<DensityRecord> {
    knowledge_density_with(
        backend,
        &PromptKit::default(),
        SamplingConfig::default(),
        "",
        question,
        reference,
    )
}

fn knowledge_density_with(
    backend: &dyn GenerationBackend,
    prompts: &PromptKit,
    sampling: SamplingConfig,
    model: &str,
    question: &str,
    reference: &str,
) -> Result<DensityRecord> {
    if reference.trim().is_empty() {
        return Err(Error::Precondition("reference text must be non-empty".into()));
    }
    let prompt = prompts.evidence(question, reference)?;
    let evidence = backend.complete(&ChatRequest::new(prompt, sampling).with_model(model))?;
    Ok(evidence_density(reference, &evidence))
}
