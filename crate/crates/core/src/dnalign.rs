//! Preference-pair construction for the four note stages, and the per-sample
//! DPO loss.
//!
//! Each stage samples nine candidates across the temperature × top_p grid and
//! picks a chosen/rejected pair:
//!
//! - `init`: candidate initial notes, ranked by a judge prompt;
//! - `qr`: candidate query refinements written from the chosen initial note,
//!   ranked by a judge prompt;
//! - `ka`: candidate updated notes built from passages retrieved with the
//!   chosen refinement, each labelled better/worse than the chosen initial
//!   note, one drawn at random from each side;
//! - `ans`: direct answers from retrieved passages, ranked by the task metric.
//!
//! Examples that don't yield a clean pair are skipped with a logged reason.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, QaExample, TaskStyle};
use crate::llm::{ChatRequest, GenerationBackend, SamplingConfig};
use crate::metrics::primary_score;
use crate::prompts::{format_refs, parse_best_worst, parse_queries, parse_status, PromptKit};
use crate::retrieval::{merge_results, Retriever, ScoredPassage};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingGrid {
    pub temperatures: Vec<f64>,
    pub top_ps: Vec<f64>,
    /// Retrieval depth, cycled over examples in order.
    pub top_ks: Vec<usize>,
}

impl Default for SamplingGrid {
    fn default() -> Self {
        SamplingGrid {
            temperatures: vec![0.1, 0.5, 0.9],
            top_ps: vec![0.1, 0.5, 0.9],
            top_ks: vec![3, 5, 7],
        }
    }
}

impl SamplingGrid {
    /// Temperature-major list of sampling settings.
    pub fn configs(&self) -> Vec<SamplingConfig> {
        self.temperatures
            .iter()
            .flat_map(|&t| self.top_ps.iter().map(move |&p| SamplingConfig::new(t, p)))
            .collect()
    }

    pub fn top_k_for(&self, example_index: usize) -> usize {
        self.top_ks[example_index % self.top_ks.len()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperatures.is_empty() || self.top_ps.is_empty() || self.top_ks.is_empty() {
            return Err(Error::InvalidParameter("sampling grid has an empty axis".into()));
        }
        if self.top_ks.contains(&0) {
            return Err(Error::InvalidParameter("top_k values must be >= 1".into()));
        }
        for c in self.configs() {
            c.validate().map_err(|e| Error::InvalidParameter(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Init,
    Qr,
    Ka,
    Ans,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Init, Stage::Qr, Stage::Ka, Stage::Ans];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Qr => "qr",
            Stage::Ka => "ka",
            Stage::Ans => "ans",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub example_id: String,
    pub top_k: usize,
    pub passage_ids: Vec<String>,
    /// 0-based positions in the candidate list.
    pub chosen_index: usize,
    pub rejected_index: usize,
    pub chosen_sampling: SamplingConfig,
    pub rejected_sampling: SamplingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub stage: Stage,
    /// The fully rendered input prompt.
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub meta: PairMeta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub stage: Stage,
    pub example_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageOutput {
    pub pairs: Vec<PreferencePair>,
    pub skipped: Vec<Skip>,
}

impl StageOutput {
    fn chosen_for(&self, example_id: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|p| p.meta.example_id == example_id)
            .map(|p| p.chosen.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DnalignConfig {
    pub grid: SamplingGrid,
    pub seed: u64,
    pub task_style: TaskStyle,
    /// Sampling for judge and labelling calls.
    pub judge_sampling: SamplingConfig,
    /// How many refined queries the `ka` stage retrieves with.
    pub queries_per_refinement: usize,
    /// Concurrent candidate generations per example.
    pub parallel: usize,
    pub model: String,
    pub judge_model: String,
}

impl Default for DnalignConfig {
    fn default() -> Self {
        DnalignConfig {
            grid: SamplingGrid::default(),
            seed: 0,
            task_style: TaskStyle::Multihop,
            judge_sampling: SamplingConfig::default(),
            queries_per_refinement: 2,
            parallel: 1,
            model: String::new(),
            judge_model: String::new(),
        }
    }
}

/// Everything a full build produced, per stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DnalignOutput {
    pub init: StageOutput,
    pub qr: StageOutput,
    pub ka: StageOutput,
    pub ans: StageOutput,
}

impl DnalignOutput {
    pub fn stage(&self, stage: Stage) -> &StageOutput {
        match stage {
            Stage::Init => &self.init,
            Stage::Qr => &self.qr,
            Stage::Ka => &self.ka,
            Stage::Ans => &self.ans,
        }
    }

    /// Pairs of the requested stages, in stage order.
    pub fn pairs(&self, stages: &[Stage]) -> Vec<&PreferencePair> {
        Stage::ALL
            .into_iter()
            .filter(|s| stages.contains(s))
            .flat_map(|s| self.stage(s).pairs.iter())
            .collect()
    }
}

pub struct DnalignBuilder {
    config: DnalignConfig,
    retriever: Arc<dyn Retriever>,
    generator: Arc<dyn GenerationBackend>,
    judge: Arc<dyn GenerationBackend>,
    prompts: Arc<PromptKit>,
}

struct Candidates {
    texts: Vec<String>,
    sampling: Vec<SamplingConfig>,
}

impl DnalignBuilder {
    /// `generator` writes candidates; `judge` ranks and labels them.
    pub fn new(
        config: DnalignConfig,
        retriever: Arc<dyn Retriever>,
        generator: Arc<dyn GenerationBackend>,
        judge: Arc<dyn GenerationBackend>,
    ) -> Result<Self> {
        config.grid.validate()?;
        config
            .judge_sampling
            .validate()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        if config.queries_per_refinement == 0 {
            return Err(Error::InvalidParameter("queries_per_refinement must be >= 1".into()));
        }
        Ok(DnalignBuilder {
            config,
            retriever,
            generator,
            judge,
            prompts: Arc::new(PromptKit::default()),
        })
    }

    pub fn with_prompts(mut self, prompts: Arc<PromptKit>) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn config(&self) -> &DnalignConfig {
        &self.config
    }

    fn passages(&self, hits: &[ScoredPassage]) -> Vec<&Passage> {
        hits.iter()
            .filter_map(|h| self.retriever.passage(&h.passage_id))
            .collect()
    }

    fn judge_call(&self, prompt: String) -> Result<String> {
        let req = ChatRequest::new(prompt, self.config.judge_sampling).with_model(self.config.judge_model.clone());
        Ok(self.judge.complete(&req)?)
    }

    /// One candidate per grid setting, in grid order.
    fn generate(&self, prompt: &str) -> Result<Candidates> {
        let sampling = self.config.grid.configs();
        let call = |s: &SamplingConfig| -> Result<String> {
            let req = ChatRequest::new(prompt, *s).with_model(self.config.model.clone());
            Ok(self.generator.complete(&req)?.trim().to_string())
        };
        let texts = if self.config.parallel <= 1 {
            sampling.iter().map(call).collect::<Result<Vec<_>>>()?
        } else {
            let mut out: Vec<Option<Result<String>>> = (0..sampling.len()).map(|_| None).collect();
            for (chunk_idx, chunk) in sampling.chunks(self.config.parallel).enumerate() {
                let results: Vec<Result<String>> = std::thread::scope(|s| {
                    let handles: Vec<_> = chunk.iter().map(|c| s.spawn(move || call(c))).collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("candidate worker panicked"))
                        .collect()
                });
                for (j, r) in results.into_iter().enumerate() {
                    out[chunk_idx * self.config.parallel + j] = Some(r);
                }
            }
            out.into_iter()
                .map(|r| r.expect("filled"))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Candidates { texts, sampling })
    }

    fn skip(stage: Stage, ex: &QaExample, reason: impl Into<String>) -> Skip {
        let reason = reason.into();
        log::info!("{stage} pair skipped for {}: {reason}", ex.id);
        Skip {
            stage,
            example_id: ex.id.clone(),
            reason,
        }
    }

    /// Turns a judge reply into a (chosen, rejected) index pair.
    fn judged_pair(&self, reply: &str, cands: &Candidates) -> std::result::Result<(usize, usize), String> {
        let bw = parse_best_worst(reply).map_err(|e| e.to_string())?;
        if bw.best_id == bw.worst_id {
            return Err(format!("judge gave the same id {} for best and worst", bw.best_id));
        }
        let n = cands.texts.len() as i64;
        let idx = |id: i64| (1..=n).contains(&id).then(|| (id - 1) as usize);
        match (idx(bw.best_id), idx(bw.worst_id)) {
            (Some(b), Some(w)) if cands.texts[b] != cands.texts[w] => Ok((b, w)),
            (Some(_), Some(_)) => Err("best and worst candidates have identical text".into()),
            _ => Err(format!(
                "judge ids ({}, {}) out of range 1..={n}",
                bw.best_id, bw.worst_id
            )),
        }
    }

    fn all_identical(cands: &Candidates) -> bool {
        cands.texts.windows(2).all(|w| w[0] == w[1])
    }

    #[allow(clippy::too_many_arguments)]
    fn pair(
        stage: Stage,
        ex: &QaExample,
        top_k: usize,
        hits: &[ScoredPassage],
        prompt: String,
        cands: &Candidates,
        (c, r): (usize, usize),
        scores: Option<(f64, f64)>,
    ) -> PreferencePair {
        PreferencePair {
            stage,
            prompt,
            chosen: cands.texts[c].clone(),
            rejected: cands.texts[r].clone(),
            meta: PairMeta {
                example_id: ex.id.clone(),
                top_k,
                passage_ids: hits.iter().map(|h| h.passage_id.clone()).collect(),
                chosen_index: c,
                rejected_index: r,
                chosen_sampling: cands.sampling[c],
                rejected_sampling: cands.sampling[r],
                chosen_score: scores.map(|s| s.0),
                rejected_score: scores.map(|s| s.1),
            },
        }
    }

    pub fn build_init_pairs(&self, examples: &[QaExample]) -> Result<StageOutput> {
        let mut out = StageOutput::default();
        for (i, ex) in examples.iter().enumerate() {
            let top_k = self.config.grid.top_k_for(i);
            let hits = self.retriever.search(&ex.question, top_k)?;
            let refs = self.passages(&hits);
            let prompt = self.prompts.init(&ex.question, &refs)?;
            let cands = self.generate(&prompt)?;
            if Self::all_identical(&cands) {
                out.skipped
                    .push(Self::skip(Stage::Init, ex, "all candidates identical"));
                continue;
            }
            let reply = self.judge_call(self.prompts.judge_init(&ex.question, &refs, &cands.texts)?)?;
            match self.judged_pair(&reply, &cands) {
                Ok(sel) => out
                    .pairs
                    .push(Self::pair(Stage::Init, ex, top_k, &hits, prompt, &cands, sel, None)),
                Err(reason) => out.skipped.push(Self::skip(Stage::Init, ex, reason)),
            }
        }
        Ok(out)
    }

    /// Needs the `init` output for each example's chosen initial note.
    pub fn build_qr_pairs(&self, examples: &[QaExample], init: &StageOutput) -> Result<StageOutput> {
        let mut out = StageOutput::default();
        for (i, ex) in examples.iter().enumerate() {
            let Some(note) = init.chosen_for(&ex.id) else {
                out.skipped.push(Self::skip(Stage::Qr, ex, "no chosen initial note"));
                continue;
            };
            let top_k = self.config.grid.top_k_for(i);
            let prompt = self.prompts.query_refinement(&ex.question, note, &[])?;
            let cands = self.generate(&prompt)?;
            if Self::all_identical(&cands) {
                out.skipped.push(Self::skip(Stage::Qr, ex, "all candidates identical"));
                continue;
            }
            let reply = self.judge_call(self.prompts.judge_qr(note, &ex.question, &[], &cands.texts)?)?;
            match self.judged_pair(&reply, &cands) {
                Ok(sel) => out
                    .pairs
                    .push(Self::pair(Stage::Qr, ex, top_k, &[], prompt, &cands, sel, None)),
                Err(reason) => out.skipped.push(Self::skip(Stage::Qr, ex, reason)),
            }
        }
        Ok(out)
    }

    /// Needs the `init` and `qr` outputs. Candidates are labelled by the
    /// decision prompt against the chosen initial note; one positive and one
    /// negative are drawn with an RNG seeded per example.
    pub fn build_ka_pairs(&self, examples: &[QaExample], init: &StageOutput, qr: &StageOutput) -> Result<StageOutput> {
        let mut out = StageOutput::default();
        for (i, ex) in examples.iter().enumerate() {
            let (Some(note), Some(refinement)) = (init.chosen_for(&ex.id), qr.chosen_for(&ex.id)) else {
                out.skipped
                    .push(Self::skip(Stage::Ka, ex, "no chosen initial note or refinement"));
                continue;
            };
            let queries = match parse_queries(refinement, self.config.queries_per_refinement) {
                Ok(q) => q,
                Err(e) => {
                    out.skipped
                        .push(Self::skip(Stage::Ka, ex, format!("refinement unparseable: {e}")));
                    continue;
                }
            };
            let top_k = self.config.grid.top_k_for(i);
            let lists = queries
                .iter()
                .map(|q| self.retriever.search(q, top_k))
                .collect::<Result<Vec<_>>>()?;
            let hits = merge_results(lists.iter().map(Vec::as_slice));
            let prompt = self.prompts.accumulate(&ex.question, &self.passages(&hits), note)?;
            let cands = self.generate(&prompt)?;

            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            for (j, c) in cands.texts.iter().enumerate() {
                if c.is_empty() {
                    continue;
                }
                let reply = self.judge_call(self.prompts.decide(&ex.question, note, c)?)?;
                match parse_status(&reply) {
                    Ok(v) if v.0 => pos.push(j),
                    Ok(_) => neg.push(j),
                    Err(e) => log::debug!("ka label for {} candidate {j} unparseable: {e}", ex.id),
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(i as u64));
            let (Some(&c), Some(&r)) = (pos.choose(&mut rng), neg.choose(&mut rng)) else {
                out.skipped.push(Self::skip(
                    Stage::Ka,
                    ex,
                    format!("label pools {}/{} need one of each", pos.len(), neg.len()),
                ));
                continue;
            };
            if cands.texts[c] == cands.texts[r] {
                out.skipped
                    .push(Self::skip(Stage::Ka, ex, "drawn candidates have identical text"));
                continue;
            }
            out.pairs
                .push(Self::pair(Stage::Ka, ex, top_k, &hits, prompt, &cands, (c, r), None));
        }
        Ok(out)
    }

    /// Direct answers from retrieved passages, ranked by the task metric:
    /// chosen is the first best answer scoring above zero, rejected the first
    /// worst answer scoring strictly below it.
    pub fn build_ans_pairs(&self, examples: &[QaExample]) -> Result<StageOutput> {
        let style = self.config.task_style;
        let mut out = StageOutput::default();
        for (i, ex) in examples.iter().enumerate() {
            let top_k = self.config.grid.top_k_for(i);
            let hits = self.retriever.search(&ex.question, top_k)?;
            let refs = format_refs(self.passages(&hits));
            let prompt = self.prompts.answer(style, &ex.question, &refs)?;
            let cands = self.generate(&prompt)?;
            let scores: Vec<f64> = cands.texts.iter().map(|a| primary_score(style, a, ex)).collect();

            let mut best = 0;
            let mut worst = 0;
            for (j, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = j;
                }
                if s < scores[worst] {
                    worst = j;
                }
            }
            if scores[best] <= 0.0 {
                out.skipped
                    .push(Self::skip(Stage::Ans, ex, "no candidate scores above zero"));
                continue;
            }
            if scores[worst] >= scores[best] {
                out.skipped
                    .push(Self::skip(Stage::Ans, ex, "all candidates score the same"));
                continue;
            }
            let sc = Some((scores[best], scores[worst]));
            out.pairs.push(Self::pair(
                Stage::Ans,
                ex,
                top_k,
                &hits,
                prompt,
                &cands,
                (best, worst),
                sc,
            ));
        }
        Ok(out)
    }

    /// Runs the requested stages plus whatever they depend on. Dependencies
    /// that weren't requested are still built but only the requested stages'
    /// pairs are meant to be written.
    pub fn build(&self, examples: &[QaExample], stages: &[Stage]) -> Result<DnalignOutput> {
        let want = |s| stages.contains(&s);
        let mut out = DnalignOutput::default();
        if want(Stage::Init) || want(Stage::Qr) || want(Stage::Ka) {
            out.init = self.build_init_pairs(examples)?;
        }
        if want(Stage::Qr) || want(Stage::Ka) {
            out.qr = self.build_qr_pairs(examples, &out.init)?;
        }
        if want(Stage::Ka) {
            out.ka = self.build_ka_pairs(examples, &out.init, &out.qr)?;
        }
        if want(Stage::Ans) {
            out.ans = self.build_ans_pairs(examples)?;
        }
        Ok(out)
    }
}

pub fn write_pairs<'a>(path: impl AsRef<Path>, pairs: impl IntoIterator<Item = &'a PreferencePair>) -> Result<usize> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut n = 0;
    for p in pairs {
        let line = serde_json::to_string(p).expect("pair serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        n += 1;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoInputs {
    pub logp_theta_chosen: f64,
    pub logp_ref_chosen: f64,
    pub logp_theta_rejected: f64,
    pub logp_ref_rejected: f64,
    pub beta: f64,
}

impl DpoInputs {
    /// β = 0.1.
    pub fn new(logp_theta_chosen: f64, logp_ref_chosen: f64, logp_theta_rejected: f64, logp_ref_rejected: f64) -> Self {
        DpoInputs {
            logp_theta_chosen,
            logp_ref_chosen,
            logp_theta_rejected,
            logp_ref_rejected,
            beta: 0.1,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// −ln σ(β·(chosen log-ratio) − β·(rejected log-ratio)).
pub fn dpo_loss_term(inputs: &DpoInputs) -> Result<f64> {
    let fields = [
        ("logp_theta_chosen", inputs.logp_theta_chosen),
        ("logp_ref_chosen", inputs.logp_ref_chosen),
        ("logp_theta_rejected", inputs.logp_theta_rejected),
        ("logp_ref_rejected", inputs.logp_ref_rejected),
        ("beta", inputs.beta),
    ];
    if let Some((name, v)) = fields.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} = {v}")));
    }
    if inputs.beta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "beta must be > 0, got {}",
            inputs.beta
        )));
    }
    let chosen = inputs.beta * (inputs.logp_theta_chosen - inputs.logp_ref_chosen);
    let rejected = inputs.beta * (inputs.logp_theta_rejected - inputs.logp_ref_rejected);
    Ok(softplus(-(chosen - rejected)))
}
