//! Tolerant extraction of the structured fields the loop depends on.
//!
//! Model replies wrap their payload in code fences, prose, or odd casing.
//! These parsers accept that noise but never invent a value: when the field
//! is absent the result is an error.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionValue(pub bool);

impl DecisionValue {
    /// The canonical reply the decision prompt asks for.
    pub fn canonical(self) -> String {
        let v = if self.0 { "True" } else { "False" };
        format!("json {{\"status\":\"{v}\"}}")
    }
}

fn status_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?i)["']?\bstatus\b["']?\s*:\s*["']?(true|false)\b"#).unwrap())
}

/// First `"status": true|false` occurrence in `text`.
pub fn parse_status(text: &str) -> Result<DecisionValue> {
    let caps = status_re()
        .captures(text)
        .ok_or_else(|| Error::Parse(format!("no status token in {:?}", preview(text))))?;
    Ok(DecisionValue(caps[1].eq_ignore_ascii_case("true")))
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|\s)(\d{1,2})[.)]\s+").unwrap())
}

const MIN_QUERY_CHARS: usize = 3;

/// Extracts up to `max_n` queries.
///
/// Numbered items (`1. ...`, `2) ...`) are preferred and may share a line;
/// the markers must count up from 1, which keeps numbers inside sentences
/// from splitting an item. Without a numbered list every non-empty line
/// counts, minus bullets and `Header:` lines. Items shorter than three
/// characters are dropped.
pub fn parse_queries(text: &str, max_n: usize) -> Result<Vec<String>> {
    if max_n < 1 {
        return Err(Error::InvalidParameter("max_n must be >= 1".into()));
    }
    let text = strip_fences(text);
    let mut markers: Vec<(usize, usize)> = Vec::new();
    let mut expected = 1u32;
    for caps in marker_re().captures_iter(&text) {
        let n: u32 = caps[1].parse().unwrap();
        if n == expected {
            let whole = caps.get(0).unwrap();
            markers.push((caps.get(1).unwrap().start(), whole.end()));
            expected += 1;
        }
    }
    let items: Vec<String> = if markers.is_empty() {
        text.lines()
            .map(|l| l.trim().trim_start_matches(['-', '*', '•']).trim())
            .filter(|l| !l.is_empty() && !l.ends_with(':'))
            .map(clean_item)
            .collect()
    } else {
        markers
            .iter()
            .enumerate()
            .map(|(i, &(_, body_start))| {
                let end = markers.get(i + 1).map_or(text.len(), |&(s, _)| s);
                clean_item(&text[body_start..end])
            })
            .collect()
    };
    let out: Vec<String> = items
        .into_iter()
        .filter(|q| q.chars().count() >= MIN_QUERY_CHARS)
        .take(max_n)
        .collect();
    if out.is_empty() {
        return Err(Error::Parse(format!("no queries in {:?}", preview(&text))));
    }
    Ok(out)
}

fn clean_item(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_matches(|c| c == '*' || c == '"').trim().to_string()
}

fn strip_fences(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BestWorst {
    pub best_id: i64,
    pub worst_id: i64,
}

fn id_re(field: &str) -> Regex {
    Regex::new(&format!(r#"(?i)["']?\b{field}\b["']?\s*:\s*["']?(-?\d+)"#)).unwrap()
}

/// Extracts `best_id` and `worst_id`. Equal ids are returned unchanged.
pub fn parse_best_worst(text: &str) -> Result<BestWorst> {
    static RES: OnceLock<(Regex, Regex)> = OnceLock::new();
    let (best, worst) = RES.get_or_init(|| (id_re("best_id"), id_re("worst_id")));
    let grab = |re: &Regex, field: &str| -> Result<i64> {
        let caps = re
            .captures(text)
            .ok_or_else(|| Error::Parse(format!("no {field} in {:?}", preview(text))))?;
        caps[1]
            .parse()
            .map_err(|_| Error::Parse(format!("{field} out of range")))
    };
    Ok(BestWorst {
        best_id: grab(best, "best_id")?,
        worst_id: grab(worst, "worst_id")?,
    })
}

fn preview(text: &str) -> String {
    text.chars().take(80).collect()
}
