use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, GenerationBackend, LlmError};

/// One canned response. With a matcher, the entry is only handed out for
/// prompts containing that substring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub matcher: Option<String>,
    pub response: String,
}

impl ScriptEntry {
    pub fn any(response: impl Into<String>) -> Self {
        ScriptEntry {
            matcher: None,
            response: response.into(),
        }
    }

    pub fn matching(matcher: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptEntry {
            matcher: Some(matcher.into()),
            response: response.into(),
        }
    }
}

#[derive(Debug, Default)]
struct State {
    entries: Vec<(ScriptEntry, bool)>,
    prompts: Vec<String>,
}

/// Deterministic backend replaying a fixed script.
///
/// Each call consumes the first unused entry whose matcher occurs in the
/// prompt; if none does, the first unused entry without a matcher. Entries
/// are never reused, and running out is an error.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    state: Mutex<State>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        ScriptedBackend {
            state: Mutex::new(State {
                entries: entries.into_iter().map(|e| (e, false)).collect(),
                prompts: Vec::new(),
            }),
        }
    }

    pub fn from_responses<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::new(responses.into_iter().map(ScriptEntry::any))
    }

    /// Loads a line-delimited script: `{"response": "...", "match": "..."}`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line)
                .map_err(|e| LlmError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn push(&self, entry: ScriptEntry) {
        self.state.lock().unwrap().entries.push((entry, false));
    }

    /// Prompts consumed so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.state.lock().unwrap().prompts.clone()
    }

    pub fn remaining(&self) -> usize {
        self.state
            .lock()
            .unwrap()
            .entries
            .iter()
            .filter(|(_, used)| !used)
            .count()
    }
}

impl GenerationBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut st = self.state.lock().unwrap();
        let prompt = &request.user_prompt;
        let keyed = st
            .entries
            .iter()
            .position(|(e, used)| !used && e.matcher.as_deref().is_some_and(|m| prompt.contains(m)));
        let idx = keyed.or_else(|| st.entries.iter().position(|(e, used)| !used && e.matcher.is_none()));
        let Some(idx) = idx else {
            let head: String = prompt.chars().take(60).collect();
            return Err(LlmError::ScriptExhausted(head));
        };
        st.entries[idx].1 = true;
        st.prompts.push(prompt.clone());
        Ok(st.entries[idx].0.response.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::SamplingConfig;

    fn req(p: &str) -> ChatRequest {
        ChatRequest::new(p, SamplingConfig::default())
    }

    #[test]
    fn queue_pops_in_order() {
        let b = ScriptedBackend::from_responses(["a", "b"]);
        assert_eq!(b.complete(&req("x")).unwrap(), "a");
        assert_eq!(b.complete(&req("y")).unwrap(), "b");
        assert_eq!(b.prompts(), ["x", "y"]);
    }

    #[test]
    fn matcher_only_serves_matching_prompts() {
        let b = ScriptedBackend::new([
            ScriptEntry::matching("Note 2", r#"{"status":"True"}"#),
            ScriptEntry::any("plain"),
        ]);
        assert_eq!(b.complete(&req("write a note")).unwrap(), "plain");
        assert_eq!(
            b.complete(&req("Provided Note 2: ...")).unwrap(),
            r#"{"status":"True"}"#
        );
        assert_eq!(b.remaining(), 0);
    }

    #[test]
    fn exhausted_is_error_not_reuse() {
        let b = ScriptedBackend::from_responses(Vec::<String>::new());
        assert!(matches!(b.complete(&req("x")), Err(LlmError::ScriptExhausted(_))));
        let b = ScriptedBackend::from_responses(["only"]);
        b.complete(&req("x")).unwrap();
        assert!(matches!(b.complete(&req("x")), Err(LlmError::ScriptExhausted(_))));
    }

    #[test]
    fn keyed_entry_not_consumed_by_other_prompts() {
        let b = ScriptedBackend::new([ScriptEntry::matching("judge", "J")]);
        assert!(b.complete(&req("something else")).is_err());
        assert_eq!(b.complete(&req("please judge")).unwrap(), "J");
    }

    #[test]
    fn loads_script_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        use std::io::Write;
        writeln!(f, r#"{{"response":"one"}}"#).unwrap();
        writeln!(f, r#"{{"match":"Q","response":"two"}}"#).unwrap();
        let b = ScriptedBackend::from_file(f.path()).unwrap();
        assert_eq!(b.complete(&req("Q?")).unwrap(), "two");
        assert_eq!(b.complete(&req("other")).unwrap(), "one");
    }
}
