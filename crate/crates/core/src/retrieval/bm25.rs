//! Okapi BM25 over an in-memory inverted index.
//!
//! ```text
//! score(d, q) = Σ_{t ∈ q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·dl/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query tokens are summed per occurrence. Documents scoring zero are never
//! returned.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{rank_top_k, tokenize, Retriever, ScoredPassage};
use crate::corpus::{Corpus, Passage};
use crate::{Error, Result};

const FORMAT_TAG: &str = "deepnote-bm25";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(Error::InvalidParameter(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidParameter(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_len: f64,
    corpus: Arc<Corpus>,
    by_id: HashMap<String, usize>,
}

impl Bm25Index {
    pub fn build(corpus: Arc<Corpus>, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if corpus.doc_count() == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.doc_count());
        for (ord, passage) in corpus.passages().iter().enumerate() {
            let tokens = tokenize(&passage.index_text());
            doc_lengths.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                // Docs are visited in ordinal order, so each list stays sorted.
                postings.entry(term).or_default().push(Posting {
                    doc: ord as u32,
                    tf: count,
                });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_len = total as f64 / doc_lengths.len() as f64;
        let by_id = id_lookup(&corpus);
        Ok(Bm25Index {
            params,
            postings,
            doc_lengths,
            avg_doc_len,
            corpus,
            by_id,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn vocabulary_len(&self) -> usize {
        self.postings.len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredPassage>> {
        if k < 1 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        let Bm25Params { k1, b } = self.params;
        let mut scores = vec![0.0f64; self.doc_count()];
        let mut touched = Vec::new();
        for term in tokenize(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for p in list {
                let d = p.doc as usize;
                let tf = p.tf as f64;
                let dl = self.doc_lengths[d] as f64;
                let norm = tf + k1 * (1.0 - b + b * dl / self.avg_doc_len);
                if scores[d] == 0.0 {
                    touched.push(d);
                }
                scores[d] += idf * tf * (k1 + 1.0) / norm;
            }
        }
        touched.sort_unstable();
        touched.dedup();
        let scored = touched
            .into_iter()
            .filter(|&d| scores[d] > 0.0)
            .map(|d| (scores[d], self.corpus.passages()[d].id.as_str()))
            .collect();
        Ok(rank_top_k(scored, k))
    }

    /// Writes the index as line-delimited JSON: a header, one line per
    /// passage (in ordinal order), then one line per term (sorted).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let header = Header {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            k1: self.params.k1,
            b: self.params.b,
            doc_count: self.doc_count(),
            term_count: self.postings.len(),
            avg_doc_len: self.avg_doc_len,
        };
        writeln!(out, "{}", serde_json::to_string(&header).unwrap()).map_err(io)?;
        for (p, &len) in self.corpus.passages().iter().zip(&self.doc_lengths) {
            let rec = DocLine {
                id: &p.id,
                title: &p.title,
                text: &p.text,
                len,
            };
            writeln!(out, "{}", serde_json::to_string(&rec).unwrap()).map_err(io)?;
        }
        let mut terms: Vec<_> = self.postings.keys().collect();
        terms.sort();
        for term in terms {
            let list: Vec<[u32; 2]> = self.postings[term].iter().map(|p| [p.doc, p.tf]).collect();
            let rec = TermLine {
                term: term.clone(),
                postings: list,
            };
            writeln!(out, "{}", serde_json::to_string(&rec).unwrap()).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    /// Reads an index written by [`Bm25Index::save`] and checks it against
    /// the stored passages.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let bad = |line: usize, message: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((i, Err(e))) => Err(bad(i + 1, e.to_string())),
                None => Err(bad(0, format!("unexpected end of file, expected {what}"))),
            }
        };

        let (n, line) = next("header")?;
        let header: Header = serde_json::from_str(&line).map_err(|e| bad(n, e.to_string()))?;
        if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
            return Err(bad(
                n,
                format!("unsupported index format {} v{}", header.format, header.version),
            ));
        }
        let params = Bm25Params {
            k1: header.k1,
            b: header.b,
        };
        params.validate()?;

        let mut passages = Vec::with_capacity(header.doc_count);
        let mut doc_lengths = Vec::with_capacity(header.doc_count);
        for _ in 0..header.doc_count {
            let (n, line) = next("passage line")?;
            let rec: OwnedDocLine = serde_json::from_str(&line).map_err(|e| bad(n, e.to_string()))?;
            doc_lengths.push(rec.len);
            passages.push(Passage {
                id: rec.id,
                title: rec.title,
                text: rec.text,
            });
        }
        let corpus = Arc::new(Corpus::new(passages)?);
        for (ord, (p, &len)) in corpus.passages().iter().zip(&doc_lengths).enumerate() {
            if p.token_len() as u32 != len {
                return Err(bad(
                    ord + 2,
                    format!("stored length {len} does not match passage `{}`", p.id),
                ));
            }
        }

        let mut postings = HashMap::with_capacity(header.term_count);
        for _ in 0..header.term_count {
            let (n, line) = next("term line")?;
            let rec: TermLine = serde_json::from_str(&line).map_err(|e| bad(n, e.to_string()))?;
            let mut list = Vec::with_capacity(rec.postings.len());
            for [doc, tf] in rec.postings {
                if doc as usize >= corpus.doc_count() || tf == 0 {
                    return Err(bad(n, format!("invalid posting ({doc}, {tf}) for `{}`", rec.term)));
                }
                if list.last().is_some_and(|p: &Posting| p.doc >= doc) {
                    return Err(bad(n, format!("postings for `{}` not ascending", rec.term)));
                }
                list.push(Posting { doc, tf });
            }
            postings.insert(rec.term, list);
        }

        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_len = total as f64 / doc_lengths.len() as f64;
        if avg_doc_len != header.avg_doc_len {
            return Err(bad(1, "avg_doc_len does not match passages".into()));
        }
        let by_id = id_lookup(&corpus);
        Ok(Bm25Index {
            params,
            postings,
            doc_lengths,
            avg_doc_len,
            corpus,
            by_id,
        })
    }
}

impl Retriever for Bm25Index {
    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredPassage>> {
        Bm25Index::search(self, query, k)
    }

    fn passage(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).and_then(|&i| self.corpus.get(i))
    }
}

fn id_lookup(corpus: &Corpus) -> HashMap<String, usize> {
    corpus
        .passages()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.clone(), i))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    k1: f64,
    b: f64,
    doc_count: usize,
    term_count: usize,
    avg_doc_len: f64,
}

#[derive(Serialize)]
struct DocLine<'a> {
    id: &'a str,
    title: &'a str,
    text: &'a str,
    len: u32,
}

#[derive(Deserialize)]
struct OwnedDocLine {
    id: String,
    title: String,
    text: String,
    len: u32,
}

#[derive(Serialize, Deserialize)]
struct TermLine {
    term: String,
    postings: Vec<[u32; 2]>,
}
