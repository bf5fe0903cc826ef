//! Generation and embedding backends.
//!
//! [`Backend`] wraps a [`Generator`] and an [`Embedder`] and owns the
//! cross-cutting rules: usage accounting, response-schema parsing with a
//! single retry, and unit normalization of embeddings. Implementations only
//! move bytes.

mod mock;
mod remote;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use mock::{parse_query_kv, HashEmbedder, MockGenerator, DEFAULT_MOCK_DIM};
pub use remote::{RemoteEmbedder, RemoteGenerator};

use crate::error::{Error, Result};
use crate::text::whitespace_tokens;

/// What a request is for. Remote models only see the messages; the mock
/// dispatches on this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ExtractFacets,
    GenerateQa,
    DetailedSummary,
    ConciseSummary,
    MergeFacets,
    MergeQa,
    MergeSummaries,
    ParseQuery,
    Answer,
    Judge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseSchema {
    FacetJson,
    QaJson,
    FreeText,
    AnswerJson,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionRequest {
    pub task: Task,
    pub system_message: String,
    pub user_message: String,
    pub expected_schema: ResponseSchema,
}

impl ExtractionRequest {
    pub fn new(task: Task, system: impl Into<String>, user: impl Into<String>, schema: ResponseSchema) -> Self {
        Self { task, system_message: system.into(), user_message: user.into(), expected_schema: schema }
    }
}

/// Raw output of one generator call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub trait Generator: Send + Sync {
    fn complete(&self, req: &ExtractionRequest) -> Result<Completion>;
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    /// Raw (not necessarily normalized) vectors, one per input.
    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub llm_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl UsageRecord {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn since(&self, earlier: &UsageRecord) -> UsageRecord {
        UsageRecord {
            llm_calls: self.llm_calls - earlier.llm_calls,
            prompt_tokens: self.prompt_tokens - earlier.prompt_tokens,
            completion_tokens: self.completion_tokens - earlier.completion_tokens,
        }
    }
}

/// Thread-safe accumulator for [`UsageRecord`]s.
#[derive(Debug, Default)]
pub struct UsageMeter {
    llm_calls: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

impl UsageMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, c: &Completion) {
        self.llm_calls.fetch_add(1, Ordering::Relaxed);
        self.prompt_tokens.fetch_add(c.prompt_tokens, Ordering::Relaxed);
        self.completion_tokens.fetch_add(c.completion_tokens, Ordering::Relaxed);
    }

    pub fn add(&self, u: &UsageRecord) {
        self.llm_calls.fetch_add(u.llm_calls, Ordering::Relaxed);
        self.prompt_tokens.fetch_add(u.prompt_tokens, Ordering::Relaxed);
        self.completion_tokens.fetch_add(u.completion_tokens, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> UsageRecord {
        UsageRecord {
            llm_calls: self.llm_calls.load(Ordering::Relaxed),
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
        }
    }
}

/// Unit-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit length. A zero vector stays zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|x| *x /= norm);
        }
        Self { values }
    }

    /// Wraps values as-is.
    pub fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Cosine similarity. Zero-norm inputs score 0.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Generator + embedder pair used by every pipeline stage.
#[derive(Clone)]
pub struct Backend {
    generator: Arc<dyn Generator>,
    embedder: Arc<dyn Embedder>,
}

impl Backend {
    pub fn new(generator: Arc<dyn Generator>, embedder: Arc<dyn Embedder>) -> Self {
        Self { generator, embedder }
    }

    pub fn mock() -> Self {
        Self::new(Arc::new(MockGenerator), Arc::new(HashEmbedder::default()))
    }

    pub fn dim(&self) -> usize {
        self.embedder.dim()
    }

    /// One generator call, billed to `usage`.
    pub fn generate(&self, req: &ExtractionRequest, usage: &UsageMeter) -> Result<String> {
        let completion = self.generator.complete(req)?;
        usage.record(&completion);
        Ok(completion.text)
    }

    /// Generates and parses against `req.expected_schema`, retrying once on
    /// a parse failure.
    pub fn generate_parsed(&self, req: &ExtractionRequest, usage: &UsageMeter) -> Result<Parsed> {
        let first = self.generate(req, usage)?;
        match parse_response(&first, req.expected_schema) {
            Ok(p) => Ok(p),
            Err(e) => {
                log::warn!("{:?} response failed to parse ({e}); retrying once", req.task);
                let second = self.generate(req, usage)?;
                parse_response(&second, req.expected_schema)
            }
        }
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed_many(&[text])?.pop().expect("one vector per input"))
    }

    pub fn embed_many(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::EmptyText);
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let raw = self.embedder.embed_raw(texts)?;
        if raw.len() != texts.len() {
            return Err(Error::MalformedResponse(format!(
                "embedder returned {} vectors for {} inputs",
                raw.len(),
                texts.len()
            )));
        }
        raw.into_iter()
            .map(|v| {
                if v.len() != self.dim() {
                    return Err(Error::DimMismatch(v.len(), self.dim()));
                }
                Ok(EmbeddingVector::normalized(v))
            })
            .collect()
    }
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend").field("dim", &self.dim()).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerJson {
    pub rationale: String,
    pub answer: String,
    pub citations: Vec<String>,
}

/// A response that passed its schema check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Facets(Vec<(String, String)>),
    Qa { rationale: String, pairs: Vec<QaItem> },
    Text(String),
    Answer(AnswerJson),
}

impl Parsed {
    pub fn into_facets(self) -> Result<Vec<(String, String)>> {
        match self {
            Parsed::Facets(f) => Ok(f),
            other => Err(Error::MalformedResponse(format!("expected facets, got {other:?}"))),
        }
    }

    pub fn into_qa(self) -> Result<Vec<QaItem>> {
        match self {
            Parsed::Qa { pairs, .. } => Ok(pairs),
            other => Err(Error::MalformedResponse(format!("expected QA pairs, got {other:?}"))),
        }
    }

    pub fn into_text(self) -> Result<String> {
        match self {
            Parsed::Text(t) => Ok(t),
            other => Err(Error::MalformedResponse(format!("expected text, got {other:?}"))),
        }
    }

    pub fn into_answer(self) -> Result<AnswerJson> {
        match self {
            Parsed::Answer(a) => Ok(a),
            other => Err(Error::MalformedResponse(format!("expected answer, got {other:?}"))),
        }
    }
}

/// Removes a surrounding Markdown code fence, which chat models like to add.
fn strip_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedResponse(msg.into())
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

pub fn parse_response(raw: &str, schema: ResponseSchema) -> Result<Parsed> {
    if schema == ResponseSchema::FreeText {
        let t = raw.trim();
        if t.is_empty() {
            return Err(malformed("empty text"));
        }
        return Ok(Parsed::Text(t.to_string()));
    }
    let v: Value = serde_json::from_str(strip_fence(raw)).map_err(|e| malformed(format!("not JSON: {e}")))?;
    match schema {
        ResponseSchema::FacetJson => {
            let obj = v.get("facets").and_then(Value::as_object).ok_or_else(|| malformed("missing `facets` object"))?;
            let mut out = Vec::with_capacity(obj.len());
            for (k, val) in obj {
                if val.is_null() {
                    continue;
                }
                let s = scalar_string(val).ok_or_else(|| malformed(format!("facet `{k}` is nested")))?;
                out.push((k.clone(), s));
            }
            Ok(Parsed::Facets(out))
        }
        ResponseSchema::QaJson => {
            let arr = v
                .get("question_answers")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed("missing `question_answers` array"))?;
            let pairs = arr
                .iter()
                .map(|item| {
                    let question = item.get("question").and_then(scalar_string);
                    let answer = item.get("answer").and_then(scalar_string);
                    let source = item.get("source").and_then(scalar_string).unwrap_or_default();
                    match (question, answer) {
                        (Some(q), Some(a)) => Ok(QaItem { question: q, answer: a, source }),
                        _ => Err(malformed("QA item lacks question or answer")),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let rationale = v.get("rationale").and_then(scalar_string).unwrap_or_default();
            Ok(Parsed::Qa { rationale, pairs })
        }
        ResponseSchema::AnswerJson => {
            let answer = v.get("answer").and_then(scalar_string).ok_or_else(|| malformed("missing `answer`"))?;
            let rationale = v.get("rationale").and_then(scalar_string).unwrap_or_default();
            let citations = match v.get("citation").or_else(|| v.get("citations")) {
                None | Some(Value::Null) => Vec::new(),
                Some(Value::Array(a)) => a.iter().filter_map(scalar_string).collect(),
                Some(_) => return Err(malformed("`citation` must be a list")),
            };
            Ok(Parsed::Answer(AnswerJson { rationale, answer, citations }))
        }
        ResponseSchema::FreeText => unreachable!(),
    }
}

/// Bills whitespace tokens the way the mock does.
pub(crate) fn mock_completion(req: &ExtractionRequest, text: String) -> Completion {
    Completion {
        prompt_tokens: (whitespace_tokens(&req.system_message) + whitespace_tokens(&req.user_message)) as u64,
        completion_tokens: whitespace_tokens(&text) as u64,
        text,
    }
}
