//! Deterministic offline backends.
//!
//! [`MockGenerator`] reads the same prompt a remote model would get and
//! answers it by rule: documents are `key: value` lines plus prose, and
//! every task has a fixed transformation over them. Outputs depend only on
//! the request, so pipelines built on it have exact expected values.

use std::collections::HashSet;

use serde_json::{json, Map, Value};

use super::{mock_completion, Completion, Embedder, ExtractionRequest, Generator, Task};
use crate::error::{Error, Result};
use crate::text::{normalize_ws_lower, parse_kv_line, tokens};

pub const DEFAULT_MOCK_DIM: usize = 256;

/// Hashed bag-of-tokens embedder: every token adds 1 to one of `dim`
/// buckets (FNV-1a). Text without any alphanumeric token hashes as a
/// single token so the vector is never zero.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }

    pub fn raw(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let toks = tokens(text);
        if toks.is_empty() {
            v[self.bucket(text.trim())] += 1.0;
        }
        for t in toks {
            v[self.bucket(&t)] += 1.0;
        }
        v
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_MOCK_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.raw(t)).collect())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockGenerator;

impl Generator for MockGenerator {
    fn complete(&self, req: &ExtractionRequest) -> Result<Completion> {
        let text = match req.task {
            Task::ExtractFacets => facets_json(&kv_by_key(&parse_documents(&req.user_message))),
            Task::GenerateQa => qa_from_documents(&parse_documents(&req.user_message)),
            Task::DetailedSummary => detailed_summary(&parse_documents(&req.user_message)),
            Task::ConciseSummary => concise_summary(&req.user_message),
            Task::MergeFacets => merge_facets(&req.user_message)?,
            Task::MergeQa => merge_qa(&req.user_message)?,
            Task::MergeSummaries => merge_summaries(&req.user_message)?,
            Task::ParseQuery => facets_json(&parse_query_kv(&req.user_message)),
            Task::Answer => answer(&req.user_message),
            Task::Judge => judge(&req.user_message),
        };
        Ok(mock_completion(req, text))
    }
}

pub(crate) struct MockDoc {
    pub id: String,
    pub body: String,
}

pub(crate) fn parse_documents(user: &str) -> Vec<MockDoc> {
    let mut docs = Vec::new();
    let mut rest = user;
    while let Some(start) = rest.find("<document id=\"") {
        let after = &rest[start + 14..];
        let Some(q) = after.find('"') else { break };
        let id = after[..q].to_string();
        let Some(gt) = after[q..].find('>') else { break };
        let body_start = &after[q + gt + 1..];
        let end = body_start.find("</document>").unwrap_or(body_start.len());
        docs.push(MockDoc { id, body: body_start[..end].trim().to_string() });
        rest = &body_start[end..];
    }
    docs
}

fn kv_lines(body: &str) -> Vec<(String, String)> {
    body.lines().filter_map(parse_kv_line).collect()
}

fn split_values(v: &str) -> impl Iterator<Item = String> + '_ {
    v.split("; ").map(str::trim).filter(|s| !s.is_empty()).map(str::to_string)
}

/// Groups values by key in first-seen key order; each key's values are
/// deduplicated and sorted, then joined with `"; "`.
fn group_values(pairs: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut order: Vec<String> = Vec::new();
    let mut values: std::collections::HashMap<String, std::collections::BTreeSet<String>> =
        std::collections::HashMap::new();
    for (k, v) in pairs {
        let entry = values.entry(k.clone()).or_insert_with(|| {
            order.push(k.clone());
            Default::default()
        });
        entry.extend(split_values(&v));
    }
    order
        .into_iter()
        .map(|k| {
            let joined = values[&k].iter().cloned().collect::<Vec<_>>().join("; ");
            (k, joined)
        })
        .collect()
}

fn kv_by_key(docs: &[MockDoc]) -> Vec<(String, String)> {
    group_values(docs.iter().flat_map(|d| kv_lines(&d.body)))
}

fn facets_json(pairs: &[(String, String)]) -> String {
    let mut m = Map::new();
    for (k, v) in pairs {
        m.insert(k.clone(), Value::String(v.clone()));
    }
    json!({ "facets": m }).to_string()
}

fn qa_from_documents(docs: &[MockDoc]) -> String {
    let mut items = Vec::new();
    for d in docs {
        let mut seen = HashSet::new();
        for (k, v) in kv_lines(&d.body) {
            if seen.insert(k.clone()) {
                items.push(json!({
                    "question": format!("What is the {k} for {}?", d.id),
                    "answer": v,
                    "source": d.id,
                }));
            }
        }
    }
    json!({ "rationale": "one question per key-value line", "question_answers": items }).to_string()
}

fn first_sentence(text: &str) -> String {
    let t = text.trim();
    match t.find(['.', '!', '?']) {
        Some(i) => t[..=i].to_string(),
        None => t.to_string(),
    }
}

fn detailed_summary(docs: &[MockDoc]) -> String {
    docs.iter()
        .map(|d| {
            let kv = kv_lines(&d.body);
            let body = if kv.is_empty() {
                first_sentence(&d.body)
            } else {
                kv.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join("; ")
            };
            format!("[{}] {}", d.id, body)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// First segment of the first non-empty line, with exactly one period.
fn concise_summary(input: &str) -> String {
    let line = input.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let line = match line.strip_prefix('[').and_then(|l| l.split_once(']')) {
        Some((_, rest)) => rest.trim(),
        None => line,
    };
    let seg = line.split("; ").next().unwrap_or("");
    let cleaned: String = seg.chars().filter(|c| *c != '.').collect();
    let cleaned = cleaned.trim();
    if cleaned.is_empty() {
        "No information.".to_string()
    } else {
        format!("{cleaned}.")
    }
}

fn children(user: &str) -> Result<Vec<Value>> {
    let v: Value =
        serde_json::from_str(user).map_err(|e| Error::MalformedResponse(format!("mock expected child JSON: {e}")))?;
    Ok(v.get("children").and_then(Value::as_array).cloned().unwrap_or_default())
}

fn merge_facets(user: &str) -> Result<String> {
    let mut pairs = Vec::new();
    for c in children(user)? {
        if let Some(obj) = c.get("facets").and_then(Value::as_object) {
            for (k, v) in obj {
                if let Some(s) = v.as_str() {
                    pairs.push((k.clone(), s.to_string()));
                }
            }
        }
    }
    Ok(facets_json(&group_values(pairs)))
}

fn merge_qa(user: &str) -> Result<String> {
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for c in children(user)? {
        for qa in c.get("question_answers").and_then(Value::as_array).into_iter().flatten() {
            let q = qa.get("question").and_then(Value::as_str).unwrap_or_default();
            if seen.insert(normalize_ws_lower(q)) {
                items.push(qa.clone());
            }
        }
    }
    Ok(json!({ "rationale": "deduplicated child questions", "question_answers": items }).to_string())
}

fn merge_summaries(user: &str) -> Result<String> {
    let parts: Vec<String> =
        children(user)?.iter().filter_map(|c| c.get("detailed").and_then(Value::as_str).map(str::to_string)).collect();
    Ok(parts.join("\n"))
}

/// `key=value` tokens, with optional double quotes around multi-word values.
pub fn parse_query_kv(query: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let chars: Vec<char> = query.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] != '=' {
            i += 1;
            continue;
        }
        let mut ks = i;
        while ks > 0 && is_key_char(chars[ks - 1]) {
            ks -= 1;
        }
        let key: String = chars[ks..i].iter().collect();
        let mut j = i + 1;
        let value: String = if j < chars.len() && chars[j] == '"' {
            let start = j + 1;
            j = start;
            while j < chars.len() && chars[j] != '"' {
                j += 1;
            }
            let v = chars[start..j.min(chars.len())].iter().collect();
            j += 1;
            v
        } else {
            let start = j;
            while j < chars.len() && !chars[j].is_whitespace() {
                j += 1;
            }
            let raw: String = chars[start..j].iter().collect();
            raw.trim_end_matches(['?', '!', ',', ';', '.', ')']).to_string()
        };
        let key = key.trim().to_lowercase();
        let value = value.trim().to_string();
        if !key.is_empty() && !value.is_empty() {
            out.push((key, value));
        }
        i = j.max(i + 1);
    }
    out
}

fn is_key_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

fn between<'a>(s: &'a str, open: &str, close: &str) -> &'a str {
    let Some(a) = s.find(open) else { return "" };
    let rest = &s[a + open.len()..];
    let b = rest.rfind(close).unwrap_or(rest.len());
    rest[..b].trim()
}

pub(crate) struct ContextItem {
    pub node: String,
    pub view: String,
    pub body: String,
}

pub(crate) fn parse_context(ctx: &str) -> Vec<ContextItem> {
    let mut items = Vec::new();
    let mut rest = ctx;
    while let Some(start) = rest.find("<item ") {
        let header_end = match rest[start..].find('>') {
            Some(e) => start + e,
            None => break,
        };
        let header = &rest[start..header_end];
        let attr = |name: &str| -> String {
            let pat = format!("{name}=\"");
            header
                .find(&pat)
                .and_then(|p| {
                    let v = &header[p + pat.len()..];
                    v.find('"').map(|q| v[..q].to_string())
                })
                .unwrap_or_default()
        };
        let body_rest = &rest[header_end + 1..];
        let end = body_rest.find("</item>").unwrap_or(body_rest.len());
        items.push(ContextItem { node: attr("node"), view: attr("view"), body: body_rest[..end].trim().to_string() });
        rest = &body_rest[end..];
    }
    items
}

struct Candidate {
    node: String,
    match_text: String,
    answer: String,
}

fn candidates(items: &[ContextItem]) -> Vec<Candidate> {
    let mut out = Vec::new();
    for it in items {
        match it.view.as_str() {
            "facet" => {
                for (k, v) in it.body.lines().filter_map(parse_kv_line) {
                    out.push(Candidate { node: it.node.clone(), match_text: format!("{k}: {v}"), answer: v });
                }
            }
            // raw document: a `doc_id:` header line scopes every fact below it
            "chunk" => {
                let mut doc = String::new();
                for (k, v) in it.body.lines().filter_map(parse_kv_line) {
                    if k == "doc_id" {
                        doc = v;
                        continue;
                    }
                    out.push(Candidate { node: it.node.clone(), match_text: format!("{k}: {v} {doc}"), answer: v });
                }
            }
            "qa" => {
                let q = it.body.lines().find_map(|l| l.trim().strip_prefix("Q:")).map(str::trim);
                let a = it.body.lines().find_map(|l| l.trim().strip_prefix("A:")).map(str::trim);
                if let (Some(q), Some(a)) = (q, a) {
                    out.push(Candidate { node: it.node.clone(), match_text: q.to_string(), answer: a.to_string() });
                }
            }
            _ => {}
        }
    }
    out
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "for", "how", "in", "is", "of", "on", "or", "the", "to", "what", "when", "where", "which",
    "who",
];

fn content_tokens(text: &str) -> HashSet<String> {
    tokens(text).into_iter().filter(|t| !STOPWORDS.contains(&t.as_str())).collect()
}

/// Picks the question or facet sharing the most distinct content tokens with the
/// query (ties: fewer tokens, then context order) and cites every node
/// carrying that same item.
fn answer(user: &str) -> String {
    let query = between(user, "<query>", "</query>");
    let items = parse_context(between(user, "<context>", "</context>"));
    let qtok = content_tokens(query);
    let cands = candidates(&items);
    let mut best: Option<(usize, usize, usize)> = None;
    for (i, c) in cands.iter().enumerate() {
        let ctok = content_tokens(&c.match_text);
        let overlap = ctok.intersection(&qtok).count();
        if overlap == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((o, len, _)) => overlap > o || (overlap == o && ctok.len() < len),
        };
        if better {
            best = Some((overlap, ctok.len(), i));
        }
    }
    let Some((overlap, _, idx)) = best else {
        return json!({
            "rationale": "no context item overlaps the query",
            "answer": "insufficient context",
            "citation": [],
        })
        .to_string();
    };
    let chosen = &cands[idx];
    let mut cited: Vec<String> = Vec::new();
    for c in &cands {
        if c.match_text == chosen.match_text && c.answer == chosen.answer && !cited.contains(&c.node) {
            cited.push(c.node.clone());
        }
    }
    json!({
        "rationale": format!("`{}` shares {overlap} tokens with the query", chosen.match_text),
        "answer": chosen.answer,
        "citation": cited,
    })
    .to_string()
}

fn judge(user: &str) -> String {
    let gold: HashSet<String> = tokens(between(user, "<gold>", "</gold>")).into_iter().collect();
    let cand: HashSet<String> = tokens(between(user, "<candidate>", "</candidate>")).into_iter().collect();
    let ok = !gold.is_empty() && gold.is_subset(&cand);
    json!({
        "rationale": "gold tokens contained in candidate",
        "answer": if ok { "correct" } else { "incorrect" },
        "citation": [],
    })
    .to_string()
}
