//! Scoped multi-view retrieval over the collapsed subtree of a scope node.
//!
//! Three independent views, each with its own top-k:
//! - facet: micro-queries from the parsed query, each matched against a
//!   node's facets (averaged TopK cosine),
//! - QA: per-pair similarity between the query and stored questions,
//! - summary: cosine between the query and a node's concise summary.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{
    cosine, parse_query_kv, Backend, EmbeddingVector, ExtractionRequest, ResponseSchema, Task, UsageMeter,
};
use crate::error::{Error, Result};
use crate::memory::{linearize, NodeMemory};
use crate::prompts;
use crate::store::{knn_over, Store, View};
use crate::tree::{MemoryTree, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    pub k_facet: usize,
    pub k_qa: usize,
    pub k_summary: usize,
    /// TopK inside the facet score.
    pub k_inner: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self { k_facet: 5, k_qa: 5, k_summary: 5, k_inner: 3 }
    }
}

/// How a query is decomposed into facet constraints.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryParser {
    /// One generator call.
    #[default]
    Backend,
    /// Local `key=value` rule, no call.
    Rules,
}

/// Decomposes a query into `(key, value)` micro-queries. A malformed
/// model reply is not fatal: the facet view is simply skipped.
pub fn parse_query_facets(
    backend: &Backend,
    usage: &UsageMeter,
    parser: QueryParser,
    q: &str,
) -> Result<Vec<(String, String)>> {
    if q.trim().is_empty() {
        return Err(Error::InvalidArgument("query text is empty".into()));
    }
    let pairs = match parser {
        QueryParser::Rules => parse_query_kv(q),
        QueryParser::Backend => {
            let req =
                ExtractionRequest::new(Task::ParseQuery, prompts::QUERY_FACETS_SYSTEM, q, ResponseSchema::FacetJson);
            match backend.generate_parsed(&req, usage).and_then(|p| p.into_facets()) {
                Ok(p) => p,
                Err(Error::MalformedResponse(msg)) => {
                    log::warn!("query facet parse failed, skipping facet view: {msg}");
                    Vec::new()
                }
                Err(e) => return Err(e),
            }
        }
    };
    Ok(pairs
        .into_iter()
        .map(|(k, v)| (k.trim().to_lowercase(), v.trim().to_string()))
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Query {
    pub text: String,
    pub scope: NodeId,
    pub parsed_facets: Vec<(String, String)>,
    #[serde(skip_serializing)]
    pub embedding: EmbeddingVector,
}

impl Query {
    pub fn new(backend: &Backend, text: &str, scope: NodeId, parsed_facets: Vec<(String, String)>) -> Result<Self> {
        Ok(Self { text: text.to_string(), embedding: backend.embed(text)?, scope, parsed_facets })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedFacet {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetHit {
    pub node: NodeId,
    pub score: f64,
    /// Union over micro-queries of the node facets each one selected.
    pub facets: Vec<MatchedFacet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaHit {
    pub node: NodeId,
    pub score: f64,
    pub question: String,
    pub answer: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryHit {
    pub node: NodeId,
    pub score: f64,
    pub detailed: String,
    pub concise: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub facet_hits: Vec<FacetHit>,
    pub qa_hits: Vec<QaHit>,
    pub summary_hits: Vec<SummaryHit>,
    /// Every node of the scope subtree, i.e. the candidate pool.
    pub scored: Vec<NodeId>,
}

impl RetrievalResult {
    pub fn is_empty(&self) -> bool {
        self.facet_hits.is_empty() && self.qa_hits.is_empty() && self.summary_hits.is_empty()
    }

    /// Distinct hit nodes across all views.
    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.facet_hits
            .iter()
            .map(|h| h.node.clone())
            .chain(self.qa_hits.iter().map(|h| h.node.clone()))
            .chain(self.summary_hits.iter().map(|h| h.node.clone()))
            .collect()
    }
}

/// Facet score of one memory plus the facet indices it selected, in order
/// of first selection.
fn facet_score(micro: &[EmbeddingVector], m: Option<&NodeMemory>, k: usize) -> Result<(f64, Vec<usize>)> {
    let facets = m.map(|m| m.facets.as_slice()).unwrap_or_default();
    if micro.is_empty() || facets.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let mut total = 0.0;
    let mut picked = Vec::new();
    for f in micro {
        let mut sims: Vec<(usize, f64)> =
            facets.iter().enumerate().map(|(i, g)| Ok((i, cosine(f, &g.embedding)?))).collect::<Result<_>>()?;
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (i, s) in sims.into_iter().take(k) {
            total += s;
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
    }
    Ok((total / (k * micro.len()) as f64, picked))
}

fn qa_score(q: &EmbeddingVector, m: Option<&NodeMemory>) -> Result<f64> {
    let mut best: Option<f64> = None;
    for p in m.map(|m| m.qa.as_slice()).unwrap_or_default() {
        let s = cosine(q, &p.embedding)?;
        best = Some(best.map_or(s, |b: f64| b.max(s)));
    }
    Ok(best.unwrap_or(0.0))
}

fn embed_micro(backend: &Backend, fq: &[(String, String)]) -> Result<Vec<EmbeddingVector>> {
    if fq.is_empty() {
        return Ok(Vec::new());
    }
    let lin: Vec<String> = fq.iter().map(|(k, v)| linearize(k, v)).collect();
    backend.embed_many(&lin.iter().map(String::as_str).collect::<Vec<_>>())
}

/// Read-only view over a tree and store.
pub struct Retriever<'a> {
    pub tree: &'a MemoryTree,
    pub store: &'a Store,
    pub backend: &'a Backend,
}

impl<'a> Retriever<'a> {
    pub fn new(tree: &'a MemoryTree, store: &'a Store, backend: &'a Backend) -> Self {
        Self { tree, store, backend }
    }

    fn memory_of(&self, v: &NodeId) -> Result<Option<Arc<NodeMemory>>> {
        self.tree.node(v)?;
        Ok(self.store.memory(v))
    }

    pub fn score_facet(&self, fq: &[(String, String)], v: &NodeId, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let m = self.memory_of(v)?;
        Ok(facet_score(&embed_micro(self.backend, fq)?, m.as_deref(), k)?.0)
    }

    pub fn score_qa(&self, q: &Query, v: &NodeId) -> Result<f64> {
        qa_score(&q.embedding, self.memory_of(v)?.as_deref())
    }

    pub fn score_summary(&self, q: &Query, v: &NodeId) -> Result<f64> {
        let m = self.memory_of(v)?.ok_or_else(|| Error::MissingMemory(v.clone()))?;
        cosine(&q.embedding, &m.summary.embedding)
    }

    /// Per-view top-k over every node of `subtree(q.scope)`. Nodes without
    /// a memory have empty views: they score 0 on facets and QA and have
    /// no summary to rank.
    pub fn retrieve(&self, q: &Query, p: &RetrievalParams) -> Result<RetrievalResult> {
        if !self.tree.contains(&q.scope) {
            return Err(Error::UnknownScope(q.scope.to_string()));
        }
        if p.k_inner == 0 {
            return Err(Error::InvalidArgument("k_inner must be at least 1".into()));
        }
        let pool = self.tree.subtree(&q.scope)?;
        // one snapshot so every view sees the same memory versions
        let mems = self.store.memories_in(&pool);
        let by_node: BTreeMap<&NodeId, &Arc<NodeMemory>> = mems.iter().map(|m| (&m.node, m)).collect();

        let mut facet_hits = Vec::new();
        let micro = embed_micro(self.backend, &q.parsed_facets)?;
        if !micro.is_empty() && p.k_facet > 0 {
            let mut scored = Vec::new();
            for m in &mems {
                let (s, picked) = facet_score(&micro, Some(m), p.k_inner)?;
                if !picked.is_empty() {
                    scored.push((m, s, picked));
                }
            }
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.node.cmp(&b.0.node)));
            facet_hits = scored
                .into_iter()
                .take(p.k_facet)
                .map(|(m, score, picked)| FacetHit {
                    node: m.node.clone(),
                    score,
                    facets: picked
                        .into_iter()
                        .map(|i| MatchedFacet { key: m.facets[i].key.clone(), value: m.facets[i].value.clone() })
                        .collect(),
                })
                .collect();
        }

        let qa_hits = if p.k_qa == 0 {
            Vec::new()
        } else {
            knn_over(&mems, View::Qa, &q.embedding, p.k_qa)?
                .into_iter()
                .map(|(e, score)| {
                    let qa = &by_node[&e.node].qa[e.item_ref];
                    QaHit {
                        node: e.node,
                        score,
                        question: qa.question.clone(),
                        answer: qa.answer.clone(),
                        source: qa.source_doc.clone(),
                    }
                })
                .collect()
        };

        let summary_hits = if p.k_summary == 0 {
            Vec::new()
        } else {
            knn_over(&mems, View::Summary, &q.embedding, p.k_summary)?
                .into_iter()
                .map(|(e, score)| {
                    let s = &by_node[&e.node].summary;
                    SummaryHit { node: e.node, score, detailed: s.detailed.clone(), concise: s.concise.clone() }
                })
                .collect()
        };

        Ok(RetrievalResult { facet_hits, qa_hits, summary_hits, scored: self.tree.preorder(&q.scope)? })
    }
}
