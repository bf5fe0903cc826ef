//! Answer synthesis over retrieved memories, with node-id citations.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ExtractionRequest, ResponseSchema, Task, UsageMeter};
use crate::error::{Error, Result};
use crate::prompts;
use crate::retrieval::RetrievalResult;
use crate::text::whitespace_tokens;
use crate::tree::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub rationale: String,
    pub answer: String,
    /// Ranked; every id appeared in the prompt context.
    pub citations: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnswerConfig {
    /// Whitespace-token budget for the serialized context.
    pub context_token_cap: usize,
}

impl Default for AnswerConfig {
    fn default() -> Self {
        Self { context_token_cap: 4000 }
    }
}

/// One block of prompt context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextItem {
    pub node: NodeId,
    /// `facet`, `qa`, `summary` or `chunk`.
    pub view: String,
    pub score: f64,
    pub body: String,
}

impl ContextItem {
    fn render(&self) -> String {
        format!(
            "<item node=\"{}\" view=\"{}\" score=\"{:.4}\">\n{}\n</item>",
            self.node,
            self.view,
            self.score,
            self.body.trim()
        )
    }
}

/// Context items in serialization order: facet hits, QA hits, summary hits.
pub fn context_items(ctx: &RetrievalResult) -> Vec<ContextItem> {
    let mut items = Vec::new();
    for h in &ctx.facet_hits {
        let body = h.facets.iter().map(|f| format!("{}: {}", f.key, f.value)).collect::<Vec<_>>().join("\n");
        items.push(ContextItem { node: h.node.clone(), view: "facet".into(), score: h.score, body });
    }
    for h in &ctx.qa_hits {
        let mut body = format!("Q: {}\nA: {}", h.question, h.answer);
        if !h.source.is_empty() {
            body.push_str(&format!("\nSource: {}", h.source));
        }
        items.push(ContextItem { node: h.node.clone(), view: "qa".into(), score: h.score, body });
    }
    for h in &ctx.summary_hits {
        items.push(ContextItem {
            node: h.node.clone(),
            view: "summary".into(),
            score: h.score,
            body: h.detailed.clone(),
        });
    }
    items
}

/// Drops the lowest-scoring items (later ones first on ties) until the
/// rendered context fits in `cap` tokens. Order of the survivors is kept.
pub fn cap_context(items: Vec<ContextItem>, cap: usize) -> Vec<ContextItem> {
    let sizes: Vec<usize> = items.iter().map(|i| whitespace_tokens(&i.render())).collect();
    let mut total: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].score.total_cmp(&items[b].score).then(b.cmp(&a)));
    let mut dropped = BTreeSet::new();
    for i in order {
        if total <= cap {
            break;
        }
        total -= sizes[i];
        dropped.insert(i);
    }
    items.into_iter().enumerate().filter(|(i, _)| !dropped.contains(i)).map(|(_, it)| it).collect()
}

/// One generator call over already prepared context items.
pub fn answer_from_items(backend: &Backend, usage: &UsageMeter, query: &str, items: &[ContextItem]) -> Result<Answer> {
    if items.is_empty() {
        return Err(Error::EmptyContext);
    }
    let context = items.iter().map(ContextItem::render).collect::<Vec<_>>().join("\n");
    let req = ExtractionRequest::new(
        Task::Answer,
        prompts::ANSWER_SYSTEM,
        prompts::answer_user_message(query, &context),
        ResponseSchema::AnswerJson,
    );
    let raw = backend.generate_parsed(&req, usage)?.into_answer()?;
    let present: BTreeSet<&str> = items.iter().map(|i| i.node.as_str()).collect();
    let mut citations: Vec<NodeId> = Vec::new();
    for c in raw.citations {
        let c = c.trim();
        if !present.contains(c) {
            log::warn!("dropping citation `{c}`: not in the answer context");
            continue;
        }
        let id = NodeId::new(c)?;
        if !citations.contains(&id) {
            citations.push(id);
        }
    }
    Ok(Answer { rationale: raw.rationale, answer: raw.answer, citations })
}

pub fn generate_answer(
    backend: &Backend,
    usage: &UsageMeter,
    query: &str,
    ctx: &RetrievalResult,
    config: &AnswerConfig,
) -> Result<Answer> {
    if ctx.is_empty() {
        return Err(Error::EmptyContext);
    }
    let items = cap_context(context_items(ctx), config.context_token_cap);
    answer_from_items(backend, usage, query, &items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Completion, Generator, HashEmbedder};
    use crate::retrieval::{FacetHit, MatchedFacet, QaHit, SummaryHit};
    use std::sync::Arc;

    fn id(s: &str) -> NodeId {
        NodeId::new(s).unwrap()
    }

    fn sample() -> RetrievalResult {
        RetrievalResult {
            facet_hits: vec![FacetHit {
                node: id("a"),
                score: 0.9,
                facets: vec![MatchedFacet { key: "location".into(), value: "SF".into() }],
            }],
            qa_hits: vec![QaHit {
                node: id("b"),
                score: 0.5,
                question: "What is the budget for doc-1?".into(),
                answer: "10k".into(),
                source: "doc-1".into(),
            }],
            summary_hits: vec![SummaryHit {
                node: id("c"),
                score: 0.2,
                detailed: "long text here".into(),
                concise: "x.".into(),
            }],
            scored: vec![],
        }
    }

    #[test]
    fn mock_answers_from_facet_and_cites_it() {
        let b = Backend::mock();
        let usage = UsageMeter::new();
        let a = generate_answer(&b, &usage, "jobs by location?", &sample(), &AnswerConfig::default()).unwrap();
        assert_eq!(a.answer, "SF");
        assert_eq!(a.citations, vec![id("a")]);
        assert_eq!(usage.snapshot().llm_calls, 1);
    }

    #[test]
    fn out_of_context_citations_are_dropped() {
        struct Liar;
        impl Generator for Liar {
            fn complete(&self, _: &ExtractionRequest) -> Result<Completion> {
                Ok(Completion {
                    text: r#"{"rationale":"r","answer":"ok","citation":["ghost","b","b"]}"#.into(),
                    prompt_tokens: 1,
                    completion_tokens: 1,
                })
            }
        }
        let b = Backend::new(Arc::new(Liar), Arc::new(HashEmbedder::default()));
        let a = generate_answer(&b, &UsageMeter::new(), "q", &sample(), &AnswerConfig::default()).unwrap();
        assert_eq!(a.answer, "ok");
        assert_eq!(a.citations, vec![id("b")]);
    }

    #[test]
    fn serialization_order_and_cap() {
        let items = context_items(&sample());
        let views: Vec<&str> = items.iter().map(|i| i.view.as_str()).collect();
        assert_eq!(views, ["facet", "qa", "summary"]);
        let sizes: Vec<usize> = items.iter().map(|i| whitespace_tokens(&i.render())).collect();
        let cap = sizes[0] + sizes[1];
        let kept = cap_context(items.clone(), cap);
        assert_eq!(kept.iter().map(|i| i.view.as_str()).collect::<Vec<_>>(), ["facet", "qa"]);
        let kept = cap_context(items.clone(), sizes[0]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].view, "facet");
        assert!(cap_context(items, 0).is_empty());
    }

    #[test]
    fn empty_context_is_an_error() {
        let b = Backend::mock();
        let r = generate_answer(&b, &UsageMeter::new(), "q", &RetrievalResult::default(), &AnswerConfig::default());
        assert!(matches!(r, Err(Error::EmptyContext)));
    }
}
