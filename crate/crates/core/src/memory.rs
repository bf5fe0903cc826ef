//! Per-node multi-view memory: facets, answerable QA pairs and a two-level
//! summary, each embedded for retrieval.

use std::collections::{BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::QueryPatternProfile;
use crate::backend::{Backend, EmbeddingVector, ExtractionRequest, QaItem, ResponseSchema, Task, UsageMeter};
use crate::error::{Error, Result};
use crate::prompts;
use crate::text::whitespace_tokens;
use crate::tree::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub node: NodeId,
    pub timestamp: DateTime<Utc>,
    pub text: String,
}

/// One line of the JSONL ingestion format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub node_business_key: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    pub key: String,
    pub value: String,
    pub linearized: String,
    pub embedding: EmbeddingVector,
    pub source_node: NodeId,
}

pub fn linearize(key: &str, value: &str) -> String {
    format!("{key}: {value}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub source_doc: String,
    /// Embedding of the question only.
    pub embedding: EmbeddingVector,
    pub source_node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryView {
    pub detailed: String,
    pub concise: String,
    /// Embedding of the concise sentence.
    pub embedding: EmbeddingVector,
    pub source_node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMemory {
    pub node: NodeId,
    pub facets: Vec<Facet>,
    pub qa: Vec<QaPair>,
    pub summary: SummaryView,
    pub version: u64,
    /// SHA-256 over the inputs the memory was built from.
    pub built_from: String,
}

impl NodeMemory {
    pub fn dump(&self) -> MemoryDump {
        MemoryDump {
            node: self.node.clone(),
            version: self.version,
            facets: self.facets.iter().map(|f| FacetDump { key: f.key.clone(), value: f.value.clone() }).collect(),
            qa: self
                .qa
                .iter()
                .map(|q| QaDump {
                    question: q.question.clone(),
                    answer: q.answer.clone(),
                    source: q.source_doc.clone(),
                })
                .collect(),
            summary: SummaryDump { detailed: self.summary.detailed.clone(), concise: self.summary.concise.clone() },
        }
    }

    /// Same memory re-addressed to `node`, every item included.
    pub fn rebased(&self, node: &NodeId) -> NodeMemory {
        let mut m = self.clone();
        m.node = node.clone();
        m.facets.iter_mut().for_each(|f| f.source_node = node.clone());
        m.qa.iter_mut().for_each(|q| q.source_node = node.clone());
        m.summary.source_node = node.clone();
        m
    }
}

/// Embedding-free view of a memory, `{"node","version","facets","qa","summary"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryDump {
    pub node: NodeId,
    pub version: u64,
    pub facets: Vec<FacetDump>,
    pub qa: Vec<QaDump>,
    pub summary: SummaryDump,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FacetDump {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QaDump {
    pub question: String,
    pub answer: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryDump {
    pub detailed: String,
    pub concise: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub max_facets: usize,
    pub max_qa: usize,
    /// Documents are batched (and oversized ones split) to stay under this
    /// many whitespace tokens per extraction prompt.
    pub doc_token_budget: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self { max_facets: 64, max_qa: 32, doc_token_budget: 8000 }
    }
}

/// Canonical facet list: lowercase keys in first-seen order. A key seen
/// with several values keeps the sorted, deduplicated union of its
/// `"; "`-separated parts.
pub(crate) fn normalize_facets(pairs: Vec<(String, String)>) -> Vec<(String, String)> {
    let mut order: Vec<String> = Vec::new();
    let mut values: HashMap<String, Vec<String>> = HashMap::new();
    for (k, v) in pairs {
        let key = k.trim().to_lowercase();
        let value = v.trim().to_string();
        if key.is_empty() || value.is_empty() {
            continue;
        }
        values
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key.clone());
                Vec::new()
            })
            .push(value);
    }
    order
        .into_iter()
        .map(|k| {
            let vals = &values[&k];
            let value = if vals.len() == 1 {
                vals[0].clone()
            } else {
                let parts: BTreeSet<&str> =
                    vals.iter().flat_map(|v| v.split("; ")).map(str::trim).filter(|s| !s.is_empty()).collect();
                parts.into_iter().collect::<Vec<_>>().join("; ")
            };
            (k, value)
        })
        .collect()
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Extraction prompts for one node, billed to a shared meter.
pub struct MemoryBuilder<'a> {
    pub backend: &'a Backend,
    pub config: &'a MemoryConfig,
    pub usage: &'a UsageMeter,
}

impl<'a> MemoryBuilder<'a> {
    pub fn new(backend: &'a Backend, config: &'a MemoryConfig, usage: &'a UsageMeter) -> Self {
        Self { backend, config, usage }
    }

    /// Groups documents into prompt-sized batches, splitting any single
    /// document that exceeds the budget on line boundaries.
    fn batches(&self, docs: &[&Document]) -> Vec<Vec<Document>> {
        let budget = self.config.doc_token_budget.max(1);
        let mut pieces: Vec<Document> = Vec::new();
        for d in docs {
            if whitespace_tokens(&d.text) <= budget {
                pieces.push((*d).clone());
                continue;
            }
            let mut cur = String::new();
            let mut cur_tokens = 0;
            for line in d.text.lines() {
                let n = whitespace_tokens(line);
                if cur_tokens + n > budget && !cur.is_empty() {
                    pieces.push(Document { text: std::mem::take(&mut cur), ..(*d).clone() });
                    cur_tokens = 0;
                }
                cur.push_str(line);
                cur.push('\n');
                cur_tokens += n;
            }
            if !cur.trim().is_empty() {
                pieces.push(Document { text: cur, ..(*d).clone() });
            }
        }
        let mut batches: Vec<Vec<Document>> = Vec::new();
        let mut used = 0;
        for p in pieces {
            let n = whitespace_tokens(&p.text);
            match batches.last_mut() {
                Some(b) if used + n <= budget => {
                    b.push(p);
                    used += n;
                }
                _ => {
                    batches.push(vec![p]);
                    used = n;
                }
            }
        }
        batches
    }

    fn facets_call(&self, docs: &[&Document], profile: Option<&QueryPatternProfile>) -> Result<Vec<(String, String)>> {
        let req = ExtractionRequest::new(
            Task::ExtractFacets,
            prompts::with_facet_hints(prompts::FACET_SYSTEM, profile),
            prompts::render_documents(docs),
            ResponseSchema::FacetJson,
        );
        self.backend.generate_parsed(&req, self.usage)?.into_facets()
    }

    fn qa_call(&self, docs: &[&Document], profile: Option<&QueryPatternProfile>) -> Result<Vec<QaItem>> {
        let req = ExtractionRequest::new(
            Task::GenerateQa,
            prompts::with_pattern_priors(prompts::QA_SYSTEM, profile),
            prompts::render_documents(docs),
            ResponseSchema::QaJson,
        );
        let pairs = self.backend.generate_parsed(&req, self.usage)?.into_qa()?;
        if !(5..=10).contains(&pairs.len()) {
            log::debug!("QA generation returned {} pairs (prompt asks for 5-10)", pairs.len());
        }
        Ok(pairs)
    }

    fn detailed_call(&self, docs: &[&Document], profile: Option<&QueryPatternProfile>) -> Result<String> {
        let req = ExtractionRequest::new(
            Task::DetailedSummary,
            prompts::with_facet_hints(prompts::DETAILED_SUMMARY_SYSTEM, profile),
            prompts::render_documents(docs),
            ResponseSchema::FreeText,
        );
        self.backend.generate_parsed(&req, self.usage)?.into_text()
    }

    pub(crate) fn concise_call(&self, detailed: &str) -> Result<String> {
        let req = ExtractionRequest::new(
            Task::ConciseSummary,
            prompts::CONCISE_SUMMARY_SYSTEM,
            detailed,
            ResponseSchema::FreeText,
        );
        self.backend.generate_parsed(&req, self.usage)?.into_text()
    }

    /// Flattened key/value facets (no embeddings yet). Profile facet names
    /// are added to the prompt as emphasis only.
    pub fn extract_facets(
        &self,
        docs: &[&Document],
        hints: Option<&QueryPatternProfile>,
    ) -> Result<Vec<(String, String)>> {
        if docs.is_empty() {
            return Err(Error::EmptyDocuments);
        }
        let mut all = Vec::new();
        for batch in self.batches(docs) {
            let refs: Vec<&Document> = batch.iter().collect();
            all.extend(self.facets_call(&refs, hints)?);
        }
        Ok(normalize_facets(all))
    }

    pub fn generate_qa(&self, docs: &[&Document], patterns: Option<&QueryPatternProfile>) -> Result<Vec<QaItem>> {
        if docs.is_empty() {
            return Err(Error::EmptyDocuments);
        }
        let mut all = Vec::new();
        for batch in self.batches(docs) {
            let refs: Vec<&Document> = batch.iter().collect();
            all.extend(self.qa_call(&refs, patterns)?);
        }
        all.retain(|q| !q.question.trim().is_empty() && !q.answer.trim().is_empty());
        Ok(all)
    }

    /// Two-stage summary: detailed paragraph(s) from the documents, then
    /// one sentence from the detailed text. Returns `(detailed, concise)`.
    pub fn summarize(&self, docs: &[&Document], hints: Option<&QueryPatternProfile>) -> Result<(String, String)> {
        if docs.is_empty() {
            return Err(Error::EmptyDocuments);
        }
        let mut parts = Vec::new();
        for batch in self.batches(docs) {
            let refs: Vec<&Document> = batch.iter().collect();
            parts.push(self.detailed_call(&refs, hints)?);
        }
        let detailed = parts.join("\n");
        let concise = self.concise_call(&detailed)?;
        Ok((detailed, concise))
    }

    /// Builds a leaf memory from all of its documents. Documents are
    /// ordered by `(timestamp, doc_id)` so the prompts do not depend on
    /// ingestion order.
    pub fn build_leaf_memory(
        &self,
        node: &NodeId,
        docs: &[&Document],
        profile: Option<&QueryPatternProfile>,
        version: u64,
    ) -> Result<NodeMemory> {
        if docs.is_empty() {
            return Err(Error::EmptyDocuments);
        }
        let mut docs = docs.to_vec();
        docs.sort_by(|a, b| (a.timestamp, &a.doc_id).cmp(&(b.timestamp, &b.doc_id)));

        let facets = self.extract_facets(&docs, profile)?;
        let qa = self.generate_qa(&docs, profile)?;
        let (detailed, concise) = self.summarize(&docs, profile)?;

        let mut hasher = Sha256::new();
        for d in &docs {
            hasher.update(d.doc_id.as_bytes());
            hasher.update([0]);
            hasher.update(d.timestamp.to_rfc3339().as_bytes());
            hasher.update([0]);
            hasher.update(d.text.as_bytes());
            hasher.update([0]);
        }
        if let Some(p) = profile {
            hasher.update(serde_json::to_vec(p)?);
        }
        let built_from = hex(&hasher.finalize());
        self.assemble(node, facets, qa, detailed, concise, version, built_from)
    }

    /// Applies caps and embeds every view.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        &self,
        node: &NodeId,
        mut facets: Vec<(String, String)>,
        mut qa: Vec<QaItem>,
        detailed: String,
        concise: String,
        version: u64,
        built_from: String,
    ) -> Result<NodeMemory> {
        facets.truncate(self.config.max_facets);
        qa.truncate(self.config.max_qa);
        let linearized: Vec<String> = facets.iter().map(|(k, v)| linearize(k, v)).collect();
        let mut texts: Vec<&str> = linearized.iter().map(String::as_str).collect();
        texts.extend(qa.iter().map(|q| q.question.as_str()));
        texts.push(concise.as_str());
        let mut vectors = self.backend.embed_many(&texts)?.into_iter();

        let facets = facets
            .into_iter()
            .zip(linearized)
            .map(|((key, value), lin)| Facet {
                key,
                value,
                linearized: lin,
                embedding: vectors.next().unwrap(),
                source_node: node.clone(),
            })
            .collect();
        let qa = qa
            .into_iter()
            .map(|q| QaPair {
                question: q.question,
                answer: q.answer,
                source_doc: q.source,
                embedding: vectors.next().unwrap(),
                source_node: node.clone(),
            })
            .collect();
        let summary = SummaryView { detailed, concise, embedding: vectors.next().unwrap(), source_node: node.clone() };
        Ok(NodeMemory { node: node.clone(), facets, qa, summary, version, built_from })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::{FacetSupport, PatternSupport};
    use crate::backend::{Completion, Generator, HashEmbedder, MockGenerator};
    use parking_lot::Mutex;
    use std::sync::Arc;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            doc_id: id.into(),
            node: NodeId::new("p").unwrap(),
            timestamp: "2026-01-01T00:00:00Z".parse().unwrap(),
            text: text.into(),
        }
    }

    /// Records every request it forwards to the mock.
    #[derive(Default)]
    struct Tap(Mutex<Vec<ExtractionRequest>>);

    impl Generator for Tap {
        fn complete(&self, req: &ExtractionRequest) -> Result<Completion> {
            self.0.lock().push(req.clone());
            MockGenerator.complete(req)
        }
    }

    fn tapped() -> (Backend, Arc<Tap>) {
        let tap = Arc::new(Tap::default());
        (Backend::new(tap.clone(), Arc::new(HashEmbedder::default())), tap)
    }

    #[test]
    fn linearization() {
        assert_eq!(linearize("location", "SF Bay Area"), "location: SF Bay Area");
    }

    #[test]
    fn leaf_build_counts_and_round_trip() {
        let (backend, tap) = tapped();
        let cfg = MemoryConfig::default();
        let usage = UsageMeter::new();
        let b = MemoryBuilder::new(&backend, &cfg, &usage);
        let d = doc("doc-1", "title: engineer\nlocation: Bay Area\nsalary: 100\nNotes follow. Nothing else.");
        let node = NodeId::new("p").unwrap();
        let m = b.build_leaf_memory(&node, &[&d], None, 1).unwrap();
        assert_eq!(m.facets.len(), 3);
        assert_eq!(m.qa.len(), 3);
        assert_eq!(m.qa[2].question, "What is the salary for doc-1?");
        assert_eq!(m.qa[2].answer, "100");
        assert_eq!(m.qa[2].source_doc, "doc-1");
        assert!(m.summary.detailed.contains("doc-1"));
        assert_eq!(m.summary.concise.matches('.').count(), 1);
        assert_eq!(usage.snapshot().llm_calls, 4);
        assert_eq!(tap.0.lock().len(), 4);

        for f in &m.facets {
            assert_eq!(f.linearized, format!("{}: {}", f.key, f.value));
            assert_eq!(f.embedding, backend.embed(&f.linearized).unwrap());
            assert_eq!(f.source_node, node);
        }
        for q in &m.qa {
            assert_eq!(q.embedding, backend.embed(&q.question).unwrap());
        }
        assert_eq!(m.summary.embedding, backend.embed(&m.summary.concise).unwrap());

        let again = b.build_leaf_memory(&node, &[&d], None, 2).unwrap();
        assert_eq!(again.version, 2);
        assert_eq!(again.dump().facets, m.dump().facets);
        assert_eq!(again.built_from, m.built_from);
    }

    #[test]
    fn empty_docs_are_rejected() {
        let backend = Backend::mock();
        let cfg = MemoryConfig::default();
        let usage = UsageMeter::new();
        let b = MemoryBuilder::new(&backend, &cfg, &usage);
        assert!(matches!(b.generate_qa(&[], None), Err(Error::EmptyDocuments)));
        assert!(matches!(b.extract_facets(&[], None), Err(Error::EmptyDocuments)));
    }

    #[test]
    fn facet_keys_are_lowercased_and_merged() {
        let got = normalize_facets(vec![
            ("Location".into(), "SF".into()),
            ("title".into(), "x".into()),
            ("location".into(), "NYC".into()),
        ]);
        assert_eq!(got, vec![("location".into(), "NYC; SF".into()), ("title".into(), "x".into())]);
    }

    #[test]
    fn caps_truncate_in_extraction_order() {
        let backend = Backend::mock();
        let cfg = MemoryConfig { max_facets: 2, max_qa: 1, ..Default::default() };
        let usage = UsageMeter::new();
        let b = MemoryBuilder::new(&backend, &cfg, &usage);
        let d = doc("d", "a: 1\nb: 2\nc: 3");
        let m = b.build_leaf_memory(&NodeId::new("p").unwrap(), &[&d], None, 1).unwrap();
        assert_eq!(m.facets.iter().map(|f| f.key.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(m.qa.len(), 1);
    }

    #[test]
    fn oversized_documents_are_chunked() {
        let backend = Backend::mock();
        let cfg = MemoryConfig { doc_token_budget: 4, ..Default::default() };
        let usage = UsageMeter::new();
        let b = MemoryBuilder::new(&backend, &cfg, &usage);
        let d = doc("big", "a: one two\nb: three four\nc: five six");
        let m = b.build_leaf_memory(&NodeId::new("p").unwrap(), &[&d], None, 1).unwrap();
        assert_eq!(m.facets.len(), 3);
        assert_eq!(m.qa.len(), 3);
        // three chunks: facets + QA + detailed per chunk, one concise call
        assert_eq!(usage.snapshot().llm_calls, 3 * 3 + 1);
    }

    #[test]
    fn profile_hints_reach_prompts_but_not_mock_output() {
        let profile = QueryPatternProfile {
            id: "p1".into(),
            patterns: vec![PatternSupport { template: "typical <location>?".into(), support: 4 }],
            facet_names: vec![FacetSupport { name: "location".into(), support: 5 }],
            window_start: None,
            window_end: None,
            min_support: 3,
            approved: true,
        };
        let d = doc("d", "location: SF\nteam: core");
        let node = NodeId::new("p").unwrap();
        let cfg = MemoryConfig::default();

        let (backend, tap) = tapped();
        let usage = UsageMeter::new();
        let plain = MemoryBuilder::new(&backend, &cfg, &usage).build_leaf_memory(&node, &[&d], None, 1).unwrap();
        let plain_reqs = tap.0.lock().clone();

        let (backend, tap) = tapped();
        let hinted =
            MemoryBuilder::new(&backend, &cfg, &usage).build_leaf_memory(&node, &[&d], Some(&profile), 1).unwrap();
        let hinted_reqs = tap.0.lock().clone();

        assert!(hinted_reqs[0].system_message.contains("location"));
        assert!(hinted_reqs[0].system_message.starts_with(prompts::FACET_SYSTEM));
        assert!(hinted_reqs[1].system_message.contains("typical <location>?"));
        assert_ne!(plain_reqs[0].system_message, hinted_reqs[0].system_message);
        assert_eq!(plain.dump(), hinted.dump());

        let empty = QueryPatternProfile { patterns: vec![], facet_names: vec![], ..profile };
        let (backend, tap) = tapped();
        MemoryBuilder::new(&backend, &cfg, &usage).build_leaf_memory(&node, &[&d], Some(&empty), 1).unwrap();
        assert_eq!(*tap.0.lock(), plain_reqs);
    }
}
