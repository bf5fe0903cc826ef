//! Bottom-up construction of internal-node memories from child memories.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::backend::{Backend, ExtractionRequest, QaItem, ResponseSchema, Task, UsageMeter};
use crate::error::{Error, Result};
use crate::memory::{hex, normalize_facets, MemoryBuilder, MemoryConfig, NodeMemory};
use crate::prompts;
use crate::store::Store;
use crate::text::normalize_ws_lower;
use crate::tree::{MemoryTree, NodeId};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    /// Drop merged content supported by fewer than this many children.
    pub prune_min_children: Option<usize>,
}

/// What one upward pass did.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationReport {
    /// Internal nodes whose memory was rebuilt, deepest first.
    pub rebuilt: Vec<NodeId>,
    /// Internal nodes left without any child memory; their memory is gone.
    pub cleared: Vec<NodeId>,
}

pub struct Aggregator<'a> {
    pub backend: &'a Backend,
    pub memory: &'a MemoryConfig,
    pub config: &'a AggregationConfig,
    pub usage: &'a UsageMeter,
}

fn children_payload(children: &[Arc<NodeMemory>], view: impl Fn(&NodeMemory) -> (&'static str, Value)) -> String {
    let items: Vec<Value> = children
        .iter()
        .map(|c| {
            let (name, v) = view(c);
            json!({ "node": c.node, name: v })
        })
        .collect();
    json!({ "children": items }).to_string()
}

fn split_values(v: &str) -> impl Iterator<Item = String> + '_ {
    v.split(';').map(|s| normalize_ws_lower(s.trim())).filter(|s| !s.is_empty())
}

impl<'a> Aggregator<'a> {
    pub fn new(
        backend: &'a Backend,
        memory: &'a MemoryConfig,
        config: &'a AggregationConfig,
        usage: &'a UsageMeter,
    ) -> Self {
        Self { backend, memory, config, usage }
    }

    /// Merges child memories into one parent memory with four generator
    /// calls (facets, QA, detailed summary, concise summary).
    pub fn aggregate_children(
        &self,
        parent: &NodeId,
        children: &[Arc<NodeMemory>],
        version: u64,
    ) -> Result<NodeMemory> {
        if children.is_empty() {
            return Err(Error::EmptyChildren);
        }
        let prune = self.config.prune_min_children;

        let facets_user = children_payload(children, |c| {
            let mut m = Map::new();
            for f in &c.facets {
                m.insert(f.key.clone(), Value::String(f.value.clone()));
            }
            ("facets", Value::Object(m))
        });
        let req = ExtractionRequest::new(
            Task::MergeFacets,
            prompts::merge_facets_system(prune),
            facets_user,
            ResponseSchema::FacetJson,
        );
        let mut facets = normalize_facets(self.backend.generate_parsed(&req, self.usage)?.into_facets()?);

        let qa_user = children_payload(children, |c| {
            let items: Vec<Value> =
                c.qa.iter()
                    .map(|q| json!({ "question": q.question, "answer": q.answer, "source": q.source_doc }))
                    .collect();
            ("question_answers", Value::Array(items))
        });
        let req =
            ExtractionRequest::new(Task::MergeQa, prompts::merge_qa_system(prune), qa_user, ResponseSchema::QaJson);
        let mut qa = self.backend.generate_parsed(&req, self.usage)?.into_qa()?;
        qa.retain(|q| !q.question.trim().is_empty() && !q.answer.trim().is_empty());

        let sum_user = children_payload(children, |c| ("detailed", Value::String(c.summary.detailed.clone())));
        let req = ExtractionRequest::new(
            Task::MergeSummaries,
            prompts::merge_summaries_system(prune),
            sum_user,
            ResponseSchema::FreeText,
        );
        let detailed = self.backend.generate_parsed(&req, self.usage)?.into_text()?;
        let builder = MemoryBuilder::new(self.backend, self.memory, self.usage);
        let concise = builder.concise_call(&detailed)?;

        if let Some(n) = prune {
            facets = prune_facets(facets, children, n);
            qa = prune_qa(qa, children, n);
        }

        let mut h = Sha256::new();
        for c in children {
            h.update(c.node.as_str().as_bytes());
            h.update([0]);
            h.update(c.built_from.as_bytes());
            h.update([0]);
        }
        h.update(format!("{prune:?}").as_bytes());
        builder.assemble(parent, facets, qa, detailed, concise, version, hex(&h.finalize()))
    }

    /// Rebuilds every internal node in `targets` exactly once. Nodes are
    /// processed level by level from the deepest up, and nodes of one
    /// level are independent, so each level runs in parallel.
    pub fn rebuild(&self, tree: &MemoryTree, store: &Store, targets: &BTreeSet<NodeId>) -> Result<AggregationReport> {
        let mut levels: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
        for t in targets {
            if tree.is_leaf(t)? {
                continue;
            }
            levels.entry(tree.depth(t)?).or_default().push(t.clone());
        }
        let mut report = AggregationReport::default();
        for (_, nodes) in levels.into_iter().rev() {
            let outcomes: Vec<Result<(NodeId, bool)>> = nodes
                .par_iter()
                .map(|node| {
                    let kids: Vec<Arc<NodeMemory>> =
                        tree.children(node)?.iter().filter_map(|c| store.memory(c)).collect();
                    if kids.is_empty() {
                        store.remove_memory(node)?;
                        return Ok((node.clone(), false));
                    }
                    let version = store.version(node).map_or(1, |v| v + 1);
                    let m = self.aggregate_children(node, &kids, version)?;
                    store.put_memory(m)?;
                    Ok((node.clone(), true))
                })
                .collect();
            for o in outcomes {
                let (node, built) = o?;
                if built {
                    report.rebuilt.push(node);
                } else {
                    report.cleared.push(node);
                }
            }
        }
        Ok(report)
    }
}

/// Union of the proper ancestors of `leaves`.
pub fn ancestors_of<'n>(tree: &MemoryTree, leaves: impl IntoIterator<Item = &'n NodeId>) -> Result<BTreeSet<NodeId>> {
    let mut out = BTreeSet::new();
    for l in leaves {
        out.extend(tree.ancestor_path(l)?);
    }
    Ok(out)
}

// Support counting is exact string matching after normalization. A merged
// value or question with no exact counterpart among the children was
// rephrased by the model, which already saw the pruning rule; it is kept.

fn prune_facets(facets: Vec<(String, String)>, children: &[Arc<NodeMemory>], n: usize) -> Vec<(String, String)> {
    let mut support: HashMap<(String, String), usize> = HashMap::new();
    for c in children {
        let mut seen = HashSet::new();
        for f in &c.facets {
            for v in split_values(&f.value) {
                seen.insert((f.key.clone(), v));
            }
        }
        for s in seen {
            *support.entry(s).or_default() += 1;
        }
    }
    facets
        .into_iter()
        .filter_map(|(k, v)| {
            let kept: Vec<&str> = v
                .split(';')
                .map(str::trim)
                .filter(|part| {
                    let s = support.get(&(k.clone(), normalize_ws_lower(part))).copied().unwrap_or(0);
                    s == 0 || s >= n
                })
                .collect();
            (!kept.is_empty()).then(|| (k, kept.join("; ")))
        })
        .collect()
}

fn prune_qa(qa: Vec<QaItem>, children: &[Arc<NodeMemory>], n: usize) -> Vec<QaItem> {
    let mut support: HashMap<String, usize> = HashMap::new();
    for c in children {
        let seen: HashSet<String> = c.qa.iter().map(|q| normalize_ws_lower(&q.question)).collect();
        for s in seen {
            *support.entry(s).or_default() += 1;
        }
    }
    qa.into_iter()
        .filter(|q| {
            let s = support.get(&normalize_ws_lower(&q.question)).copied().unwrap_or(0);
            s == 0 || s >= n
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::Document;

    fn leaf_memory(backend: &Backend, node: &NodeId, docs: &[(&str, &str)]) -> Arc<NodeMemory> {
        let cfg = MemoryConfig::default();
        let usage = UsageMeter::new();
        let docs: Vec<Document> = docs
            .iter()
            .map(|(id, text)| Document {
                doc_id: id.to_string(),
                node: node.clone(),
                timestamp: "2026-01-01T00:00:00Z".parse().unwrap(),
                text: text.to_string(),
            })
            .collect();
        let refs: Vec<&Document> = docs.iter().collect();
        Arc::new(MemoryBuilder::new(backend, &cfg, &usage).build_leaf_memory(node, &refs, None, 1).unwrap())
    }

    fn id(s: &str) -> NodeId {
        NodeId::new(s).unwrap()
    }

    #[test]
    fn merge_takes_four_calls_and_unions_children() {
        let b = Backend::mock();
        let a = leaf_memory(&b, &id("r/a"), &[("d1", "location: SF\ntitle: welder")]);
        let c = leaf_memory(&b, &id("r/c"), &[("d2", "location: NYC")]);
        let usage = UsageMeter::new();
        let (mc, ac) = (MemoryConfig::default(), AggregationConfig::default());
        let agg = Aggregator::new(&b, &mc, &ac, &usage);
        let m = agg.aggregate_children(&id("r"), &[a.clone(), c.clone()], 1).unwrap();
        assert_eq!(usage.snapshot().llm_calls, 4);
        let keys: Vec<(&str, &str)> = m.facets.iter().map(|f| (f.key.as_str(), f.value.as_str())).collect();
        assert_eq!(keys, vec![("location", "NYC; SF"), ("title", "welder")]);
        assert_eq!(m.qa.len(), a.qa.len() + c.qa.len());
        assert_eq!(m.summary.detailed, format!("{}\n{}", a.summary.detailed, c.summary.detailed));
        assert!(m.facets.iter().all(|f| f.source_node == id("r")));
        assert!(matches!(agg.aggregate_children(&id("r"), &[], 1), Err(Error::EmptyChildren)));
    }

    #[test]
    fn single_child_parent_matches_child_content() {
        let b = Backend::mock();
        let a = leaf_memory(&b, &id("r/a"), &[("d1", "location: SF\nbudget: 10")]);
        let usage = UsageMeter::new();
        let (mc, ac) = (MemoryConfig::default(), AggregationConfig::default());
        let m =
            Aggregator::new(&b, &mc, &ac, &usage).aggregate_children(&id("r"), std::slice::from_ref(&a), 1).unwrap();
        let (mut pd, cd) = (m.dump(), a.dump());
        pd.node = cd.node.clone();
        pd.version = cd.version;
        assert_eq!(pd, cd);
    }

    #[test]
    fn pruning_drops_low_support_content() {
        let b = Backend::mock();
        let kids = vec![
            leaf_memory(&b, &id("r/a"), &[("d1", "location: SF\nrare: x")]),
            leaf_memory(&b, &id("r/b"), &[("d2", "location: SF")]),
            leaf_memory(&b, &id("r/c"), &[("d3", "location: NYC")]),
        ];
        let usage = UsageMeter::new();
        let mc = MemoryConfig::default();
        let ac = AggregationConfig { prune_min_children: Some(2) };
        let m = Aggregator::new(&b, &mc, &ac, &usage).aggregate_children(&id("r"), &kids, 1).unwrap();
        let keys: Vec<(&str, &str)> = m.facets.iter().map(|f| (f.key.as_str(), f.value.as_str())).collect();
        assert_eq!(keys, vec![("location", "SF")]);
        // every question is unique to one child
        assert!(m.qa.is_empty());
    }

    #[test]
    fn rebuild_runs_bottom_up_and_clears_empty_parents() {
        let b = Backend::mock();
        let mut t = MemoryTree::new();
        let r = t.create_node("g", "root", None).unwrap();
        let x = t.create_node("x", "tenant", Some(&r)).unwrap();
        let y = t.create_node("y", "tenant", Some(&r)).unwrap();
        let l1 = t.create_node("l1", "project", Some(&x)).unwrap();
        let l2 = t.create_node("l2", "project", Some(&y)).unwrap();
        let store = Store::in_memory();
        store.put_memory((*leaf_memory(&b, &l1, &[("d1", "k: v1")])).clone()).unwrap();
        let _ = l2;

        let usage = UsageMeter::new();
        let (mc, ac) = (MemoryConfig::default(), AggregationConfig::default());
        let agg = Aggregator::new(&b, &mc, &ac, &usage);
        let targets: BTreeSet<NodeId> = t.internal_bottom_up().into_iter().collect();
        let rep = agg.rebuild(&t, &store, &targets).unwrap();
        assert_eq!(rep.rebuilt, vec![x.clone(), r.clone()]);
        assert_eq!(rep.cleared, vec![y.clone()]);
        assert_eq!(usage.snapshot().llm_calls, 8);
        assert!(store.memory(&y).is_none());
        assert_eq!(store.memory(&r).unwrap().facets[0].value, "v1");

        let rep = agg.rebuild(&t, &store, &ancestors_of(&t, [&l1]).unwrap()).unwrap();
        assert_eq!(rep.rebuilt, vec![x.clone(), r.clone()]);
        assert_eq!(store.version(&r), Some(2));
    }
}
