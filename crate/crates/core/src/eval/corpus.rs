//! Seeded synthetic corpora: root → tenants → seats → projects, each
//! project holding documents made of planted `key: value` facts.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::memory::DocumentRecord;
use crate::tree::{MemoryTree, NodeId, TreeSchema};

const KEYS: &[&str] = &[
    "budget",
    "location",
    "owner",
    "status",
    "headcount",
    "deadline",
    "stack",
    "vendor",
    "priority",
    "region",
    "sponsor",
    "channel",
];

const SYLLABLES: &[&str] = &["ka", "lo", "mi", "ra", "ven", "tor", "shi", "qua", "ne", "bo", "zel", "dor"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub tenants: usize,
    pub seats_per_tenant: usize,
    pub projects_per_seat: usize,
    pub docs_per_project: usize,
    pub facts_per_doc: usize,
    /// Size of each generated query set.
    pub queries: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            tenants: 3,
            seats_per_tenant: 3,
            projects_per_seat: 5,
            docs_per_project: 3,
            facts_per_doc: 3,
            queries: 50,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedFact {
    pub doc_id: String,
    pub project: NodeId,
    pub key: String,
    pub value: String,
}

/// A benchmark query with its exact ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchQuery {
    pub text: String,
    pub scope: NodeId,
    pub gold_answer: String,
    pub gold_entities: BTreeSet<NodeId>,
    /// Whether the planted fact lives under `scope`.
    pub in_scope: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub spec: CorpusSpec,
    pub schema: TreeSchema,
    pub documents: Vec<DocumentRecord>,
    pub facts: Vec<PlantedFact>,
}

pub fn project_key(t: usize, s: usize, p: usize) -> String {
    format!("t{t}-s{s}-p{p}")
}

fn word(rng: &mut impl Rng) -> String {
    (0..2).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

/// Document text with `n` distinct planted keys; returns the text and the
/// `(key, value)` pairs.
pub fn planted_text(rng: &mut impl Rng, n: usize) -> (String, Vec<(String, String)>) {
    let keys: Vec<&str> = KEYS.choose_multiple(rng, n.min(KEYS.len())).copied().collect();
    let facts: Vec<(String, String)> =
        keys.into_iter().map(|k| (k.to_string(), format!("{}-{}", word(rng), rng.random_range(100..1000)))).collect();
    let text = facts.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join("\n");
    (text, facts)
}

pub fn question(key: &str, doc_id: &str) -> String {
    format!("What is the {key} for {doc_id}?")
}

impl SyntheticCorpus {
    pub fn generate(spec: CorpusSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let base: DateTime<Utc> = "2026-01-01T00:00:00Z".parse().unwrap();
        let mut tree = MemoryTree::new();
        let root = tree.create_node("global", "root", None).unwrap();
        let (mut documents, mut facts) = (Vec::new(), Vec::new());
        let mut clock = 0;
        for t in 1..=spec.tenants {
            let tenant = tree.create_node(&format!("t{t}"), "tenant", Some(&root)).unwrap();
            for s in 1..=spec.seats_per_tenant {
                let seat = tree.create_node(&format!("t{t}-s{s}"), "seat", Some(&tenant)).unwrap();
                for p in 1..=spec.projects_per_seat {
                    let key = project_key(t, s, p);
                    let project = tree.create_node(&key, "project", Some(&seat)).unwrap();
                    for d in 1..=spec.docs_per_project {
                        let doc_id = format!("doc-{key}-{d}");
                        let (text, kv) = planted_text(&mut rng, spec.facts_per_doc);
                        clock += 1;
                        documents.push(DocumentRecord {
                            doc_id: doc_id.clone(),
                            node_business_key: key.clone(),
                            timestamp: base + Duration::minutes(clock),
                            text,
                        });
                        facts.extend(kv.into_iter().map(|(key, value)| PlantedFact {
                            doc_id: doc_id.clone(),
                            project: project.clone(),
                            key,
                            value,
                        }));
                    }
                }
            }
        }
        Self { spec, schema: tree.to_schema(), documents, facts }
    }

    pub fn tree(&self) -> MemoryTree {
        MemoryTree::from_schema(&self.schema).expect("generated schema is valid")
    }

    /// Project leaves, the entities of this corpus.
    pub fn projects(&self) -> Vec<NodeId> {
        self.schema.nodes.iter().filter(|n| n.level == "project").map(|n| NodeId::new(n.id.clone()).unwrap()).collect()
    }

    fn query_for(&self, fact: &PlantedFact, scope: NodeId, tree: &MemoryTree) -> BenchQuery {
        let in_scope = tree.subtree(&scope).map(|s| s.contains(&fact.project)).unwrap_or(false);
        BenchQuery {
            text: question(&fact.key, &fact.doc_id),
            scope,
            gold_answer: fact.value.clone(),
            gold_entities: [fact.project.clone()].into(),
            in_scope,
        }
    }

    /// Planted-fact questions, each scoped to a random node on the fact's
    /// own root path (so the answer is always reachable).
    pub fn retrieval_queries(&self, n: usize, seed: u64) -> Vec<BenchQuery> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = self.tree();
        (0..n)
            .map(|_| {
                let fact = self.facts.choose(&mut rng).expect("corpus has facts");
                let mut path = tree.ancestor_path(&fact.project).unwrap();
                path.push(fact.project.clone());
                let scope = path.choose(&mut rng).unwrap().clone();
                self.query_for(fact, scope, &tree)
            })
            .collect()
    }

    /// Planted-fact questions scoped to uniformly random nodes; most of
    /// them ask about data outside their scope.
    pub fn cross_scope_queries(&self, n: usize, seed: u64) -> Vec<BenchQuery> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = self.tree();
        let mut nodes: Vec<NodeId> = self.schema.nodes.iter().map(|n| NodeId::new(n.id.clone()).unwrap()).collect();
        nodes.shuffle(&mut rng);
        (0..n)
            .map(|i| {
                let fact = self.facts.choose(&mut rng).expect("corpus has facts");
                self.query_for(fact, nodes[i % nodes.len()].clone(), &tree)
            })
            .collect()
    }
}
