//! Benchmark runner for the tree memory and a flat chunk-RAG comparator.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{BenchQuery, CorpusSpec, SyntheticCorpus};
use super::metrics::{bleu1, leakage, retrieval_prf, token_f1, Leakage, MeanStderr, ScopedReturn};
use crate::answer::{answer_from_items, ContextItem};
use crate::backend::{cosine, Backend, EmbeddingVector, ExtractionRequest, ResponseSchema, Task, UsageMeter};
use crate::config::Config;
use crate::engine::{Engine, KOverrides};
use crate::error::{Error, Result};
use crate::indexer::{IndexMode, IndexReport};
use crate::prompts;
use crate::tree::{MemoryTree, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Hltm,
    Flatrag,
}

/// Unscoped top-k over whole documents with a single answer call.
pub struct FlatRag {
    /// (owner, `doc_id:` header plus text, embedding), sorted by doc id.
    chunks: Vec<(NodeId, String, EmbeddingVector)>,
    pub k: usize,
}

impl FlatRag {
    pub fn build(engine: &Engine, k: usize) -> Result<Self> {
        let mut docs = engine.store().documents();
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let bodies: Vec<String> = docs.iter().map(|d| format!("doc_id: {}\n{}", d.doc_id, d.text)).collect();
        let texts: Vec<&str> = bodies.iter().map(String::as_str).collect();
        let vecs = if texts.is_empty() { Vec::new() } else { engine.backend().embed_many(&texts)? };
        let chunks = docs.into_iter().zip(bodies).zip(vecs).map(|((d, b), v)| (d.node, b, v)).collect();
        Ok(Self { chunks, k })
    }

    pub fn answer(&self, backend: &Backend, usage: &UsageMeter, query: &str) -> Result<(String, Vec<NodeId>)> {
        let q = backend.embed(query)?;
        let mut scored: Vec<(f64, usize)> =
            self.chunks.iter().enumerate().map(|(i, c)| Ok((cosine(&q, &c.2)?, i))).collect::<Result<_>>()?;
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let items: Vec<ContextItem> = scored
            .into_iter()
            .take(self.k)
            .map(|(score, i)| {
                let (node, text, _) = &self.chunks[i];
                ContextItem { node: node.clone(), view: "chunk".into(), score, body: text.clone() }
            })
            .collect();
        let a = answer_from_items(backend, usage, query, &items)?;
        Ok((a.answer, a.citations))
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    /// Worker threads for queries; 0 uses the global pool.
    pub parallelism: usize,
    /// Optional grader; its calls are not counted as query calls.
    pub judge: Option<Backend>,
    /// Chunk count for the flat comparator.
    pub flat_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub text: String,
    pub scope: NodeId,
    pub in_scope: bool,
    pub answer: String,
    pub gold_answer: String,
    pub entities: Vec<String>,
    pub llm_calls: u64,
    pub tokens: u64,
    pub latency_ms: f64,
    pub judged_correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub system: SystemKind,
    pub queries: usize,
    /// Queries whose planted fact lies in scope; answer metrics use these.
    pub answerable: usize,
    pub token_f1: MeanStderr,
    pub bleu1: MeanStderr,
    pub precision: MeanStderr,
    pub recall: MeanStderr,
    pub f1: MeanStderr,
    pub judge_correctness: Option<MeanStderr>,
    pub leakage: Leakage,
    pub llm_calls: MeanStderr,
    pub tokens: MeanStderr,
    pub latency_ms: MeanStderr,
    pub latency_p95_ms: f64,
    pub outcomes: Vec<QueryOutcome>,
}

/// Entities named by an answer: cited project leaves plus any project
/// business key appearing verbatim in the answer text.
pub fn answer_entities(
    tree: &MemoryTree,
    projects: &BTreeSet<NodeId>,
    answer: &str,
    citations: &[NodeId],
) -> Vec<String> {
    let mut out: BTreeSet<String> = citations.iter().filter(|c| projects.contains(*c)).map(|c| c.to_string()).collect();
    let bounded = |s: &str, key: &str| {
        s.match_indices(key).any(|(i, _)| {
            let before = s[..i].chars().next_back();
            let after = s[i + key.len()..].chars().next();
            let edge = |c: Option<char>| c.is_none_or(|c| !(c.is_alphanumeric() || c == '-'));
            edge(before) && edge(after)
        })
    };
    for p in projects {
        if let Ok(n) = tree.node(p) {
            if bounded(answer, &n.business_key) {
                out.insert(p.to_string());
            }
        }
    }
    out.into_iter().collect()
}

fn judge(backend: &Backend, q: &BenchQuery, answer: &str) -> Result<bool> {
    let req = ExtractionRequest::new(
        Task::Judge,
        prompts::JUDGE_SYSTEM,
        prompts::judge_user_message(&q.text, &q.gold_answer, answer),
        ResponseSchema::AnswerJson,
    );
    let verdict = backend.generate_parsed(&req, &UsageMeter::new())?.into_answer()?;
    Ok(verdict.answer.trim().eq_ignore_ascii_case("correct"))
}

/// Loads the corpus into `engine` and runs a full index.
pub fn prepare(engine: &Engine, corpus: &SyntheticCorpus) -> Result<IndexReport> {
    engine.load_tree(&corpus.schema)?;
    engine.ingest(&corpus.documents)?;
    engine.index(IndexMode::Full)
}

pub fn run_benchmark(
    engine: &Engine,
    corpus: &SyntheticCorpus,
    queries: &[BenchQuery],
    system: SystemKind,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    let tree = engine.tree();
    let projects: BTreeSet<NodeId> = corpus.projects().into_iter().collect();
    let flat = match system {
        SystemKind::Flatrag => Some(FlatRag::build(engine, opts.flat_k.max(1))?),
        SystemKind::Hltm => None,
    };
    let run_one = |q: &BenchQuery| -> Result<QueryOutcome> {
        let start = Instant::now();
        let (answer, citations, calls, tokens) = match &flat {
            None => {
                let r = engine.query(&q.text, q.scope.as_str(), &KOverrides::default())?;
                (r.answer, r.citations, r.usage.llm_calls, r.usage.tokens)
            }
            Some(f) => {
                let usage = UsageMeter::new();
                let (a, c) = f.answer(engine.backend(), &usage, &q.text)?;
                let u = usage.snapshot();
                (a, c, u.llm_calls, u.tokens())
            }
        };
        let latency_ms = start.elapsed().as_secs_f64() * 1000.0;
        let judged_correct = opts.judge.as_ref().map(|b| judge(b, q, &answer)).transpose()?;
        Ok(QueryOutcome {
            text: q.text.clone(),
            scope: q.scope.clone(),
            in_scope: q.in_scope,
            entities: answer_entities(&tree, &projects, &answer, &citations),
            answer,
            gold_answer: q.gold_answer.clone(),
            llm_calls: calls,
            tokens,
            latency_ms,
            judged_correct,
        })
    };
    let outcomes: Vec<QueryOutcome> = if opts.parallelism == 0 {
        queries.par_iter().map(run_one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.parallelism)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| queries.par_iter().map(run_one).collect::<Result<_>>())?
    };
    summarize(system, queries, outcomes, &tree, &projects)
}

fn summarize(
    system: SystemKind,
    queries: &[BenchQuery],
    outcomes: Vec<QueryOutcome>,
    tree: &MemoryTree,
    projects: &BTreeSet<NodeId>,
) -> Result<BenchReport> {
    let (mut f1s, mut bleus, mut ps, mut rs, mut prf1, mut judged) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for (q, o) in queries.iter().zip(&outcomes) {
        if !q.in_scope {
            continue;
        }
        f1s.push(token_f1(&o.answer, &q.gold_answer)?);
        bleus.push(bleu1(&o.answer, &q.gold_answer)?);
        let predicted: BTreeSet<String> = o.entities.iter().cloned().collect();
        let gold: BTreeSet<String> = q.gold_entities.iter().map(|n| n.to_string()).collect();
        let prf = retrieval_prf(&predicted, &gold)?;
        ps.push(prf.precision);
        rs.push(prf.recall);
        prf1.push(prf.f1);
        if let Some(j) = o.judged_correct {
            judged.push(if j { 1.0 } else { 0.0 });
        }
    }
    let owners: BTreeMap<String, NodeId> = projects.iter().map(|p| (p.to_string(), p.clone())).collect();
    let run: Vec<ScopedReturn> =
        outcomes.iter().map(|o| ScopedReturn { scope: o.scope.clone(), entities: o.entities.clone() }).collect();
    let mut lat: Vec<f64> = outcomes.iter().map(|o| o.latency_ms).collect();
    lat.sort_by(f64::total_cmp);
    let p95 = lat.get(((lat.len() as f64 * 0.95).ceil() as usize).saturating_sub(1)).copied().unwrap_or(0.0);
    Ok(BenchReport {
        system,
        queries: outcomes.len(),
        answerable: f1s.len(),
        token_f1: MeanStderr::of(&f1s),
        bleu1: MeanStderr::of(&bleus),
        precision: MeanStderr::of(&ps),
        recall: MeanStderr::of(&rs),
        f1: MeanStderr::of(&prf1),
        judge_correctness: (!judged.is_empty()).then(|| MeanStderr::of(&judged)),
        leakage: leakage(tree, &run, &owners)?,
        llm_calls: MeanStderr::of(&outcomes.iter().map(|o| o.llm_calls as f64).collect::<Vec<_>>()),
        tokens: MeanStderr::of(&outcomes.iter().map(|o| o.tokens as f64).collect::<Vec<_>>()),
        latency_ms: MeanStderr::of(&lat),
        latency_p95_ms: p95,
        outcomes,
    })
}

/// The standard suite: builds the corpus in a fresh in-memory engine and
/// runs `spec.queries` in-scope questions followed by as many questions
/// scoped to random nodes.
pub fn run_suite(config: &Config, spec: CorpusSpec, system: SystemKind, opts: &BenchOptions) -> Result<BenchReport> {
    let config = Config { store_path: None, ..config.clone() };
    let engine = Engine::open(config)?;
    let corpus = SyntheticCorpus::generate(spec);
    prepare(&engine, &corpus)?;
    let mut queries = corpus.retrieval_queries(spec.queries, spec.seed.wrapping_add(1));
    queries.extend(corpus.cross_scope_queries(spec.queries, spec.seed.wrapping_add(2)));
    run_benchmark(&engine, &corpus, &queries, system, opts)
}

/// Plain-text summary table.
pub fn render_table(reports: &[&BenchReport]) -> String {
    let mut s = format!(
        "{:<8} {:>7} {:>15} {:>15} {:>15} {:>13} {:>13} {:>15} {:>17}\n",
        "system", "queries", "token_f1", "bleu1", "entity_f1", "leak_query", "leak_entity", "llm_calls", "tokens"
    );
    for r in reports {
        let name = match r.system {
            SystemKind::Hltm => "hltm",
            SystemKind::Flatrag => "flatrag",
        };
        s.push_str(&format!(
            "{:<8} {:>7} {:>15} {:>15} {:>15} {:>13.3} {:>13.3} {:>15} {:>17}\n",
            name,
            r.queries,
            r.token_f1.to_string(),
            r.bleu1.to_string(),
            r.f1.to_string(),
            r.leakage.query_wise,
            r.leakage.entity_wise,
            r.llm_calls.to_string(),
            format!("{:.0} ± {:.0}", r.tokens.mean, r.tokens.stderr),
        ));
    }
    s
}
