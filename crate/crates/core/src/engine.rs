//! One object owning tree, store, backend, dirty set and profiles. The CLI,
//! the HTTP service, the benchmark and the examples all go through it.
//!
//! Queries take a cheap snapshot of the tree (`Arc`) and never block on
//! indexing. Index cycles are serialized; anything ingested while a cycle
//! runs stays dirty for the next one.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::Arc;

use chrono::Utc;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::adaptation::{mine_profile, MiningWindow, ProfileRegistry, QueryPatternProfile, QueryRecord};
use crate::answer::{generate_answer, Answer};
use crate::backend::{Backend, UsageMeter};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::indexer::{dump, DirtyReason, DirtySet, DumpDocument, IndexMode, IndexReport, Indexer};
use crate::memory::{Document, DocumentRecord, MemoryDump};
use crate::retrieval::{parse_query_facets, Query, RetrievalParams, RetrievalResult, Retriever};
use crate::store::Store;
use crate::tree::{MemoryTree, NodeId, TreeSchema};

const STATE: &str = "state.json";
const QUERY_LOG: &str = "queries.jsonl";

#[derive(Debug, Default, Serialize, Deserialize)]
struct PersistedState {
    tree: TreeSchema,
    dirty: DirtySet,
    profiles: ProfileRegistry,
}

#[derive(Debug, Default)]
struct State {
    tree: Arc<MemoryTree>,
    dirty: DirtySet,
    profiles: ProfileRegistry,
}

/// Per-request overrides of the configured retrieval knobs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KOverrides {
    pub k_facet: Option<usize>,
    pub k_qa: Option<usize>,
    pub k_summary: Option<usize>,
    pub k_inner: Option<usize>,
}

impl KOverrides {
    pub fn apply(&self, base: RetrievalParams) -> RetrievalParams {
        RetrievalParams {
            k_facet: self.k_facet.unwrap_or(base.k_facet),
            k_qa: self.k_qa.unwrap_or(base.k_qa),
            k_summary: self.k_summary.unwrap_or(base.k_summary),
            k_inner: self.k_inner.unwrap_or(base.k_inner),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryUsage {
    pub llm_calls: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub answer: String,
    pub rationale: String,
    pub citations: Vec<NodeId>,
    pub hits: RetrievalResult,
    pub usage: QueryUsage,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    /// Leaves marked dirty by this batch.
    pub marked: Vec<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeleteReport {
    pub nodes: usize,
    pub documents: usize,
    pub memories: usize,
    pub vectors: usize,
}

pub struct Engine {
    config: Config,
    backend: Backend,
    store: Store,
    state: RwLock<State>,
    index_lock: Mutex<()>,
    query_log: Mutex<Vec<QueryRecord>>,
    dir: Option<PathBuf>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("dir", &self.dir).field("backend", &self.backend).finish()
    }
}

impl Engine {
    /// Opens the engine described by `config`, building its backend.
    pub fn open(config: Config) -> Result<Self> {
        let backend = config.build_backend()?;
        Self::with_backend(config, backend)
    }

    /// Same as [`Engine::open`] with a caller-supplied backend.
    pub fn with_backend(config: Config, backend: Backend) -> Result<Self> {
        config.validate()?;
        let (store, dir) = match &config.store_path {
            Some(p) => (Store::open(p)?, Some(p.clone())),
            None => (Store::in_memory(), None),
        };
        let mut state = State::default();
        let mut query_log = Vec::new();
        if let Some(dir) = &dir {
            let path = dir.join(STATE);
            if path.exists() {
                let p: PersistedState = serde_json::from_str(&fs::read_to_string(&path)?)
                    .map_err(|e| Error::Storage(format!("corrupt {STATE}: {e}")))?;
                let mut tree =
                    if p.tree.nodes.is_empty() { MemoryTree::new() } else { MemoryTree::from_schema(&p.tree)? };
                for d in store.documents() {
                    if tree.contains(&d.node) {
                        tree.attach_document(&d.node, &d.doc_id)?;
                    }
                }
                state = State { tree: Arc::new(tree), dirty: p.dirty, profiles: p.profiles };
            }
            let log = dir.join(QUERY_LOG);
            if log.exists() {
                for line in BufReader::new(fs::File::open(log)?).lines() {
                    if let Ok(r) = serde_json::from_str::<QueryRecord>(&line?) {
                        query_log.push(r);
                    }
                }
            }
        }
        Ok(Self {
            config,
            backend,
            store,
            state: RwLock::new(state),
            index_lock: Mutex::new(()),
            query_log: Mutex::new(query_log),
            dir,
        })
    }

    /// In-memory engine on the deterministic mock backend.
    pub fn mock() -> Self {
        Self::with_backend(Config::default(), Backend::mock()).expect("default config is valid")
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Current topology snapshot.
    pub fn tree(&self) -> Arc<MemoryTree> {
        self.state.read().tree.clone()
    }

    pub fn dirty(&self) -> DirtySet {
        self.state.read().dirty.clone()
    }

    fn persist(&self, state: &State) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let p = PersistedState {
            tree: state.tree.to_schema(),
            dirty: state.dirty.clone(),
            profiles: state.profiles.clone(),
        };
        let tmp = dir.join(format!("{STATE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&p)?)?;
        fs::rename(tmp, dir.join(STATE))?;
        Ok(())
    }

    /// Replaces the topology. Stored documents are re-attached to nodes
    /// that still exist; run a full index afterwards.
    pub fn load_tree(&self, schema: &TreeSchema) -> Result<()> {
        let mut tree = MemoryTree::from_schema(schema)?;
        for d in self.store.documents() {
            if tree.contains(&d.node) {
                tree.attach_document(&d.node, &d.doc_id)?;
            }
        }
        let mut st = self.state.write();
        st.tree = Arc::new(tree);
        st.dirty.clear();
        self.persist(&st)
    }

    /// Adds one node under `parent` (node id or business key).
    pub fn add_node(&self, business_key: &str, level: &str, parent: Option<&str>) -> Result<NodeId> {
        let mut st = self.state.write();
        let parent = parent.map(|p| st.tree.resolve(p)).transpose()?;
        let id = Arc::make_mut(&mut st.tree).create_node(business_key, level, parent.as_ref())?;
        self.persist(&st)?;
        Ok(id)
    }

    /// Stores documents and marks their leaves dirty. The whole batch is
    /// validated before anything is written.
    pub fn ingest(&self, records: &[DocumentRecord]) -> Result<IngestReport> {
        let mut st = self.state.write();
        let mut resolved = Vec::with_capacity(records.len());
        for r in records {
            if r.doc_id.trim().is_empty() {
                return Err(Error::InvalidArgument("doc_id must not be empty".into()));
            }
            let node = st.tree.resolve(&r.node_business_key)?;
            if !st.tree.is_leaf(&node)? {
                return Err(Error::NotALeaf(node));
            }
            resolved.push(node);
        }
        let mut report = IngestReport::default();
        for (r, node) in records.iter().zip(resolved) {
            let st = &mut *st;
            let tree = Arc::make_mut(&mut st.tree);
            if let Some(old) = self.store.document(&r.doc_id) {
                if old.node != node && tree.contains(&old.node) {
                    tree.detach_document(&old.node, &r.doc_id)?;
                    st.dirty.mark_dirty(tree, &old.node, DirtyReason::Modified)?;
                    report.marked.push(old.node.clone());
                }
            }
            tree.attach_document(&node, &r.doc_id)?;
            self.store.put_document(Document {
                doc_id: r.doc_id.clone(),
                node: node.clone(),
                timestamp: r.timestamp,
                text: r.text.clone(),
            })?;
            let reason = if self.store.memory(&node).is_some() { DirtyReason::Modified } else { DirtyReason::Created };
            st.dirty.mark_dirty(tree, &node, reason)?;
            if !report.marked.contains(&node) {
                report.marked.push(node);
            }
            report.accepted += 1;
        }
        self.persist(&st)?;
        Ok(report)
    }

    /// Removes a subtree and everything stored for it. Its leaves stay in
    /// the dirty set so the next incremental cycle refreshes the ancestors.
    pub fn delete_node(&self, id_or_key: &str) -> Result<DeleteReport> {
        let mut st = self.state.write();
        let node = st.tree.resolve(id_or_key)?;
        let doomed = st.tree.subtree(&node)?;
        let st = &mut *st;
        for leaf in st.tree.preorder(&node)? {
            if st.tree.is_leaf(&leaf)? {
                st.dirty.mark_dirty(&st.tree, &leaf, DirtyReason::Deleted)?;
            }
        }
        let nodes = Arc::make_mut(&mut st.tree).delete_subtree(&node)?;
        let purged = self.store.purge_scope(&doomed)?;
        self.persist(st)?;
        Ok(DeleteReport { nodes, documents: purged.documents, memories: purged.memories, vectors: purged.vectors })
    }

    pub fn index(&self, mode: IndexMode) -> Result<IndexReport> {
        let _cycle = self.index_lock.lock();
        let (tree, dirty, profile) = {
            let st = self.state.read();
            (st.tree.clone(), st.dirty.clone(), st.profiles.active().cloned())
        };
        let indexer = Indexer {
            tree: &tree,
            store: &self.store,
            backend: &self.backend,
            memory: &self.config.memory,
            aggregation: &self.config.aggregation,
            profile: profile.as_ref(),
        };
        let report = match mode {
            IndexMode::Full => indexer.full_index()?,
            IndexMode::Incremental => indexer.incremental_index(&dirty)?,
        };
        let mut st = self.state.write();
        // drop only entries this cycle saw unchanged
        for (leaf, entry) in &dirty.leaves {
            if st.dirty.leaves.get(leaf) == Some(entry) {
                st.dirty.leaves.remove(leaf);
            }
        }
        self.persist(&st)?;
        self.store.compact()?;
        Ok(report)
    }

    /// Parse, retrieve and answer. Exactly two generator calls with the
    /// backend query parser.
    pub fn query(&self, text: &str, scope: &str, k: &KOverrides) -> Result<QueryResponse> {
        let tree = self.tree();
        let scope = tree.resolve(scope)?;
        let usage = UsageMeter::new();
        let facets = parse_query_facets(&self.backend, &usage, self.config.retrieval.query_parser, text)?;
        let q = Query::new(&self.backend, text, scope, facets)?;
        let params = k.apply(self.config.retrieval.params);
        let hits = Retriever::new(&tree, &self.store, &self.backend).retrieve(&q, &params)?;
        let Answer { rationale, answer, citations } =
            generate_answer(&self.backend, &usage, text, &hits, &self.config.answer)?;
        self.log_query(text);
        let u = usage.snapshot();
        Ok(QueryResponse {
            answer,
            rationale,
            citations,
            hits,
            usage: QueryUsage { llm_calls: u.llm_calls, tokens: u.tokens() },
        })
    }

    /// Retrieval only, no answer call.
    pub fn retrieve(&self, text: &str, scope: &str, k: &KOverrides) -> Result<RetrievalResult> {
        let tree = self.tree();
        let scope = tree.resolve(scope)?;
        let facets = parse_query_facets(&self.backend, &UsageMeter::new(), self.config.retrieval.query_parser, text)?;
        let q = Query::new(&self.backend, text, scope, facets)?;
        Retriever::new(&tree, &self.store, &self.backend).retrieve(&q, &k.apply(self.config.retrieval.params))
    }

    fn log_query(&self, text: &str) {
        let rec = QueryRecord { text: text.to_string(), timestamp: Utc::now() };
        if let Some(dir) = &self.dir {
            let line = serde_json::to_string(&rec).expect("query record serializes");
            let written = OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(QUERY_LOG))
                .and_then(|mut f| writeln!(f, "{line}"));
            if let Err(e) = written {
                log::warn!("could not append to query log: {e}");
            }
        }
        self.query_log.lock().push(rec);
    }

    /// Queries served so far (persisted in `queries.jsonl` with a store).
    pub fn query_log(&self) -> Vec<QueryRecord> {
        self.query_log.lock().clone()
    }

    pub fn memory(&self, id_or_key: &str) -> Result<MemoryDump> {
        let node = self.tree().resolve(id_or_key)?;
        self.store.memory(&node).map(|m| m.dump()).ok_or(Error::MissingMemory(node))
    }

    pub fn dump(&self) -> DumpDocument {
        dump(&self.tree(), &self.store)
    }

    /// Mines a profile from `queries` (or the served-query log) and stores
    /// it unapproved.
    pub fn mine_profile(
        &self,
        queries: Option<&[QueryRecord]>,
        window: Option<MiningWindow>,
        min_support: Option<usize>,
    ) -> Result<QueryPatternProfile> {
        let log;
        let queries = match queries {
            Some(q) => q,
            None => {
                log = self.query_log();
                &log
            }
        };
        let a = &self.config.adaptation;
        let window = window.unwrap_or_else(|| MiningWindow::trailing(Utc::now(), a.window_days, a.max_queries));
        let usage = UsageMeter::new();
        let parser = self.config.retrieval.query_parser;
        let profile = mine_profile(queries, &window, min_support.unwrap_or(a.min_support), |q| {
            parse_query_facets(&self.backend, &usage, parser, q)
        })?;
        let mut st = self.state.write();
        st.profiles.insert(profile.clone());
        self.persist(&st)?;
        Ok(profile)
    }

    pub fn profile(&self, id: &str) -> Result<QueryPatternProfile> {
        self.state.read().profiles.get(id).cloned()
    }

    pub fn profiles(&self) -> ProfileRegistry {
        self.state.read().profiles.clone()
    }

    pub fn approve_profile(&self, id: &str) -> Result<QueryPatternProfile> {
        let mut st = self.state.write();
        st.profiles.approve(id)?;
        self.persist(&st)?;
        st.profiles.get(id).cloned()
    }

    /// Makes the profile active for subsequent index builds.
    pub fn apply_profile(&self, id: &str) -> Result<QueryPatternProfile> {
        let mut st = self.state.write();
        let p = st.profiles.apply(id, self.config.review_required)?.clone();
        self.persist(&st)?;
        Ok(p)
    }
}
