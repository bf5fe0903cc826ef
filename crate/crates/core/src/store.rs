//! Document and memory store with per-view vector search.
//!
//! State lives in memory; when opened on a directory every mutation is
//! appended to `log.jsonl` and [`Store::compact`] folds the log into
//! `snapshot.json`. Each node's memory is swapped as one `Arc`, so a reader
//! sees either the old or the new version of a node, never a mix.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::backend::{cosine, EmbeddingVector};
use crate::error::{Error, Result};
use crate::memory::{Document, NodeMemory};
use crate::tree::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Facet,
    Qa,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorEntry {
    pub vector: EmbeddingVector,
    pub view: View,
    pub node: NodeId,
    /// Index into the node's list for this view (0 for the summary).
    pub item_ref: usize,
    pub version: u64,
}

fn vectors_of(m: &NodeMemory, view: View) -> Vec<&EmbeddingVector> {
    match view {
        View::Facet => m.facets.iter().map(|f| &f.embedding).collect(),
        View::Qa => m.qa.iter().map(|q| &q.embedding).collect(),
        View::Summary => vec![&m.summary.embedding],
    }
}

/// Exact top-k over an already scoped set of memories, same ordering as
/// [`Store::knn`].
pub fn knn_over(
    memories: &[Arc<NodeMemory>],
    view: View,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<(VectorEntry, f64)>> {
    let mut scored = Vec::new();
    for m in memories {
        for (i, v) in vectors_of(m, view).into_iter().enumerate() {
            scored.push((m.as_ref(), i, v, cosine(query, v)?));
        }
    }
    scored.sort_by(|a, b| b.3.total_cmp(&a.3).then_with(|| a.0.node.cmp(&b.0.node)).then_with(|| a.1.cmp(&b.1)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(m, i, v, s)| {
            (VectorEntry { vector: v.clone(), view, node: m.node.clone(), item_ref: i, version: m.version }, s)
        })
        .collect())
}

/// Vector entries a memory contributes to the index.
pub fn entries_of(m: &NodeMemory) -> Vec<VectorEntry> {
    [View::Facet, View::Qa, View::Summary]
        .into_iter()
        .flat_map(|view| {
            vectors_of(m, view).into_iter().enumerate().map(move |(i, v)| VectorEntry {
                vector: v.clone(),
                view,
                node: m.node.clone(),
                item_ref: i,
                version: m.version,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurgeCounts {
    pub documents: usize,
    pub memories: usize,
    pub vectors: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogRecord {
    PutDocument { document: Document },
    DeleteDocument { doc_id: String },
    PutMemory { memory: NodeMemory },
    RemoveMemory { node: NodeId },
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Snapshot {
    documents: Vec<Document>,
    memories: Vec<NodeMemory>,
}

#[derive(Debug, Default)]
struct State {
    documents: BTreeMap<String, Document>,
    memories: HashMap<NodeId, Arc<NodeMemory>>,
}

impl State {
    fn apply(&mut self, rec: LogRecord) {
        match rec {
            LogRecord::PutDocument { document } => {
                self.documents.insert(document.doc_id.clone(), document);
            }
            LogRecord::DeleteDocument { doc_id } => {
                self.documents.remove(&doc_id);
            }
            LogRecord::PutMemory { memory } => {
                self.memories.insert(memory.node.clone(), Arc::new(memory));
            }
            LogRecord::RemoveMemory { node } => {
                self.memories.remove(&node);
            }
        }
    }
}

#[derive(Debug)]
pub struct Store {
    state: RwLock<State>,
    log: Mutex<Option<BufWriter<File>>>,
    dir: Option<PathBuf>,
}

const SNAPSHOT: &str = "snapshot.json";
const LOG: &str = "log.jsonl";

impl Default for Store {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Self { state: RwLock::new(State::default()), log: Mutex::new(None), dir: None }
    }

    /// Opens (or creates) a store directory, replaying snapshot and log.
    /// A torn final log line from an interrupted write is ignored.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut state = State::default();
        let snap_path = dir.join(SNAPSHOT);
        if snap_path.exists() {
            let snap: Snapshot = serde_json::from_reader(BufReader::new(File::open(&snap_path)?))
                .map_err(|e| Error::Storage(format!("corrupt snapshot: {e}")))?;
            for d in snap.documents {
                state.documents.insert(d.doc_id.clone(), d);
            }
            for m in snap.memories {
                state.memories.insert(m.node.clone(), Arc::new(m));
            }
        }
        let log_path = dir.join(LOG);
        let mut torn = false;
        if log_path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(&log_path)?).lines().collect::<std::io::Result<_>>()?;
            let last = lines.len();
            for (i, line) in lines.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<LogRecord>(&line) {
                    Ok(rec) => state.apply(rec),
                    Err(e) if i + 1 == last => {
                        log::warn!("ignoring torn log tail: {e}");
                        torn = true;
                    }
                    Err(e) => return Err(Error::Storage(format!("corrupt log line {}: {e}", i + 1))),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&log_path)?;
        let store = Self { state: RwLock::new(state), log: Mutex::new(Some(BufWriter::new(file))), dir: Some(dir) };
        if torn {
            // later appends must not land on the same line as the torn tail
            store.compact()?;
        }
        Ok(store)
    }

    fn append(&self, rec: &LogRecord) -> Result<()> {
        let mut guard = self.log.lock();
        if let Some(w) = guard.as_mut() {
            serde_json::to_writer(&mut *w, rec)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(())
    }

    /// Writes a fresh snapshot and truncates the log.
    pub fn compact(&self) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut log = self.log.lock();
        let state = self.state.read();
        let mut memories: Vec<NodeMemory> = state.memories.values().map(|m| (**m).clone()).collect();
        memories.sort_by(|a, b| a.node.cmp(&b.node));
        let snap = Snapshot { documents: state.documents.values().cloned().collect(), memories };
        let tmp = dir.join(format!("{SNAPSHOT}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer(&mut w, &snap)?;
            w.flush()?;
        }
        fs::rename(&tmp, dir.join(SNAPSHOT))?;
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(dir.join(LOG))?;
        *log = Some(BufWriter::new(file));
        Ok(())
    }

    pub fn put_document(&self, doc: Document) -> Result<()> {
        let rec = LogRecord::PutDocument { document: doc };
        self.append(&rec)?;
        self.state.write().apply(rec);
        Ok(())
    }

    pub fn delete_document(&self, doc_id: &str) -> Result<Option<Document>> {
        if !self.state.read().documents.contains_key(doc_id) {
            return Ok(None);
        }
        self.append(&LogRecord::DeleteDocument { doc_id: doc_id.to_string() })?;
        Ok(self.state.write().documents.remove(doc_id))
    }

    pub fn document(&self, doc_id: &str) -> Option<Document> {
        self.state.read().documents.get(doc_id).cloned()
    }

    /// Documents attached to `node`, ordered by `(timestamp, doc_id)`.
    pub fn documents_for(&self, node: &NodeId) -> Vec<Document> {
        let mut docs: Vec<Document> =
            self.state.read().documents.values().filter(|d| &d.node == node).cloned().collect();
        docs.sort_by(|a, b| (a.timestamp, &a.doc_id).cmp(&(b.timestamp, &b.doc_id)));
        docs
    }

    pub fn documents(&self) -> Vec<Document> {
        self.state.read().documents.values().cloned().collect()
    }

    /// Replaces a node's memory; the offered version must be newer.
    pub fn put_memory(&self, m: NodeMemory) -> Result<()> {
        {
            let state = self.state.read();
            if let Some(old) = state.memories.get(&m.node) {
                if m.version <= old.version {
                    return Err(Error::StaleVersion { node: m.node.clone(), stored: old.version, offered: m.version });
                }
            }
        }
        let rec = LogRecord::PutMemory { memory: m };
        self.append(&rec)?;
        let mut state = self.state.write();
        if let LogRecord::PutMemory { memory } = rec {
            if let Some(old) = state.memories.get(&memory.node) {
                if memory.version <= old.version {
                    return Err(Error::StaleVersion {
                        node: memory.node.clone(),
                        stored: old.version,
                        offered: memory.version,
                    });
                }
            }
            state.memories.insert(memory.node.clone(), Arc::new(memory));
        }
        Ok(())
    }

    pub fn memory(&self, node: &NodeId) -> Option<Arc<NodeMemory>> {
        self.state.read().memories.get(node).cloned()
    }

    pub fn version(&self, node: &NodeId) -> Option<u64> {
        self.state.read().memories.get(node).map(|m| m.version)
    }

    pub fn remove_memory(&self, node: &NodeId) -> Result<bool> {
        if !self.state.read().memories.contains_key(node) {
            return Ok(false);
        }
        self.append(&LogRecord::RemoveMemory { node: node.clone() })?;
        Ok(self.state.write().memories.remove(node).is_some())
    }

    /// All memories sorted by node id.
    pub fn memories(&self) -> Vec<Arc<NodeMemory>> {
        let mut all: Vec<_> = self.state.read().memories.values().cloned().collect();
        all.sort_by(|a, b| a.node.cmp(&b.node));
        all
    }

    pub fn vector_count(&self) -> usize {
        self.state.read().memories.values().map(|m| m.facets.len() + m.qa.len() + 1).sum()
    }

    /// Exact top-k by cosine among `view` entries whose node is in `scope`.
    /// Candidates are restricted to the scope before ranking. Ties break on
    /// `(node, item_ref)` ascending.
    pub fn knn(
        &self,
        view: View,
        query: &EmbeddingVector,
        scope: &BTreeSet<NodeId>,
        k: usize,
    ) -> Result<Vec<(VectorEntry, f64)>> {
        if scope.is_empty() {
            return Err(Error::EmptyScope);
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let slots: Vec<Arc<NodeMemory>> = {
            let state = self.state.read();
            scope.iter().filter_map(|n| state.memories.get(n).cloned()).collect()
        };
        knn_over(&slots, view, query, k)
    }

    /// Snapshot of the memories held by `nodes` (nodes without one are skipped).
    pub fn memories_in(&self, nodes: &BTreeSet<NodeId>) -> Vec<Arc<NodeMemory>> {
        let state = self.state.read();
        nodes.iter().filter_map(|n| state.memories.get(n).cloned()).collect()
    }

    /// Removes every document, memory and vector entry owned by `nodes`.
    pub fn purge_scope(&self, nodes: &BTreeSet<NodeId>) -> Result<PurgeCounts> {
        let mut counts = PurgeCounts::default();
        let (doc_ids, mem_nodes): (Vec<String>, Vec<NodeId>) = {
            let state = self.state.read();
            (
                state.documents.values().filter(|d| nodes.contains(&d.node)).map(|d| d.doc_id.clone()).collect(),
                nodes.iter().filter(|n| state.memories.contains_key(*n)).cloned().collect(),
            )
        };
        for id in doc_ids {
            if self.delete_document(&id)?.is_some() {
                counts.documents += 1;
            }
        }
        for n in mem_nodes {
            if let Some(m) = self.memory(&n) {
                if self.remove_memory(&n)? {
                    counts.memories += 1;
                    counts.vectors += m.facets.len() + m.qa.len() + 1;
                }
            }
        }
        Ok(counts)
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        if self.dir.is_some() {
            if let Err(e) = self.compact() {
                log::warn!("snapshot compaction on close failed: {e}");
            }
        }
    }
}
