//! Full and incremental index builds, dirty tracking and the memory-dump
//! equivalence checker.
//!
//! An incremental cycle rebuilds dirty leaves, then every ancestor on the
//! union of their root paths exactly once, bottom-up. Memories off those
//! paths are not touched. With a deterministic backend the result equals a
//! full rebuild over the same data.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::QueryPatternProfile;
use crate::aggregation::{AggregationConfig, Aggregator};
use crate::backend::{Backend, UsageMeter, UsageRecord};
use crate::error::{Error, Result};
use crate::memory::{Document, MemoryBuilder, MemoryConfig, MemoryDump};
use crate::store::{PurgeCounts, Store};
use crate::tree::{MemoryTree, NodeId, SchemaNode, TreeSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirtyReason {
    Modified,
    Created,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirtyEntry {
    pub reason: DirtyReason,
    /// Root path recorded when a deletion was marked, since the node may be
    /// gone from the tree by the time the cycle runs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ancestors: Vec<NodeId>,
}

/// Leaves changed since the last successful incremental cycle.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirtySet {
    pub leaves: BTreeMap<NodeId, DirtyEntry>,
}

impl DirtySet {
    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    /// Records a change to `leaf`, which must currently be a leaf of
    /// `tree` (mark deletions before removing the node). Repeated marks
    /// merge; Deleted wins over everything and Created over Modified.
    pub fn mark_dirty(&mut self, tree: &MemoryTree, leaf: &NodeId, reason: DirtyReason) -> Result<()> {
        if !tree.is_leaf(leaf)? {
            return Err(Error::NotALeaf(leaf.clone()));
        }
        let ancestors = if reason == DirtyReason::Deleted { tree.ancestor_path(leaf)? } else { Vec::new() };
        match self.leaves.get_mut(leaf) {
            Some(e) if e.reason >= reason => {}
            Some(e) => {
                e.reason = reason;
                e.ancestors = ancestors;
            }
            None => {
                self.leaves.insert(leaf.clone(), DirtyEntry { reason, ancestors });
            }
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.leaves.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    Full,
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexReport {
    pub mode: IndexMode,
    pub leaves_built: Vec<NodeId>,
    pub internal_built: Vec<NodeId>,
    /// Nodes whose memory was dropped because they have nothing under them.
    pub cleared: Vec<NodeId>,
    pub purged: PurgeCounts,
    pub nodes_built: usize,
    pub usage: UsageRecord,
    pub wall_time_ms: u128,
}

/// Everything a build needs, borrowed from the caller.
pub struct Indexer<'a> {
    pub tree: &'a MemoryTree,
    pub store: &'a Store,
    pub backend: &'a Backend,
    pub memory: &'a MemoryConfig,
    pub aggregation: &'a AggregationConfig,
    pub profile: Option<&'a QueryPatternProfile>,
}

impl<'a> Indexer<'a> {
    /// Rebuilds (or clears) the given leaves in parallel. Returns
    /// `(built, cleared)`.
    fn rebuild_leaves(&self, leaves: &[NodeId], usage: &UsageMeter) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
        let builder = MemoryBuilder::new(self.backend, self.memory, usage);
        let outcomes: Vec<Result<(NodeId, bool)>> = leaves
            .par_iter()
            .map(|leaf| {
                let docs: Vec<Document> = self.store.documents_for(leaf);
                if docs.is_empty() {
                    self.store.remove_memory(leaf)?;
                    return Ok((leaf.clone(), false));
                }
                let refs: Vec<&Document> = docs.iter().collect();
                let version = self.store.version(leaf).map_or(1, |v| v + 1);
                let m = builder.build_leaf_memory(leaf, &refs, self.profile, version)?;
                self.store.put_memory(m)?;
                Ok((leaf.clone(), true))
            })
            .collect();
        let (mut built, mut cleared) = (Vec::new(), Vec::new());
        for o in outcomes {
            match o? {
                (n, true) => built.push(n),
                (n, false) => cleared.push(n),
            }
        }
        Ok((built, cleared))
    }

    /// Drops stored documents and memories of nodes no longer in the tree.
    fn purge_orphans(&self) -> Result<PurgeCounts> {
        let mut orphans: BTreeSet<NodeId> = self.store.memories().iter().map(|m| m.node.clone()).collect();
        orphans.extend(self.store.documents().into_iter().map(|d| d.node));
        orphans.retain(|n| !self.tree.contains(n));
        if orphans.is_empty() {
            return Ok(PurgeCounts::default());
        }
        self.store.purge_scope(&orphans)
    }

    pub fn full_index(&self) -> Result<IndexReport> {
        let start = Instant::now();
        let usage = UsageMeter::new();
        let purged = self.purge_orphans()?;
        let (leaves_built, mut cleared) = self.rebuild_leaves(&self.tree.leaves(), &usage)?;
        let targets: BTreeSet<NodeId> = self.tree.internal_bottom_up().into_iter().collect();
        let agg = Aggregator::new(self.backend, self.memory, self.aggregation, &usage)
            .rebuild(self.tree, self.store, &targets)?;
        cleared.extend(agg.cleared);
        Ok(IndexReport {
            mode: IndexMode::Full,
            nodes_built: leaves_built.len() + agg.rebuilt.len(),
            leaves_built,
            internal_built: agg.rebuilt,
            cleared,
            purged,
            usage: usage.snapshot(),
            wall_time_ms: start.elapsed().as_millis(),
        })
    }

    /// Rebuilds the dirty leaves and their ancestors. The caller clears the
    /// dirty set once this returns `Ok`.
    pub fn incremental_index(&self, dirty: &DirtySet) -> Result<IndexReport> {
        if dirty.is_empty() {
            return Err(Error::NothingDirty);
        }
        let start = Instant::now();
        let usage = UsageMeter::new();

        let mut rebuild = Vec::new();
        let mut targets = BTreeSet::new();
        let mut gone = BTreeSet::new();
        for (node, entry) in &dirty.leaves {
            if self.tree.contains(node) {
                if self.tree.is_leaf(node)? {
                    rebuild.push(node.clone());
                } else {
                    // grew children since it was marked
                    targets.insert(node.clone());
                }
                targets.extend(self.tree.ancestor_path(node)?);
            } else {
                gone.insert(node.clone());
                targets.extend(entry.ancestors.iter().filter(|a| self.tree.contains(a)).cloned());
            }
        }

        // parents must never aggregate a deleted child
        let mut purged = if gone.is_empty() { PurgeCounts::default() } else { self.store.purge_scope(&gone)? };
        let orphans = self.purge_orphans()?;
        purged.documents += orphans.documents;
        purged.memories += orphans.memories;
        purged.vectors += orphans.vectors;

        let (leaves_built, mut cleared) = self.rebuild_leaves(&rebuild, &usage)?;
        let agg = Aggregator::new(self.backend, self.memory, self.aggregation, &usage)
            .rebuild(self.tree, self.store, &targets)?;
        cleared.extend(agg.cleared);
        Ok(IndexReport {
            mode: IndexMode::Incremental,
            nodes_built: leaves_built.len() + agg.rebuilt.len(),
            leaves_built,
            internal_built: agg.rebuilt,
            cleared,
            purged,
            usage: usage.snapshot(),
            wall_time_ms: start.elapsed().as_millis(),
        })
    }
}

/// The JSON memory-dump document: topology plus every stored memory
/// (embedding-free), sorted by node id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpDocument {
    pub tree: TreeSchema,
    pub memories: Vec<MemoryDump>,
}

pub fn dump(tree: &MemoryTree, store: &Store) -> DumpDocument {
    let memories = store.memories().iter().filter(|m| tree.contains(&m.node)).map(|m| m.dump()).collect();
    DumpDocument { tree: tree.to_schema(), memories }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub identical: bool,
    pub diffs: Vec<String>,
}

fn parse_dump(raw: &str) -> Result<DumpDocument> {
    serde_json::from_str(raw).map_err(|e| Error::MalformedDump(e.to_string()))
}

/// Compares two dumps: topology and per-node view contents, ignoring
/// versions and list order.
pub fn check_equivalence(a: &str, b: &str) -> Result<EquivalenceReport> {
    Ok(compare_dumps(&parse_dump(a)?, &parse_dump(b)?))
}

fn diff_maps<K: Ord + std::fmt::Debug, V: PartialEq + std::fmt::Debug>(
    what: &str,
    a: &BTreeMap<K, V>,
    b: &BTreeMap<K, V>,
    diffs: &mut Vec<String>,
) {
    let keys: BTreeSet<&K> = a.keys().chain(b.keys()).collect();
    for k in keys {
        match (a.get(k), b.get(k)) {
            (Some(x), Some(y)) if x == y => {}
            (x, y) => diffs.push(format!("{what} {k:?}: {x:?} != {y:?}")),
        }
    }
}

pub fn compare_dumps(a: &DumpDocument, b: &DumpDocument) -> EquivalenceReport {
    let mut diffs = Vec::new();
    let topo = |d: &DumpDocument| -> BTreeMap<String, SchemaNode> {
        d.tree.nodes.iter().map(|n| (n.id.clone(), n.clone())).collect()
    };
    diff_maps("node", &topo(a), &topo(b), &mut diffs);

    let mems = |d: &DumpDocument| -> BTreeMap<NodeId, MemoryDump> {
        d.memories.iter().map(|m| (m.node.clone(), m.clone())).collect()
    };
    let (ma, mb) = (mems(a), mems(b));
    let nodes: BTreeSet<&NodeId> = ma.keys().chain(mb.keys()).collect();
    for n in nodes {
        let (x, y) = match (ma.get(n), mb.get(n)) {
            (Some(x), Some(y)) => (x, y),
            (x, _) => {
                let side = if x.is_some() { "second" } else { "first" };
                diffs.push(format!("memory {n}: missing from {side} dump"));
                continue;
            }
        };
        let facets = |m: &MemoryDump| -> BTreeMap<String, Vec<String>> {
            let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for f in &m.facets {
                out.entry(f.key.clone()).or_default().push(f.value.clone());
            }
            out.values_mut().for_each(|v| v.sort());
            out
        };
        diff_maps(&format!("{n} facet"), &facets(x), &facets(y), &mut diffs);
        let qa = |m: &MemoryDump| -> BTreeMap<String, Vec<(String, String)>> {
            let mut out: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
            for q in &m.qa {
                out.entry(q.question.clone()).or_default().push((q.answer.clone(), q.source.clone()));
            }
            out.values_mut().for_each(|v| v.sort());
            out
        };
        diff_maps(&format!("{n} qa"), &qa(x), &qa(y), &mut diffs);
        if x.summary.detailed != y.summary.detailed {
            diffs.push(format!("{n} detailed summary differs"));
        }
        if x.summary.concise != y.summary.concise {
            diffs.push(format!("{n} concise summary differs: {:?} != {:?}", x.summary.concise, y.summary.concise));
        }
    }
    EquivalenceReport { identical: diffs.is_empty(), diffs }
}
