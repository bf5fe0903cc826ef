//! Schema-aligned memory tree.
//!
//! The topology mirrors the ownership chain of the source data model
//! (for example account → seat → project). Nodes are only ever created,
//! attached and removed through explicit calls; nothing here re-clusters
//! or moves nodes. Children keep insertion order, and every traversal
//! below follows that order.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque, stable node identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.trim().is_empty() {
            return Err(Error::InvalidArgument("node id must not be empty".into()));
        }
        Ok(NodeId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for NodeId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub business_key: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub level_label: String,
    /// Only leaves may carry documents.
    #[serde(default)]
    pub doc_ids: Vec<String>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryTree {
    nodes: BTreeMap<NodeId, TreeNode>,
    root: Option<NodeId>,
}

impl MemoryTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn root(&self) -> Option<&NodeId> {
        self.root.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node(&self, id: &NodeId) -> Result<&TreeNode> {
        self.nodes.get(id).ok_or_else(|| Error::UnknownNode(id.clone()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values()
    }

    pub fn children(&self, id: &NodeId) -> Result<&[NodeId]> {
        Ok(&self.node(id)?.children)
    }

    pub fn parent(&self, id: &NodeId) -> Result<Option<&NodeId>> {
        Ok(self.node(id)?.parent.as_ref())
    }

    pub fn is_leaf(&self, id: &NodeId) -> Result<bool> {
        Ok(self.node(id)?.is_leaf())
    }

    /// Inserts a node. The first node created becomes the root; every later
    /// node needs a parent. Generated ids are the `level:key` path from the
    /// root, so they only depend on business identifiers.
    pub fn create_node(&mut self, business_key: &str, level_label: &str, parent: Option<&NodeId>) -> Result<NodeId> {
        if business_key.trim().is_empty() || level_label.trim().is_empty() {
            return Err(Error::InvalidArgument("business key and level label must not be empty".into()));
        }
        let segment = format!("{level_label}:{business_key}");
        let id = match parent {
            None => NodeId::new(segment)?,
            Some(p) => NodeId::new(format!("{}/{}", p.as_str(), segment))?,
        };
        self.insert(id.clone(), business_key, level_label, parent)?;
        Ok(id)
    }

    /// Inserts a node under a caller-chosen id.
    pub fn insert(&mut self, id: NodeId, business_key: &str, level_label: &str, parent: Option<&NodeId>) -> Result<()> {
        let check_id = |nodes: &BTreeMap<NodeId, TreeNode>| {
            if nodes.contains_key(&id) {
                return Err(Error::InvalidTree(format!("duplicate node id `{id}`")));
            }
            Ok(())
        };
        match parent {
            None => {
                if let Some(root) = &self.root {
                    return Err(Error::RootExists(root.clone()));
                }
                check_id(&self.nodes)?;
                self.root = Some(id.clone());
            }
            Some(p) => {
                let parent_node = self.nodes.get(p).ok_or_else(|| Error::UnknownParent(p.clone()))?;
                if !parent_node.doc_ids.is_empty() {
                    return Err(Error::LeafPromotion(p.clone()));
                }
                let clash = parent_node.children.iter().any(|c| {
                    let c = &self.nodes[c];
                    c.business_key == business_key && c.level_label == level_label
                });
                if clash {
                    return Err(Error::DuplicateBusinessKey {
                        key: business_key.to_string(),
                        level: level_label.to_string(),
                    });
                }
                check_id(&self.nodes)?;
                self.nodes.get_mut(p).unwrap().children.push(id.clone());
            }
        }
        self.nodes.insert(
            id.clone(),
            TreeNode {
                id,
                business_key: business_key.to_string(),
                parent: parent.cloned(),
                children: Vec::new(),
                level_label: level_label.to_string(),
                doc_ids: Vec::new(),
            },
        );
        Ok(())
    }

    /// `{v} ∪ Desc(v)`.
    pub fn subtree(&self, v: &NodeId) -> Result<BTreeSet<NodeId>> {
        Ok(self.preorder(v)?.into_iter().collect())
    }

    /// Subtree of `v` in preorder, children visited in insertion order.
    pub fn preorder(&self, v: &NodeId) -> Result<Vec<NodeId>> {
        self.node(v)?;
        let mut out = Vec::new();
        let mut stack = vec![v.clone()];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[&id];
            stack.extend(node.children.iter().rev().cloned());
            out.push(id);
        }
        Ok(out)
    }

    /// `[parent(v), ..., root]`; empty for the root.
    pub fn ancestor_path(&self, v: &NodeId) -> Result<Vec<NodeId>> {
        let mut path = Vec::new();
        let mut cur = self.node(v)?.parent.clone();
        while let Some(id) = cur {
            cur = self.nodes[&id].parent.clone();
            path.push(id);
        }
        Ok(path)
    }

    pub fn depth(&self, v: &NodeId) -> Result<usize> {
        Ok(self.ancestor_path(v)?.len())
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        self.nodes.keys().map(|id| self.depth(id).unwrap_or(0)).max().unwrap_or(0)
    }

    /// Leaves of the whole tree in preorder.
    pub fn leaves(&self) -> Vec<NodeId> {
        match &self.root {
            None => Vec::new(),
            Some(root) => {
                self.preorder(root).unwrap_or_default().into_iter().filter(|id| self.nodes[id].is_leaf()).collect()
            }
        }
    }

    /// Removes `v` and all its descendants, returning how many nodes went.
    pub fn delete_subtree(&mut self, v: &NodeId) -> Result<usize> {
        let doomed = self.preorder(v)?;
        if let Some(parent) = self.nodes[v].parent.clone() {
            let siblings = &mut self.nodes.get_mut(&parent).unwrap().children;
            siblings.retain(|c| c != v);
        } else {
            self.root = None;
        }
        for id in &doomed {
            self.nodes.remove(id);
        }
        Ok(doomed.len())
    }

    pub fn attach_document(&mut self, leaf: &NodeId, doc_id: &str) -> Result<()> {
        let node = self.nodes.get_mut(leaf).ok_or_else(|| Error::UnknownNode(leaf.clone()))?;
        if !node.is_leaf() {
            return Err(Error::NotALeaf(leaf.clone()));
        }
        if !node.doc_ids.iter().any(|d| d == doc_id) {
            node.doc_ids.push(doc_id.to_string());
        }
        Ok(())
    }

    /// Returns true if the document was attached to `leaf`.
    pub fn detach_document(&mut self, leaf: &NodeId, doc_id: &str) -> Result<bool> {
        let node = self.nodes.get_mut(leaf).ok_or_else(|| Error::UnknownNode(leaf.clone()))?;
        let before = node.doc_ids.len();
        node.doc_ids.retain(|d| d != doc_id);
        Ok(node.doc_ids.len() != before)
    }

    /// Resolves a business key to its unique node.
    pub fn find_by_business_key(&self, key: &str) -> Result<NodeId> {
        let mut hits = self.nodes.values().filter(|n| n.business_key == key);
        match (hits.next(), hits.next()) {
            (Some(n), None) => Ok(n.id.clone()),
            (Some(_), Some(_)) => Err(Error::AmbiguousBusinessKey(key.to_string())),
            (None, _) => Err(Error::UnknownScope(key.to_string())),
        }
    }

    /// Accepts either a node id or a unique business key.
    pub fn resolve(&self, id_or_key: &str) -> Result<NodeId> {
        if let Ok(id) = NodeId::new(id_or_key) {
            if self.nodes.contains_key(&id) {
                return Ok(id);
            }
        }
        self.find_by_business_key(id_or_key)
    }

    /// Internal nodes ordered so that every node appears after all of its
    /// descendants (reverse BFS).
    pub fn internal_bottom_up(&self) -> Vec<NodeId> {
        let Some(root) = &self.root else {
            return Vec::new();
        };
        let mut order = Vec::new();
        let mut queue = VecDeque::from([root.clone()]);
        while let Some(id) = queue.pop_front() {
            let node = &self.nodes[&id];
            if !node.is_leaf() {
                order.push(id);
                queue.extend(node.children.iter().cloned());
            }
        }
        order.reverse();
        order
    }

    /// Checks the structural invariants: one root, consistent links,
    /// full reachability, no cycles and documents only on leaves.
    pub fn validate(&self) -> Result<()> {
        let roots: Vec<_> = self.nodes.values().filter(|n| n.parent.is_none()).collect();
        match (&self.root, roots.as_slice()) {
            (None, []) => return Ok(()),
            (Some(r), [only]) if &only.id == r => {}
            _ => return Err(Error::InvalidTree("expected exactly one root".into())),
        }
        for node in self.nodes.values() {
            if let Some(p) = &node.parent {
                let parent = self.nodes.get(p).ok_or_else(|| Error::InvalidTree(format!("dangling parent `{p}`")))?;
                if !parent.children.contains(&node.id) {
                    return Err(Error::InvalidTree(format!("`{p}` does not list `{}`", node.id)));
                }
            }
            for c in &node.children {
                let child = self.nodes.get(c).ok_or_else(|| Error::InvalidTree(format!("dangling child `{c}`")))?;
                if child.parent.as_ref() != Some(&node.id) {
                    return Err(Error::InvalidTree(format!("`{c}` has a different parent")));
                }
            }
            if !node.is_leaf() && !node.doc_ids.is_empty() {
                return Err(Error::InvalidTree(format!("internal node `{}` holds documents", node.id)));
            }
        }
        let mut seen = HashSet::new();
        let mut stack = vec![self.root.clone().unwrap()];
        while let Some(id) = stack.pop() {
            if !seen.insert(id.clone()) {
                return Err(Error::InvalidTree(format!("cycle through `{id}`")));
            }
            stack.extend(self.nodes[&id].children.iter().cloned());
        }
        if seen.len() != self.nodes.len() {
            return Err(Error::InvalidTree("unreachable nodes".into()));
        }
        Ok(())
    }

    pub fn to_schema(&self) -> TreeSchema {
        let nodes = match &self.root {
            None => Vec::new(),
            Some(root) => self
                .preorder(root)
                .unwrap_or_default()
                .into_iter()
                .map(|id| {
                    let n = &self.nodes[&id];
                    SchemaNode {
                        id: n.id.as_str().to_string(),
                        business_key: n.business_key.clone(),
                        level: n.level_label.clone(),
                        parent: n.parent.as_ref().map(|p| p.as_str().to_string()),
                    }
                })
                .collect(),
        };
        TreeSchema { nodes }
    }

    /// Builds a tree from a schema document. Nodes may be listed in any
    /// order; siblings keep their relative order from the document.
    pub fn from_schema(schema: &TreeSchema) -> Result<Self> {
        let mut pending: Vec<&SchemaNode> = schema.nodes.iter().collect();
        let mut tree = MemoryTree::new();
        while !pending.is_empty() {
            let before = pending.len();
            let mut rest = Vec::new();
            for n in pending {
                let ready = match &n.parent {
                    None => true,
                    Some(p) => tree.nodes.contains_key(&NodeId::new(p.clone())?),
                };
                if ready {
                    let parent = n.parent.as_ref().map(NodeId::new).transpose()?;
                    tree.insert(NodeId::new(n.id.clone())?, &n.business_key, &n.level, parent.as_ref())?;
                } else {
                    rest.push(n);
                }
            }
            if rest.len() == before {
                return Err(Error::InvalidTree(format!(
                    "unresolvable parent for `{}` (missing node or cycle)",
                    rest[0].id
                )));
            }
            pending = rest;
        }
        tree.validate()?;
        Ok(tree)
    }
}

/// JSON exchange format: `{"nodes":[{"id","business_key","level","parent"}]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSchema {
    pub nodes: Vec<SchemaNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaNode {
    pub id: String,
    pub business_key: String,
    pub level: String,
    #[serde(default)]
    pub parent: Option<String>,
}
