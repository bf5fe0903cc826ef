use thiserror::Error;

use crate::tree::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown parent node `{0}`")]
    UnknownParent(NodeId),
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("unknown scope `{0}`")]
    UnknownScope(String),
    #[error("business key `{key}` already used by a `{level}` child of this parent")]
    DuplicateBusinessKey { key: String, level: String },
    #[error("business key `{0}` matches more than one node; address it by node id")]
    AmbiguousBusinessKey(String),
    #[error("a root node already exists (`{0}`)")]
    RootExists(NodeId),
    #[error("node `{0}` holds documents and cannot gain children")]
    LeafPromotion(NodeId),
    #[error("node `{0}` is not a leaf")]
    NotALeaf(NodeId),
    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),

    #[error("no documents supplied")]
    EmptyDocuments,
    #[error("aggregation requires at least one child memory")]
    EmptyChildren,
    #[error("node `{0}` has no memory")]
    MissingMemory(NodeId),
    #[error("stale version for `{node}`: stored {stored}, offered {offered}")]
    StaleVersion { node: NodeId, stored: u64, offered: u64 },
    #[error("retrieval scope is empty")]
    EmptyScope,
    #[error("retrieval returned no context")]
    EmptyContext,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dirty set is empty")]
    NothingDirty,
    #[error("malformed memory dump: {0}")]
    MalformedDump(String),

    #[error("no queries fall inside the mining window")]
    WindowEmpty,
    #[error("profile `{0}` has not been approved")]
    NotApproved(String),
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),

    #[error("gold reference is empty")]
    EmptyGold,
    #[error("entity `{0}` has no owner")]
    UnknownEntity(String),

    #[error("config: {0}")]
    Config(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name, used in CLI error output and HTTP bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownParent(_) => "unknown_parent",
            Error::UnknownNode(_) => "unknown_node",
            Error::UnknownScope(_) => "unknown_scope",
            Error::DuplicateBusinessKey { .. } => "duplicate_business_key",
            Error::AmbiguousBusinessKey(_) => "ambiguous_business_key",
            Error::RootExists(_) => "root_exists",
            Error::LeafPromotion(_) => "leaf_promotion",
            Error::NotALeaf(_) => "not_a_leaf",
            Error::InvalidTree(_) => "invalid_tree",
            Error::BackendUnavailable(_) => "backend_unavailable",
            Error::MalformedResponse(_) => "malformed_response",
            Error::EmptyText => "empty_text",
            Error::DimMismatch(..) => "dim_mismatch",
            Error::EmptyDocuments => "empty_documents",
            Error::EmptyChildren => "empty_children",
            Error::MissingMemory(_) => "missing_memory",
            Error::StaleVersion { .. } => "stale_version",
            Error::EmptyScope => "empty_scope",
            Error::EmptyContext => "empty_context",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NothingDirty => "nothing_dirty",
            Error::MalformedDump(_) => "malformed_dump",
            Error::WindowEmpty => "window_empty",
            Error::NotApproved(_) => "not_approved",
            Error::UnknownProfile(_) => "unknown_profile",
            Error::EmptyGold => "empty_gold",
            Error::UnknownEntity(_) => "unknown_entity",
            Error::Config(_) => "config",
            Error::Storage(_) => "storage",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
