use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::{EvalError, Value};
use crate::graph::{NodeId, ParamValue, ShapeGraph};
use crate::tape::Var;

/// Directory holding persisted node caches, one file per graph.
pub const CACHE_DIR_ENV: &str = "GEONODE_CACHE_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache I/O on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cache file {path} is malformed: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("cache file {path} belongs to graph {found:?}, expected {expected:?}")]
    WrongGraph { path: PathBuf, found: String, expected: String },
    #[error("cache file {path} references unknown node {node}")]
    UnknownNode { path: PathBuf, node: NodeId },
}

#[derive(Debug)]
struct Entry {
    discrete: Vec<ParamValue>,
    value: Value<Var>,
}

/// Outputs of nodes that depend on no continuous parameter, keyed by node id
/// and a fingerprint of the discrete values they read.
///
/// Values hold no tape slots, so they are valid in any recording. Readers see
/// either no entry or a complete one.
#[derive(Debug, Default)]
pub struct NodeCache {
    entries: RwLock<HashMap<(NodeId, u64), Arc<Entry>>>,
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Stable hash of a node's discrete inputs.
pub(crate) fn fingerprint(values: &[ParamValue]) -> u64 {
    fnv1a(values.iter().flat_map(|v| {
        let (tag, bits) = match *v {
            ParamValue::Bool(b) => (0u8, u64::from(b)),
            ParamValue::Int(i) => (1, i as u64),
            ParamValue::Float(x) => (2, x.to_bits()),
        };
        std::iter::once(tag).chain(bits.to_le_bytes())
    }))
}

#[derive(Serialize, Deserialize)]
struct Persisted {
    graph: String,
    entries: Vec<PersistedEntry>,
}

#[derive(Serialize, Deserialize)]
struct PersistedEntry {
    node: NodeId,
    discrete: Vec<ParamValue>,
    value: Value<f64>,
}

impl NodeCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.entries.write().expect("cache lock").clear();
    }

    /// Stored `(node, fingerprint)` keys, sorted.
    pub fn keys(&self) -> Vec<(NodeId, u64)> {
        let mut k: Vec<_> = self.entries.read().expect("cache lock").keys().copied().collect();
        k.sort_unstable();
        k
    }

    pub(crate) fn lookup(&self, node: NodeId, fp: u64, discrete: &[ParamValue]) -> Result<Option<Value<Var>>, EvalError> {
        let guard = self.entries.read().expect("cache lock");
        match guard.get(&(node, fp)) {
            None => Ok(None),
            Some(e) if e.discrete == discrete => Ok(Some(e.value.clone())),
            Some(_) => Err(EvalError::CacheCorruption { node }),
        }
    }

    pub(crate) fn insert(&self, node: NodeId, fp: u64, discrete: Vec<ParamValue>, value: Value<Var>) {
        self.entries
            .write()
            .expect("cache lock")
            .entry((node, fp))
            .or_insert_with(|| Arc::new(Entry { discrete, value }));
    }

    /// Overwrites the stored discrete values of one entry. Test hook for the
    /// corruption check.
    #[doc(hidden)]
    pub fn tamper(&self, node: NodeId, fp: u64, discrete: Vec<ParamValue>) -> bool {
        let mut guard = self.entries.write().expect("cache lock");
        match guard.get_mut(&(node, fp)) {
            Some(e) => {
                let value = e.value.clone();
                *e = Arc::new(Entry { discrete, value });
                true
            }
            None => false,
        }
    }

    /// File name stem identifying `graph` by name and content.
    pub fn graph_key(graph: &ShapeGraph) -> String {
        let name: String = graph
            .name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
            .collect();
        format!("{name}-{:016x}", fnv1a(graph.to_json().into_bytes()))
    }

    pub fn path_for(dir: &Path, graph: &ShapeGraph) -> PathBuf {
        dir.join(format!("{}.cache.json", Self::graph_key(graph)))
    }

    /// Writes the cache atomically (temporary file plus rename).
    pub fn save(&self, dir: &Path, graph: &ShapeGraph) -> Result<PathBuf, CacheError> {
        let path = Self::path_for(dir, graph);
        let io = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut entries: Vec<PersistedEntry> = {
            let guard = self.entries.read().expect("cache lock");
            guard
                .iter()
                .map(|(&(node, _), e)| PersistedEntry {
                    node,
                    discrete: e.discrete.clone(),
                    value: e.value.to_plain(),
                })
                .collect()
        };
        entries.sort_by(|a, b| (a.node, fingerprint(&a.discrete)).cmp(&(b.node, fingerprint(&b.discrete))));
        let doc = Persisted {
            graph: Self::graph_key(graph),
            entries,
        };
        let text = serde_json::to_string(&doc).map_err(|source| CacheError::Json {
            path: path.clone(),
            source,
        })?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, text).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)?;
        Ok(path)
    }

    /// Reads a persisted cache; a missing file yields an empty cache.
    pub fn load(dir: &Path, graph: &ShapeGraph) -> Result<Self, CacheError> {
        let path = Self::path_for(dir, graph);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::new()),
            Err(source) => return Err(CacheError::Io { path, source }),
        };
        let doc: Persisted = serde_json::from_str(&text).map_err(|source| CacheError::Json {
            path: path.clone(),
            source,
        })?;
        let expected = Self::graph_key(graph);
        if doc.graph != expected {
            return Err(CacheError::WrongGraph {
                path,
                found: doc.graph,
                expected,
            });
        }
        let cache = Self::new();
        for e in doc.entries {
            if graph.node(e.node).is_none() {
                return Err(CacheError::UnknownNode { path, node: e.node });
            }
            let fp = fingerprint(&e.discrete);
            cache.insert(e.node, fp, e.discrete, Value::from_plain(&e.value));
        }
        Ok(cache)
    }

    /// Loads from `$GEONODE_CACHE_DIR` when set; otherwise, or on error, an
    /// empty cache.
    pub fn from_env(graph: &ShapeGraph) -> Self {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) => Self::load(Path::new(&dir), graph).unwrap_or_else(|e| {
                log::warn!("ignoring persisted cache: {e}");
                Self::new()
            }),
            None => Self::new(),
        }
    }
}
