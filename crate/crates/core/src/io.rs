//! Snapshot, result and shortcut-index file formats.
//!
//! All amounts are decimal strings. Files are written canonically (sorted
//! keys, two-space indent, trailing newline) so that saving a loaded file
//! reproduces it byte for byte.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{AuditReport, RouteSolution};
use crate::error::GraphError;
use crate::graph::{Leg, Pool, PoolKind, SwapGraph, Token, MAX_DECIMALS};
use crate::preprocess::{HubSet, Shortcut, ShortcutIndex};

pub const SNAPSHOT_VERSION: u32 = 1;
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}, column {column}, field `{field}`: {message}")]
    Parse { line: usize, column: usize, field: String, message: String },
    #[error("unsupported version {found} (expected {expected})")]
    VersionUnsupported { found: u32, expected: u32 },
    #[error("shortcut index was built for snapshot {expected}, not {found}")]
    StaleIndex { expected: String, found: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl IoError {
    fn field(field: impl Into<String>, message: impl Into<String>) -> IoError {
        IoError::Parse { line: 0, column: 0, field: field.into(), message: message.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub version: u32,
    pub block_ref: String,
    pub tokens: Vec<Token>,
    pub pools: Vec<Pool>,
}

impl Snapshot {
    pub fn new(block_ref: &str, tokens: Vec<Token>, pools: Vec<Pool>) -> Snapshot {
        Snapshot { version: SNAPSHOT_VERSION, block_ref: block_ref.to_string(), tokens, pools }
    }

    pub fn to_graph(&self) -> Result<SwapGraph, GraphError> {
        SwapGraph::build(self.tokens.clone(), self.pools.clone())
    }

    /// Canonical JSON text.
    pub fn to_canonical_json(&self) -> String {
        canonical(&serde_json::to_value(self).expect("snapshot serialises"))
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }

    /// Structural checks beyond the schema: version, unique ids, known
    /// tokens, decimals range.
    fn check(&self) -> Result<(), IoError> {
        if self.version != SNAPSHOT_VERSION {
            return Err(IoError::VersionUnsupported { found: self.version, expected: SNAPSHOT_VERSION });
        }
        let mut ids = HashSet::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if !ids.insert(t.id.as_str()) {
                return Err(IoError::field(format!("tokens[{i}].id"), format!("duplicate token id {:?}", t.id)));
            }
            if t.decimals > MAX_DECIMALS {
                return Err(IoError::field(format!("tokens[{i}].decimals"), format!("{} exceeds {MAX_DECIMALS}", t.decimals)));
            }
        }
        let mut pools = HashSet::new();
        for (i, p) in self.pools.iter().enumerate() {
            if !pools.insert(p.id.as_str()) {
                return Err(IoError::field(format!("pools[{i}].id"), format!("duplicate pool id {:?}", p.id)));
            }
            for (j, t) in p.tokens.iter().enumerate() {
                if !ids.contains(t.as_str()) {
                    return Err(IoError::field(format!("pools[{i}].tokens[{j}]"), format!("unknown token {t:?}")));
                }
            }
            if let PoolKind::PiecewiseLiquidity { curves } = &p.kind {
                for (j, c) in curves.iter().enumerate() {
                    if !p.tokens.contains(&c.token_in) || !p.tokens.contains(&c.token_out) {
                        return Err(IoError::field(format!("pools[{i}].curves[{j}]"), "curve token outside the pool"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Sorted-key, two-space-indented JSON with a trailing newline.
pub fn canonical(value: &Value) -> String {
    // serde_json's map is ordered by key unless `preserve_order` is enabled.
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialise");
    text.push('\n');
    text
}

/// Parses snapshot text; errors carry the line, column and field path.
pub fn parse_snapshot(text: &str) -> Result<Snapshot, IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let snapshot: Snapshot = serde_path_to_error::deserialize(de).map_err(|e| {
        let mut field = e.path().to_string();
        let inner = e.into_inner();
        if let Some(inside) = pool_field(text, &field) {
            field = format!("{field}.{inside}");
        }
        IoError::Parse { line: inner.line(), column: inner.column(), field, message: inner.to_string() }
    })?;
    snapshot.check()?;
    Ok(snapshot)
}

#[derive(Deserialize)]
struct ReservesShape {
    #[allow(dead_code)]
    reserves: Vec<crate::amount::Amount>,
}

#[derive(Deserialize)]
struct CurvesShape {
    #[allow(dead_code)]
    curves: Vec<crate::graph::DirectedCurve>,
}

/// Flattened pool kinds are buffered before decoding, which hides the path
/// below `pools[i]`; re-decode the pool's kind fields to recover it.
fn pool_field(text: &str, field: &str) -> Option<String> {
    let i: usize = field.strip_prefix("pools[")?.strip_suffix(']')?.parse().ok()?;
    let doc: Value = serde_json::from_str(text).ok()?;
    let pool = doc.get("pools")?.get(i)?;
    let err = match pool.get("kind")?.as_str()? {
        "constant_product" => serde_path_to_error::deserialize::<_, ReservesShape>(pool).err()?,
        "piecewise_liquidity" => serde_path_to_error::deserialize::<_, CurvesShape>(pool).err()?,
        _ => return None,
    };
    Some(err.path().to_string())
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    parse_snapshot(&text)
}

pub fn save_snapshot(snapshot: &Snapshot, path: &Path) -> Result<(), IoError> {
    fs::write(path, snapshot.to_canonical_json()).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexFile {
    version: u32,
    snapshot_hash: String,
    hubs: Vec<String>,
    max_intermediates: usize,
    width: usize,
    shortcuts: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    hub_in: String,
    hub_out: String,
    /// `(pool, token_in, token_out)` per edge.
    edges: Vec<(String, String, String)>,
}

/// Serialises a hub set and shortcut index, keyed by the snapshot hash.
pub fn index_to_json(snapshot_hash: &str, hubs: &HubSet, index: &ShortcutIndex) -> String {
    let shortcuts = index
        .shortcuts()
        .map(|s| IndexEntry {
            hub_in: s.hub_in.to_string(),
            hub_out: s.hub_out.to_string(),
            edges: s
                .leg
                .edges()
                .iter()
                .map(|e| (e.pool_id.to_string(), e.token_in.to_string(), e.token_out.to_string()))
                .collect(),
        })
        .collect();
    let file = IndexFile {
        version: INDEX_VERSION,
        snapshot_hash: snapshot_hash.to_string(),
        hubs: hubs.ids().to_vec(),
        max_intermediates: index.max_intermediates,
        width: index.width,
        shortcuts,
    };
    canonical(&serde_json::to_value(file).expect("index serialises"))
}

/// Rebuilds a hub set and index against `g`, refusing files made for another
/// snapshot.
pub fn index_from_json(text: &str, snapshot_hash: &str, g: &SwapGraph) -> Result<(HubSet, ShortcutIndex), IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: IndexFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        IoError::Parse { line: inner.line(), column: inner.column(), field, message: inner.to_string() }
    })?;
    if file.version != INDEX_VERSION {
        return Err(IoError::VersionUnsupported { found: file.version, expected: INDEX_VERSION });
    }
    if file.snapshot_hash != snapshot_hash {
        return Err(IoError::StaleIndex { expected: file.snapshot_hash, found: snapshot_hash.to_string() });
    }
    let mut entries: BTreeMap<(Arc<str>, Arc<str>), Vec<Shortcut>> = BTreeMap::new();
    for (i, s) in file.shortcuts.iter().enumerate() {
        let mut edges = Vec::with_capacity(s.edges.len());
        for (pool, a, b) in &s.edges {
            let e = g
                .find_edge(pool, a, b)
                .ok_or_else(|| IoError::field(format!("shortcuts[{i}].edges"), format!("no edge {pool} {a} -> {b}")))?;
            edges.push(e.clone());
        }
        if edges.is_empty() || *edges[0].token_in != *s.hub_in || *edges[edges.len() - 1].token_out != *s.hub_out {
            return Err(IoError::field(format!("shortcuts[{i}]"), "edges do not join the stated hubs"));
        }
        if edges.windows(2).any(|w| w[0].token_out != w[1].token_in) {
            return Err(IoError::field(format!("shortcuts[{i}].edges"), "edges do not chain"));
        }
        let leg = Leg::chain(edges);
        let spot_rate = leg.spot_price();
        let key = (leg.token_in().clone(), leg.token_out().clone());
        entries.entry(key).or_default().push(Shortcut {
            hub_in: leg.token_in().clone(),
            hub_out: leg.token_out().clone(),
            leg,
            spot_rate,
        });
    }
    Ok((HubSet::new(file.hubs), ShortcutIndex::from_entries(file.max_intermediates, file.width, entries)))
}

/// Result document for a solution.
pub fn solution_to_json(sol: &RouteSolution, audit: Option<&AuditReport>) -> Value {
    let shares = crate::allocation::path_shares(sol.amount_in, &sol.allocation.path_weights);
    let paths: Vec<Value> = sol
        .paths
        .iter()
        .zip(&sol.allocation.path_weights)
        .zip(shares)
        .map(|((p, w), share)| {
            let mut amount = share;
            let hops: Vec<Value> = p
                .hops()
                .iter()
                .map(|h| {
                    let split = h.split(amount);
                    let legs: Vec<Value> = h
                        .legs()
                        .iter()
                        .zip(h.weights())
                        .zip(&split)
                        .map(|((l, w), a)| json!({ "pools": l.pools().map(|p| p.to_string()).collect::<Vec<_>>(), "weight": w, "amount_in": a }))
                        .collect();
                    amount = h.output(amount).unwrap_or_default();
                    json!({ "token_in": h.token_in().to_string(), "token_out": h.token_out().to_string(), "legs": legs })
                })
                .collect();
            json!({
                "weight": w,
                "amount_in": share,
                "amount_out": amount,
                "tokens": p.tokens().iter().map(|t| t.to_string()).collect::<Vec<_>>(),
                "hops": hops,
            })
        })
        .collect();
    let mut doc = json!({
        "algorithm": sol.algorithm,
        "source": sol.source,
        "target": sol.target,
        "amount_in": sol.amount_in,
        "total_output": sol.total_output,
        "tau": sol.tau,
        "disjoint": sol.disjoint,
        "paths": paths,
        "execution_plan": sol.execution_plan,
        "stats": sol.stats,
    });
    if let Some(trace) = &sol.trace {
        doc["termination"] = json!(trace.termination);
        doc["iterations"] = json!(trace.iterations());
    }
    if let Some(a) = audit {
        doc["audit"] = json!(a);
    }
    doc
}
