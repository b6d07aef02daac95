//! Query-independent preprocessing: hub selection, core-graph induction and
//! the shortcut index.
//!
//! A shortcut is a composite edge `h_i → v_1 → … → v_n → h_j` whose
//! endpoints are hubs and whose intermediates are not. Routing searches the
//! small core graph (hubs plus the query endpoints) and reaches liquidity in
//! the rest of the graph only through these pre-ranked shortcuts.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{EdgeRef, Leg, SwapGraph};

pub const DEFAULT_MAX_INTERMEDIATES: usize = 2;
pub const DEFAULT_SHORTCUT_WIDTH: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum HubMetric {
    /// Number of distinct pools touching the token.
    Degree,
    /// Pool value, in units of `numeraire`, summed over incident pools.
    ReserveMass { numeraire: String },
}

/// How hubs are chosen for a router.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HubConfig {
    Top { k: usize, metric: HubMetric },
    Explicit(Vec<String>),
}

impl Default for HubConfig {
    fn default() -> Self {
        HubConfig::Top { k: 50, metric: HubMetric::Degree }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HubSet {
    hubs: Vec<String>,
    members: HashSet<String>,
}

impl HubSet {
    pub fn new(hubs: Vec<String>) -> Self {
        let members = hubs.iter().cloned().collect();
        HubSet { hubs, members }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.members.contains(id)
    }

    pub fn ids(&self) -> &[String] {
        &self.hubs
    }

    pub fn len(&self) -> usize {
        self.hubs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hubs.is_empty()
    }

    pub fn as_set(&self) -> &HashSet<String> {
        &self.members
    }
}

/// Ranks tokens by `metric` and keeps the top `k` (clamped to `|V|`). Ties go
/// to the lexicographically smaller id.
pub fn select_hubs(g: &SwapGraph, k: usize, metric: &HubMetric) -> HubSet {
    let scores: Vec<f64> = match metric {
        HubMetric::Degree => (0..g.token_count()).map(|u| g.pool_degree(u) as f64).collect(),
        HubMetric::ReserveMass { numeraire } => reserve_mass(g, numeraire),
    };
    let mut order: Vec<usize> = (0..g.token_count()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| g.token(a).id.cmp(&g.token(b).id))
    });
    HubSet::new(order.into_iter().take(k.min(g.token_count())).map(|u| g.token(u).id.clone()).collect())
}

pub fn resolve_hubs(g: &SwapGraph, config: &HubConfig) -> HubSet {
    match config {
        HubConfig::Top { k, metric } => select_hubs(g, *k, metric),
        HubConfig::Explicit(list) => HubSet::new(list.iter().filter(|id| g.contains_token(id)).cloned().collect()),
    }
}

/// Values every pool in numeraire units, pricing each token by the spot rate
/// of its deepest direct numeraire pool, then sums pool values per token.
fn reserve_mass(g: &SwapGraph, numeraire: &str) -> Vec<f64> {
    let mut price: HashMap<&str, (f64, f64)> = HashMap::new(); // token -> (depth, price)
    if let Some(n) = g.token_index(numeraire) {
        for (_, e) in g.out_edges(n) {
            // e: numeraire -> token; reserve_in is numeraire depth.
            let depth = e.func.max_output().to_f64();
            let token_to_num = 1.0 / e.func.first_segment_spot();
            let entry = price.entry(&e.token_out).or_insert((0.0, 0.0));
            if depth > entry.0 {
                *entry = (depth, token_to_num);
            }
        }
    }
    let price_of = |t: &str| -> f64 {
        if t == numeraire {
            1.0
        } else {
            price.get(t).map_or(0.0, |p| p.1)
        }
    };
    let mut pool_value: HashMap<&str, f64> = HashMap::new();
    for pool in g.pools() {
        let value = match &pool.kind {
            crate::graph::PoolKind::ConstantProduct { reserves } => pool
                .tokens
                .iter()
                .zip(reserves)
                .map(|(t, r)| r.to_f64() * price_of(t))
                .sum(),
            crate::graph::PoolKind::PiecewiseLiquidity { curves } => curves
                .iter()
                .map(|c| {
                    let out: f64 = c.segments.iter().map(|s| s.virtual_reserve_out.to_f64()).sum();
                    out * price_of(&c.token_out) / (pool.tokens.len() - 1) as f64
                })
                .sum(),
        };
        pool_value.insert(&pool.id, value);
    }
    (0..g.token_count())
        .map(|u| {
            let pools: HashSet<&str> = g.out_edges(u).map(|(_, e)| &*e.pool_id).collect();
            pools.iter().map(|p| pool_value.get(p).copied().unwrap_or(0.0)).sum()
        })
        .collect()
}

/// The subgraph induced by the hubs together with the query endpoints.
pub fn induce_core_graph(g: &SwapGraph, hubs: &HubSet, source: &str, target: &str) -> SwapGraph {
    g.induced(|u| {
        let id = &g.token(u).id;
        hubs.contains(id) || id == source || id == target
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shortcut {
    pub hub_in: Arc<str>,
    pub hub_out: Arc<str>,
    pub leg: Leg,
    /// Product of the member edges' spot prices.
    pub spot_rate: f64,
}

impl Shortcut {
    /// Tokens strictly between the two hubs.
    pub fn intermediates(&self) -> impl Iterator<Item = &Arc<str>> {
        self.leg.edges()[1..].iter().map(|e| &e.token_in)
    }

    fn ranks_before(&self, other: &Shortcut) -> bool {
        match self.spot_rate.partial_cmp(&other.spot_rate) {
            Some(std::cmp::Ordering::Greater) => true,
            Some(std::cmp::Ordering::Less) => false,
            _ => self.leg.key() < other.leg.key(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortcutConfig {
    pub enabled: bool,
    pub max_intermediates: usize,
    /// Shortcuts kept per ordered hub pair.
    pub width: usize,
}

impl Default for ShortcutConfig {
    fn default() -> Self {
        ShortcutConfig {
            enabled: true,
            max_intermediates: DEFAULT_MAX_INTERMEDIATES,
            width: DEFAULT_SHORTCUT_WIDTH,
        }
    }
}

/// Top shortcuts per ordered hub pair, best spot rate first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShortcutIndex {
    pub max_intermediates: usize,
    pub width: usize,
    entries: BTreeMap<(Arc<str>, Arc<str>), Vec<Shortcut>>,
}

impl ShortcutIndex {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn get(&self, hub_in: &str, hub_out: &str) -> &[Shortcut] {
        self.entries
            .get(&(Arc::from(hub_in), Arc::from(hub_out)))
            .map_or(&[], Vec::as_slice)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&(Arc<str>, Arc<str>), &Vec<Shortcut>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn shortcuts(&self) -> impl Iterator<Item = &Shortcut> {
        self.entries.values().flatten()
    }

    pub(crate) fn from_entries(
        max_intermediates: usize,
        width: usize,
        entries: BTreeMap<(Arc<str>, Arc<str>), Vec<Shortcut>>,
    ) -> Self {
        ShortcutIndex { max_intermediates, width, entries }
    }
}

fn insert_ranked(list: &mut Vec<Shortcut>, candidate: Shortcut, width: usize) {
    let pos = list.iter().position(|s| candidate.ranks_before(s)).unwrap_or(list.len());
    if pos < width {
        list.insert(pos, candidate);
        list.truncate(width);
    }
}

/// Depth-bounded enumeration from every hub through non-hub intermediates
/// (at most `max_intermediates` of them, pools and intermediates distinct),
/// keeping the `width` best spot rates per hub pair.
pub fn build_shortcut_index(g: &SwapGraph, hubs: &HubSet, max_intermediates: usize, width: usize) -> ShortcutIndex {
    let is_hub: Vec<bool> = (0..g.token_count()).map(|u| hubs.contains(&g.token(u).id)).collect();
    let starts: Vec<usize> = (0..g.token_count()).filter(|&u| is_hub[u]).collect();

    let per_hub: Vec<BTreeMap<(Arc<str>, Arc<str>), Vec<Shortcut>>> = starts
        .par_iter()
        .map(|&h| {
            let mut found: BTreeMap<(Arc<str>, Arc<str>), Vec<Shortcut>> = BTreeMap::new();
            let mut stack: Vec<EdgeRef> = Vec::new();
            let mut visited: Vec<usize> = vec![h];
            extend(g, &is_hub, h, h, max_intermediates, width, &mut stack, &mut visited, &mut found);
            found
        })
        .collect();

    let mut entries = BTreeMap::new();
    for map in per_hub {
        entries.extend(map);
    }
    for list in entries.values() {
        for s in list {
            let s: &Shortcut = s;
            assert!(
                s.intermediates().all(|v| !hubs.contains(v)),
                "shortcut intermediates must be non-hubs"
            );
        }
    }
    ShortcutIndex { max_intermediates, width, entries }
}

#[allow(clippy::too_many_arguments)]
fn extend(
    g: &SwapGraph,
    is_hub: &[bool],
    start: usize,
    u: usize,
    max_intermediates: usize,
    width: usize,
    stack: &mut Vec<EdgeRef>,
    visited: &mut Vec<usize>,
    found: &mut BTreeMap<(Arc<str>, Arc<str>), Vec<Shortcut>>,
) {
    for (v, e) in g.out_edges(u) {
        if stack.iter().any(|s| s.pool_id == e.pool_id) {
            continue;
        }
        if is_hub[v] {
            // A shortcut needs at least one intermediate and distinct hubs.
            if stack.is_empty() || v == start {
                continue;
            }
            stack.push(e.clone());
            let leg = Leg::chain(stack.clone());
            let spot_rate = leg.spot_price();
            let key = (g.token_name(start).clone(), g.token_name(v).clone());
            let candidate = Shortcut { hub_in: key.0.clone(), hub_out: key.1.clone(), leg, spot_rate };
            insert_ranked(found.entry(key).or_default(), candidate, width);
            stack.pop();
        } else if stack.len() < max_intermediates && !visited.contains(&v) {
            stack.push(e.clone());
            visited.push(v);
            extend(g, is_hub, start, v, max_intermediates, width, stack, visited, found);
            visited.pop();
            stack.pop();
        }
    }
}
