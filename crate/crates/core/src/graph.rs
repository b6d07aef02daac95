//! The directed token multigraph.
//!
//! Every pool over `n` tokens contributes `n·(n−1)` directed edges, one per
//! ordered token pair, each carrying the swap function for that direction.
//! Adjacency lists are ordered by pool id so that searches are reproducible.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::cfmm::{Segment, SwapFunction};
use crate::error::GraphError;

pub const MAX_DECIMALS: u8 = 30;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: String,
    pub symbol: String,
    pub decimals: u8,
}

/// Liquidity curve for one direction of a concentrated-liquidity pool.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedCurve {
    pub token_in: String,
    pub token_out: String,
    pub segments: Vec<Segment>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoolKind {
    /// One reserve per token, in the order of `Pool::tokens`.
    ConstantProduct { reserves: Vec<Amount> },
    /// An explicit curve for every ordered token pair.
    PiecewiseLiquidity { curves: Vec<DirectedCurve> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub id: String,
    pub tokens: Vec<String>,
    pub fee_bps: u16,
    #[serde(flatten)]
    pub kind: PoolKind,
}

impl Pool {
    pub fn constant_product(id: &str, tokens: &[&str], reserves: &[Amount], fee_bps: u16) -> Pool {
        Pool {
            id: id.to_string(),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            fee_bps,
            kind: PoolKind::ConstantProduct { reserves: reserves.to_vec() },
        }
    }

    /// Two-token constant-product pool.
    pub fn pair(id: &str, a: &str, b: &str, reserve_a: u128, reserve_b: u128, fee_bps: u16) -> Pool {
        Self::constant_product(id, &[a, b], &[reserve_a.into(), reserve_b.into()], fee_bps)
    }

    /// Swap function for the `in_pos → out_pos` direction.
    pub fn direction(&self, in_pos: usize, out_pos: usize) -> Result<SwapFunction, GraphError> {
        let bad = |msg: String| GraphError::MalformedSnapshot(format!("pool {}: {msg}", self.id));
        match &self.kind {
            PoolKind::ConstantProduct { reserves } => {
                SwapFunction::constant_product(reserves[in_pos], reserves[out_pos], self.fee_bps)
                    .map_err(|e| bad(e.to_string()))
            }
            PoolKind::PiecewiseLiquidity { curves } => {
                let (a, b) = (&self.tokens[in_pos], &self.tokens[out_pos]);
                let curve = curves
                    .iter()
                    .find(|c| &c.token_in == a && &c.token_out == b)
                    .ok_or_else(|| bad(format!("no curve for {a} -> {b}")))?;
                SwapFunction::piecewise(curve.segments.clone(), self.fee_bps).map_err(|e| bad(e.to_string()))
            }
        }
    }

    fn validate(&self) -> Result<(), GraphError> {
        let bad = |msg: String| GraphError::MalformedSnapshot(format!("pool {}: {msg}", self.id));
        if self.tokens.len() < 2 {
            return Err(bad("needs at least two tokens".into()));
        }
        let distinct: HashSet<&String> = self.tokens.iter().collect();
        if distinct.len() != self.tokens.len() {
            return Err(bad("repeated token".into()));
        }
        match &self.kind {
            PoolKind::ConstantProduct { reserves } => {
                if reserves.len() != self.tokens.len() {
                    return Err(bad(format!(
                        "{} reserves for {} tokens",
                        reserves.len(),
                        self.tokens.len()
                    )));
                }
                if reserves.iter().any(|r| r.is_zero()) {
                    return Err(bad("zero reserve".into()));
                }
            }
            PoolKind::PiecewiseLiquidity { curves } => {
                let n = self.tokens.len();
                if curves.len() != n * (n - 1) {
                    return Err(bad(format!("expected {} directed curves, got {}", n * (n - 1), curves.len())));
                }
                let mut seen = HashSet::new();
                for c in curves {
                    if !self.tokens.contains(&c.token_in) || !self.tokens.contains(&c.token_out) || c.token_in == c.token_out {
                        return Err(bad(format!("curve {} -> {} is not a pool direction", c.token_in, c.token_out)));
                    }
                    if !seen.insert((&c.token_in, &c.token_out)) {
                        return Err(bad(format!("duplicate curve {} -> {}", c.token_in, c.token_out)));
                    }
                }
            }
        }
        if u64::from(self.fee_bps) >= crate::cfmm::FEE_DENOMINATOR {
            return Err(bad("fee must be below 10000 bps".into()));
        }
        Ok(())
    }
}

/// A directed swap leg of a pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub pool_id: Arc<str>,
    pub token_in: Arc<str>,
    pub token_out: Arc<str>,
    /// Positions of the two tokens inside the pool's token list.
    pub in_pos: usize,
    pub out_pos: usize,
    pub func: SwapFunction,
}

pub type EdgeRef = Arc<Edge>;

#[derive(Clone, Debug)]
pub struct SwapGraph {
    tokens: Vec<Token>,
    index: HashMap<Arc<str>, usize>,
    names: Vec<Arc<str>>,
    pools: BTreeMap<String, Arc<Pool>>,
    edges: Vec<EdgeRef>,
    /// Outgoing edge indices per token, ordered by (pool id, token_out).
    out: Vec<Vec<(usize, usize)>>,
}

impl SwapGraph {
    /// Expands every pool into its directed edges.
    pub fn build(tokens: Vec<Token>, pools: Vec<Pool>) -> Result<SwapGraph, GraphError> {
        let mut ids = HashSet::new();
        for t in &tokens {
            if !ids.insert(t.id.as_str()) {
                return Err(GraphError::MalformedSnapshot(format!("duplicate token id {}", t.id)));
            }
            if t.decimals > MAX_DECIMALS {
                return Err(GraphError::MalformedSnapshot(format!("token {} has {} decimals", t.id, t.decimals)));
            }
        }
        let names: Vec<Arc<str>> = tokens.iter().map(|t| Arc::from(t.id.as_str())).collect();
        let mut registry = BTreeMap::new();
        let mut edges = Vec::new();
        for pool in pools {
            pool.validate()?;
            for t in &pool.tokens {
                if !ids.contains(t.as_str()) {
                    return Err(GraphError::MalformedSnapshot(format!(
                        "pool {} references unknown token {t}",
                        pool.id
                    )));
                }
            }
            if registry.contains_key(&pool.id) {
                return Err(GraphError::MalformedSnapshot(format!("duplicate pool id {}", pool.id)));
            }
            let pool_id: Arc<str> = Arc::from(pool.id.as_str());
            for i in 0..pool.tokens.len() {
                for j in 0..pool.tokens.len() {
                    if i == j {
                        continue;
                    }
                    edges.push(Arc::new(Edge {
                        pool_id: pool_id.clone(),
                        token_in: Arc::from(pool.tokens[i].as_str()),
                        token_out: Arc::from(pool.tokens[j].as_str()),
                        in_pos: i,
                        out_pos: j,
                        func: pool.direction(i, j)?,
                    }));
                }
            }
            registry.insert(pool.id.clone(), Arc::new(pool));
        }
        Ok(Self::assemble(tokens, names, registry, edges))
    }

    fn assemble(
        tokens: Vec<Token>,
        names: Vec<Arc<str>>,
        pools: BTreeMap<String, Arc<Pool>>,
        edges: Vec<EdgeRef>,
    ) -> SwapGraph {
        let index: HashMap<Arc<str>, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new(); tokens.len()];
        for (e_idx, e) in edges.iter().enumerate() {
            let u = index[&e.token_in];
            let v = index[&e.token_out];
            out[u].push((v, e_idx));
        }
        for list in &mut out {
            list.sort_by(|a, b| {
                let (ea, eb) = (&edges[a.1], &edges[b.1]);
                ea.pool_id.cmp(&eb.pool_id).then_with(|| ea.token_out.cmp(&eb.token_out))
            });
        }
        SwapGraph { tokens, index, names, pools, edges, out }
    }

    /// The subgraph induced by the tokens for which `keep` holds.
    pub fn induced<F: Fn(usize) -> bool>(&self, keep: F) -> SwapGraph {
        let kept: Vec<usize> = (0..self.tokens.len()).filter(|&i| keep(i)).collect();
        let keep_set: HashSet<usize> = kept.iter().copied().collect();
        let edges: Vec<EdgeRef> = self
            .edges
            .iter()
            .filter(|e| keep_set.contains(&self.index[&e.token_in]) && keep_set.contains(&self.index[&e.token_out]))
            .cloned()
            .collect();
        let used: BTreeSet<&str> = edges.iter().map(|e| &*e.pool_id).collect();
        let pools = self
            .pools
            .iter()
            .filter(|(id, _)| used.contains(id.as_str()))
            .map(|(id, p)| (id.clone(), p.clone()))
            .collect();
        let tokens = kept.iter().map(|&i| self.tokens[i].clone()).collect();
        let names = kept.iter().map(|&i| self.names[i].clone()).collect();
        Self::assemble(tokens, names, pools, edges)
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn pool_count(&self) -> usize {
        self.pools.len()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, idx: usize) -> &Token {
        &self.tokens[idx]
    }

    pub fn token_name(&self, idx: usize) -> &Arc<str> {
        &self.names[idx]
    }

    pub fn token_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require_token(&self, id: &str) -> Result<usize, GraphError> {
        self.token_index(id).ok_or_else(|| GraphError::UnknownToken(id.to_string()))
    }

    pub fn contains_token(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn pools(&self) -> impl Iterator<Item = &Arc<Pool>> {
        self.pools.values()
    }

    pub fn pool(&self, id: &str) -> Option<&Arc<Pool>> {
        self.pools.get(id)
    }

    pub fn edges(&self) -> &[EdgeRef] {
        &self.edges
    }

    /// Outgoing `(head index, edge)` pairs of token `u`, in pool-id order.
    pub fn out_edges(&self, u: usize) -> impl Iterator<Item = (usize, &EdgeRef)> + '_ {
        self.out[u].iter().map(move |&(v, e)| (v, &self.edges[e]))
    }

    pub fn out_degree(&self, u: usize) -> usize {
        self.out[u].len()
    }

    /// All directed edges `u → v`, ordered by pool id.
    pub fn edges_between(&self, u: &str, v: &str) -> Vec<EdgeRef> {
        let (Some(ui), Some(vi)) = (self.token_index(u), self.token_index(v)) else {
            return Vec::new();
        };
        self.out[ui].iter().filter(|(h, _)| *h == vi).map(|&(_, e)| self.edges[e].clone()).collect()
    }

    pub fn find_edge(&self, pool_id: &str, token_in: &str, token_out: &str) -> Option<&EdgeRef> {
        let u = self.token_index(token_in)?;
        self.out[u]
            .iter()
            .map(|&(_, e)| &self.edges[e])
            .find(|e| &*e.pool_id == pool_id && &*e.token_out == token_out)
    }

    /// Distinct neighbour tokens reachable through any pool of `u`.
    pub fn neighbours(&self, u: usize) -> BTreeSet<usize> {
        self.out[u].iter().map(|&(v, _)| v).collect()
    }

    /// Number of distinct pools touching token `u`.
    pub fn pool_degree(&self, u: usize) -> usize {
        let pools: HashSet<&str> = self.out_edges(u).map(|(_, e)| &*e.pool_id).collect();
        pools.len()
    }

    /// Removes tokens whose pools all touch exactly one other token, repeated
    /// until nothing changes. Protected tokens always stay.
    pub fn prune_leaf_tokens(&self, protected: &HashSet<String>) -> SwapGraph {
        let n = self.tokens.len();
        let mut alive = vec![true; n];
        let mut neighbours: Vec<BTreeSet<usize>> = (0..n).map(|u| self.neighbours(u)).collect();
        loop {
            let leaves: Vec<usize> = (0..n)
                .filter(|&u| alive[u] && neighbours[u].len() == 1 && !protected.contains(&self.tokens[u].id))
                .collect();
            if leaves.is_empty() {
                break;
            }
            for &u in &leaves {
                alive[u] = false;
            }
            for &u in &leaves {
                for v in std::mem::take(&mut neighbours[u]) {
                    neighbours[v].remove(&u);
                }
            }
        }
        self.induced(|u| alive[u])
    }
}

/// A composite edge: one or more real edges traversed back to back, treated
/// as a single hop. Plain pool edges are legs of length one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Leg {
    edges: Vec<EdgeRef>,
}

impl Leg {
    pub fn single(edge: EdgeRef) -> Leg {
        Leg { edges: vec![edge] }
    }

    /// Panics unless the edges chain head to tail.
    pub fn chain(edges: Vec<EdgeRef>) -> Leg {
        assert!(!edges.is_empty(), "empty leg");
        for w in edges.windows(2) {
            assert_eq!(w[0].token_out, w[1].token_in, "leg edges must chain");
        }
        Leg { edges }
    }

    pub fn edges(&self) -> &[EdgeRef] {
        &self.edges
    }

    pub fn token_in(&self) -> &Arc<str> {
        &self.edges[0].token_in
    }

    pub fn token_out(&self) -> &Arc<str> {
        &self.edges[self.edges.len() - 1].token_out
    }

    pub fn pools(&self) -> impl Iterator<Item = &Arc<str>> {
        self.edges.iter().map(|e| &e.pool_id)
    }

    pub fn is_composite(&self) -> bool {
        self.edges.len() > 1
    }

    pub fn swap_out(&self, x: Amount) -> Result<Amount, crate::error::SwapError> {
        let mut amount = x;
        for e in &self.edges {
            amount = e.func.swap_out(amount)?;
        }
        Ok(amount)
    }

    /// Chain-rule derivative at input `x`.
    pub fn marginal_price(&self, x: Amount) -> Result<f64, crate::error::SwapError> {
        let mut amount = x;
        let mut derivative = 1.0;
        for e in &self.edges {
            derivative *= e.func.marginal_price(amount)?;
            amount = e.func.swap_out(amount)?;
        }
        Ok(derivative)
    }

    pub fn spot_price(&self) -> f64 {
        self.edges.iter().map(|e| e.func.spot_price()).product()
    }

    /// Pool ids joined with `>`; a stable ordering key.
    pub fn key(&self) -> String {
        self.edges.iter().map(|e| &*e.pool_id).collect::<Vec<_>>().join(">")
    }
}
