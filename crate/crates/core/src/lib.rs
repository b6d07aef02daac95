//! Multi-path routing over constant-function market maker pools.
//!
//! Given a pool snapshot, a source token, a target token and an input
//! amount, the router finds a set of pool-disjoint paths and splits the input
//! across them (and across parallel pools within each hop) so that marginal
//! prices equalise. All swap simulation is exact 256-bit integer arithmetic.

pub mod allocation;
pub mod amount;
pub mod baselines;
pub mod bench;
pub mod cfmm;
pub mod discovery;
pub mod engine;
pub mod error;
pub mod graph;
pub mod io;
pub mod preprocess;
pub mod synth;

pub use allocation::{asgm, asgm_from, objective, Allocation, AsgmParams, ConvergenceTrace, Hop, MultiEdgePath, Termination};
pub use amount::Amount;
pub use baselines::{best_single_path, grid_oracle, prime_flow, GridSpec};
pub use cfmm::{Segment, SwapFunction};
pub use discovery::{find_path, SearchGraph, SinglePath};
pub use engine::{merge_and_expand, prime, verify_solution, AuditReport, PlanStep, RouteQuery, RouteSolution, Router};
pub use error::{AllocationError, GraphError, MathError, RouteError, SwapError};
pub use graph::{Edge, EdgeRef, Leg, Pool, PoolKind, SwapGraph, Token};
pub use io::{load_snapshot, save_snapshot, IoError, Snapshot};
pub use preprocess::{HubConfig, HubMetric, HubSet, ShortcutConfig, ShortcutIndex};
pub use synth::{generate_synthetic, SynthParams};
