//! Levin tree search guided by a product-of-experts policy over binary
//! context features, with a convex training loss and a bootstrap loop that
//! alternates search and parameter fitting.

pub mod bootstrap;
pub mod domains;
pub mod error;
pub mod loss;
pub mod optimizer;
pub mod oracles;
pub mod policy;
pub mod search;

#[cfg(test)]
mod proptests;

pub use bootstrap::{run_bootstrap, BootstrapConfig, BootstrapOutcome, IterationStats};
pub use error::{Error, Result};
pub use loss::{Trajectory, TrajectoryStep};
pub use optimizer::{ftl_update, OptimConfig, OptimReport, StopReason};
pub use policy::{ActionSet, ContextKey, ParamStore};
pub use search::{lts_search, DomainAdapter, SearchResult};
