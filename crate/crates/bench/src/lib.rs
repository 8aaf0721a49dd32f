//! Fixtures shared by the benchmarks under `benches/`.

use ltscm_core::domains::{gen_stp, StpDomain, StpProblem};
use ltscm_core::{lts_search, run_bootstrap, BootstrapConfig, OptimConfig, ParamStore, SearchResult, Trajectory};

pub struct StpFixture {
    pub domain: StpDomain,
    /// Parameters after a short bootstrap run.
    pub store: ParamStore,
    /// Solution trajectories of the training set under `store`.
    pub trajectories: Vec<Trajectory>,
    pub test: Vec<StpProblem>,
}

/// A trained 8-puzzle policy with its solutions and unseen test puzzles.
pub fn stp_fixture(train: usize, test: usize) -> StpFixture {
    let domain = StpDomain::new(3).expect("valid size");
    let problems = gen_stp(train, 3, 1).expect("valid size");
    let boot = BootstrapConfig { initial_budget: 7000, ..BootstrapConfig::default() };
    let store = ParamStore::with_defaults(4).expect("valid action count");
    let out = run_bootstrap(&problems, &domain, store, &boot, &OptimConfig::default()).expect("bootstrap runs");
    let trajectories = problems
        .iter()
        .enumerate()
        .filter_map(|(i, p)| match lts_search(&domain, p, 1_000_000, &out.store, true).ok()? {
            SearchResult::Solved { mut trajectory, .. } if trajectory.depth() > 0 => {
                trajectory.problem_id = i as u64;
                Some(trajectory)
            }
            _ => None,
        })
        .collect();
    StpFixture { domain, store: out.store, trajectories, test: gen_stp(test, 3, 2).expect("valid size") }
}
