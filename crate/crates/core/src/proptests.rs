//! Randomized invariants spanning several modules.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bootstrap::{run_bootstrap, BootstrapConfig};
use crate::domains::{gen_cube_scrambles, gen_sokoban, gen_stp, CubeDomain, SokobanDomain, StpDomain, StpProblem};
use crate::loss::{log_sum_exp, log_total_loss, Trajectory};
use crate::optimizer::{ftl_update, regularizer, OptimConfig};
use crate::oracles::{count_cheaper_nodes, SyntheticTree, TreeDomain};
use crate::policy::{policy_prob, ParamBlock, ParamStore};
use crate::search::{lts_search, replay_reaches_goal, DomainAdapter, SearchResult};

/// Random walk of `len` valid moves, returning every visited state with the
/// action that reached it.
fn walk<D: DomainAdapter>(domain: &D, p: &D::Problem, rng: &mut ChaCha8Rng, len: usize) -> Vec<(D::State, Option<u8>)> {
    let mut s = domain.initial_state(p);
    let mut out = vec![(s.clone(), None)];
    for _ in 0..len {
        let valid: Vec<u8> = domain.valid_actions(p, &s).iter().collect();
        if valid.is_empty() {
            break;
        }
        let a = valid[rng.gen_range(0..valid.len())];
        s = domain.transition(p, &s, a);
        out.push((s.clone(), Some(a)));
    }
    out
}

/// One context per mutex set on every visited state, and state keys that
/// agree with `same`.
fn check_walk<D: DomainAdapter>(
    domain: &D,
    p: &D::Problem,
    rng: &mut ChaCha8Rng,
    len: usize,
    same: impl Fn(&D::State, &D::State) -> bool,
) -> Result<(), TestCaseError> {
    let states = walk(domain, p, rng, len);
    let m = domain.num_mutex_sets();
    let mut out = Vec::new();
    for (s, last) in &states {
        out.clear();
        domain.active_contexts(p, s, *last, &mut out);
        let mut ids: Vec<u32> = out.iter().map(|k| k.mutex_set()).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..m as u32).collect::<Vec<_>>());
    }
    for (a, _) in &states {
        for (b, _) in states.iter().take(12) {
            let keys_equal = domain.state_key(p, a) == domain.state_key(p, b);
            prop_assert_eq!(keys_equal, same(a, b));
        }
    }
    Ok(())
}

/// `ln d - ln pi` of a found solution under the search-time policy.
fn solution_log_cost(t: &Trajectory, store: &ParamStore) -> f64 {
    let log_pi: f64 = t
        .steps
        .iter()
        .map(|s| policy_prob(&s.active, s.valid, store, true).unwrap()[s.chosen as usize].ln())
        .sum();
    (t.depth() as f64).ln() - log_pi
}

/// Random weights for the contexts seen along a walk. Without
/// `path_contexts` the last-action contexts stay uniform, so the policy is a
/// function of the state alone.
fn random_store(rng: &mut ChaCha8Rng, domain: &StpDomain, p: &StpProblem, path_contexts: bool) -> ParamStore {
    let mut store = ParamStore::with_defaults(4).unwrap();
    let lo = store.min_weight();
    let last_action_set = domain.num_mutex_sets() as u32 - 1;
    let mut keys = Vec::new();
    for (s, last) in walk(domain, p, rng, 30) {
        domain.active_contexts(p, &s, last, &mut keys);
    }
    for k in keys.into_iter().filter(|k| path_contexts || k.mutex_set() != last_action_set) {
        let w = (0..4).map(|_| rng.gen_range(lo..=0.0)).collect();
        store.set_block(k, ParamBlock::new(w, store.eps_low()).unwrap()).unwrap();
    }
    store
}

fn scrambled_8_puzzle(rng: &mut ChaCha8Rng, moves: usize) -> StpProblem {
    let d = StpDomain::new(3).unwrap();
    let solved = StpProblem::solved(3);
    let (state, _) = walk(&d, &solved, rng, moves).pop().unwrap();
    StpProblem::new(3, state.cells).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn search_on_trees_stays_within_cost_bound(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = SyntheticTree::random(&mut rng, 6, 4, 400, true);
        let domain = TreeDomain::new(&tree);
        let store = domain.policy().unwrap();
        let target = rng.gen_range(0..tree.len() as u32);
        let cheaper = count_cheaper_nodes(&tree, target).unwrap() as u64;
        match lts_search(&domain, &target, tree.len() as u64 + 1, &store, false).unwrap() {
            SearchResult::Solved { expansions, trajectory, .. } => {
                prop_assert!(expansions <= cheaper, "{expansions} > {cheaper}");
                prop_assert!(expansions as f64 <= 1.0 + tree.cost(target) + 1e-9);
                prop_assert!(replay_reaches_goal(&domain, &target, &trajectory.actions()));
            }
            other => prop_assert!(false, "target not found: {other:?}"),
        }
    }

    #[test]
    fn pruning_never_returns_a_costlier_solution_under_state_policies(seed in any::<u64>(), moves in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let domain = StpDomain::new(3).unwrap();
        let p = scrambled_8_puzzle(&mut rng, moves);
        let store = random_store(&mut rng, &domain, &p, false);
        let pruned = lts_search(&domain, &p, 200_000, &store, true).unwrap();
        let full = lts_search(&domain, &p, 200_000, &store, false).unwrap();
        if let (SearchResult::Solved { trajectory: a, .. }, SearchResult::Solved { trajectory: b, .. }) = (&pruned, &full) {
            prop_assert!(solution_log_cost(a, &store) <= solution_log_cost(b, &store) + 1e-9);
            prop_assert!(replay_reaches_goal(&domain, &p, &a.actions()));
        } else {
            prop_assert!(pruned.is_solved(), "pruned search failed where the full one did not: {full:?}");
        }
        // identical inputs, identical result
        prop_assert_eq!(&pruned, &lts_search(&domain, &p, 200_000, &store, true).unwrap());
    }

    #[test]
    fn stp_contexts_and_keys(seed in any::<u64>(), size in 2usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let domain = StpDomain::new(size).unwrap();
        let p = gen_stp(1, size, seed).unwrap().pop().unwrap();
        check_walk(&domain, &p, &mut rng, 40, |a, b| a == b)?;
    }

    #[test]
    fn sokoban_contexts_and_keys(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let domain = SokobanDomain::new();
        let level = gen_sokoban(1, 2, 20, seed).unwrap().pop().unwrap();
        check_walk(&domain, &level, &mut rng, 40, |a, b| a.player == b.player && a.boxes == b.boxes)?;
    }

    #[test]
    fn cube_contexts_keys_and_inverse(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let domain = CubeDomain::new();
        let p = gen_cube_scrambles(1, 0, 20, seed).unwrap().pop().unwrap();
        check_walk(&domain, &p, &mut rng, 30, |a, b| a == b)?;
        let mut s = domain.initial_state(&p);
        for a in p.inverse_scramble() {
            s = domain.transition(&p, &s, a);
        }
        prop_assert!(domain.is_goal(&p, &s));
    }

    #[test]
    fn optimizer_stays_in_box_never_worsens_and_repeats(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, trajs) = crate::loss::tests::random_instance(&mut rng, n);
        let cfg = OptimConfig::default();
        let mut start = store.clone();
        for t in &trajs {
            for s in &t.steps {
                for &k in &s.active {
                    start.materialize(k);
                }
            }
        }
        let (r, _) = regularizer(&start, cfg.reg_coeff);
        let before = log_sum_exp(&[log_total_loss(&trajs, &start).unwrap(), r.ln()]);
        let (after, report) = ftl_update(&trajs, store.clone(), &cfg).unwrap();
        prop_assert!(report.final_log_objective <= before + 1e-12);
        prop_assert!(report.final_log_objective.is_finite());
        let lo = after.min_weight();
        prop_assert!(after.weights().iter().all(|w| (lo..=0.0).contains(w)));
        let (again, report2) = ftl_update(&trajs, store, &cfg).unwrap();
        prop_assert_eq!(report, report2);
        prop_assert_eq!(after.snapshot_string(), again.snapshot_string());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn bootstrap_solved_set_grows_and_removed_problems_stay_out(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = SyntheticTree::random(&mut rng, 7, 3, 300, true);
        let domain = TreeDomain::new(&tree);
        // nodes outside the tree exhaust the search and are dropped
        let mut problems: Vec<u32> = (0..12).map(|_| rng.gen_range(0..tree.len() as u32)).collect();
        problems.extend([tree.len() as u32 + 1, tree.len() as u32 + 7]);
        let boot = BootstrapConfig { initial_budget: rng.gen_range(2..20), max_outer_iters: 12, ..BootstrapConfig::default() };
        let store = ParamStore::with_defaults(domain.num_actions()).unwrap();
        let out = run_bootstrap(&problems, &domain, store, &boot, &OptimConfig::default()).unwrap();
        prop_assert!(out.history.windows(2).all(|w| w[0].solved_total <= w[1].solved_total));
        for (i, h) in out.history.iter().enumerate() {
            let removed_before = if i == 0 { 0 } else { out.history[i - 1].removed };
            prop_assert_eq!(h.attempted, problems.len() - removed_before);
        }
        let outside = [problems.len() as u64 - 2, problems.len() as u64 - 1];
        prop_assert!(out.removed.iter().all(|id| outside.contains(id)));
        if out.history.len() < boot.max_outer_iters {
            prop_assert_eq!(out.removed.len(), 2);
        }
    }
}


/// With last-action contexts the policy depends on the path, and a cheaper
/// solution may pass through a state already seen with higher probability.
/// Pruning discards it: here the full search goes down and back up before
/// finishing, a cheaper route than the single move it takes with pruning.
#[test]
fn pruning_can_lose_cheaper_paths_when_the_policy_depends_on_history() {
    let mut rng = ChaCha8Rng::seed_from_u64(9118441117474818041);
    let domain = StpDomain::new(3).unwrap();
    let p = scrambled_8_puzzle(&mut rng, 3);
    let store = random_store(&mut rng, &domain, &p, true);
    let solve = |prune| match lts_search(&domain, &p, 200_000, &store, prune).unwrap() {
        SearchResult::Solved { trajectory, .. } => trajectory,
        other => panic!("{other:?}"),
    };
    let (pruned, full) = (solve(true), solve(false));
    assert_eq!(pruned.actions(), [crate::domains::stp::UP]);
    assert_eq!(full.actions(), [crate::domains::stp::DOWN, crate::domains::stp::UP, crate::domains::stp::UP]);
    assert!(solution_log_cost(&full, &store) < solution_log_cost(&pruned, &store));
}
