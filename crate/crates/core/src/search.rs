//! Budgeted Levin tree search guided by a context-model policy.
//!
//! Nodes are expanded in increasing order of `d(n) / pi(n)`. The state of a
//! child is computed only when the child is extracted from the queue, since
//! the policy at a node depends on the node's own contexts and not on the
//! states of its children.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::hash::Hash;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::loss::{Trajectory, TrajectoryStep};
use crate::policy::{apply_mix_floor, softmax_valid, Action, ActionSet, ContextKey, ParamStore};

/// What a puzzle domain provides to the search.
///
/// Domains are shared immutably between concurrent searches; per-instance
/// data lives in `Problem`.
pub trait DomainAdapter: Sync {
    type Problem: Sync;
    type State: Clone;
    type Key: Hash + Eq;

    /// Size of the global action alphabet.
    fn num_actions(&self) -> usize;
    /// Number of mutex sets; `active_contexts` yields one key per set.
    fn num_mutex_sets(&self) -> usize;

    fn initial_state(&self, problem: &Self::Problem) -> Self::State;
    /// Must be deterministic; only called with actions from `valid_actions`.
    fn transition(&self, problem: &Self::Problem, state: &Self::State, action: Action) -> Self::State;
    fn valid_actions(&self, problem: &Self::Problem, state: &Self::State) -> ActionSet;
    fn is_goal(&self, problem: &Self::Problem, state: &Self::State) -> bool;
    /// Appends the active contexts of `state`, reached through `last_action`.
    fn active_contexts(
        &self,
        problem: &Self::Problem,
        state: &Self::State,
        last_action: Option<Action>,
        out: &mut Vec<ContextKey>,
    );
    /// Key identifying equivalent states for pruning.
    fn state_key(&self, problem: &Self::Problem, state: &Self::State) -> Self::Key;
}

/// A generated node: depth, log-probability and the edge it came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchNode {
    pub depth: u32,
    /// `ln pi(n)`, never positive.
    pub log_prob: f64,
    /// Index of the expanded parent in the search's expansion arena.
    pub parent: Option<u32>,
    pub action_in: Option<Action>,
}

impl SearchNode {
    pub fn root() -> Self {
        SearchNode { depth: 0, log_prob: 0.0, parent: None, action_in: None }
    }
}

/// Ordering key equivalent to `d / pi`, with FIFO tie-breaking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorityKey {
    /// `ln d - ln pi`, or `-inf` for the root (cost 0).
    pub log_cost: f64,
    pub seq: u64,
}

impl Eq for PriorityKey {}

impl Ord for PriorityKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.log_cost
            .total_cmp(&other.log_cost)
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for PriorityKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Key of `node` inserted as the `seq`-th element.
pub fn priority_key(node: &SearchNode, seq: u64) -> PriorityKey {
    let log_cost = if node.depth == 0 {
        f64::NEG_INFINITY
    } else {
        (node.depth as f64).ln() - node.log_prob
    };
    PriorityKey { log_cost, seq }
}

/// Outcome of one budgeted search.
#[derive(Clone, Debug, PartialEq)]
pub enum SearchResult {
    Solved {
        trajectory: Trajectory,
        expansions: u64,
        solution_depth: usize,
    },
    BudgetReached { expansions: u64 },
    NoSolution { expansions: u64 },
}

impl SearchResult {
    pub fn expansions(&self) -> u64 {
        match self {
            SearchResult::Solved { expansions, .. }
            | SearchResult::BudgetReached { expansions }
            | SearchResult::NoSolution { expansions } => *expansions,
        }
    }

    pub fn is_solved(&self) -> bool {
        matches!(self, SearchResult::Solved { .. })
    }
}

struct QueueEntry {
    key: PriorityKey,
    node: SearchNode,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap.
        other.key.cmp(&self.key)
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Expanded<S> {
    state: S,
    parent: Option<u32>,
    action_in: Option<Action>,
}

/// Runs budgeted LTS from the initial state of `problem`.
///
/// The returned trajectory carries problem id 0; callers relabel it.
pub fn lts_search<D: DomainAdapter>(
    domain: &D,
    problem: &D::Problem,
    budget: u64,
    store: &ParamStore,
    prune: bool,
) -> Result<SearchResult> {
    if budget < 1 {
        return Err(Error::config("search budget must be at least 1"));
    }
    let num_actions = domain.num_actions();
    if store.num_actions() != num_actions {
        return Err(Error::config(format!(
            "parameters have A={} but the domain has {num_actions} actions",
            store.num_actions()
        )));
    }
    let eps_mix = store.eps_mix();

    let mut queue = BinaryHeap::new();
    let mut seq = 0u64;
    let root = SearchNode::root();
    queue.push(QueueEntry { key: priority_key(&root, seq), node: root });
    seq += 1;

    let mut arena: Vec<Expanded<D::State>> = Vec::new();
    let mut visited: FxHashMap<D::Key, f64> = FxHashMap::default();
    let mut contexts = Vec::with_capacity(domain.num_mutex_sets());
    let mut probs = vec![0.0; num_actions];
    let mut expanded = 0u64;

    while let Some(QueueEntry { node, .. }) = queue.pop() {
        let state = match (node.parent, node.action_in) {
            (Some(p), Some(a)) => domain.transition(problem, &arena[p as usize].state, a),
            _ => domain.initial_state(problem),
        };
        if domain.is_goal(problem, &state) {
            let path = path_to(&arena, node.parent, node.action_in);
            let trajectory = extract_trajectory(domain, problem, &path, 0)?;
            return Ok(SearchResult::Solved {
                trajectory,
                expansions: expanded,
                solution_depth: path.len(),
            });
        }
        if prune {
            let key = domain.state_key(problem, &state);
            match visited.get_mut(&key) {
                Some(best) if *best >= node.log_prob => continue,
                Some(best) => *best = node.log_prob,
                None => {
                    visited.insert(key, node.log_prob);
                }
            }
        }
        expanded += 1;
        if expanded == budget {
            return Ok(SearchResult::BudgetReached { expansions: expanded });
        }

        let valid = domain.valid_actions(problem, &state);
        if valid.is_empty() {
            continue;
        }
        contexts.clear();
        domain.active_contexts(problem, &state, node.action_in, &mut contexts);
        probs.fill(0.0);
        store.accumulate_logits(&contexts, &mut probs);
        softmax_valid(&mut probs, valid);
        apply_mix_floor(&mut probs, valid, eps_mix);

        let idx = arena.len() as u32;
        arena.push(Expanded { state, parent: node.parent, action_in: node.action_in });
        for a in valid.iter() {
            let child = SearchNode {
                depth: node.depth + 1,
                log_prob: node.log_prob + probs[a as usize].ln(),
                parent: Some(idx),
                action_in: Some(a),
            };
            queue.push(QueueEntry { key: priority_key(&child, seq), node: child });
            seq += 1;
        }
    }
    Ok(SearchResult::NoSolution { expansions: expanded })
}

fn path_to<S>(arena: &[Expanded<S>], mut parent: Option<u32>, last: Option<Action>) -> Vec<Action> {
    let mut path: Vec<Action> = last.into_iter().collect();
    while let Some(p) = parent {
        let e = &arena[p as usize];
        if let Some(a) = e.action_in {
            path.push(a);
        }
        parent = e.parent;
    }
    path.reverse();
    path
}

/// Replays `path` from the initial state and records, for every step, the
/// active contexts, the valid actions and the chosen action.
pub fn extract_trajectory<D: DomainAdapter>(
    domain: &D,
    problem: &D::Problem,
    path: &[Action],
    problem_id: u64,
) -> Result<Trajectory> {
    let mut state = domain.initial_state(problem);
    let mut last = None;
    let mut steps = Vec::with_capacity(path.len());
    for (j, &a) in path.iter().enumerate() {
        let valid = domain.valid_actions(problem, &state);
        if !valid.contains(a) {
            return Err(Error::Internal(format!(
                "solution path step {j}: action {a} is not valid"
            )));
        }
        let mut active = Vec::with_capacity(domain.num_mutex_sets());
        domain.active_contexts(problem, &state, last, &mut active);
        steps.push(TrajectoryStep { active, chosen: a, valid });
        state = domain.transition(problem, &state, a);
        last = Some(a);
    }
    if !domain.is_goal(problem, &state) {
        return Err(Error::Internal("solution path does not end at a goal".into()));
    }
    Ok(Trajectory { problem_id, steps })
}

/// Applies `path` from the initial state and reports whether it ends at a
/// goal, rejecting invalid moves.
pub fn replay_reaches_goal<D: DomainAdapter>(domain: &D, problem: &D::Problem, path: &[Action]) -> bool {
    let mut state = domain.initial_state(problem);
    for &a in path {
        if !domain.valid_actions(problem, &state).contains(a) {
            return false;
        }
        state = domain.transition(problem, &state, a);
    }
    domain.is_goal(problem, &state)
}
