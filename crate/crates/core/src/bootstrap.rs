//! The outer solve-then-learn loop.
//!
//! Every iteration searches all remaining problems with the current
//! parameters and budget, keeps the latest solution found for each problem,
//! refits the parameters on all stored solutions, and picks the next budget.
//! Problems already solved are searched again each time; that is costly but
//! it is what keeps their stored solutions in line with the current policy.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::Trajectory;
use crate::optimizer::{ftl_update, OptimConfig, OptimReport, StopReason};
use crate::policy::ParamStore;
use crate::search::{lts_search, DomainAdapter, SearchResult};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapConfig {
    pub initial_budget: u64,
    /// The budget shrinks after an iteration that solves at least
    /// `1 + growth_trigger` times as many problems as were solved before it.
    pub growth_trigger: f64,
    pub max_outer_iters: usize,
    /// Search threads; 0 means all available cores.
    pub worker_count: usize,
    pub prune: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { initial_budget: 2000, growth_trigger: 0.25, max_outer_iters: 50, worker_count: 0, prune: true }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_budget < 1 {
            return Err(Error::config("initial budget must be at least 1"));
        }
        if !(self.growth_trigger > 0.0 && self.growth_trigger.is_finite()) {
            return Err(Error::config("growth trigger must be positive"));
        }
        if self.max_outer_iters < 1 {
            return Err(Error::config("max_outer_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Latest solution per problem.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolutionStore {
    solutions: BTreeMap<u64, Trajectory>,
}

impl SolutionStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `traj` under its problem id, returning the one it replaces.
    pub fn insert(&mut self, traj: Trajectory) -> Option<Trajectory> {
        self.solutions.insert(traj.problem_id, traj)
    }

    pub fn get(&self, problem_id: u64) -> Option<&Trajectory> {
        self.solutions.get(&problem_id)
    }

    pub fn contains(&self, problem_id: u64) -> bool {
        self.solutions.contains_key(&problem_id)
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    /// Trajectories in problem-id order.
    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.solutions.values()
    }

    pub fn to_vec(&self) -> Vec<Trajectory> {
        self.solutions.values().cloned().collect()
    }
}

/// What happened in one outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    pub iter: usize,
    pub budget: u64,
    pub attempted: usize,
    /// Problems solved during this iteration, old or new.
    pub solved_iter: usize,
    /// Problems solved for the first time during this iteration.
    pub newly_solved: usize,
    /// Problems with a stored solution after this iteration.
    pub solved_total: usize,
    /// Problems still in the working set without a stored solution.
    pub unsolved: usize,
    /// Problems dropped after their search space was exhausted.
    pub removed: usize,
    pub expansions_total: u64,
    /// Expansions spent on problems solved during this iteration.
    pub expansions_solved: u64,
    pub optim: Option<OptimReport>,
}

pub const HISTORY_HEADER: &str = "# iter budget attempted solved_total newly_solved expansions_total optim_iters log_objective stop_reason solved_iter expansions_solved unsolved removed";

impl fmt::Display for IterationStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (iters, obj, stop) = match &self.optim {
            Some(r) => (r.iterations_run, format!("{:?}", r.final_log_objective), r.stop_reason.to_string()),
            None => (0, "-".to_string(), "none".to_string()),
        };
        write!(
            f,
            "{} {} {} {} {} {} {} {} {} {} {} {} {}",
            self.iter,
            self.budget,
            self.attempted,
            self.solved_total,
            self.newly_solved,
            self.expansions_total,
            iters,
            obj,
            stop,
            self.solved_iter,
            self.expansions_solved,
            self.unsolved,
            self.removed
        )
    }
}

/// Parses one line written by the `Display` impl. The optimization report's
/// gap is not logged and comes back as `None`.
pub fn parse_history_line(line: &str) -> Result<IterationStats> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 13 {
        return Err(Error::parse(format!("history line has {} fields, expected 13: '{line}'", f.len())));
    }
    fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T> {
        s.parse().map_err(|_| Error::parse(format!("bad {name} '{s}'")))
    }
    let optim = match f[8] {
        "none" => None,
        stop => Some(OptimReport {
            iterations_run: num(f[6], "optim_iters")?,
            final_log_objective: num(f[7], "log_objective")?,
            final_gap: None,
            stop_reason: match stop {
                "max_iters" => StopReason::MaxIters,
                "gap_certified" => StopReason::GapCertified,
                "stalled" => StopReason::Stalled,
                other => return Err(Error::parse(format!("bad stop_reason '{other}'"))),
            },
        }),
    };
    Ok(IterationStats {
        iter: num(f[0], "iter")?,
        budget: num(f[1], "budget")?,
        attempted: num(f[2], "attempted")?,
        solved_total: num(f[3], "solved_total")?,
        newly_solved: num(f[4], "newly_solved")?,
        expansions_total: num(f[5], "expansions_total")?,
        solved_iter: num(f[9], "solved_iter")?,
        expansions_solved: num(f[10], "expansions_solved")?,
        unsolved: num(f[11], "unsolved")?,
        removed: num(f[12], "removed")?,
        optim,
    })
}

pub fn write_history<W: Write>(mut w: W, history: &[IterationStats]) -> Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for s in history {
        writeln!(w, "{s}")?;
    }
    Ok(())
}

pub fn read_history<R: BufRead>(r: R) -> Result<Vec<IterationStats>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse_history_line(&line).map_err(|e| Error::parse(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Budget for the iteration after the last one in `history`.
pub fn next_budget(history: &[IterationStats], initial_budget: u64, growth_trigger: f64) -> Result<u64> {
    let last = history
        .last()
        .ok_or_else(|| Error::contract("next_budget needs at least one completed iteration"))?;
    let solved_before = last.solved_total - last.newly_solved;
    if last.solved_iter > 0 && last.solved_iter as f64 >= (1.0 + growth_trigger) * solved_before as f64 {
        return Ok(initial_budget.max(last.budget / 2));
    }
    if last.unsolved == 0 {
        return Err(Error::contract("no unsolved problems left to budget for"));
    }
    Ok(2 * last.budget + last.expansions_solved.div_ceil(last.unsolved as u64))
}

/// Checks that every logged budget after the first follows from the stats
/// logged before it. Returns the index of the first mismatch.
pub fn replay_budgets(history: &[IterationStats], initial_budget: u64, growth_trigger: f64) -> Result<Option<usize>> {
    if history.first().is_some_and(|h| h.budget != initial_budget) {
        return Ok(Some(0));
    }
    for t in 1..history.len() {
        if next_budget(&history[..t], initial_budget, growth_trigger)? != history[t].budget {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// Outcome of one search inside `solve_all`.
#[derive(Clone, Debug, PartialEq)]
pub struct Attempt {
    pub problem_id: u64,
    pub result: SearchResult,
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(format!("cannot start worker pool: {e}")))
}

/// Searches every listed problem; results come back in the order of `ids`.
/// Solutions carry their problem id.
pub fn solve_all<D: DomainAdapter>(
    domain: &D,
    problems: &[D::Problem],
    ids: &[u64],
    budget: u64,
    store: &ParamStore,
    prune: bool,
    workers: usize,
) -> Result<Vec<Attempt>> {
    let pool = build_pool(workers)?;
    solve_in(&pool, domain, problems, ids, budget, store, prune)
}

fn solve_in<D: DomainAdapter>(
    pool: &rayon::ThreadPool,
    domain: &D,
    problems: &[D::Problem],
    ids: &[u64],
    budget: u64,
    store: &ParamStore,
    prune: bool,
) -> Result<Vec<Attempt>> {
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= problems.len()) {
        return Err(Error::contract(format!("problem id {id} out of range")));
    }
    pool.install(|| {
        ids.par_iter()
            .with_max_len(1)
            .map(|&id| {
                let mut result = lts_search(domain, &problems[id as usize], budget, store, prune)?;
                if let SearchResult::Solved { trajectory, .. } = &mut result {
                    trajectory.problem_id = id;
                }
                Ok(Attempt { problem_id: id, result })
            })
            .collect()
    })
}

#[derive(Clone, Debug)]
pub struct BootstrapOutcome {
    pub store: ParamStore,
    pub solutions: SolutionStore,
    pub history: Vec<IterationStats>,
    /// Problems dropped because their search space was exhausted.
    pub removed: Vec<u64>,
}

impl BootstrapOutcome {
    pub fn all_solved(&self, num_problems: usize) -> bool {
        self.solutions.len() == num_problems
    }
}

/// Runs the loop on `problems` (ids are their indices) starting from `store`.
pub fn run_bootstrap<D: DomainAdapter>(
    problems: &[D::Problem],
    domain: &D,
    store: ParamStore,
    boot_cfg: &BootstrapConfig,
    optim_cfg: &OptimConfig,
) -> Result<BootstrapOutcome> {
    run_bootstrap_observed(problems, domain, store, boot_cfg, optim_cfg, |_| {})
}

/// As `run_bootstrap`, calling `observe` after every iteration.
pub fn run_bootstrap_observed<D: DomainAdapter>(
    problems: &[D::Problem],
    domain: &D,
    mut store: ParamStore,
    boot_cfg: &BootstrapConfig,
    optim_cfg: &OptimConfig,
    mut observe: impl FnMut(&IterationStats),
) -> Result<BootstrapOutcome> {
    boot_cfg.validate()?;
    optim_cfg.validate()?;
    if problems.is_empty() {
        return Err(Error::contract("no problems to bootstrap on"));
    }
    store.check_compatible(domain.num_actions(), domain.num_mutex_sets())?;
    let pool = build_pool(boot_cfg.worker_count)?;

    let mut working: Vec<u64> = (0..problems.len() as u64).collect();
    let mut solutions = SolutionStore::new();
    let mut history: Vec<IterationStats> = Vec::new();
    let mut removed = Vec::new();
    let mut budget = boot_cfg.initial_budget;

    for iter in 1..=boot_cfg.max_outer_iters {
        let attempts = solve_in(&pool, domain, problems, &working, budget, &store, boot_cfg.prune)?;
        let mut stats = IterationStats {
            iter,
            budget,
            attempted: working.len(),
            solved_iter: 0,
            newly_solved: 0,
            solved_total: 0,
            unsolved: 0,
            removed: 0,
            expansions_total: 0,
            expansions_solved: 0,
            optim: None,
        };
        let mut dropped = Vec::new();
        for a in attempts {
            stats.expansions_total += a.result.expansions();
            match a.result {
                SearchResult::Solved { trajectory, expansions, .. } => {
                    stats.solved_iter += 1;
                    stats.expansions_solved += expansions;
                    let new_len = trajectory.depth();
                    match solutions.insert(trajectory) {
                        None => stats.newly_solved += 1,
                        Some(old) if old.depth() != new_len => {
                            log::debug!("problem {}: solution length {} -> {}", a.problem_id, old.depth(), new_len);
                        }
                        Some(_) => {}
                    }
                }
                SearchResult::NoSolution { .. } => dropped.push(a.problem_id),
                SearchResult::BudgetReached { .. } => {}
            }
        }
        if !dropped.is_empty() {
            working.retain(|id| !dropped.contains(id));
            stats.removed = dropped.len();
            removed.extend(dropped);
        }
        stats.solved_total = solutions.len();
        stats.unsolved = working.iter().filter(|&&id| !solutions.contains(id)).count();

        if stats.unsolved == 0 {
            log::info!("iter {iter}: all {} remaining problems solved", working.len());
            observe(&stats);
            history.push(stats);
            break;
        }
        // Problems solved at the root have zero loss and no gradient.
        let trajs: Vec<Trajectory> = solutions.trajectories().filter(|t| t.depth() > 0).cloned().collect();
        if !trajs.is_empty() {
            let (next, report) = pool.install(|| ftl_update(&trajs, store, optim_cfg))?;
            store = next;
            stats.optim = Some(report);
        }
        log::info!("iter {iter}: {stats}");
        observe(&stats);
        history.push(stats);
        budget = next_budget(&history, boot_cfg.initial_budget, boot_cfg.growth_trigger)?;
    }

    Ok(BootstrapOutcome { store, solutions, history, removed })
}
