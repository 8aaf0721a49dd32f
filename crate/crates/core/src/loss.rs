//! The LTS loss of a set of solution trajectories and its gradient.
//!
//! For a trajectory of depth `d` the instant loss is `d / pi`, where `pi` is
//! the product of the (unfloored) product-mixing probabilities of the chosen
//! actions. Everything is computed in the log domain: losses of untrained
//! policies are routinely far beyond `f64` range.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::ops::Range;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::policy::{Action, ActionSet, ContextKey, ParamStore};

/// One decision along a solution path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrajectoryStep {
    /// Contexts active at the node where the decision was taken.
    pub active: Vec<ContextKey>,
    pub chosen: Action,
    pub valid: ActionSet,
}

/// A solution path as seen by the optimizer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    pub problem_id: u64,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.chosen).collect()
    }

    fn validate(&self, num_actions: usize) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::contract(format!(
                "trajectory for problem {} has no steps",
                self.problem_id
            )));
        }
        for (j, s) in self.steps.iter().enumerate() {
            if !s.valid.contains(s.chosen) || s.valid.span() > num_actions {
                return Err(Error::contract(format!(
                    "problem {} step {j}: action {} not in valid set {:#b}",
                    self.problem_id,
                    s.chosen,
                    s.valid.bits()
                )));
            }
        }
        Ok(())
    }
}

/// Gradient restricted to the contexts touched by a trajectory set.
pub type SparseGrad = BTreeMap<ContextKey, Vec<f64>>;

/// Stable `ln sum exp(x)`; `-inf` for an empty input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln(d / pi)` for one trajectory, with `eps_mix` taken as zero.
pub fn log_instant_loss(traj: &Trajectory, store: &ParamStore) -> Result<f64> {
    let (set, params) = CompiledSet::from_store(std::slice::from_ref(traj), store)?;
    let mut out = Vec::new();
    set.log_losses(&params, &mut out);
    Ok(out[0])
}

/// `ln L`: log-sum-exp of the instant log losses.
pub fn log_total_loss(trajs: &[Trajectory], store: &ParamStore) -> Result<f64> {
    check_distinct_problems(trajs)?;
    let (set, params) = CompiledSet::from_store(trajs, store)?;
    let mut out = Vec::new();
    set.log_losses(&params, &mut out);
    Ok(log_sum_exp(&out))
}

/// Returns `sum exp(ln l - shift)` and its gradient with respect to the
/// weights of every context touched by `trajs`.
pub fn loss_and_grad(
    trajs: &[Trajectory],
    store: &ParamStore,
    shift: f64,
) -> Result<(f64, SparseGrad)> {
    if trajs.is_empty() {
        return Ok((0.0, SparseGrad::new()));
    }
    check_distinct_problems(trajs)?;
    let (set, params) = CompiledSet::from_store(trajs, store)?;
    let mut grad = vec![0.0; params.len()];
    let value = set.scaled_loss_grad(&params, shift, &mut grad);
    let a = store.num_actions();
    let map = set
        .keys
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, grad[i * a..(i + 1) * a].to_vec()))
        .collect();
    Ok((value, map))
}

fn check_distinct_problems(trajs: &[Trajectory]) -> Result<()> {
    let mut seen = HashSet::with_capacity(trajs.len());
    for t in trajs {
        if !seen.insert(t.problem_id) {
            return Err(Error::contract(format!(
                "problem {} appears twice in the trajectory set",
                t.problem_id
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
struct CompiledStep {
    start: u32,
    end: u32,
    valid: ActionSet,
    chosen: Action,
}

/// Trajectories flattened against a dense parameter arena.
///
/// Block `i` of the arena occupies `params[i*A..(i+1)*A]` and belongs to
/// `keys[i]`.
#[derive(Clone, Debug)]
pub(crate) struct CompiledSet {
    num_actions: usize,
    pub(crate) keys: Vec<ContextKey>,
    log_depths: Vec<f64>,
    traj_steps: Vec<Range<u32>>,
    steps: Vec<CompiledStep>,
    refs: Vec<u32>,
}

impl CompiledSet {
    /// Compiles `trajs`; blocks are numbered in order of first appearance.
    pub(crate) fn compile(trajs: &[Trajectory], num_actions: usize) -> Result<Self> {
        let mut index: FxHashMap<ContextKey, u32> = FxHashMap::default();
        let mut set = CompiledSet {
            num_actions,
            keys: Vec::new(),
            log_depths: Vec::with_capacity(trajs.len()),
            traj_steps: Vec::with_capacity(trajs.len()),
            steps: Vec::new(),
            refs: Vec::new(),
        };
        for t in trajs {
            t.validate(num_actions)?;
            let first = set.steps.len() as u32;
            for s in &t.steps {
                let start = set.refs.len() as u32;
                for &k in &s.active {
                    let next = set.keys.len() as u32;
                    let i = *index.entry(k).or_insert_with(|| {
                        set.keys.push(k);
                        next
                    });
                    set.refs.push(i);
                }
                set.steps.push(CompiledStep {
                    start,
                    end: set.refs.len() as u32,
                    valid: s.valid,
                    chosen: s.chosen,
                });
            }
            set.traj_steps.push(first..set.steps.len() as u32);
            set.log_depths.push((t.depth() as f64).ln());
        }
        Ok(set)
    }

    /// Compiles against a read-only store. Unstored contexts start at the
    /// simplex center, which is policy-equivalent to being absent.
    pub(crate) fn from_store(trajs: &[Trajectory], store: &ParamStore) -> Result<(Self, Vec<f64>)> {
        let set = Self::compile(trajs, store.num_actions())?;
        let a = store.num_actions();
        let mut params = Vec::with_capacity(set.keys.len() * a);
        for &k in &set.keys {
            match store.block(k) {
                Some(b) => params.extend_from_slice(b),
                None => params.extend(std::iter::repeat_n(store.init_value(), a)),
            }
        }
        Ok((set, params))
    }

    /// Materializes every referenced context in `store` and renumbers the
    /// blocks so that the arena layout is the store's own.
    pub(crate) fn bind_to_store(&mut self, store: &mut ParamStore) {
        let map: Vec<u32> = self.keys.iter().map(|&k| store.materialize(k) as u32).collect();
        for r in &mut self.refs {
            *r = map[*r as usize];
        }
        self.keys = store.keys().to_vec();
    }

    pub(crate) fn num_trajectories(&self) -> usize {
        self.traj_steps.len()
    }

    /// Fills `logits` with the summed weights at `step` and returns
    /// `ln Z`, the log normalizer over the valid actions.
    #[inline]
    fn step_logits(&self, params: &[f64], step: &CompiledStep, logits: &mut [f64]) -> f64 {
        let a = self.num_actions;
        logits.fill(0.0);
        for &r in &self.refs[step.start as usize..step.end as usize] {
            let base = r as usize * a;
            for (l, w) in logits.iter_mut().zip(&params[base..base + a]) {
                *l += w;
            }
        }
        let mut max = f64::NEG_INFINITY;
        for act in step.valid.iter() {
            max = max.max(logits[act as usize]);
        }
        let mut z = 0.0;
        for act in step.valid.iter() {
            z += (logits[act as usize] - max).exp();
        }
        max + z.ln()
    }

    fn log_loss_of(&self, params: &[f64], t: usize, logits: &mut [f64]) -> f64 {
        let mut acc = self.log_depths[t];
        let range = &self.traj_steps[t];
        for step in &self.steps[range.start as usize..range.end as usize] {
            let lz = self.step_logits(params, step, logits);
            acc -= logits[step.chosen as usize] - lz;
        }
        acc
    }

    /// Per-trajectory `ln l`.
    pub(crate) fn log_losses(&self, params: &[f64], out: &mut Vec<f64>) {
        let n = self.num_trajectories();
        out.clear();
        out.resize(n, 0.0);
        let chunk = chunk_len(n);
        out.par_chunks_mut(chunk).enumerate().for_each(|(c, dst)| {
            let mut logits = vec![0.0; self.num_actions];
            for (k, o) in dst.iter_mut().enumerate() {
                *o = self.log_loss_of(params, c * chunk + k, &mut logits);
            }
        });
    }

    /// `ln L` at `params`.
    pub(crate) fn log_total(&self, params: &[f64]) -> f64 {
        let mut out = Vec::new();
        self.log_losses(params, &mut out);
        log_sum_exp(&out)
    }

    /// Adds the gradient of `sum exp(ln l - shift)` into `grad` (which must
    /// cover at least the compiled blocks) and returns that sum.
    pub(crate) fn scaled_loss_grad(&self, params: &[f64], shift: f64, grad: &mut [f64]) -> f64 {
        let n = self.num_trajectories();
        if n == 0 {
            return 0.0;
        }
        let width = self.keys.len() * self.num_actions;
        let chunk = chunk_len(n);
        if chunk >= n {
            return self.accumulate(params, shift, 0..n, &mut grad[..width]);
        }
        let starts: Vec<usize> = (0..n).step_by(chunk).collect();
        let parts: Vec<(f64, Vec<f64>)> = starts
            .par_iter()
            .map(|&start| {
                let mut local = vec![0.0; width];
                let v = self.accumulate(params, shift, start..(start + chunk).min(n), &mut local);
                (v, local)
            })
            .collect();
        let mut total = 0.0;
        for (v, local) in parts {
            total += v;
            for (g, l) in grad[..width].iter_mut().zip(local) {
                *g += l;
            }
        }
        total
    }

    fn accumulate(&self, params: &[f64], shift: f64, range: Range<usize>, grad: &mut [f64]) -> f64 {
        let a = self.num_actions;
        let mut logits = vec![0.0; a];
        let mut probs: Vec<f64> = Vec::new();
        let mut total = 0.0;
        for t in range {
            let steps = &self.steps[self.traj_steps[t].start as usize..self.traj_steps[t].end as usize];
            probs.clear();
            let mut log_loss = self.log_depths[t];
            for step in steps {
                let lz = self.step_logits(params, step, &mut logits);
                log_loss -= logits[step.chosen as usize] - lz;
                for (act, &l) in logits.iter().enumerate() {
                    probs.push(if step.valid.contains(act as Action) {
                        (l - lz).exp()
                    } else {
                        0.0
                    });
                }
            }
            let w = (log_loss - shift).exp();
            total += w;
            if w == 0.0 {
                continue;
            }
            for (j, step) in steps.iter().enumerate() {
                let p = &mut probs[j * a..(j + 1) * a];
                p[step.chosen as usize] -= 1.0;
                for x in p.iter_mut() {
                    *x *= w;
                }
                for &r in &self.refs[step.start as usize..step.end as usize] {
                    let base = r as usize * a;
                    for act in step.valid.iter() {
                        grad[base + act as usize] += p[act as usize];
                    }
                }
            }
        }
        total
    }
}

fn chunk_len(n: usize) -> usize {
    let threads = rayon::current_num_threads().max(1);
    n.div_ceil(threads).max(1)
}

/// Writes trajectories in the versioned text format.
pub fn write_trajectories<'a, W, I>(mut w: W, num_actions: usize, trajs: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Trajectory>,
{
    writeln!(w, "ltscm-trajectories v1 A={num_actions}")?;
    for t in trajs {
        writeln!(w, "{} {}", t.problem_id, t.depth())?;
        for s in &t.steps {
            write!(w, "{} {}", s.valid.bits(), s.chosen)?;
            for k in &s.active {
                write!(w, " {k}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Reads the format produced by [`write_trajectories`]; returns `A` and the
/// trajectories.
pub fn read_trajectories<R: BufRead>(r: R) -> Result<(usize, Vec<Trajectory>)> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse("empty trajectory file"))?;
    let header = header?;
    let num_actions: usize = header
        .strip_prefix("ltscm-trajectories v1 A=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::parse(format!("bad trajectory header {header:?}")))?;
    let mut out = Vec::new();
    let mut next_line = || -> Result<Option<(usize, String)>> {
        for (i, l) in lines.by_ref() {
            let l = l?;
            if !l.trim().is_empty() {
                return Ok(Some((i + 1, l)));
            }
        }
        Ok(None)
    };
    while let Some((lineno, rec)) = next_line()? {
        let bad = |m: &str| Error::parse(format!("trajectory line {lineno}: {m}"));
        let mut f = rec.split_ascii_whitespace();
        let problem_id: u64 = f.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("problem id"))?;
        let depth: usize = f.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("depth"))?;
        let mut steps = Vec::with_capacity(depth);
        for _ in 0..depth {
            let (lineno, line) = next_line()?
                .ok_or_else(|| Error::parse(format!("problem {problem_id}: file ends inside the record")))?;
            let bad = |m: &str| Error::parse(format!("trajectory line {lineno}: {m}"));
            let mut f = line.split_ascii_whitespace();
            let valid = ActionSet::from_bits(
                f.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("valid mask"))?,
            );
            let chosen: Action = f.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("chosen action"))?;
            let active = f
                .map(|pair| {
                    let (m, p) = pair.split_once(':').ok_or_else(|| bad("context pair"))?;
                    let m = m.parse().map_err(|_| bad("mutex set id"))?;
                    let p = p.parse().map_err(|_| bad("pattern code"))?;
                    ContextKey::try_new(m, p)
                })
                .collect::<Result<Vec<_>>>()?;
            steps.push(TrajectoryStep { active, chosen, valid });
        }
        out.push(Trajectory { problem_id, steps });
    }
    Ok((num_actions, out))
}
