//! Brute-force checks for search-tree cost bounds and loss gradients.
//!
//! Trees carry small rational edge probabilities so that node costs
//! `d / pi` compare exactly. A node's path probability is kept as a pair of
//! integer products; denominators are capped so every cross-multiplication
//! fits in `u128`.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::policy::{Action, ActionSet, ContextKey, ParamBlock, ParamStore};
use crate::search::DomainAdapter;

/// Largest allowed product of edge denominators along a path.
const MAX_DEN: u128 = 1 << 50;

#[derive(Clone, Debug)]
pub struct SyntheticTree {
    parent: Vec<Option<u32>>,
    children: Vec<Vec<u32>>,
    depth: Vec<u32>,
    /// Edge probability into each node as `num / den`; `1/1` for the root.
    edge: Vec<(u32, u32)>,
    path_num: Vec<u128>,
    path_den: Vec<u128>,
}

impl Default for SyntheticTree {
    fn default() -> Self {
        Self::new()
    }
}

impl SyntheticTree {
    /// A tree holding only the root.
    pub fn new() -> Self {
        SyntheticTree {
            parent: vec![None],
            children: vec![Vec::new()],
            depth: vec![0],
            edge: vec![(1, 1)],
            path_num: vec![1],
            path_den: vec![1],
        }
    }

    pub fn add_child(&mut self, parent: u32, num: u32, den: u32) -> Result<u32> {
        let p = parent as usize;
        if p >= self.len() {
            return Err(Error::contract(format!("no node {parent}")));
        }
        if den == 0 || num > den {
            return Err(Error::contract(format!("edge probability {num}/{den} outside [0, 1]")));
        }
        let path_den = self.path_den[p] * den as u128;
        if path_den > MAX_DEN {
            return Err(Error::contract("path denominators exceed the exact-arithmetic range"));
        }
        let id = self.len() as u32;
        self.parent.push(Some(parent));
        self.children.push(Vec::new());
        self.children[p].push(id);
        self.depth.push(self.depth[p] + 1);
        self.edge.push((num, den));
        self.path_num.push(self.path_num[p] * num as u128);
        self.path_den.push(path_den);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn parent(&self, n: u32) -> Option<u32> {
        self.parent[n as usize]
    }

    pub fn children(&self, n: u32) -> &[u32] {
        &self.children[n as usize]
    }

    pub fn depth(&self, n: u32) -> u32 {
        self.depth[n as usize]
    }

    pub fn edge_prob(&self, n: u32) -> f64 {
        let (a, b) = self.edge[n as usize];
        a as f64 / b as f64
    }

    pub fn prob(&self, n: u32) -> f64 {
        self.path_num[n as usize] as f64 / self.path_den[n as usize] as f64
    }

    /// `d / pi`, infinite for unreachable nodes.
    pub fn cost(&self, n: u32) -> f64 {
        let i = n as usize;
        if self.path_num[i] == 0 {
            return f64::INFINITY;
        }
        self.depth[i] as f64 * self.path_den[i] as f64 / self.path_num[i] as f64
    }

    /// Exact comparison of `d / pi`.
    pub fn cost_cmp(&self, a: u32, b: u32) -> Ordering {
        let (a, b) = (a as usize, b as usize);
        match (self.path_num[a] == 0, self.path_num[b] == 0) {
            (true, true) => return Ordering::Equal,
            (true, false) => return Ordering::Greater,
            (false, true) => return Ordering::Less,
            _ => {}
        }
        let lhs = self.depth[a] as u128 * self.path_den[a] * self.path_num[b];
        let rhs = self.depth[b] as u128 * self.path_den[b] * self.path_num[a];
        lhs.cmp(&rhs)
    }

    pub fn max_branching(&self) -> usize {
        self.children.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Whether the children of every internal node have probabilities
    /// summing to exactly one.
    pub fn is_proper(&self) -> bool {
        (0..self.len() as u32).all(|n| {
            let ch = self.children(n);
            ch.is_empty() || {
                // all children share one denominator in generated trees, but
                // compare exactly in general
                let lcm = ch.iter().fold(1u128, |l, &c| lcm(l, self.edge[c as usize].1 as u128));
                let sum: u128 = ch
                    .iter()
                    .map(|&c| {
                        let (a, b) = self.edge[c as usize];
                        a as u128 * (lcm / b as u128)
                    })
                    .sum();
                sum == lcm
            }
        })
    }

    pub fn leaves(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.len() as u32).filter(|&n| self.children(n).is_empty())
    }

    /// The complete `branching`-ary tree of the given depth with uniform
    /// edge probabilities.
    pub fn full_uniform(branching: u32, depth: u32) -> Result<Self> {
        let mut t = SyntheticTree::new();
        let mut level = vec![0u32];
        for _ in 0..depth {
            let mut next = Vec::with_capacity(level.len() * branching as usize);
            for &n in &level {
                for _ in 0..branching {
                    next.push(t.add_child(n, 1, branching)?);
                }
            }
            level = next;
        }
        Ok(t)
    }

    /// The two-branch tree showing that the `1/(A-1)` factor of the lower
    /// bound cannot be dropped: the root has children with probabilities
    /// `1 - 2/A` and `2/A`; the first has `A` uniform children and the second
    /// two children of probability 1/2, each continued by a single child so
    /// that the cheap set of the target is closed under children. Returns
    /// the tree and the first child of the second branch.
    pub fn two_branch_example(a: u32) -> Result<(Self, u32)> {
        if a < 3 {
            return Err(Error::contract("the example needs A >= 3"));
        }
        let mut t = SyntheticTree::new();
        let left = t.add_child(0, a - 2, a)?;
        let right = t.add_child(0, 2, a)?;
        for _ in 0..a {
            t.add_child(left, 1, a)?;
        }
        let target = t.add_child(right, 1, 2)?;
        let sibling = t.add_child(right, 1, 2)?;
        t.add_child(target, 1, 1)?;
        t.add_child(sibling, 1, 1)?;
        Ok((t, target))
    }

    /// A random tree grown breadth-first. Every internal node gets between
    /// 1 and `max_branching` children whose probabilities are multiples of
    /// 1/16; they sum to one when `proper`, and to less otherwise. Nodes
    /// are either leaves or have all their children.
    pub fn random<R: Rng>(rng: &mut R, max_depth: u32, max_branching: u32, max_nodes: usize, proper: bool) -> Self {
        assert!((1..=16).contains(&max_branching));
        let mut t = SyntheticTree::new();
        let mut frontier = std::collections::VecDeque::from([0u32]);
        while let Some(n) = frontier.pop_front() {
            if t.depth(n) >= max_depth {
                continue;
            }
            let k = rng.gen_range(1..=max_branching);
            if t.len() + k as usize > max_nodes {
                break;
            }
            let total = if proper { 16 } else { rng.gen_range(k..16) };
            for w in random_composition(rng, total, k) {
                let c = t.add_child(n, w, 16).expect("depth bounded by 12");
                frontier.push_back(c);
            }
        }
        t
    }
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u128, b: u128) -> u128 {
    a / gcd(a, b) * b
}

/// `total` split into `parts` positive integers, uniformly over compositions.
fn random_composition<R: Rng>(rng: &mut R, total: u32, parts: u32) -> Vec<u32> {
    // choose parts-1 distinct cut points in 1..total
    let mut cuts = rand::seq::index::sample(rng, total as usize - 1, parts as usize - 1)
        .into_iter()
        .map(|c| c as u32 + 1)
        .collect::<Vec<_>>();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts as usize);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(total)) {
        out.push(c - prev);
        prev = c;
    }
    out
}

fn check_target(tree: &SyntheticTree, target: u32) -> Result<()> {
    if target as usize >= tree.len() {
        return Err(Error::contract(format!("no node {target}")));
    }
    if tree.path_num[target as usize] == 0 {
        return Err(Error::contract(format!("node {target} has probability zero")));
    }
    Ok(())
}

/// Number of nodes whose cost is at most the target's, target included.
pub fn count_cheaper_nodes(tree: &SyntheticTree, target: u32) -> Result<usize> {
    check_target(tree, target)?;
    Ok((0..tree.len() as u32)
        .filter(|&n| tree.cost_cmp(n, target) != Ordering::Greater)
        .count())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundCheck {
    pub count: usize,
    pub bound: f64,
    /// Distance between count and bound on the side the bound allows.
    pub slack: f64,
    pub holds: bool,
}

/// `count <= 1 + d / pi` for the target, checked exactly.
pub fn check_upper_bound(tree: &SyntheticTree, target: u32) -> Result<BoundCheck> {
    let count = count_cheaper_nodes(tree, target)?;
    let t = target as usize;
    let lhs = (count as u128 - 1) * tree.path_num[t];
    let rhs = tree.depth[t] as u128 * tree.path_den[t];
    let bound = 1.0 + tree.cost(target);
    Ok(BoundCheck { count, bound, slack: bound - count as f64, holds: lhs <= rhs })
}

/// `count >= ((c / d_h) - 1) / (A - 1)` where `c` is the target's cost,
/// `1 / d_h = sum pi(n) / d(n)` over the nodes just outside the cheap set,
/// and `A = max(2, branching)`.
///
/// Needs a proper tree in which every node of the cheap set has its
/// children present.
pub fn check_lower_bound(tree: &SyntheticTree, target: u32) -> Result<BoundCheck> {
    check_target(tree, target)?;
    if !tree.is_proper() {
        return Err(Error::contract("the lower bound requires a proper tree"));
    }
    let a = tree.max_branching().max(2) as f64;
    let mut count = 0;
    let mut inv_harmonic = 0.0;
    let mut comp = 0.0;
    for n in 0..tree.len() as u32 {
        let cheap = tree.cost_cmp(n, target) != Ordering::Greater;
        if cheap {
            count += 1;
            if tree.children(n).is_empty() {
                return Err(Error::contract(format!(
                    "node {n} is cheaper than the target but has no children in the tree"
                )));
            }
        } else if tree.parent(n).is_some_and(|p| tree.cost_cmp(p, target) != Ordering::Greater) {
            // Neumaier summation
            let x = tree.prob(n) / tree.depth(n) as f64;
            let s = inv_harmonic + x;
            comp += if inv_harmonic.abs() >= x.abs() { (inv_harmonic - s) + x } else { (x - s) + inv_harmonic };
            inv_harmonic = s;
        }
    }
    let inv_harmonic = inv_harmonic + comp;
    let bound = (tree.cost(target) * inv_harmonic - 1.0) / (a - 1.0);
    let slack = count as f64 - bound;
    Ok(BoundCheck { count, bound, slack, holds: slack >= -1e-9 * bound.abs().max(1.0) })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SumCheck {
    pub sum: f64,
    pub holds: bool,
}

/// Sums the leaf probabilities of the tree, which is full by construction:
/// at most one always, and exactly one (within 1e-12) for proper trees.
pub fn check_sum_to_one(tree: &SyntheticTree) -> SumCheck {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for n in tree.leaves() {
        let x = tree.prob(n);
        let s = sum + x;
        comp += if sum >= x { (sum - s) + x } else { (x - s) + sum };
        sum = s;
    }
    let sum = sum + comp;
    let holds = if tree.is_proper() { (sum - 1.0).abs() <= 1e-12 } else { sum <= 1.0 + 1e-12 };
    SumCheck { sum, holds }
}

/// Outcome of checking a bound at every admissible target of one tree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepReport {
    pub targets: usize,
    pub violations: usize,
    /// Smallest `count - bound` (lower) or `bound - count` (upper) seen.
    pub min_slack: f64,
}

impl Default for SweepReport {
    fn default() -> Self {
        SweepReport { targets: 0, violations: 0, min_slack: f64::INFINITY }
    }
}

/// Nodes of positive probability in cost order, as runs of equal cost.
fn cost_groups(tree: &SyntheticTree) -> Vec<Vec<u32>> {
    let mut order: Vec<u32> = (0..tree.len() as u32).filter(|&n| tree.path_num[n as usize] > 0).collect();
    order.sort_by(|&a, &b| tree.cost_cmp(a, b));
    let mut groups: Vec<Vec<u32>> = Vec::new();
    for n in order {
        match groups.last_mut() {
            Some(g) if tree.cost_cmp(g[0], n) == Ordering::Equal => g.push(n),
            _ => groups.push(vec![n]),
        }
    }
    groups
}

/// `check_upper_bound` for every node of positive probability, in one
/// sorted pass.
pub fn sweep_upper_bound(tree: &SyntheticTree) -> SweepReport {
    let mut rep = SweepReport::default();
    let mut count = 0usize;
    for group in cost_groups(tree) {
        count += group.len();
        for t in group {
            let i = t as usize;
            rep.targets += 1;
            if (count as u128 - 1) * tree.path_num[i] > tree.depth[i] as u128 * tree.path_den[i] {
                rep.violations += 1;
            }
            rep.min_slack = rep.min_slack.min(1.0 + tree.cost(t) - count as f64);
        }
    }
    rep
}

/// `check_lower_bound` for every target whose cheap set has all its
/// children in the tree: targets are taken in cost order until the cheap
/// set would contain a leaf. Frontier sums are kept as exact fractions over
/// a common denominator, which must fit in `u128`.
pub fn sweep_lower_bound(tree: &SyntheticTree) -> Result<SweepReport> {
    if !tree.is_proper() {
        return Err(Error::contract("the lower bound requires a proper tree"));
    }
    let overflow = || Error::contract("tree too large for exact frontier sums");
    let mut den: u128 = 1;
    for n in 1..tree.len() {
        let q = tree.path_den[n] * tree.depth[n] as u128;
        den = (den / gcd(den, q)).checked_mul(q).ok_or_else(overflow)?;
    }
    // pi(n) / d(n) as a numerator over `den`
    let term = |n: u32| -> Result<u128> {
        let i = n as usize;
        tree.path_num[i]
            .checked_mul(den / (tree.path_den[i] * tree.depth[i] as u128))
            .ok_or_else(overflow)
    };
    let a = tree.max_branching().max(2) as u128;
    let mut rep = SweepReport::default();
    let mut count = 0u128;
    let mut frontier = 0u128;
    for group in cost_groups(tree) {
        for &n in &group {
            if tree.children(n).is_empty() {
                return Ok(rep);
            }
            // children cost strictly more than their parent, so `n` entered
            // the frontier in an earlier group
            if n != 0 {
                frontier -= term(n)?;
            }
            for &c in tree.children(n) {
                frontier = frontier.checked_add(term(c)?).ok_or_else(overflow)?;
            }
        }
        count += group.len() as u128;
        for t in group {
            let i = t as usize;
            // count (A-1) + 1 >= (d / pi) * frontier / den
            let lhs = (count * (a - 1) + 1)
                .checked_mul(tree.path_num[i])
                .and_then(|x| x.checked_mul(den))
                .ok_or_else(overflow)?;
            let rhs = (tree.depth[i] as u128 * tree.path_den[i])
                .checked_mul(frontier)
                .ok_or_else(overflow)?;
            rep.targets += 1;
            if lhs < rhs {
                rep.violations += 1;
            }
            let bound = (tree.cost(t) * (frontier as f64 / den as f64) - 1.0) / (a - 1) as f64;
            rep.min_slack = rep.min_slack.min(count as f64 - bound);
        }
    }
    Ok(rep)
}

/// Central-difference gradient of `f` at `point`.
pub fn finite_difference_grad(f: impl Fn(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "step must be positive");
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + h;
            let up = f(&x);
            x[i] = point[i] - h;
            let down = f(&x);
            x[i] = point[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Searches a synthetic tree; the problem is the node to find.
pub struct TreeDomain<'a> {
    tree: &'a SyntheticTree,
    branching: usize,
}

impl<'a> TreeDomain<'a> {
    pub fn new(tree: &'a SyntheticTree) -> Self {
        TreeDomain { tree, branching: tree.max_branching().max(1) }
    }

    /// A store under which the search policy reproduces the tree's edge
    /// probabilities exactly: one context per node whose weights are the
    /// log-ratios of child probabilities to the largest one.
    pub fn policy(&self) -> Result<ParamStore> {
        let tree = self.tree;
        let mut store = ParamStore::with_defaults(self.branching)?;
        store.set_eps_mix(0.0)?;
        let lo = store.min_weight();
        for n in 0..tree.len() as u32 {
            let ch = tree.children(n);
            if ch.is_empty() {
                continue;
            }
            let max = ch.iter().map(|&c| tree.edge_prob(c)).fold(0.0, f64::max);
            let mut w = vec![lo; self.branching];
            for (i, &c) in ch.iter().enumerate() {
                let r = (tree.edge_prob(c) / max).ln();
                if r < lo {
                    return Err(Error::contract("edge probability ratio below the weight range"));
                }
                w[i] = r;
            }
            store.set_block(ContextKey::new(0, n as u64), ParamBlock::new(w, store.eps_low())?)?;
        }
        Ok(store)
    }
}

impl DomainAdapter for TreeDomain<'_> {
    type Problem = u32;
    type State = u32;
    type Key = u32;

    fn num_actions(&self) -> usize {
        self.branching
    }

    fn num_mutex_sets(&self) -> usize {
        1
    }

    fn initial_state(&self, _: &u32) -> u32 {
        0
    }

    fn transition(&self, _: &u32, s: &u32, a: Action) -> u32 {
        self.tree.children(*s)[a as usize]
    }

    fn valid_actions(&self, _: &u32, s: &u32) -> ActionSet {
        ActionSet::full(self.tree.children(*s).len())
    }

    fn is_goal(&self, target: &u32, s: &u32) -> bool {
        s == target
    }

    fn active_contexts(&self, _: &u32, s: &u32, _: Option<Action>, out: &mut Vec<ContextKey>) {
        out.push(ContextKey::new(0, *s as u64));
    }

    fn state_key(&self, _: &u32, s: &u32) -> u32 {
        *s
    }
}
