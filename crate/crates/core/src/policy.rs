//! Context-model parameters and the product-mixing policy.
//!
//! Every context owns a block of `A` weights in `[ln eps_low, 0]`. The
//! prediction of a single context is the softmax of its weights over the
//! valid actions of a node; the policy at a node is the renormalized product
//! of the predictions of all active contexts, which reduces to a softmax of
//! the summed weights. Contexts that were never written behave as uniform
//! predictors and are not stored.

use std::fmt;
use std::io::{BufRead, Write};

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};

/// Index of an action in a domain's global action alphabet.
pub type Action = u8;

/// Largest supported global action count.
pub const MAX_ACTIONS: usize = 32;

pub const DEFAULT_EPS_LOW: f64 = 1e-4;
pub const DEFAULT_EPS_MIX: f64 = 1e-3;

/// Subset of the global action alphabet, as a bitmask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ActionSet(u32);

impl ActionSet {
    pub const fn empty() -> Self {
        ActionSet(0)
    }

    /// All actions `0..n`.
    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_ACTIONS);
        if n == MAX_ACTIONS {
            ActionSet(u32::MAX)
        } else {
            ActionSet((1u32 << n) - 1)
        }
    }

    pub const fn from_bits(bits: u32) -> Self {
        ActionSet(bits)
    }

    pub const fn bits(self) -> u32 {
        self.0
    }

    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a;
    }

    pub fn with(mut self, a: Action) -> Self {
        self.insert(a);
        self
    }

    pub const fn contains(self, a: Action) -> bool {
        (a as usize) < MAX_ACTIONS && self.0 & (1 << a) != 0
    }

    pub const fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Highest action index plus one.
    pub const fn span(self) -> usize {
        32 - self.0.leading_zeros() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let a = bits.trailing_zeros() as Action;
                bits &= bits - 1;
                Some(a)
            }
        })
    }
}

impl FromIterator<Action> for ActionSet {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut s = ActionSet::empty();
        for a in iter {
            s.insert(a);
        }
        s
    }
}

const PATTERN_BITS: u32 = 48;

/// A context: the pattern observed inside one mutex set.
///
/// Packed into 64 bits, 16 for the mutex set and 48 for the pattern code.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextKey(u64);

impl ContextKey {
    pub const MAX_MUTEX_SETS: u32 = 1 << (64 - PATTERN_BITS);
    pub const MAX_PATTERN: u64 = (1 << PATTERN_BITS) - 1;

    #[inline]
    pub fn new(mutex_set: u32, pattern: u64) -> Self {
        debug_assert!(mutex_set < Self::MAX_MUTEX_SETS);
        debug_assert!(pattern <= Self::MAX_PATTERN);
        ContextKey(((mutex_set as u64) << PATTERN_BITS) | pattern)
    }

    pub fn try_new(mutex_set: u32, pattern: u64) -> Result<Self> {
        if mutex_set >= Self::MAX_MUTEX_SETS || pattern > Self::MAX_PATTERN {
            return Err(Error::contract(format!(
                "context {mutex_set}:{pattern} does not fit the key layout"
            )));
        }
        Ok(Self::new(mutex_set, pattern))
    }

    #[inline]
    pub fn mutex_set(self) -> u32 {
        (self.0 >> PATTERN_BITS) as u32
    }

    #[inline]
    pub fn pattern(self) -> u64 {
        self.0 & Self::MAX_PATTERN
    }
}

impl fmt::Debug for ContextKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContextKey({}:{})", self.mutex_set(), self.pattern())
    }
}

impl fmt::Display for ContextKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.mutex_set(), self.pattern())
    }
}

/// The weights of one context predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    weights: Vec<f64>,
}

impl ParamBlock {
    /// Checks every weight against `[ln eps_low, 0]`.
    pub fn new(weights: Vec<f64>, eps_low: f64) -> Result<Self> {
        let lo = eps_low.ln();
        if let Some(w) = weights.iter().find(|w| !(lo..=0.0).contains(*w)) {
            return Err(Error::contract(format!(
                "weight {w} outside [{lo}, 0]"
            )));
        }
        Ok(ParamBlock { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// All stored context predictors plus the policy hyperparameters.
#[derive(Clone, Debug)]
pub struct ParamStore {
    num_actions: usize,
    eps_low: f64,
    eps_mix: f64,
    index: FxHashMap<ContextKey, u32>,
    keys: Vec<ContextKey>,
    weights: Vec<f64>,
}

impl ParamStore {
    pub fn new(num_actions: usize, eps_low: f64, eps_mix: f64) -> Result<Self> {
        if num_actions == 0 || num_actions > MAX_ACTIONS {
            return Err(Error::config(format!(
                "action count {num_actions} not in 1..={MAX_ACTIONS}"
            )));
        }
        if !(eps_low > 0.0 && eps_low < 1.0) {
            return Err(Error::config(format!("eps_low {eps_low} not in (0, 1)")));
        }
        if !(0.0..1.0).contains(&eps_mix) {
            return Err(Error::config(format!("eps_mix {eps_mix} not in [0, 1)")));
        }
        Ok(ParamStore {
            num_actions,
            eps_low,
            eps_mix,
            index: FxHashMap::default(),
            keys: Vec::new(),
            weights: Vec::new(),
        })
    }

    pub fn with_defaults(num_actions: usize) -> Result<Self> {
        Self::new(num_actions, DEFAULT_EPS_LOW, DEFAULT_EPS_MIX)
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn eps_low(&self) -> f64 {
        self.eps_low
    }

    pub fn eps_mix(&self) -> f64 {
        self.eps_mix
    }

    pub fn set_eps_mix(&mut self, eps_mix: f64) -> Result<()> {
        if !(0.0..1.0).contains(&eps_mix) {
            return Err(Error::config(format!("eps_mix {eps_mix} not in [0, 1)")));
        }
        self.eps_mix = eps_mix;
        Ok(())
    }

    /// Lower end of the weight range, `ln eps_low`.
    pub fn min_weight(&self) -> f64 {
        self.eps_low.ln()
    }

    /// Center of the beta-simplex, `(1 - 1/A) ln eps_low`.
    pub fn init_value(&self) -> f64 {
        (1.0 - 1.0 / self.num_actions as f64) * self.eps_low.ln()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Stored keys in insertion order.
    pub fn keys(&self) -> &[ContextKey] {
        &self.keys
    }

    pub fn block(&self, key: ContextKey) -> Option<&[f64]> {
        self.index.get(&key).map(|&i| self.block_at(i as usize))
    }

    pub fn index_of(&self, key: ContextKey) -> Option<usize> {
        self.index.get(&key).map(|&i| i as usize)
    }

    pub(crate) fn block_at(&self, idx: usize) -> &[f64] {
        let a = self.num_actions;
        &self.weights[idx * a..(idx + 1) * a]
    }

    /// Returns the block index of `key`, inserting a block at the simplex
    /// center if the context was not stored yet.
    pub fn materialize(&mut self, key: ContextKey) -> usize {
        if let Some(&i) = self.index.get(&key) {
            return i as usize;
        }
        let idx = self.keys.len();
        self.index.insert(key, idx as u32);
        self.keys.push(key);
        let init = self.init_value();
        self.weights
            .extend(std::iter::repeat_n(init, self.num_actions));
        idx
    }

    pub fn set_block(&mut self, key: ContextKey, block: ParamBlock) -> Result<()> {
        if block.weights.len() != self.num_actions {
            return Err(Error::contract(format!(
                "block has {} weights, store expects {}",
                block.weights.len(),
                self.num_actions
            )));
        }
        let lo = self.min_weight();
        if block.weights.iter().any(|w| !(lo..=0.0).contains(w)) {
            return Err(Error::contract(format!("block for {key} out of range")));
        }
        let idx = self.materialize(key);
        let a = self.num_actions;
        self.weights[idx * a..(idx + 1) * a].copy_from_slice(&block.weights);
        Ok(())
    }

    /// Flat weight arena, `len() * num_actions()` entries in key order.
    pub(crate) fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Overwrites the arena; values are clamped into the weight range.
    pub(crate) fn assign_weights(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.weights.len());
        let lo = self.min_weight();
        for (w, v) in self.weights.iter_mut().zip(values) {
            *w = v.clamp(lo, 0.0);
        }
    }

    /// Adds the weights of every stored active context into `logits`.
    #[inline]
    pub fn accumulate_logits(&self, active: &[ContextKey], logits: &mut [f64]) {
        let a = self.num_actions;
        for key in active {
            if let Some(&i) = self.index.get(key) {
                let i = i as usize * a;
                for (l, w) in logits.iter_mut().zip(&self.weights[i..i + a]) {
                    *l += w;
                }
            }
        }
    }

    /// Fails if the store cannot serve a domain with the given shape.
    pub fn check_compatible(&self, num_actions: usize, num_mutex_sets: usize) -> Result<()> {
        if num_actions != self.num_actions {
            return Err(Error::config(format!(
                "parameters have A={} but the domain has {num_actions} actions",
                self.num_actions
            )));
        }
        if let Some(k) = self
            .keys
            .iter()
            .find(|k| k.mutex_set() as usize >= num_mutex_sets)
        {
            return Err(Error::config(format!(
                "parameters reference mutex set {} but the domain declares {num_mutex_sets}",
                k.mutex_set()
            )));
        }
        Ok(())
    }

    /// Writes the versioned text snapshot, one line per context in key order.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "ltscm-params v1 A={} eps_low={}",
            self.num_actions, self.eps_low
        )?;
        let mut order: Vec<usize> = (0..self.keys.len()).collect();
        order.sort_by_key(|&i| self.keys[i]);
        for i in order {
            let key = self.keys[i];
            write!(w, "{} {}", key.mutex_set(), key.pattern())?;
            for x in self.block_at(i) {
                write!(w, " {x:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn snapshot_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_snapshot(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("snapshot is ASCII")
    }

    /// Reads a snapshot; `eps_mix` is not part of the file.
    pub fn read_snapshot<R: BufRead>(r: R, eps_mix: f64) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("empty parameter snapshot"))??;
        let (num_actions, eps_low) = parse_header(&header)?;
        let mut store = ParamStore::new(num_actions, eps_low, eps_mix)?;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let at = || format!("snapshot line {}", lineno + 2);
            let mut fields = line.split_ascii_whitespace();
            let mutex_set: u32 = parse_field(fields.next(), &at)?;
            let pattern: u64 = parse_field(fields.next(), &at)?;
            let weights = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::parse(format!("{}: {e}", at())))
                })
                .collect::<Result<Vec<_>>>()?;
            if weights.len() != num_actions {
                return Err(Error::parse(format!(
                    "{}: expected {num_actions} weights, found {}",
                    at(),
                    weights.len()
                )));
            }
            let key = ContextKey::try_new(mutex_set, pattern)?;
            if store.index.contains_key(&key) {
                return Err(Error::parse(format!("{}: duplicate context {key}", at())));
            }
            let block = ParamBlock::new(weights, eps_low)
                .map_err(|e| Error::parse(format!("{}: {e}", at())))?;
            store.set_block(key, block)?;
        }
        Ok(store)
    }
}

fn parse_header(header: &str) -> Result<(usize, f64)> {
    let bad = || Error::parse(format!("bad snapshot header {header:?}"));
    let mut parts = header.split_ascii_whitespace();
    if parts.next() != Some("ltscm-params") || parts.next() != Some("v1") {
        return Err(bad());
    }
    let a = parts
        .next()
        .and_then(|p| p.strip_prefix("A="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad)?;
    let eps = parts
        .next()
        .and_then(|p| p.strip_prefix("eps_low="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok((a, eps))
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, at: &dyn Fn() -> String) -> Result<T>
where
    T::Err: fmt::Display,
{
    let f = field.ok_or_else(|| Error::parse(format!("{}: missing field", at())))?;
    f.parse()
        .map_err(|e| Error::parse(format!("{}: {f:?}: {e}", at())))
}

/// Probability a single context predictor assigns to `action` among `valid`.
pub fn predictor_prob(block: &[f64], action: Action, valid: ActionSet) -> Result<f64> {
    if !valid.contains(action) {
        return Err(Error::contract(format!("action {action} is not valid here")));
    }
    if valid.span() > block.len() {
        return Err(Error::contract("valid set exceeds block width"));
    }
    let max = valid
        .iter()
        .map(|a| block[a as usize])
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = valid.iter().map(|a| (block[a as usize] - max).exp()).sum();
    Ok((block[action as usize] - max).exp() / z)
}

/// In-place softmax of `logits` restricted to `valid`; other entries become 0.
#[inline]
pub(crate) fn softmax_valid(logits: &mut [f64], valid: ActionSet) {
    let mut max = f64::NEG_INFINITY;
    for a in valid.iter() {
        max = max.max(logits[a as usize]);
    }
    let mut z = 0.0;
    for (i, l) in logits.iter_mut().enumerate() {
        if valid.contains(i as Action) {
            *l = (*l - max).exp();
            z += *l;
        } else {
            *l = 0.0;
        }
    }
    for a in valid.iter() {
        logits[a as usize] /= z;
    }
}

/// Renormalized product of the active predictors, as a vector of length
/// `A` (zero outside `valid`).
pub fn product_mix(active: &[ContextKey], valid: ActionSet, store: &ParamStore) -> Result<Vec<f64>> {
    if valid.is_empty() {
        return Err(Error::contract("no valid actions"));
    }
    if valid.span() > store.num_actions() {
        return Err(Error::contract("valid set exceeds the action alphabet"));
    }
    let mut logits = vec![0.0; store.num_actions()];
    store.accumulate_logits(active, &mut logits);
    softmax_valid(&mut logits, valid);
    Ok(logits)
}

/// Action probabilities of the policy. With `use_mix_floor`, a fraction
/// `eps_mix` of the mass is spread uniformly over the valid actions.
pub fn policy_prob(
    active: &[ContextKey],
    valid: ActionSet,
    store: &ParamStore,
    use_mix_floor: bool,
) -> Result<Vec<f64>> {
    let mut p = product_mix(active, valid, store)?;
    if use_mix_floor {
        apply_mix_floor(&mut p, valid, store.eps_mix());
    }
    Ok(p)
}

#[inline]
pub(crate) fn apply_mix_floor(p: &mut [f64], valid: ActionSet, eps_mix: f64) {
    let floor = eps_mix / valid.len() as f64;
    for a in valid.iter() {
        let x = &mut p[a as usize];
        *x = (1.0 - eps_mix) * *x + floor;
    }
}
