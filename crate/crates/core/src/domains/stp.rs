//! The n x n sliding-tile puzzle.
//!
//! Cells hold tile numbers, with 0 for the blank; the goal puts tile `i` at
//! row-major position `i`, so the blank ends top-left. Actions move the
//! blank: 0 up, 1 down, 2 left, 3 right. Contexts are blank-centered tiles
//! over the tile numbers, with `n*n` as the padding value, plus one mutex
//! set for the previous action.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tiling::{GridState, TileSuite, TilingSpec};
use crate::error::{Error, Result};
use crate::policy::{Action, ActionSet, ContextKey};
use crate::search::DomainAdapter;

pub const UP: Action = 0;
pub const DOWN: Action = 1;
pub const LEFT: Action = 2;
pub const RIGHT: Action = 3;

const STP_FORMAT: &str = "ltscm-stp v1";

/// The tilings used for every board size; smaller boards see more padding.
pub fn stp_tilings() -> [TilingSpec; 4] {
    [
        TilingSpec { row_span: 2, col_span: 2, row_dist: 3, col_dist: 3 },
        TilingSpec { row_span: 2, col_span: 1, row_dist: 2, col_dist: 2 },
        TilingSpec { row_span: 1, col_span: 2, row_dist: 2, col_dist: 2 },
        TilingSpec { row_span: 1, col_span: 1, row_dist: 2, col_dist: 2 },
    ]
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StpProblem {
    pub size: usize,
    /// `tiles[pos]` is the tile at row-major position `pos`.
    pub tiles: Vec<u8>,
}

impl StpProblem {
    pub fn new(size: usize, tiles: Vec<u8>) -> Result<Self> {
        if !(2..=5).contains(&size) {
            return Err(Error::contract(format!("board size {size} outside 2..=5")));
        }
        let mut seen = vec![false; size * size];
        if tiles.len() != size * size {
            return Err(Error::contract(format!("expected {} tiles, got {}", size * size, tiles.len())));
        }
        for &t in &tiles {
            if (t as usize) >= seen.len() || std::mem::replace(&mut seen[t as usize], true) {
                return Err(Error::contract(format!("tiles {tiles:?} are not a permutation")));
            }
        }
        Ok(StpProblem { size, tiles })
    }

    pub fn solved(size: usize) -> Self {
        StpProblem { size, tiles: (0..(size * size) as u8).collect() }
    }
}

/// Whether `tiles` can reach the goal: the permutation parity must equal the
/// parity of the blank's Manhattan distance to its goal cell, since every
/// move is one transposition and one blank step.
pub fn is_solvable(size: usize, tiles: &[u8]) -> bool {
    let n = tiles.len();
    let mut seen = vec![false; n];
    let mut transpositions = 0;
    for i in 0..n {
        if seen[i] {
            continue;
        }
        let mut j = i;
        let mut len = 0;
        while !seen[j] {
            seen[j] = true;
            j = tiles[j] as usize;
            len += 1;
        }
        transpositions += len - 1;
    }
    let blank = tiles.iter().position(|&t| t == 0).expect("blank present");
    let dist = blank / size + blank % size;
    transpositions % 2 == dist % 2
}

pub struct StpDomain {
    size: usize,
    suite: TileSuite,
}

impl StpDomain {
    pub fn new(size: usize) -> Result<Self> {
        if !(2..=5).contains(&size) {
            return Err(Error::config(format!("board size {size} outside 2..=5")));
        }
        let pad = (size * size) as u8;
        let suite = TileSuite::new(&stp_tilings(), pad + 1, pad)?;
        Ok(StpDomain { size, suite })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn neighbor(&self, blank: usize, a: Action) -> Option<usize> {
        let (r, c, n) = (blank / self.size, blank % self.size, self.size);
        match a {
            UP if r > 0 => Some(blank - n),
            DOWN if r + 1 < n => Some(blank + n),
            LEFT if c > 0 => Some(blank - 1),
            RIGHT if c + 1 < n => Some(blank + 1),
            _ => None,
        }
    }
}

impl DomainAdapter for StpDomain {
    type Problem = StpProblem;
    type State = GridState;
    type Key = u128;

    fn num_actions(&self) -> usize {
        4
    }

    fn num_mutex_sets(&self) -> usize {
        self.suite.len() + 1
    }

    fn initial_state(&self, p: &StpProblem) -> GridState {
        assert_eq!(p.size, self.size, "problem size does not match the domain");
        GridState {
            rows: p.size,
            cols: p.size,
            cells: p.tiles.clone(),
            agent: p.tiles.iter().position(|&t| t == 0).expect("blank present"),
        }
    }

    fn transition(&self, _: &StpProblem, s: &GridState, a: Action) -> GridState {
        let to = self.neighbor(s.agent, a).expect("transition on an invalid action");
        let mut next = s.clone();
        next.cells.swap(s.agent, to);
        next.agent = to;
        next
    }

    fn valid_actions(&self, _: &StpProblem, s: &GridState) -> ActionSet {
        (0..4).filter(|&a| self.neighbor(s.agent, a).is_some()).collect()
    }

    fn is_goal(&self, _: &StpProblem, s: &GridState) -> bool {
        s.cells.iter().enumerate().all(|(i, &t)| t as usize == i)
    }

    fn active_contexts(&self, _: &StpProblem, s: &GridState, last: Option<Action>, out: &mut Vec<ContextKey>) {
        self.suite.encode_grid(s, 0, out);
        out.push(ContextKey::new(self.suite.len() as u32, last.map_or(4, u64::from)));
    }

    fn state_key(&self, _: &StpProblem, s: &GridState) -> u128 {
        s.cells.iter().fold(0u128, |k, &t| (k << 5) | t as u128)
    }
}

/// `count` uniformly random solvable boards.
pub fn gen_stp(count: usize, size: usize, seed: u64) -> Result<Vec<StpProblem>> {
    if count < 1 {
        return Err(Error::config("count must be at least 1"));
    }
    if !(2..=5).contains(&size) {
        return Err(Error::config(format!("board size {size} outside 2..=5")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tiles: Vec<u8> = (0..(size * size) as u8).collect();
        tiles.shuffle(&mut rng);
        if !is_solvable(size, &tiles) {
            // Swapping two fixed non-blank positions is a bijection between
            // the two parity classes, so the result stays uniform.
            let (i, j) = match (tiles[0], tiles[1]) {
                (0, _) | (_, 0) => (2, 3),
                _ => (0, 1),
            };
            tiles.swap(i, j);
        }
        out.push(StpProblem { size, tiles });
    }
    Ok(out)
}

pub fn write_stp_problems<W: Write>(mut w: W, problems: &[StpProblem]) -> Result<()> {
    let size = problems.first().map_or(3, |p| p.size);
    writeln!(w, "{STP_FORMAT} size={size}")?;
    for p in problems {
        if p.size != size {
            return Err(Error::contract("mixed board sizes in one problem file"));
        }
        let line: Vec<String> = p.tiles.iter().map(|t| t.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_stp_problems<R: BufRead>(r: R) -> Result<Vec<StpProblem>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let size = header
        .strip_prefix(STP_FORMAT)
        .and_then(|rest| rest.trim().strip_prefix("size="))
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::parse(format!("line 1: expected '{STP_FORMAT} size=N', got '{header}'")))?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tiles = line
            .split_whitespace()
            .map(|t| t.parse::<u8>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(format!("line {}: {e}", i + 2)))?;
        let p = StpProblem::new(size, tiles).map_err(|e| Error::parse(format!("line {}: {e}", i + 2)))?;
        out.push(p);
    }
    Ok(out)
}
