//! The 3x3x3 Rubik's cube in the quarter-turn metric.
//!
//! Locations are numbered corners first, then edges:
//!
//! ```text
//! corners  0 URF  1 UFL  2 ULB  3 UBR  4 DFR  5 DLF  6 DBL  7 DRB
//! edges    8 UR   9 UF  10 UL  11 UB  12 DR  13 DF  14 DL  15 DB
//!         16 FR  17 FL  18 BL  19 BR
//! ```
//!
//! Each location holds a code in `[0, 24)`: `3 * cubie + twist` for corners
//! and `2 * cubie + flip` for edges, where cubies are numbered like their
//! home locations. Orientation follows the usual U/D-facelet convention:
//! a corner's twist counts clockwise turns of its U or D sticker away from
//! the U/D face, and an edge is flipped when its reference sticker (U/D,
//! else F/B) is off the reference face. Quarter turns are clockwise when
//! looking at the face; actions are `U U' R R' F F' D D' L L' B B'` = 0..12,
//! so the inverse of action `a` is `a ^ 1`.
//!
//! Contexts: one mutex set per unordered location pair `i < j`, enumerated
//! lexicographically, with pattern `24 * code(i) + code(j)`, plus one set
//! for the previous action (12 for the root).

use std::io::{BufRead, Write};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::policy::{Action, ActionSet, ContextKey};
use crate::search::DomainAdapter;

pub const NUM_MOVES: usize = 12;
pub const NUM_SLOTS: usize = 20;
pub const MOVE_NAMES: [&str; NUM_MOVES] = ["U", "U'", "R", "R'", "F", "F'", "D", "D'", "L", "L'", "B", "B'"];
const NUM_PAIRS: usize = NUM_SLOTS * (NUM_SLOTS - 1) / 2;
const CUBE_FORMAT: &str = "ltscm-cube v1";

#[derive(Clone, Copy, PartialEq, Eq)]
struct Cubies {
    cp: [u8; 8],
    co: [u8; 8],
    ep: [u8; 12],
    eo: [u8; 12],
}

impl Cubies {
    /// `self` followed by `m`.
    fn then(&self, m: &Cubies) -> Cubies {
        let mut out = *self;
        for i in 0..8 {
            out.cp[i] = self.cp[m.cp[i] as usize];
            out.co[i] = (self.co[m.cp[i] as usize] + m.co[i]) % 3;
        }
        for i in 0..12 {
            out.ep[i] = self.ep[m.ep[i] as usize];
            out.eo[i] = (self.eo[m.ep[i] as usize] + m.eo[i]) % 2;
        }
        out
    }
}

/// Clockwise face turns in the order U R F D L B.
const FACE_TURNS: [Cubies; 6] = [
    Cubies {
        cp: [3, 0, 1, 2, 4, 5, 6, 7],
        co: [0; 8],
        ep: [3, 0, 1, 2, 4, 5, 6, 7, 8, 9, 10, 11],
        eo: [0; 12],
    },
    Cubies {
        cp: [4, 1, 2, 0, 7, 5, 6, 3],
        co: [2, 0, 0, 1, 1, 0, 0, 2],
        ep: [8, 1, 2, 3, 11, 5, 6, 7, 4, 9, 10, 0],
        eo: [0; 12],
    },
    Cubies {
        cp: [1, 5, 2, 3, 0, 4, 6, 7],
        co: [1, 2, 0, 0, 2, 1, 0, 0],
        ep: [0, 9, 2, 3, 4, 8, 6, 7, 1, 5, 10, 11],
        eo: [0, 1, 0, 0, 0, 1, 0, 0, 1, 1, 0, 0],
    },
    Cubies {
        cp: [0, 1, 2, 3, 5, 6, 7, 4],
        co: [0; 8],
        ep: [0, 1, 2, 3, 5, 6, 7, 4, 8, 9, 10, 11],
        eo: [0; 12],
    },
    Cubies {
        cp: [0, 2, 6, 3, 4, 1, 5, 7],
        co: [0, 1, 2, 0, 0, 2, 1, 0],
        ep: [0, 1, 10, 3, 4, 5, 9, 7, 8, 2, 6, 11],
        eo: [0; 12],
    },
    Cubies {
        cp: [0, 1, 3, 7, 4, 5, 2, 6],
        co: [0, 0, 1, 2, 0, 0, 2, 1],
        ep: [0, 1, 2, 7, 4, 5, 6, 11, 8, 9, 3, 10],
        eo: [0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1, 1],
    },
];

/// Per move: the source location of every location, and the new code of
/// location `i` as a function of the code arriving there.
struct MoveTable {
    src: [[u8; NUM_SLOTS]; NUM_MOVES],
    recode: [[[u8; 24]; NUM_SLOTS]; NUM_MOVES],
}

fn move_table() -> &'static MoveTable {
    static TABLE: OnceLock<MoveTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = MoveTable { src: [[0; NUM_SLOTS]; NUM_MOVES], recode: [[[0; 24]; NUM_SLOTS]; NUM_MOVES] };
        for (f, turn) in FACE_TURNS.iter().enumerate() {
            let prime = turn.then(turn).then(turn);
            for (k, m) in [turn, &prime].into_iter().enumerate() {
                let a = 2 * f + k;
                for i in 0..8 {
                    t.src[a][i] = m.cp[i];
                    for code in 0..24u8 {
                        t.recode[a][i][code as usize] = code / 3 * 3 + (code % 3 + m.co[i]) % 3;
                    }
                }
                for i in 0..12 {
                    t.src[a][8 + i] = 8 + m.ep[i];
                    for code in 0..24u8 {
                        t.recode[a][8 + i][code as usize] = code / 2 * 2 + (code % 2 + m.eo[i]) % 2;
                    }
                }
            }
        }
        t
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CubeState {
    slots: [u8; NUM_SLOTS],
}

impl CubeState {
    pub fn solved() -> Self {
        let mut slots = [0u8; NUM_SLOTS];
        for (i, s) in slots.iter_mut().enumerate() {
            *s = if i < 8 { 3 * i as u8 } else { 2 * (i as u8 - 8) };
        }
        CubeState { slots }
    }

    /// Validates that corners and edges each form a permutation with legal
    /// orientation codes.
    pub fn from_slots(slots: [u8; NUM_SLOTS]) -> Result<Self> {
        let mut seen = [false; NUM_SLOTS];
        for (i, &c) in slots.iter().enumerate() {
            let cubie = if i < 8 {
                (c < 24).then_some(c as usize / 3)
            } else {
                (c < 24).then_some(8 + c as usize / 2)
            };
            match cubie {
                Some(k) if !std::mem::replace(&mut seen[k], true) => {}
                _ => return Err(Error::contract(format!("invalid cube slots {slots:?}"))),
            }
        }
        Ok(CubeState { slots })
    }

    pub fn slots(&self) -> &[u8; NUM_SLOTS] {
        &self.slots
    }

    pub fn apply(&self, a: Action) -> CubeState {
        let t = move_table();
        let (src, recode) = (&t.src[a as usize], &t.recode[a as usize]);
        let mut slots = [0u8; NUM_SLOTS];
        for i in 0..NUM_SLOTS {
            slots[i] = recode[i][self.slots[src[i] as usize] as usize];
        }
        CubeState { slots }
    }

    pub fn apply_all(&self, moves: &[Action]) -> CubeState {
        moves.iter().fold(*self, |s, &a| s.apply(a))
    }

    pub fn is_solved(&self) -> bool {
        *self == Self::solved()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CubeProblem {
    pub scramble: Vec<Action>,
}

impl CubeProblem {
    pub fn new(scramble: Vec<Action>) -> Result<Self> {
        if let Some(a) = scramble.iter().find(|&&a| a as usize >= NUM_MOVES) {
            return Err(Error::contract(format!("move {a} outside the 12-move alphabet")));
        }
        Ok(CubeProblem { scramble })
    }

    /// The moves that undo the scramble.
    pub fn inverse_scramble(&self) -> Vec<Action> {
        self.scramble.iter().rev().map(|a| a ^ 1).collect()
    }
}

pub struct CubeDomain {
    pairs: Vec<(u8, u8)>,
}

impl CubeDomain {
    pub fn new() -> Self {
        let mut pairs = Vec::with_capacity(NUM_PAIRS);
        for i in 0..NUM_SLOTS as u8 {
            for j in i + 1..NUM_SLOTS as u8 {
                pairs.push((i, j));
            }
        }
        CubeDomain { pairs }
    }
}

impl Default for CubeDomain {
    fn default() -> Self {
        Self::new()
    }
}

impl DomainAdapter for CubeDomain {
    type Problem = CubeProblem;
    type State = CubeState;
    type Key = [u8; NUM_SLOTS];

    fn num_actions(&self) -> usize {
        NUM_MOVES
    }

    fn num_mutex_sets(&self) -> usize {
        NUM_PAIRS + 1
    }

    fn initial_state(&self, p: &CubeProblem) -> CubeState {
        CubeState::solved().apply_all(&p.scramble)
    }

    fn transition(&self, _: &CubeProblem, s: &CubeState, a: Action) -> CubeState {
        s.apply(a)
    }

    fn valid_actions(&self, _: &CubeProblem, _: &CubeState) -> ActionSet {
        ActionSet::full(NUM_MOVES)
    }

    fn is_goal(&self, _: &CubeProblem, s: &CubeState) -> bool {
        s.is_solved()
    }

    fn active_contexts(&self, _: &CubeProblem, s: &CubeState, last: Option<Action>, out: &mut Vec<ContextKey>) {
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let code = 24 * s.slots[i as usize] as u64 + s.slots[j as usize] as u64;
            out.push(ContextKey::new(k as u32, code));
        }
        out.push(ContextKey::new(NUM_PAIRS as u32, last.map_or(NUM_MOVES as u64, u64::from)));
    }

    fn state_key(&self, _: &CubeProblem, s: &CubeState) -> [u8; NUM_SLOTS] {
        s.slots
    }
}

/// Random walks from the solved cube, each of length uniform in
/// `[min_len, max_len]`, never undoing the previous move directly.
pub fn gen_cube_scrambles(count: usize, min_len: usize, max_len: usize, seed: u64) -> Result<Vec<CubeProblem>> {
    if count < 1 {
        return Err(Error::config("count must be at least 1"));
    }
    if min_len > max_len {
        return Err(Error::config(format!("scramble length range {min_len}..={max_len} is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.gen_range(min_len..=max_len);
        let mut moves: Vec<Action> = Vec::with_capacity(len);
        while moves.len() < len {
            let a = rng.gen_range(0..NUM_MOVES as Action);
            if moves.last().is_none_or(|&p| p != a ^ 1) {
                moves.push(a);
            }
        }
        out.push(CubeProblem { scramble: moves });
    }
    Ok(out)
}

pub fn parse_move(token: &str) -> Option<Action> {
    MOVE_NAMES.iter().position(|&n| n == token).map(|i| i as Action)
}

pub fn write_cube_problems<W: Write>(mut w: W, problems: &[CubeProblem]) -> Result<()> {
    writeln!(w, "{CUBE_FORMAT}")?;
    for p in problems {
        if p.scramble.is_empty() {
            writeln!(w, "-")?;
        } else {
            let names: Vec<&str> = p.scramble.iter().map(|&a| MOVE_NAMES[a as usize]).collect();
            writeln!(w, "{}", names.join(" "))?;
        }
    }
    Ok(())
}

pub fn read_cube_problems<R: BufRead>(r: R) -> Result<Vec<CubeProblem>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != CUBE_FORMAT {
        return Err(Error::parse(format!("line 1: expected '{CUBE_FORMAT}', got '{header}'")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "-" {
            out.push(CubeProblem { scramble: Vec::new() });
            continue;
        }
        let moves = line
            .split_whitespace()
            .map(|t| parse_move(t).ok_or_else(|| Error::parse(format!("line {}: unknown move '{t}'", i + 2))))
            .collect::<Result<Vec<_>>>()?;
        out.push(CubeProblem { scramble: moves });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parity(p: &[u8]) -> usize {
        let mut inv = 0;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                inv += (p[i] > p[j]) as usize;
            }
        }
        inv % 2
    }

    fn check_invariants(s: &CubeState) {
        let c = &s.slots[..8];
        let e = &s.slots[8..];
        assert!(s.slots.iter().all(|&x| x < 24));
        assert_eq!(c.iter().map(|x| (x % 3) as usize).sum::<usize>() % 3, 0);
        assert_eq!(e.iter().map(|x| (x % 2) as usize).sum::<usize>() % 2, 0);
        let cp: Vec<u8> = c.iter().map(|x| x / 3).collect();
        let ep: Vec<u8> = e.iter().map(|x| x / 2).collect();
        assert_eq!(parity(&cp), parity(&ep));
        CubeState::from_slots(s.slots).unwrap();
    }

    #[test]
    fn face_turns_have_order_four_and_inverses_cancel() {
        let s0 = CubeState::solved();
        for a in 0..NUM_MOVES as Action {
            let once = s0.apply(a);
            assert_ne!(once, s0);
            assert_eq!(once.apply_all(&[a, a, a]), s0, "move {}", MOVE_NAMES[a as usize]);
            assert_eq!(once.apply(a ^ 1), s0);
        }
        // the two moves of each face are inverses, different faces differ
        let mut seen = std::collections::HashSet::new();
        for a in 0..NUM_MOVES as Action {
            assert!(seen.insert(s0.apply(a)));
        }
    }

    #[test]
    fn ru_has_order_105() {
        let s0 = CubeState::solved();
        let mut s = s0;
        for n in 1..=105 {
            s = s.apply_all(&[2, 0]);
            if s == s0 {
                assert_eq!(n, 105);
                return;
            }
        }
        panic!("RU did not return to solved within 105 repetitions");
    }

    #[test]
    fn moves_preserve_group_invariants() {
        for p in gen_cube_scrambles(200, 0, 30, 5).unwrap() {
            let s = CubeState::solved().apply_all(&p.scramble);
            check_invariants(&s);
            assert!(s.apply_all(&p.inverse_scramble()).is_solved());
        }
    }

    #[test]
    fn each_face_turn_touches_four_corners_and_four_edges() {
        let s0 = CubeState::solved();
        for a in (0..NUM_MOVES as Action).step_by(2) {
            let s = s0.apply(a);
            let moved = |r: std::ops::Range<usize>| r.filter(|&i| s.slots[i] != s0.slots[i]).count();
            assert_eq!(moved(0..8), 4);
            assert_eq!(moved(8..20), 4);
        }
    }

    #[test]
    fn invalid_slots_rejected() {
        let mut slots = *CubeState::solved().slots();
        slots[1] = slots[0];
        assert!(CubeState::from_slots(slots).is_err());
        let mut slots = *CubeState::solved().slots();
        slots[19] = 24;
        assert!(CubeState::from_slots(slots).is_err());
        assert!(CubeProblem::new(vec![12]).is_err());
    }

    #[test]
    fn contexts() {
        let d = CubeDomain::new();
        assert_eq!(d.num_mutex_sets(), 191);
        let p = CubeProblem::new(vec![0, 4]).unwrap();
        let s = d.initial_state(&p);
        let mut out = Vec::new();
        d.active_contexts(&p, &s, Some(4), &mut out);
        assert_eq!(out.len(), 191);
        assert!(out[..190].iter().all(|k| k.pattern() < 576));
        assert_eq!(out[190], ContextKey::new(190, 4));
        out.clear();
        d.active_contexts(&p, &s, None, &mut out);
        assert_eq!(out[190].pattern(), 12);
        // pair (0, 1) is the first set
        assert_eq!(out[0].pattern(), 24 * s.slots()[0] as u64 + s.slots()[1] as u64);
    }

    #[test]
    fn generation() {
        assert!(gen_cube_scrambles(3, 0, 0, 1).unwrap().iter().all(|p| p.scramble.is_empty()));
        let ps = gen_cube_scrambles(100, 5, 10, 2).unwrap();
        assert_eq!(ps, gen_cube_scrambles(100, 5, 10, 2).unwrap());
        for p in &ps {
            assert!((5..=10).contains(&p.scramble.len()));
            assert!(p.scramble.windows(2).all(|w| w[1] != w[0] ^ 1));
        }
        assert!(gen_cube_scrambles(1, 3, 2, 0).is_err());
    }

    #[test]
    fn problem_file_round_trip() {
        let mut ps = gen_cube_scrambles(20, 0, 8, 3).unwrap();
        ps.push(CubeProblem { scramble: vec![] });
        let mut buf = Vec::new();
        write_cube_problems(&mut buf, &ps).unwrap();
        assert_eq!(read_cube_problems(&buf[..]).unwrap(), ps);
        assert!(read_cube_problems(&b"ltscm-cube v1\nU X\n"[..]).is_err());
        assert!(read_cube_problems(&b"cube\n"[..]).is_err());
    }
}
