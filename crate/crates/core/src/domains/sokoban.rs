//! Sokoban on 10 x 10 Boxoban levels.
//!
//! Walls and goals are fixed per level; the state is the player cell plus a
//! box bitmap. Actions move the player 0 up, 1 down, 2 left, 3 right,
//! pushing a box if the cell behind it is free. Blocked moves are not valid.
//!
//! Tiles read the cell alphabet wall 0, empty 1, goal 2, box 3,
//! box-on-goal 4, with the player's cell read as its floor and walls as
//! padding. The last mutex set encodes the previous direction and whether
//! it pushed a box, as `2 * dir + pushed`, with 8 for the root.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tiling::{TileSuite, TilingSpec};
use crate::error::{Error, Result};
use crate::policy::{Action, ActionSet, ContextKey};
use crate::search::DomainAdapter;

pub const SIZE: usize = 10;
const CELLS: usize = SIZE * SIZE;

const WALL: u8 = 0;
const EMPTY: u8 = 1;
const GOAL: u8 = 2;
const BOX: u8 = 3;
const BOX_ON_GOAL: u8 = 4;

pub fn sokoban_tilings() -> [TilingSpec; 6] {
    [
        TilingSpec { row_span: 3, col_span: 3, row_dist: 4, col_dist: 4 },
        TilingSpec { row_span: 2, col_span: 4, row_dist: 2, col_dist: 3 },
        TilingSpec { row_span: 4, col_span: 2, row_dist: 3, col_dist: 2 },
        TilingSpec { row_span: 2, col_span: 2, row_dist: 2, col_dist: 2 },
        TilingSpec { row_span: 1, col_span: 2, row_dist: 1, col_dist: 1 },
        TilingSpec { row_span: 2, col_span: 1, row_dist: 1, col_dist: 1 },
    ]
}

#[inline]
fn bit(i: usize) -> u128 {
    1u128 << i
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SokobanLevel {
    pub id: String,
    pub walls: u128,
    pub goals: u128,
    pub boxes: u128,
    pub player: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SokobanState {
    pub player: u8,
    pub boxes: u128,
    /// Whether the move into this state pushed a box. Not part of the key.
    pub pushed: bool,
}

fn step(cell: usize, dir: Action) -> Option<usize> {
    let (r, c) = (cell / SIZE, cell % SIZE);
    match dir {
        0 if r > 0 => Some(cell - SIZE),
        1 if r + 1 < SIZE => Some(cell + SIZE),
        2 if c > 0 => Some(cell - 1),
        3 if c + 1 < SIZE => Some(cell + 1),
        _ => None,
    }
}

impl SokobanLevel {
    fn floor(&self, i: usize) -> u8 {
        if self.walls & bit(i) != 0 {
            WALL
        } else if self.goals & bit(i) != 0 {
            GOAL
        } else {
            EMPTY
        }
    }

    fn blocked(&self, boxes: u128, i: usize) -> bool {
        (self.walls | boxes) & bit(i) != 0
    }

    /// Boxoban text for this level with boxes and player from `state`.
    pub fn render(&self, state: &SokobanState) -> String {
        let mut s = format!("; {}\n", self.id);
        for r in 0..SIZE {
            for c in 0..SIZE {
                let i = r * SIZE + c;
                let (b, g, p) = (state.boxes & bit(i) != 0, self.goals & bit(i) != 0, state.player as usize == i);
                s.push(match (self.walls & bit(i) != 0, b, g, p) {
                    (true, ..) => '#',
                    (_, true, true, _) => '*',
                    (_, true, false, _) => '$',
                    (_, _, true, true) => '+',
                    (_, _, false, true) => '@',
                    (_, _, true, false) => '.',
                    _ => ' ',
                });
            }
            s.push('\n');
        }
        s
    }
}

/// Parses Boxoban level text: each level is a `; <id>` line followed by ten
/// rows of ten characters. Blank lines between levels are ignored.
pub fn parse_boxoban(text: &str) -> Result<Vec<SokobanLevel>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i].trim_end_matches('\r');
        if line.trim().is_empty() {
            i += 1;
            continue;
        }
        let id = line
            .strip_prefix(';')
            .map(|s| s.trim().to_string())
            .ok_or_else(|| Error::parse(format!("line {}: expected '; <id>', got '{line}'", i + 1)))?;
        let header_line = i + 1;
        let mut level = SokobanLevel { id: id.clone(), walls: 0, goals: 0, boxes: 0, player: u8::MAX };
        let mut players = 0;
        for r in 0..SIZE {
            let ln = i + 1 + r;
            let row = lines
                .get(ln)
                .map(|l| l.trim_end_matches('\r'))
                .ok_or_else(|| Error::parse(format!("level '{id}' (line {header_line}): only {r} rows")))?;
            if row.chars().count() != SIZE {
                return Err(Error::parse(format!(
                    "level '{id}' line {}: expected {SIZE} columns, got {}",
                    ln + 1,
                    row.chars().count()
                )));
            }
            for (c, ch) in row.chars().enumerate() {
                let b = bit(r * SIZE + c);
                match ch {
                    '#' => level.walls |= b,
                    ' ' => {}
                    '$' => level.boxes |= b,
                    '.' => level.goals |= b,
                    '*' => {
                        level.boxes |= b;
                        level.goals |= b;
                    }
                    '@' | '+' => {
                        players += 1;
                        level.player = (r * SIZE + c) as u8;
                        if ch == '+' {
                            level.goals |= b;
                        }
                    }
                    _ => {
                        return Err(Error::parse(format!(
                            "level '{id}' line {}: unknown character {ch:?}",
                            ln + 1
                        )))
                    }
                }
            }
        }
        if players != 1 {
            return Err(Error::parse(format!("level '{id}' (line {header_line}): {players} players")));
        }
        let (nb, ng) = (level.boxes.count_ones(), level.goals.count_ones());
        if nb != ng {
            return Err(Error::parse(format!("level '{id}' (line {header_line}): {nb} boxes but {ng} goals")));
        }
        out.push(level);
        i += 1 + SIZE;
    }
    Ok(out)
}

pub struct SokobanDomain {
    suite: TileSuite,
}

impl SokobanDomain {
    pub fn new() -> Self {
        let suite = TileSuite::new(&sokoban_tilings(), 5, WALL).expect("fixed tilings are valid");
        SokobanDomain { suite }
    }
}

impl Default for SokobanDomain {
    fn default() -> Self {
        Self::new()
    }
}

impl DomainAdapter for SokobanDomain {
    type Problem = SokobanLevel;
    type State = SokobanState;
    type Key = (u8, u128);

    fn num_actions(&self) -> usize {
        4
    }

    fn num_mutex_sets(&self) -> usize {
        self.suite.len() + 1
    }

    fn initial_state(&self, p: &SokobanLevel) -> SokobanState {
        SokobanState { player: p.player, boxes: p.boxes, pushed: false }
    }

    fn transition(&self, p: &SokobanLevel, s: &SokobanState, a: Action) -> SokobanState {
        let to = step(s.player as usize, a).expect("transition on an invalid action");
        let mut boxes = s.boxes;
        let pushed = boxes & bit(to) != 0;
        if pushed {
            let beyond = step(to, a).expect("transition on an invalid action");
            debug_assert!(!p.blocked(boxes, beyond));
            boxes = boxes & !bit(to) | bit(beyond);
        }
        SokobanState { player: to as u8, boxes, pushed }
    }

    fn valid_actions(&self, p: &SokobanLevel, s: &SokobanState) -> ActionSet {
        let mut set = ActionSet::empty();
        for a in 0..4 {
            let Some(to) = step(s.player as usize, a) else { continue };
            if p.walls & bit(to) != 0 {
                continue;
            }
            if s.boxes & bit(to) != 0 {
                match step(to, a) {
                    Some(b) if !p.blocked(s.boxes, b) => {}
                    _ => continue,
                }
            }
            set.insert(a);
        }
        set
    }

    fn is_goal(&self, p: &SokobanLevel, s: &SokobanState) -> bool {
        s.boxes & !p.goals == 0
    }

    fn active_contexts(&self, p: &SokobanLevel, s: &SokobanState, last: Option<Action>, out: &mut Vec<ContextKey>) {
        let cell = |i: usize| {
            let f = p.floor(i);
            if s.boxes & bit(i) == 0 {
                f
            } else if f == GOAL {
                BOX_ON_GOAL
            } else {
                BOX
            }
        };
        self.suite.encode(SIZE, SIZE, s.player as usize, 0, cell, out);
        let code = last.map_or(8, |a| 2 * a as u64 + s.pushed as u64);
        out.push(ContextKey::new(self.suite.len() as u32, code));
    }

    fn state_key(&self, _: &SokobanLevel, s: &SokobanState) -> (u8, u128) {
        (s.player, s.boxes)
    }
}

impl fmt::Display for SokobanLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&SokobanState { player: self.player, boxes: self.boxes, pushed: false }))
    }
}

/// Random solvable levels built by pulling boxes away from their goals.
///
/// The room is a walled 10 x 10 box with a few random interior walls; boxes
/// start on goals and the player walks and pulls them for `pulls` random
/// steps. Every level is solvable by reversing the walk.
pub fn gen_sokoban(count: usize, num_boxes: usize, pulls: usize, seed: u64) -> Result<Vec<SokobanLevel>> {
    if count < 1 || num_boxes < 1 {
        return Err(Error::config("count and num_boxes must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut walls = 0u128;
        for i in 0..CELLS {
            let (r, c) = (i / SIZE, i % SIZE);
            if r == 0 || c == 0 || r == SIZE - 1 || c == SIZE - 1 || rng.gen_bool(0.12) {
                walls |= bit(i);
            }
        }
        let free: Vec<usize> = (0..CELLS).filter(|&i| walls & bit(i) == 0).collect();
        if free.len() < num_boxes + 8 {
            continue;
        }
        let mut goals = 0u128;
        while (goals.count_ones() as usize) < num_boxes {
            goals |= bit(free[rng.gen_range(0..free.len())]);
        }
        let mut boxes = goals;
        let mut player = loop {
            let c = free[rng.gen_range(0..free.len())];
            if boxes & bit(c) == 0 {
                break c;
            }
        };
        for _ in 0..pulls {
            let dir = rng.gen_range(0..4u8);
            let Some(to) = step(player, dir) else { continue };
            if (walls | boxes) & bit(to) != 0 {
                continue;
            }
            // the box opposite the walking direction follows the player
            let back = step(player, dir ^ 1);
            if let Some(b) = back.filter(|&b| boxes & bit(b) != 0) {
                if rng.gen_bool(0.7) {
                    boxes = boxes & !bit(b) | bit(player);
                }
            }
            player = to;
        }
        if boxes == goals {
            continue;
        }
        out.push(SokobanLevel { id: out.len().to_string(), walls, goals, boxes, player: player as u8 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ParamStore;
    use crate::search::{lts_search, replay_reaches_goal, SearchResult};

    const LEVEL: &str = "; 7
##########
#        #
#  $  .  #
#  @     #
#        #
#   *    #
#        #
#      ###
#     ## #
##########
";

    #[test]
    fn empty_input_gives_no_levels() {
        assert!(parse_boxoban("").unwrap().is_empty());
        assert!(parse_boxoban("\n\n").unwrap().is_empty());
    }

    #[test]
    fn render_round_trip() {
        let levels = parse_boxoban(LEVEL).unwrap();
        assert_eq!(levels.len(), 1);
        assert_eq!(levels[0].id, "7");
        assert_eq!(levels[0].to_string(), LEVEL);
        let two = format!("{LEVEL}\n{}", LEVEL.replace("; 7", "; 8"));
        let parsed = parse_boxoban(&two).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parse_boxoban(&parsed[1].to_string()).unwrap()[0], parsed[1]);
    }

    #[test]
    fn malformed_levels_rejected() {
        let extra_box = LEVEL.replace("#        #\n#   *", "#  $     #\n#   *");
        let e = parse_boxoban(&extra_box).unwrap_err().to_string();
        assert!(e.contains("3 boxes but 2 goals") && e.contains("'7'"), "{e}");
        assert!(parse_boxoban(&LEVEL.replace('@', " ")).is_err());
        assert!(parse_boxoban(&LEVEL.replace("#      ###", "#      ##")).is_err());
        let e = parse_boxoban(&LEVEL.replace("#      ###", "#   x  ###")).unwrap_err().to_string();
        assert!(e.contains("line 9"), "{e}");
        assert!(parse_boxoban(&LEVEL[..40]).is_err());
    }

    #[test]
    fn mutex_set_count_and_codes() {
        let d = SokobanDomain::new();
        let per: Vec<usize> = sokoban_tilings().iter().map(|s| s.num_tiles()).collect();
        assert_eq!(per, vec![49, 16, 16, 16, 6, 6]);
        assert_eq!(d.num_mutex_sets(), 110);
        let p = &parse_boxoban(LEVEL).unwrap()[0];
        let s = d.initial_state(p);
        let mut out = Vec::new();
        d.active_contexts(p, &s, None, &mut out);
        assert_eq!(out.len(), 110);
        assert_eq!(out[109], ContextKey::new(109, 8));
        // 1x2 windows run over row offsets -1..=1 and column offsets -1..=0
        let first_12 = 49 + 16 + 16 + 16;
        let t = d.suite.tiles()[first_12 + 4];
        assert_eq!((t.row_offset, t.col_offset), (1, -1));
    }

    #[test]
    fn moves_and_pushes() {
        let d = SokobanDomain::new();
        let p = &parse_boxoban(LEVEL).unwrap()[0];
        let s = d.initial_state(p);
        assert!(!d.is_goal(p, &s));
        assert_eq!(d.valid_actions(p, &s).len(), 4);
        let up = d.transition(p, &s, 0);
        assert!(up.pushed);
        assert_eq!(up.player, 23);
        assert!(up.boxes & bit(13) != 0);
        // a box against the wall cannot be pushed further
        assert!(!d.valid_actions(p, &up).contains(0));
        let mut out = Vec::new();
        d.active_contexts(p, &up, Some(0), &mut out);
        assert_eq!(out.last().unwrap().pattern(), 1);
        // player against a wall
        let corner = SokobanState { player: 11, boxes: p.boxes, pushed: false };
        assert_eq!(d.valid_actions(p, &corner), ActionSet::from_iter([1, 3]));
    }

    #[test]
    fn solved_level_is_goal() {
        let d = SokobanDomain::new();
        let text = LEVEL.replace(['$', '.'], " ");
        let p = &parse_boxoban(&text).unwrap()[0];
        assert!(d.is_goal(p, &d.initial_state(p)));
    }

    #[test]
    fn generated_levels_are_solvable() {
        let d = SokobanDomain::new();
        let store = ParamStore::with_defaults(4).unwrap();
        let levels = gen_sokoban(6, 2, 30, 11).unwrap();
        assert_eq!(levels, gen_sokoban(6, 2, 30, 11).unwrap());
        for l in &levels {
            parse_boxoban(&l.to_string()).unwrap();
            match lts_search(&d, l, 200_000, &store, true).unwrap() {
                SearchResult::Solved { trajectory, .. } => {
                    assert!(replay_reaches_goal(&d, l, &trajectory.actions()));
                }
                r => panic!("level {} not solved: {r:?}\n{l}", l.id),
            }
        }
    }

    #[test]
    fn state_key_ignores_push_flag() {
        let d = SokobanDomain::new();
        let p = &parse_boxoban(LEVEL).unwrap()[0];
        let a = SokobanState { player: 33, boxes: p.boxes, pushed: false };
        let b = SokobanState { pushed: true, ..a };
        assert_eq!(d.state_key(p, &a), d.state_key(p, &b));
    }
}
