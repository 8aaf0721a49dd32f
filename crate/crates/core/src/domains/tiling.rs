//! Agent-relative rectangular tilings of a grid.
//!
//! A tiling `(s_r, s_c, D_r, D_c)` is the family of `s_r x s_c` windows whose
//! top-left corner sits at every offset `(d_r, d_c)` from the agent with
//! `d_r in [-D_r, D_r - s_r + 1]` and `d_c in [-D_c, D_c - s_c + 1]`. Each
//! window is one mutex set; the values it covers, read row-major, select the
//! active context inside that set.

use crate::error::{Error, Result};
use crate::policy::ContextKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TilingSpec {
    pub row_span: u8,
    pub col_span: u8,
    pub row_dist: u8,
    pub col_dist: u8,
}

impl TilingSpec {
    pub fn new(row_span: u8, col_span: u8, row_dist: u8, col_dist: u8) -> Result<Self> {
        let spec = TilingSpec { row_span, col_span, row_dist, col_dist };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_span == 0 || self.col_span == 0 {
            return Err(Error::config(format!("{self}: spans must be positive")));
        }
        if self.row_offsets().is_empty() || self.col_offsets().is_empty() {
            return Err(Error::config(format!("{self}: empty offset range")));
        }
        Ok(())
    }

    /// Number of windows, `(2 D_r + 2 - s_r)(2 D_c + 2 - s_c)`.
    pub fn num_tiles(&self) -> usize {
        let span = |d: u8, s: u8| (2 * d as i32 + 2 - s as i32).max(0) as usize;
        span(self.row_dist, self.row_span) * span(self.col_dist, self.col_span)
    }

    fn row_offsets(&self) -> std::ops::RangeInclusive<i32> {
        -(self.row_dist as i32)..=self.row_dist as i32 - self.row_span as i32 + 1
    }

    fn col_offsets(&self) -> std::ops::RangeInclusive<i32> {
        -(self.col_dist as i32)..=self.col_dist as i32 - self.col_span as i32 + 1
    }
}

impl std::fmt::Display for TilingSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "tiling({},{},{},{})", self.row_span, self.col_span, self.row_dist, self.col_dist)
    }
}

/// One window of a tiling, positioned relative to the agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RelativeTile {
    pub rows: u8,
    pub cols: u8,
    pub row_offset: i32,
    pub col_offset: i32,
}

/// Enumerates the windows of `spec`, row offsets outermost.
pub fn tiling_mutex_sets(spec: TilingSpec) -> Result<Vec<RelativeTile>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.num_tiles());
    for row_offset in spec.row_offsets() {
        for col_offset in spec.col_offsets() {
            out.push(RelativeTile {
                rows: spec.row_span,
                cols: spec.col_span,
                row_offset,
                col_offset,
            });
        }
    }
    Ok(out)
}

/// A grid with one distinguished agent cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GridState {
    pub rows: usize,
    pub cols: usize,
    /// Row-major cell values.
    pub cells: Vec<u8>,
    /// Row-major index of the agent.
    pub agent: usize,
}

/// The union of several tilings over a grid with a fixed cell alphabet.
///
/// Mutex sets are numbered consecutively starting at `first_mutex_set`, in
/// the order the tilings were given.
#[derive(Clone, Debug)]
pub struct TileSuite {
    tiles: Vec<RelativeTile>,
    alphabet: u64,
    padding: u8,
}

impl TileSuite {
    /// `alphabet` counts every cell value including `padding`.
    pub fn new(specs: &[TilingSpec], alphabet: u8, padding: u8) -> Result<Self> {
        if padding >= alphabet {
            return Err(Error::config("padding value outside the cell alphabet"));
        }
        let mut tiles = Vec::new();
        for &s in specs {
            let bits = (s.row_span as f64 * s.col_span as f64) * (alphabet as f64).log2();
            if bits > 48.0 {
                return Err(Error::config(format!("{s}: patterns do not fit in 48 bits")));
            }
            tiles.extend(tiling_mutex_sets(s)?);
        }
        Ok(TileSuite { tiles, alphabet: alphabet as u64, padding })
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn tiles(&self) -> &[RelativeTile] {
        &self.tiles
    }

    /// Pushes one key per tile. `cell(i)` gives the value at row-major index
    /// `i`; cells outside the `rows x cols` grid read as padding.
    pub fn encode(
        &self,
        rows: usize,
        cols: usize,
        agent: usize,
        first_mutex_set: u32,
        cell: impl Fn(usize) -> u8,
        out: &mut Vec<ContextKey>,
    ) {
        let (r0, c0) = ((agent / cols) as i32, (agent % cols) as i32);
        for (i, t) in self.tiles.iter().enumerate() {
            let mut code = 0u64;
            for dr in 0..t.rows as i32 {
                let r = r0 + t.row_offset + dr;
                for dc in 0..t.cols as i32 {
                    let c = c0 + t.col_offset + dc;
                    let v = if r < 0 || c < 0 || r >= rows as i32 || c >= cols as i32 {
                        self.padding
                    } else {
                        cell(r as usize * cols + c as usize)
                    };
                    debug_assert!((v as u64) < self.alphabet);
                    code = code * self.alphabet + v as u64;
                }
            }
            out.push(ContextKey::new(first_mutex_set + i as u32, code));
        }
    }

    pub fn encode_grid(&self, grid: &GridState, first_mutex_set: u32, out: &mut Vec<ContextKey>) {
        self.encode(grid.rows, grid.cols, grid.agent, first_mutex_set, |i| grid.cells[i], out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn figure_two_tiling() {
        let s = TilingSpec::new(2, 3, 1, 3).unwrap();
        assert_eq!(s.num_tiles(), 10);
        let t = tiling_mutex_sets(s).unwrap();
        assert_eq!(t.len(), 10);
        assert_eq!((t[0].row_offset, t[0].col_offset), (-1, -3));
        let last = t.last().unwrap();
        // last window ends exactly at (+D_r, +D_c)
        assert_eq!(last.row_offset + 1, 1);
        assert_eq!(last.col_offset + 2, 3);
    }

    #[test]
    fn single_cell_tiling_reads_agent_cell() {
        let s = TilingSpec::new(1, 1, 0, 0).unwrap();
        let suite = TileSuite::new(&[s], 10, 9).unwrap();
        let g = GridState { rows: 3, cols: 3, cells: (0..9).collect(), agent: 4 };
        let mut out = Vec::new();
        suite.encode_grid(&g, 0, &mut out);
        assert_eq!(out, vec![ContextKey::new(0, 4)]);
    }

    #[test]
    fn empty_offset_range_is_config_error() {
        assert!(TilingSpec::new(3, 1, 0, 0).is_err());
        assert!(TilingSpec::new(0, 1, 1, 1).is_err());
    }

    #[test]
    fn padding_outside_grid() {
        let s = TilingSpec::new(1, 2, 0, 1).unwrap();
        let suite = TileSuite::new(&[s], 3, 2).unwrap();
        let g = GridState { rows: 1, cols: 2, cells: vec![0, 1], agent: 0 };
        let mut out = Vec::new();
        suite.encode_grid(&g, 5, &mut out);
        // windows at column offsets -1 and 0: [pad, 0] and [0, 1]
        assert_eq!(out, vec![ContextKey::new(5, 2 * 3), ContextKey::new(6, 1)]);
    }

    #[test]
    fn codes_are_injective_on_small_alphabet() {
        // every 2x2 pattern over a 3-letter alphabet gets its own code
        let suite = TileSuite::new(&[TilingSpec::new(2, 2, 1, 1).unwrap()], 3, 2).unwrap();
        let mut seen = HashSet::new();
        for bits in 0..81u32 {
            let mut v = bits;
            let cells: Vec<u8> = (0..4)
                .map(|_| {
                    let d = (v % 3) as u8;
                    v /= 3;
                    d
                })
                .collect();
            let g = GridState { rows: 2, cols: 2, cells, agent: 0 };
            let mut out = Vec::new();
            suite.encode_grid(&g, 0, &mut out);
            // tile with offset (0, 0) covers the whole grid
            let whole = out[suite.tiles().iter().position(|t| t.row_offset == 0 && t.col_offset == 0).unwrap()];
            assert!(seen.insert(whole.pattern()));
        }
        assert_eq!(seen.len(), 81);
    }

    proptest! {
        #[test]
        fn count_formula_matches_enumeration(sr in 1u8..5, sc in 1u8..5, dr in 0u8..6, dc in 0u8..6) {
            let spec = TilingSpec { row_span: sr, col_span: sc, row_dist: dr, col_dist: dc };
            // explicit enumeration of admissible offsets
            let mut n = 0usize;
            for r in -(dr as i32)..=(dr as i32) {
                for c in -(dc as i32)..=(dc as i32) {
                    if r + sr as i32 - 1 <= dr as i32 && c + sc as i32 - 1 <= dc as i32 {
                        n += 1;
                    }
                }
            }
            match tiling_mutex_sets(spec) {
                Ok(t) => {
                    prop_assert_eq!(t.len(), n);
                    prop_assert_eq!(spec.num_tiles(), n);
                }
                Err(_) => prop_assert_eq!(n, 0),
            }
        }
    }
}
