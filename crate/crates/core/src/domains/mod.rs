//! Puzzle domains and their context features.

pub mod cube;
pub mod sokoban;
pub mod stp;
pub mod tiling;

pub use cube::{gen_cube_scrambles, CubeDomain, CubeProblem, CubeState};
pub use sokoban::{gen_sokoban, parse_boxoban, SokobanDomain, SokobanLevel, SokobanState};
pub use stp::{gen_stp, StpDomain, StpProblem};
pub use tiling::{tiling_mutex_sets, GridState, RelativeTile, TileSuite, TilingSpec};
