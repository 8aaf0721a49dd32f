//! Run configuration: flat `key = value` text, one setting per line.
//!
//! Every key can also be given as a command-line flag of the same name
//! (underscores become dashes); flags override the file. Defaults follow
//! the published hyperparameters where there are any.

use std::fmt::Write as _;
use std::path::PathBuf;

use ltscm_core::bootstrap::BootstrapConfig;
use ltscm_core::error::{Error, Result};
use ltscm_core::optimizer::{LineSearchWindow, OptimConfig};
use ltscm_core::policy::{DEFAULT_EPS_LOW, DEFAULT_EPS_MIX};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainKind {
    Stp,
    Sokoban,
    Cube,
}

impl std::str::FromStr for DomainKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stp" => Ok(DomainKind::Stp),
            "sokoban" => Ok(DomainKind::Sokoban),
            "cube" => Ok(DomainKind::Cube),
            _ => Err(Error::Config(format!("unknown domain '{s}' (expected stp, sokoban or cube)"))),
        }
    }
}

impl std::fmt::Display for DomainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DomainKind::Stp => "stp",
            DomainKind::Sokoban => "sokoban",
            DomainKind::Cube => "cube",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub domain: DomainKind,
    /// Board side for the sliding-tile puzzle.
    pub stp_size: usize,
    /// Training sets, used as successive curriculum phases.
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    /// Starting parameters; a fresh store when absent.
    pub snapshot: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub initial_budget: u64,
    pub growth_trigger: f64,
    pub max_outer_iters: usize,
    pub prune: bool,
    pub workers: usize,
    /// Budget per problem for `solve` and `eval`.
    pub eval_budget: u64,

    pub eps_low: f64,
    pub eps_mix: f64,
    pub reg_coeff: f64,
    pub optim_max_iters: usize,
    pub gap_check_every: usize,
    pub factor_target: f64,

    pub seed: u64,
    /// Train on generated scramble bands 0-5, 5-10, ... instead of files.
    pub cube_curriculum: bool,
    pub curriculum_count: usize,
    pub curriculum_max_len: usize,
    /// Extra phases at the maximum scramble length after the bands.
    pub curriculum_tail_phases: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let optim = OptimConfig::default();
        RunConfig {
            domain: DomainKind::Stp,
            stp_size: 3,
            train: Vec::new(),
            test: Vec::new(),
            snapshot: None,
            out_dir: PathBuf::from("ltscm-out"),
            initial_budget: 2000,
            growth_trigger: 0.25,
            max_outer_iters: 50,
            prune: true,
            workers: 0,
            eval_budget: 1_000_000,
            eps_low: DEFAULT_EPS_LOW,
            eps_mix: DEFAULT_EPS_MIX,
            reg_coeff: optim.reg_coeff,
            optim_max_iters: optim.max_iters,
            gap_check_every: optim.gap_check_every,
            factor_target: optim.factor_target,
            seed: 0,
            cube_curriculum: false,
            curriculum_count: 2000,
            curriculum_max_len: 50,
            curriculum_tail_phases: 1,
        }
    }
}

pub const KEYS: &[&str] = &[
    "domain",
    "stp_size",
    "train",
    "test",
    "snapshot",
    "out_dir",
    "initial_budget",
    "growth_trigger",
    "max_outer_iters",
    "prune",
    "workers",
    "eval_budget",
    "eps_low",
    "eps_mix",
    "reg_coeff",
    "optim_max_iters",
    "gap_check_every",
    "factor_target",
    "seed",
    "cube_curriculum",
    "curriculum_count",
    "curriculum_max_len",
    "curriculum_tail_phases",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn paths(value: &str) -> Vec<PathBuf> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
}

impl RunConfig {
    /// Sets one key. List-valued keys take comma-separated paths.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "domain" => self.domain = v.parse()?,
            "stp_size" => self.stp_size = parse("stp_size", v)?,
            "train" => self.train = paths(v),
            "test" => self.test = paths(v),
            "snapshot" => self.snapshot = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "initial_budget" => self.initial_budget = parse("initial_budget", v)?,
            "growth_trigger" => self.growth_trigger = parse("growth_trigger", v)?,
            "max_outer_iters" => self.max_outer_iters = parse("max_outer_iters", v)?,
            "prune" => self.prune = parse("prune", v)?,
            "workers" => self.workers = parse("workers", v)?,
            "eval_budget" => self.eval_budget = parse("eval_budget", v)?,
            "eps_low" => self.eps_low = parse("eps_low", v)?,
            "eps_mix" => self.eps_mix = parse("eps_mix", v)?,
            "reg_coeff" => self.reg_coeff = parse("reg_coeff", v)?,
            "optim_max_iters" => self.optim_max_iters = parse("optim_max_iters", v)?,
            "gap_check_every" => self.gap_check_every = parse("gap_check_every", v)?,
            "factor_target" => self.factor_target = parse("factor_target", v)?,
            "seed" => self.seed = parse("seed", v)?,
            "cube_curriculum" => self.cube_curriculum = parse("cube_curriculum", v)?,
            "curriculum_count" => self.curriculum_count = parse("curriculum_count", v)?,
            "curriculum_max_len" => self.curriculum_max_len = parse("curriculum_max_len", v)?,
            "curriculum_tail_phases" => self.curriculum_tail_phases = parse("curriculum_tail_phases", v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.boot_config().validate()?;
        self.optim_config().validate()?;
        if !(2..=5).contains(&self.stp_size) {
            return Err(Error::Config(format!("stp_size {} outside 2..=5", self.stp_size)));
        }
        if !(self.eps_low > 0.0 && self.eps_low < 1.0) {
            return Err(Error::Config("eps_low must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.eps_mix) {
            return Err(Error::Config("eps_mix must lie in [0, 1)".into()));
        }
        if self.eval_budget < 1 {
            return Err(Error::Config("eval_budget must be at least 1".into()));
        }
        if self.cube_curriculum && self.domain != DomainKind::Cube {
            return Err(Error::Config("cube_curriculum needs domain = cube".into()));
        }
        Ok(())
    }

    pub fn boot_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            initial_budget: self.initial_budget,
            growth_trigger: self.growth_trigger,
            max_outer_iters: self.max_outer_iters,
            worker_count: self.workers,
            prune: self.prune,
        }
    }

    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            max_iters: self.optim_max_iters,
            gap_check_every: self.gap_check_every,
            reg_coeff: self.reg_coeff,
            line_search_window: LineSearchWindow::default(),
            factor_target: self.factor_target,
        }
    }

    /// The configuration as a file that `apply_text` reads back.
    pub fn to_text(&self) -> String {
        let join = |p: &[PathBuf]| p.iter().map(|x| x.display().to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("domain", self.domain.to_string());
        kv("stp_size", self.stp_size.to_string());
        kv("train", join(&self.train));
        kv("test", join(&self.test));
        kv("snapshot", self.snapshot.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        kv("out_dir", self.out_dir.display().to_string());
        kv("initial_budget", self.initial_budget.to_string());
        kv("growth_trigger", format!("{:?}", self.growth_trigger));
        kv("max_outer_iters", self.max_outer_iters.to_string());
        kv("prune", self.prune.to_string());
        kv("workers", self.workers.to_string());
        kv("eval_budget", self.eval_budget.to_string());
        kv("eps_low", format!("{:?}", self.eps_low));
        kv("eps_mix", format!("{:?}", self.eps_mix));
        kv("reg_coeff", format!("{:?}", self.reg_coeff));
        kv("optim_max_iters", self.optim_max_iters.to_string());
        kv("gap_check_every", self.gap_check_every.to_string());
        kv("factor_target", format!("{:?}", self.factor_target));
        kv("seed", self.seed.to_string());
        kv("cube_curriculum", self.cube_curriculum.to_string());
        kv("curriculum_count", self.curriculum_count.to_string());
        kv("curriculum_max_len", self.curriculum_max_len.to_string());
        kv("curriculum_tail_phases", self.curriculum_tail_phases.to_string());
        s
    }
}

/// Scramble-length bands `0-5, 5-10, ...` up to `max_len`, followed by
/// `tail` bands fixed at `max_len`.
pub fn cube_curriculum_bands(max_len: usize, tail: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut lo = 0;
    while lo < max_len {
        let hi = (lo + 5).min(max_len);
        out.push((lo, hi));
        lo = hi;
    }
    out.extend(std::iter::repeat_n((max_len, max_len), tail));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.eps_low, 1e-4);
        assert_eq!(c.eps_mix, 1e-3);
        assert_eq!(c.reg_coeff, 5.0);
        assert_eq!(c.growth_trigger, 0.25);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip_and_overrides() {
        let mut c = RunConfig::default();
        c.apply_text("domain = cube # comment\ntrain = a.txt, b.txt\n\ninitial_budget=21000\n").unwrap();
        assert_eq!(c.domain, DomainKind::Cube);
        assert_eq!(c.train, vec![PathBuf::from("a.txt"), PathBuf::from("b.txt")]);
        c.set("initial-budget", "500").unwrap();
        assert_eq!(c.initial_budget, 500);
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
        for k in KEYS {
            assert!(c.to_text().contains(&format!("{k} = ")), "{k}");
        }
    }

    #[test]
    fn bad_input() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("nonsense").is_err());
        assert!(c.apply_text("colour = red").is_err());
        assert!(c.apply_text("seed = x").is_err());
        assert!(c.set("domain", "chess").is_err());
        c.eps_low = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn curriculum_bands() {
        let b = cube_curriculum_bands(50, 1);
        assert_eq!(b.len(), 11);
        assert_eq!(b[0], (0, 5));
        assert_eq!(b[9], (45, 50));
        assert_eq!(b[10], (50, 50));
        assert_eq!(cube_curriculum_bands(10, 0), vec![(0, 5), (5, 10)]);
    }
}
