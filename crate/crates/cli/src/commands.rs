//! The `gen`, `train`, `solve` and `eval` commands.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ltscm_core::bootstrap::{run_bootstrap_observed, HISTORY_HEADER};
use ltscm_core::domains::cube::{read_cube_problems, write_cube_problems};
use ltscm_core::domains::stp::{read_stp_problems, write_stp_problems};
use ltscm_core::domains::{
    gen_cube_scrambles, gen_sokoban, gen_stp, parse_boxoban, CubeDomain, SokobanDomain, StpDomain, StpProblem,
};
use ltscm_core::error::{Error, Result};
use ltscm_core::loss::write_trajectories;
use ltscm_core::policy::ParamStore;
use ltscm_core::search::{lts_search, DomainAdapter, SearchResult};

use crate::config::{cube_curriculum_bands, DomainKind, RunConfig};
use crate::metrics::{format_metrics, format_table, MetricsRow};

pub const PARAMS_FILE: &str = "params.txt";
pub const HISTORY_FILE: &str = "history.txt";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct GenRequest {
    pub domain: DomainKind,
    pub count: usize,
    pub seed: u64,
    pub stp_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub boxes: usize,
    pub pulls: usize,
}

/// Writes a generated dataset in the domain's problem-file format.
pub fn cmd_gen(req: &GenRequest, out: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(out)?);
    match req.domain {
        DomainKind::Stp => write_stp_problems(&mut w, &gen_stp(req.count, req.stp_size, req.seed)?)?,
        DomainKind::Cube => write_cube_problems(&mut w, &gen_cube_scrambles(req.count, req.min_len, req.max_len, req.seed)?)?,
        DomainKind::Sokoban => {
            for (i, mut level) in gen_sokoban(req.count, req.boxes, req.pulls, req.seed)?.into_iter().enumerate() {
                if i > 0 {
                    writeln!(w)?;
                }
                level.id = i.to_string();
                write!(w, "{level}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

/// Boxoban levels from a file, or from every `.txt` file of a directory in
/// name order.
pub fn load_boxoban(path: &Path) -> Result<Vec<ltscm_core::domains::SokobanLevel>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(|e| Error::Config(format!("cannot read {}: {e}", f.display())))?;
        let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for mut level in parse_boxoban(&text).map_err(|e| Error::Parse(format!("{}: {e}", f.display())))? {
            level.id = format!("{stem}:{}", level.id);
            out.push(level);
        }
    }
    Ok(out)
}

fn read_stp_sized(path: &Path, size: usize) -> Result<Vec<StpProblem>> {
    let problems = read_stp_problems(open(path)?)?;
    if let Some(p) = problems.iter().find(|p| p.size != size) {
        return Err(Error::Config(format!("{}: board size {} but stp_size = {size}", path.display(), p.size)));
    }
    Ok(problems)
}

fn dataset_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn initial_store<D: DomainAdapter>(cfg: &RunConfig, domain: &D, required: bool) -> Result<ParamStore> {
    let store = match &cfg.snapshot {
        Some(p) => ParamStore::read_snapshot(open(p)?, cfg.eps_mix)?,
        None if required => return Err(Error::Config("a parameter snapshot is required".into())),
        None => ParamStore::new(domain.num_actions(), cfg.eps_low, cfg.eps_mix)?,
    };
    store.check_compatible(domain.num_actions(), domain.num_mutex_sets())?;
    Ok(store)
}

/// Per-phase outcome of `cmd_train`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseSummary {
    pub name: String,
    pub problems: usize,
    pub solved: usize,
    pub iterations: usize,
}

fn train_phases<D: DomainAdapter>(
    cfg: &RunConfig,
    domain: &D,
    phases: Vec<(String, Vec<D::Problem>)>,
) -> Result<Vec<PhaseSummary>> {
    let mut store = initial_store(cfg, domain, false)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(CONFIG_FILE), cfg.to_text())?;
    let mut history = BufWriter::new(File::create(cfg.out_dir.join(HISTORY_FILE))?);
    writeln!(history, "{HISTORY_HEADER}")?;
    let mut summaries = Vec::new();
    for (k, (name, problems)) in phases.into_iter().enumerate() {
        writeln!(history, "# phase {k} {name}")?;
        let mut io_err = None;
        let outcome = run_bootstrap_observed(&problems, domain, store, &cfg.boot_config(), &cfg.optim_config(), |s| {
            if let Err(e) = writeln!(history, "{s}").and_then(|_| history.flush()) {
                io_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = io_err {
            return Err(e.into());
        }
        let solutions = BufWriter::new(File::create(cfg.out_dir.join(format!("solutions-{k}.txt")))?);
        write_trajectories(solutions, domain.num_actions(), outcome.solutions.trajectories())?;
        store = outcome.store;
        let summary = PhaseSummary {
            name,
            problems: problems.len(),
            solved: outcome.solutions.len(),
            iterations: outcome.history.len(),
        };
        log::info!("phase {k} {}: solved {}/{}", summary.name, summary.solved, summary.problems);
        summaries.push(summary);
    }
    history.flush()?;
    let mut params = BufWriter::new(File::create(cfg.out_dir.join(PARAMS_FILE))?);
    store.write_snapshot(&mut params)?;
    params.flush()?;
    Ok(summaries)
}

fn file_phases<P>(cfg: &RunConfig, load: impl Fn(&Path) -> Result<Vec<P>>) -> Result<Vec<(String, Vec<P>)>> {
    if cfg.train.is_empty() {
        return Err(Error::Config("no training set given".into()));
    }
    cfg.train
        .iter()
        .map(|p| Ok((dataset_name(p), load(p)?)))
        .collect()
}

/// Trains on the configured sets in order, sharing parameters across them.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PhaseSummary>> {
    cfg.validate()?;
    match cfg.domain {
        DomainKind::Stp => {
            let d = StpDomain::new(cfg.stp_size)?;
            let phases = file_phases(cfg, |p| read_stp_sized(p, cfg.stp_size))?;
            train_phases(cfg, &d, phases)
        }
        DomainKind::Sokoban => train_phases(cfg, &SokobanDomain::new(), file_phases(cfg, load_boxoban)?),
        DomainKind::Cube => {
            let phases = if cfg.cube_curriculum {
                cube_curriculum_bands(cfg.curriculum_max_len, cfg.curriculum_tail_phases)
                    .into_iter()
                    .enumerate()
                    .map(|(k, (lo, hi))| {
                        let seed = cfg.seed.wrapping_add(k as u64);
                        Ok((format!("scramble-{lo}-{hi}"), gen_cube_scrambles(cfg.curriculum_count, lo, hi, seed)?))
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                file_phases(cfg, |p| read_cube_problems(open(p)?))?
            };
            train_phases(cfg, &CubeDomain::new(), phases)
        }
    }
}

/// One line of `solve` output.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveLine {
    pub index: usize,
    pub solved: bool,
    pub expansions: u64,
    pub length: Option<usize>,
    pub time_ms: f64,
}

pub const SOLVE_HEADER: &str = "index\tstatus\texpansions\tlength\ttime_ms";

impl std::fmt::Display for SolveLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{:.3}",
            self.index,
            if self.solved { "solved" } else { "unsolved" },
            self.expansions,
            self.length.map_or("-".to_string(), |l| l.to_string()),
            self.time_ms
        )
    }
}

fn solve_set<D: DomainAdapter>(cfg: &RunConfig, domain: &D, store: &ParamStore, problems: &[D::Problem]) -> Result<Vec<SolveLine>> {
    problems
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let t0 = Instant::now();
            let r = lts_search(domain, p, cfg.eval_budget, store, cfg.prune)?;
            let time_ms = t0.elapsed().as_secs_f64() * 1e3;
            let length = match &r {
                SearchResult::Solved { solution_depth, .. } => Some(*solution_depth),
                _ => None,
            };
            Ok(SolveLine { index, solved: r.is_solved(), expansions: r.expansions(), length, time_ms })
        })
        .collect()
}

fn metrics_of(name: &str, lines: &[SolveLine]) -> Result<MetricsRow> {
    let outcomes: Vec<_> = lines.iter().map(|l| (l.length, l.expansions, l.time_ms)).collect();
    MetricsRow::from_outcomes(name, &outcomes)
}

fn with_each_set<F>(cfg: &RunConfig, paths: &[PathBuf], require_snapshot: bool, mut f: F) -> Result<()>
where
    F: FnMut(String, Vec<SolveLine>) -> Result<()>,
{
    macro_rules! run {
        ($domain:expr, $load:expr) => {{
            let d = $domain;
            let store = initial_store(cfg, &d, require_snapshot)?;
            for p in paths {
                let problems = $load(p.as_path())?;
                f(dataset_name(p), solve_set(cfg, &d, &store, &problems)?)?;
            }
        }};
    }
    match cfg.domain {
        DomainKind::Stp => run!(StpDomain::new(cfg.stp_size)?, |p: &Path| read_stp_sized(p, cfg.stp_size)),
        DomainKind::Sokoban => run!(SokobanDomain::new(), load_boxoban),
        DomainKind::Cube => run!(CubeDomain::new(), |p: &Path| read_cube_problems(open(p)?)),
    }
    Ok(())
}

/// Solves one problem file with a trained snapshot, writing one line per
/// problem followed by a `#` summary line.
pub fn cmd_solve<W: Write>(cfg: &RunConfig, problems: &Path, mut out: W) -> Result<MetricsRow> {
    cfg.validate()?;
    let mut row = None;
    with_each_set(cfg, &[problems.to_path_buf()], true, |name, lines| {
        writeln!(out, "{SOLVE_HEADER}")?;
        for l in &lines {
            writeln!(out, "{l}")?;
        }
        let m = metrics_of(&name, &lines)?;
        writeln!(
            out,
            "# solved {}/{} ({:.2}%) mean_expansions {:.2}",
            m.solved,
            m.problems,
            m.solved_pct(),
            m.mean_expansions
        )?;
        row = Some(m);
        Ok(())
    })?;
    row.ok_or_else(|| Error::Internal("no result".into()))
}

/// Evaluates every test set; without a snapshot the policy is uniform.
/// Writes the tab-separated metrics to `out_dir/metrics.tsv` and returns the
/// rows together with a human-readable table.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(Vec<MetricsRow>, String)> {
    cfg.validate()?;
    if cfg.test.is_empty() {
        return Err(Error::Config("no test set given".into()));
    }
    let mut rows = Vec::new();
    with_each_set(cfg, &cfg.test, false, |name, lines| {
        rows.push(metrics_of(&name, &lines)?);
        Ok(())
    })?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(METRICS_FILE), format_metrics(&rows))?;
    let table = format_table(&rows);
    Ok((rows, table))
}
