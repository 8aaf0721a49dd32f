//! Regularized follow-the-leader update of the context-model weights.
//!
//! Minimizes `L(beta) + R(beta)` over the hypercube `[ln eps_low, 0]^(Q x A)`
//! where `R(beta) = reg * |beta - beta0|^2`. The steps are projected
//! AdaGrad-style updates with one adaptive rate per context, rates reset at
//! iterations that are powers of two, and a golden-section line search on a
//! step multiplier during scheduled windows or whenever a plain step fails to
//! improve. Every `gap_check_every` iterations a Frank-Wolfe gap against the
//! beta-simplex is computed; once it certifies the objective to be within
//! `factor_target` of the simplex optimum the loop stops.
//!
//! The objective is handled in the log domain; gradients are those of the
//! objective divided by its current value.

use std::fmt;

use crate::error::{Error, Result};
use crate::loss::{log_sum_exp, CompiledSet, SparseGrad, Trajectory};
use crate::policy::ParamStore;

/// Iterations `t` with `lo <= t mod period <= hi` run a line search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LineSearchWindow {
    pub period: usize,
    pub lo: usize,
    pub hi: usize,
}

impl LineSearchWindow {
    pub fn contains(&self, t: usize) -> bool {
        let r = t % self.period;
        self.lo <= r && r <= self.hi
    }
}

impl Default for LineSearchWindow {
    fn default() -> Self {
        LineSearchWindow { period: 20, lo: 1, hi: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub max_iters: usize,
    pub gap_check_every: usize,
    pub reg_coeff: f64,
    pub line_search_window: LineSearchWindow,
    pub factor_target: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            max_iters: 200,
            gap_check_every: 20,
            reg_coeff: 5.0,
            line_search_window: LineSearchWindow::default(),
            factor_target: 2.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::config("max_iters must be at least 1"));
        }
        if self.gap_check_every < 1 {
            return Err(Error::config("gap_check_every must be at least 1"));
        }
        if !(self.reg_coeff >= 0.0 && self.reg_coeff.is_finite()) {
            return Err(Error::config("reg_coeff must be finite and non-negative"));
        }
        if self.factor_target.is_nan() || self.factor_target <= 1.0 {
            return Err(Error::config("factor_target must exceed 1"));
        }
        let w = &self.line_search_window;
        if w.period == 0 || w.lo > w.hi {
            return Err(Error::config("empty or malformed line-search window"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    GapCertified,
    Stalled,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxIters => "max_iters",
            StopReason::GapCertified => "gap_certified",
            StopReason::Stalled => "stalled",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimReport {
    pub iterations_run: usize,
    /// `ln(L + R)` at the returned parameters.
    pub final_log_objective: f64,
    /// Last computed gap, relative to the objective value at that point.
    pub final_gap: Option<f64>,
    pub stop_reason: StopReason,
}

impl fmt::Display for OptimReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "optim iters={} log_objective={:.6} gap={} stop={}",
            self.iterations_run,
            self.final_log_objective,
            self.final_gap.map_or("-".to_string(), |g| format!("{g:.3e}")),
            self.stop_reason
        )
    }
}

/// `reg * sum (beta - beta0)^2` over the stored blocks, and its gradient.
pub fn regularizer(store: &ParamStore, reg_coeff: f64) -> (f64, SparseGrad) {
    let b0 = store.init_value();
    let mut value = 0.0;
    let mut grad = SparseGrad::new();
    for &k in store.keys() {
        let block = store.block(k).expect("stored key");
        value += block.iter().map(|w| (w - b0) * (w - b0)).sum::<f64>();
        grad.insert(k, block.iter().map(|w| 2.0 * reg_coeff * (w - b0)).collect());
    }
    (reg_coeff * value, grad)
}

/// Frank-Wolfe gap of the linearization `gradient` against the beta-simplex.
///
/// For every context the simplex vertex minimizing the linear form puts 0 at
/// the action with the smallest gradient entry and `ln eps_low` elsewhere.
/// Contexts absent from `store` are taken at the simplex center.
pub fn duality_gap(store: &ParamStore, gradient: &SparseGrad) -> f64 {
    let lo = store.min_weight();
    let center = vec![store.init_value(); store.num_actions()];
    gradient
        .iter()
        .map(|(k, g)| block_gap(store.block(*k).unwrap_or(&center), g, lo))
        .sum()
}

/// Whether `gap` certifies `objective <= factor * optimum`.
pub fn gap_certifies(gap: f64, objective: f64, factor_target: f64) -> bool {
    gap <= (1.0 - 1.0 / factor_target) * objective
}

fn block_gap(beta: &[f64], g: &[f64], lo: f64) -> f64 {
    let best = g
        .iter()
        .enumerate()
        .fold(0, |b, (i, x)| if *x < g[b] { i } else { b });
    g.iter()
        .zip(beta)
        .enumerate()
        .map(|(i, (gi, bi))| gi * (bi - if i == best { 0.0 } else { lo }))
        .sum()
}

struct Problem<'a> {
    set: &'a CompiledSet,
    num_actions: usize,
    lo: f64,
    center: f64,
    reg: f64,
}

impl Problem<'_> {
    fn log_objective(&self, params: &[f64]) -> f64 {
        let log_l = self.set.log_total(params);
        let r: f64 = self.reg
            * params
                .iter()
                .map(|w| (w - self.center) * (w - self.center))
                .sum::<f64>();
        log_sum_exp(&[log_l, r.ln()])
    }

    /// Gradient of the objective divided by `exp(log_obj)`.
    fn scaled_grad(&self, params: &[f64], log_obj: f64, grad: &mut [f64]) {
        grad.fill(0.0);
        self.set.scaled_loss_grad(params, log_obj, grad);
        let s = 2.0 * self.reg * (-log_obj).exp();
        if s > 0.0 {
            for (g, w) in grad.iter_mut().zip(params) {
                *g += s * (w - self.center);
            }
        }
    }

    fn gap(&self, params: &[f64], grad: &[f64]) -> f64 {
        let a = self.num_actions;
        params
            .chunks_exact(a)
            .zip(grad.chunks_exact(a))
            .map(|(b, g)| block_gap(b, g, self.lo))
            .sum()
    }

    fn project_step(&self, params: &[f64], dir: &[f64], lam: f64, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            params
                .iter()
                .zip(dir)
                .map(|(p, d)| (p - lam * d).clamp(self.lo, 0.0)),
        );
    }

    fn probe(&self, params: &[f64], dir: &[f64], lam: f64, buf: &mut Vec<f64>) -> f64 {
        self.project_step(params, dir, lam, buf);
        self.log_objective(buf)
    }

    /// Golden-section search for the step multiplier, starting from
    /// `lam0` as the first interior query. Returns the best multiplier and
    /// its objective, or `None` if no probed step improves on `f0`.
    fn line_search(&self, params: &[f64], dir: &[f64], f0: f64, lam0: f64) -> Option<(f64, f64)> {
        const GOLD: f64 = 0.618_033_988_749_894_9;
        const TOL: f64 = 1e-3;
        let mut buf = Vec::with_capacity(params.len());
        let mut best = (0.0, f0);
        let mut eval = |lam: f64, best: &mut (f64, f64)| {
            let f = self.probe(params, dir, lam, &mut buf);
            if f < best.1 {
                *best = (lam, f);
            }
            f
        };

        let mut m = lam0;
        let mut fm = eval(m, &mut best);
        let (mut lo, mut hi);
        if fm < f0 {
            lo = 0.0;
            hi = 2.0 * m;
            let mut fh = eval(hi, &mut best);
            let mut doublings = 0;
            while fh < fm && doublings < 60 {
                lo = m;
                m = hi;
                fm = fh;
                hi *= 2.0;
                fh = eval(hi, &mut best);
                doublings += 1;
            }
            if fh == fm {
                // Everything clipped: the objective is flat beyond `m`.
                return Some(best);
            }
        } else {
            hi = m;
            let mut halvings = 0;
            loop {
                m *= 0.5;
                fm = eval(m, &mut best);
                halvings += 1;
                if fm < f0 {
                    break;
                }
                hi = m;
                if halvings >= 50 {
                    return None;
                }
            }
            lo = 0.0;
        }

        let mut x1 = hi - GOLD * (hi - lo);
        let mut x2 = lo + GOLD * (hi - lo);
        let mut f1 = eval(x1, &mut best);
        let mut f2 = eval(x2, &mut best);
        while hi - lo > TOL * best.0.max(f64::MIN_POSITIVE) {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - GOLD * (hi - lo);
                f1 = eval(x1, &mut best);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + GOLD * (hi - lo);
                f2 = eval(x2, &mut best);
            }
        }
        (best.1 < f0).then_some(best)
    }
}

fn check_finite(log_obj: f64, grad: &[f64], iter: usize) -> Result<()> {
    if log_obj.is_nan() || log_obj == f64::INFINITY {
        return Err(Error::Numerical(format!("objective is {log_obj} at iteration {iter}")));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "gradient coordinate {i} is {} at iteration {iter}",
            grad[i]
        )));
    }
    Ok(())
}

/// Approximately solves `argmin_{beta in B} L(trajs, beta) + R(beta)`,
/// starting from the current weights in `store`.
///
/// Contexts that appear in `trajs` but are not stored yet are materialized
/// at the simplex center first. The returned store holds the best iterate.
pub fn ftl_update(
    trajs: &[Trajectory],
    mut store: ParamStore,
    cfg: &OptimConfig,
) -> Result<(ParamStore, OptimReport)> {
    cfg.validate()?;
    let a = store.num_actions();
    if trajs.is_empty() {
        // The regularizer alone is minimized at the simplex center.
        let center = vec![store.init_value(); store.weights().len()];
        store.assign_weights(&center);
        let report = OptimReport {
            iterations_run: 0,
            final_log_objective: f64::NEG_INFINITY,
            final_gap: Some(0.0),
            stop_reason: StopReason::GapCertified,
        };
        return Ok((store, report));
    }
    {
        let mut ids: Vec<u64> = trajs.iter().map(|t| t.problem_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract("duplicate problem ids in the trajectory set"));
        }
    }
    let mut set = CompiledSet::compile(trajs, a)?;
    set.bind_to_store(&mut store);

    let problem = Problem {
        set: &set,
        num_actions: a,
        lo: store.min_weight(),
        center: store.init_value(),
        reg: cfg.reg_coeff,
    };
    let diameter = -store.min_weight();
    let n_blocks = store.len();

    let mut params = store.weights().to_vec();
    let mut log_obj = problem.log_objective(&params);
    let mut grad = vec![0.0; params.len()];
    problem.scaled_grad(&params, log_obj, &mut grad);
    check_finite(log_obj, &grad, 0)?;

    let mut accum = vec![0.0; n_blocks];
    let mut dir = vec![0.0; params.len()];
    let mut cand = Vec::with_capacity(params.len());
    let mut lam = 1.0;
    let mut need_line_search = false;
    let mut stalled_for = 0;
    let mut last_gap = None;
    let mut stop = StopReason::MaxIters;
    let mut iterations = cfg.max_iters;

    for t in 0..cfg.max_iters {
        if t % cfg.gap_check_every == 0 {
            let gap = problem.gap(&params, &grad);
            last_gap = Some(gap);
            if gap_certifies(gap, 1.0, cfg.factor_target) {
                stop = StopReason::GapCertified;
                iterations = t;
                break;
            }
        }
        if t.is_power_of_two() {
            accum.fill(0.0);
        }
        for (c, acc) in accum.iter_mut().enumerate() {
            let g = &grad[c * a..(c + 1) * a];
            *acc += g.iter().map(|x| x * x).sum::<f64>();
            let rate = if *acc > 0.0 { diameter / acc.sqrt() } else { 0.0 };
            for (d, x) in dir[c * a..(c + 1) * a].iter_mut().zip(g) {
                *d = rate * x;
            }
        }

        let mut step = None;
        if !(need_line_search || cfg.line_search_window.contains(t)) {
            let f = problem.probe(&params, &dir, lam, &mut cand);
            if f < log_obj {
                step = Some((lam, f));
            }
        }
        if step.is_none() {
            step = problem.line_search(&params, &dir, log_obj, lam);
            if let Some((l, _)) = step {
                lam = l;
            }
        }
        need_line_search = step.is_none();

        let improvement = match step {
            Some((l, f)) => {
                problem.project_step(&params, &dir, l, &mut cand);
                std::mem::swap(&mut params, &mut cand);
                let gain = log_obj - f;
                log_obj = f;
                problem.scaled_grad(&params, log_obj, &mut grad);
                check_finite(log_obj, &grad, t + 1)?;
                gain
            }
            None => 0.0,
        };
        if improvement < 1e-12 {
            stalled_for += 1;
            if stalled_for >= 20 {
                stop = StopReason::Stalled;
                iterations = t + 1;
                break;
            }
        } else {
            stalled_for = 0;
        }
    }

    store.assign_weights(&params);
    let report = OptimReport {
        iterations_run: iterations,
        final_log_objective: log_obj,
        final_gap: last_gap,
        stop_reason: stop,
    };
    Ok((store, report))
}
