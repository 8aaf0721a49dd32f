//! Evaluation metrics: one tab-separated row per dataset.

use std::fmt::Write as _;

use ltscm_core::error::{Error, Result};

pub const METRICS_HEADER: &str = "dataset\tproblems\tsolved\tsolved_pct\tmean_length\tmean_expansions\tmean_time_ms";

/// Aggregates over one dataset. Lengths average over solved problems only;
/// expansions and time over all problems.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub dataset: String,
    pub problems: usize,
    pub solved: usize,
    pub mean_length: Option<f64>,
    pub mean_expansions: f64,
    pub mean_time_ms: f64,
}

impl MetricsRow {
    pub fn solved_pct(&self) -> f64 {
        100.0 * self.solved as f64 / self.problems as f64
    }

    /// Builds the row from per-problem outcomes `(solution length if
    /// solved, expansions, wall time in ms)`.
    pub fn from_outcomes(dataset: &str, outcomes: &[(Option<usize>, u64, f64)]) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Config(format!("dataset '{dataset}' has no problems")));
        }
        let n = outcomes.len() as f64;
        let lengths: Vec<usize> = outcomes.iter().filter_map(|o| o.0).collect();
        Ok(MetricsRow {
            dataset: dataset.to_string(),
            problems: outcomes.len(),
            solved: lengths.len(),
            mean_length: (!lengths.is_empty()).then(|| lengths.iter().sum::<usize>() as f64 / lengths.len() as f64),
            mean_expansions: outcomes.iter().map(|o| o.1 as f64).sum::<f64>() / n,
            mean_time_ms: outcomes.iter().map(|o| o.2).sum::<f64>() / n,
        })
    }
}

pub fn format_metrics(rows: &[MetricsRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.2}\t{}\t{:.2}\t{:.3}",
            r.dataset,
            r.problems,
            r.solved,
            r.solved_pct(),
            r.mean_length.map_or("-".to_string(), |l| format!("{l:.2}")),
            r.mean_expansions,
            r.mean_time_ms
        );
    }
    s
}

/// Reads what `format_metrics` writes. Floats come back at the printed
/// precision.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => return Err(Error::Parse(format!("unexpected metrics header {other:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |what: &str| Error::Parse(format!("metrics line {}: bad {what}", i + 2));
        if f.len() != 7 {
            return Err(bad("field count"));
        }
        rows.push(MetricsRow {
            dataset: f[0].to_string(),
            problems: f[1].parse().map_err(|_| bad("problems"))?,
            solved: f[2].parse().map_err(|_| bad("solved"))?,
            mean_length: match f[4] {
                "-" => None,
                v => Some(v.parse().map_err(|_| bad("mean_length"))?),
            },
            mean_expansions: f[5].parse().map_err(|_| bad("mean_expansions"))?,
            mean_time_ms: f[6].parse().map_err(|_| bad("mean_time_ms"))?,
        });
    }
    Ok(rows)
}

/// Fixed-width table for terminals.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let mut s = format!(
        "{:<24} {:>8} {:>9} {:>10} {:>14} {:>10}\n",
        "dataset", "problems", "solved %", "length", "expansions", "time ms"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<24} {:>8} {:>9.2} {:>10} {:>14.1} {:>10.2}",
            r.dataset,
            r.problems,
            r.solved_pct(),
            r.mean_length.map_or("-".to_string(), |l| format!("{l:.1}")),
            r.mean_expansions,
            r.mean_time_ms
        );
    }
    s
}
