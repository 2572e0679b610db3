//! Append-only per-episode metrics with a fixed CSV layout. Scores are
//! always unshaped game points.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{HraError, Result};

pub const METRICS_HEADER: &str =
    "episode,train_score,eval_score,steps,eval_steps,levels_completed,head_count,gvf_count,wall_time_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub episode: usize,
    pub train_score: f64,
    /// NaN when the episode was not evaluated.
    pub eval_score: f64,
    pub steps: usize,
    pub eval_steps: usize,
    pub levels_completed: u32,
    pub head_count: usize,
    pub gvf_count: usize,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    fn fmt_score(v: f64) -> String {
        if v.is_nan() {
            String::new()
        } else {
            format!("{v}")
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.episode,
                Self::fmt_score(r.train_score),
                Self::fmt_score(r.eval_score),
                r.steps,
                r.eval_steps,
                r.levels_completed,
                r.head_count,
                r.gvf_count,
                r.wall_time_ms
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(HraError::Io)?;
        f.write_all(self.to_csv().as_bytes()).map_err(HraError::Io)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == METRICS_HEADER => {}
            other => {
                return Err(HraError::Parse {
                    line: 1,
                    col: 1,
                    msg: format!("unexpected metrics header: {other:?}"),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 9 {
                return Err(HraError::Parse {
                    line: i + 2,
                    col: 1,
                    msg: format!("expected 9 columns, got {}", cols.len()),
                });
            }
            let num = |j: usize| -> Result<f64> {
                if cols[j].is_empty() {
                    return Ok(f64::NAN);
                }
                cols[j].parse().map_err(|_| HraError::Parse {
                    line: i + 2,
                    col: j + 1,
                    msg: format!("bad number {:?}", cols[j]),
                })
            };
            rows.push(MetricsRow {
                episode: num(0)? as usize,
                train_score: num(1)?,
                eval_score: num(2)?,
                steps: num(3)? as usize,
                eval_steps: num(4)? as usize,
                levels_completed: num(5)? as u32,
                head_count: num(6)? as usize,
                gvf_count: num(7)? as usize,
                wall_time_ms: num(8)? as u64,
            });
        }
        Ok(MetricsLog { rows })
    }

    /// Mean of a column over the last `n` evaluated rows.
    pub fn tail_mean<F: Fn(&MetricsRow) -> f64>(&self, n: usize, col: F) -> f64 {
        let evaluated: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| !r.eval_score.is_nan())
            .map(&col)
            .collect();
        let tail = &evaluated[evaluated.len().saturating_sub(n)..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Trailing moving average used by the plot-export step; the raw log is
/// never smoothed.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return values.to_vec();
    }
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let lo = (i + 1).saturating_sub(window);
        let slice = &values[lo..=i];
        out.push(slice.iter().sum::<f64>() / slice.len() as f64);
    }
    out
}

/// Plot-ready CSV: episode plus smoothed training and evaluation scores.
/// Unevaluated episodes carry the previous evaluated value forward before
/// smoothing so the eval curve has no gaps.
pub fn plot_csv(log: &MetricsLog, window: usize) -> String {
    let train: Vec<f64> = log.rows().iter().map(|r| r.train_score).collect();
    let mut eval = Vec::with_capacity(log.len());
    let mut last = f64::NAN;
    for r in log.rows() {
        if !r.eval_score.is_nan() {
            last = r.eval_score;
        }
        eval.push(last);
    }
    let train = smooth(&train, window);
    let eval = smooth(&eval, window);
    let mut out = String::from("episode,train_score_smoothed,eval_score_smoothed\n");
    for (i, r) in log.rows().iter().enumerate() {
        let fmt = |v: f64| if v.is_nan() { String::new() } else { format!("{v}") };
        out.push_str(&format!("{},{},{}\n", r.episode, fmt(train[i]), fmt(eval[i])));
    }
    out
}
