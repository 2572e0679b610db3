//! Hyperparameter sweeps: a JSON grid expands to (config, seed) cells that
//! run independently on a small thread pool; results merge into one CSV
//! with the varied parameters prepended. Cell failures are recorded and
//! never abort the sweep.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{HraError, Result};
use crate::harness::config::{Domain, ExperimentConfig};
use crate::harness::fruit::train_fruit;
use crate::harness::maze::train_maze;
use crate::harness::metrics::MetricsLog;

/// A sweep description: a base config plus per-parameter value lists.
/// Omitted lists keep the base value; the cell set is the cartesian
/// product of the lists crossed with the seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub base: ExperimentConfig,
    pub gamma: Option<Vec<f64>>,
    pub gamma_score: Option<Vec<f64>>,
    pub gamma_ghosts: Option<Vec<f64>>,
    pub kappa: Option<Vec<f64>>,
    /// Defaults to the base config's seed list, or [0] if that is empty.
    pub seeds: Option<Vec<u64>>,
}

impl SweepGrid {
    pub fn from_json(text: &str) -> Result<Self> {
        let grid: SweepGrid =
            serde_json::from_str(text).map_err(|e| HraError::Config(e.to_string()))?;
        grid.base.validate()?;
        Ok(grid)
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) if !s.is_empty() => s.clone(),
            _ if !self.base.seeds.is_empty() => self.base.seeds.clone(),
            _ => vec![0],
        }
    }

    /// All (config, seed) cells of the grid.
    pub fn expand(&self) -> Vec<(ExperimentConfig, u64)> {
        let gammas: Vec<Option<f64>> = match &self.gamma {
            Some(v) => v.iter().copied().map(Some).collect(),
            None => vec![self.base.gamma],
        };
        let scores = self.gamma_score.clone().unwrap_or(vec![self.base.gamma_score]);
        let ghosts = self.gamma_ghosts.clone().unwrap_or(vec![self.base.gamma_ghosts]);
        let kappas = self.kappa.clone().unwrap_or(vec![self.base.kappa]);
        let mut cells = Vec::new();
        for &g in &gammas {
            for &gs in &scores {
                for &gg in &ghosts {
                    for &k in &kappas {
                        for &seed in &self.seeds() {
                            let mut cfg = self.base.clone();
                            cfg.gamma = g;
                            cfg.gamma_score = gs;
                            cfg.gamma_ghosts = gg;
                            cfg.kappa = k;
                            cfg.seeds = vec![seed];
                            cells.push((cfg, seed));
                        }
                    }
                }
            }
        }
        cells
    }
}

/// One finished cell: the varied parameters, final scores, and status.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub gamma: Option<f64>,
    pub gamma_score: f64,
    pub gamma_ghosts: f64,
    pub kappa: f64,
    pub seed: u64,
    pub final_train_score: f64,
    pub final_eval_score: f64,
    pub status: String,
}

pub const SWEEP_HEADER: &str =
    "method,gamma,gamma_score,gamma_ghosts,kappa,seed,final_train_score,final_eval_score,status";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let fmt = |v: f64| if v.is_nan() { String::new() } else { format!("{v}") };
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.gamma.map(|g| g.to_string()).unwrap_or_default(),
            r.gamma_score,
            r.gamma_ghosts,
            r.kappa,
            r.seed,
            fmt(r.final_train_score),
            fmt(r.final_eval_score),
            r.status
        ));
    }
    out
}

fn run_cell(cfg: &ExperimentConfig, seed: u64) -> Result<MetricsLog> {
    match cfg.domain {
        Domain::Fruit => train_fruit(cfg, seed).map(|(log, _)| log),
        Domain::Maze => train_maze(cfg, seed).map(|(log, _)| log),
    }
}

/// Run every cell of the grid on up to `jobs` threads. Rows come back in
/// cell order regardless of scheduling, so results are reproducible.
pub fn run_sweep(grid: &SweepGrid, jobs: usize) -> Result<Vec<SweepRow>> {
    if jobs == 0 {
        return Err(HraError::InvalidArgument("jobs must be positive".into()));
    }
    let cells = grid.expand();
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    if *n >= cells.len() {
                        return;
                    }
                    let i = *n;
                    *n += 1;
                    i
                };
                let (cfg, seed) = &cells[i];
                let (train, eval, status) = match run_cell(cfg, *seed) {
                    Ok(log) => (
                        log.tail_mean(100, |r| r.train_score),
                        log.tail_mean(100, |r| r.eval_score),
                        "ok".to_string(),
                    ),
                    Err(e) => (f64::NAN, f64::NAN, format!("error: {e}")),
                };
                results.lock().unwrap()[i] = Some(SweepRow {
                    method: cfg.method.name().to_string(),
                    gamma: cfg.gamma,
                    gamma_score: cfg.gamma_score,
                    gamma_ghosts: cfg.gamma_ghosts,
                    kappa: cfg.kappa,
                    seed: *seed,
                    final_train_score: train,
                    final_eval_score: eval,
                    status,
                });
            });
        }
    });
    Ok(results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell produces a row"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Method;

    fn fruit_grid() -> SweepGrid {
        let mut base = ExperimentConfig::minimal(Domain::Fruit, Method::HraPlus3, 3);
        base.eval_every = 1;
        SweepGrid {
            base,
            gamma: Some(vec![0.95, 0.99]),
            gamma_score: None,
            gamma_ghosts: None,
            kappa: None,
            seeds: Some(vec![1, 2, 3]),
        }
    }

    #[test]
    fn grid_expansion_counts_cells() {
        assert_eq!(fruit_grid().expand().len(), 6);
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let grid = fruit_grid();
        let serial = run_sweep(&grid, 1).unwrap();
        let parallel = run_sweep(&grid, 4).unwrap();
        assert_eq!(serial, parallel);
        assert!(serial.iter().all(|r| r.status == "ok"));
    }

    #[test]
    fn failing_cells_are_recorded_not_fatal() {
        let mut grid = fruit_grid();
        grid.gamma = Some(vec![0.99, 7.0]);
        grid.seeds = Some(vec![1]);
        let rows = run_sweep(&grid, 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].status, "ok");
        assert!(rows[1].status.starts_with("error"));
        assert!(rows[1].final_eval_score.is_nan());
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let grid = fruit_grid();
        let rows = run_sweep(&grid, 2).unwrap();
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 1 + 6);
        assert!(csv.starts_with(SWEEP_HEADER));
    }

    #[test]
    fn zero_jobs_rejected() {
        assert!(run_sweep(&fruit_grid(), 0).is_err());
    }
}
