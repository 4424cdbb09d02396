use serde::{Deserialize, Serialize};

use crate::env::run_episode;
use crate::error::Result;
use crate::model::generate_environment;
use crate::par::{try_map, Execution};

use super::config::{Cell, ExperimentConfig};

/// 95% normal-approximation band around a per-step mean.
pub const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurveStats {
    pub mean: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

impl CurveStats {
    /// Column-wise statistics over equally long curves, one per run.
    pub fn from_runs(runs: &[Vec<f64>]) -> Self {
        let len = runs.first().map_or(0, Vec::len);
        let mut out = Self::default();
        let mut column = Vec::with_capacity(runs.len());
        for t in 0..len {
            column.clear();
            column.extend(runs.iter().map(|r| r[t]));
            let (mean, half) = mean_ci(&column);
            out.mean.push(mean);
            out.ci_low.push(mean - half);
            out.ci_high.push(mean + half);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Sample mean and 95% half-width (zero for a single value).
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Z95 * (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub regret: CurveStats,
    pub belief_error: CurveStats,
    /// Final cumulative regret of each run, in run order.
    pub final_regrets: Vec<f64>,
    /// Final belief error of each run, in run order.
    pub final_errors: Vec<f64>,
}

impl CellResult {
    pub fn id(&self) -> String {
        self.cell.id()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub cells: Vec<CellResult>,
}

impl ResultTable {
    pub fn get(&self, id: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.id() == id)
    }
}

struct RunCurves {
    regret: Vec<f64>,
    error: Vec<f64>,
}

/// Runs every cell `mc_runs` times. Run `r` of every cell uses environment
/// and episode seed `base_seed + r`, so cells are paired run by run.
pub fn run_mc(cfg: &ExperimentConfig, exec: Execution) -> Result<ResultTable> {
    cfg.validate()?;
    let cells = cfg.cells();
    let episode_cfgs = cells
        .iter()
        .map(|c| cfg.episode_config(c, Execution::Sequential))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.mc_runs).map(move |r| (c, r))).collect();

    let curves = try_map(exec, &jobs, |_, &(c, run)| {
        let seed = cfg.base_seed.wrapping_add(run as u64);
        let episode = || -> Result<RunCurves> {
            let env = generate_environment(cfg.k, cfg.c, cfg.f, cfg.f_p - 1, seed)?;
            let traj = run_episode(&env, &episode_cfgs[c], seed)?;
            Ok(RunCurves { regret: traj.regret_curve(), error: traj.belief_error_curve() })
        };
        episode().map_err(|e| e.into_episode(&cells[c].id(), run))
    })?;

    let cells = cells
        .iter()
        .zip(curves.chunks(cfg.mc_runs))
        .map(|(cell, runs)| {
            let regret: Vec<Vec<f64>> = runs.iter().map(|r| r.regret.clone()).collect();
            let error: Vec<Vec<f64>> = runs.iter().map(|r| r.error.clone()).collect();
            CellResult {
                cell: *cell,
                final_regrets: regret.iter().map(|r| *r.last().expect("horizon >= 1")).collect(),
                final_errors: error.iter().map(|r| *r.last().expect("horizon >= 1")).collect(),
                regret: CurveStats::from_runs(&regret),
                belief_error: CurveStats::from_runs(&error),
            }
        })
        .collect();
    Ok(ResultTable { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::FusionMode;
    use crate::experiments::config::Preset;
    use crate::policies::PolicyKind;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            horizon: 12,
            mc_runs: 4,
            policies: vec![PolicyKind::Oracle, PolicyKind::Ts],
            fusion_modes: vec![FusionMode::NoHuman, FusionMode::Psda],
            fp_rates: vec![0.4],
            ..ExperimentConfig::preset(Preset::Fig4)
        }
    }

    #[test]
    fn mean_ci_basics() {
        assert_eq!(mean_ci(&[2.0]), (2.0, 0.0));
        let (m, h) = mean_ci(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((h - Z95 * 1.0).abs() < 1e-15);
    }

    #[test]
    fn table_shape_and_oracle_zero() {
        let cfg = small();
        let t = run_mc(&cfg, Execution::Sequential).unwrap();
        assert_eq!(t.cells.len(), 4);
        for c in &t.cells {
            assert_eq!(c.regret.len(), 12);
            assert_eq!(c.belief_error.len(), 12);
            assert_eq!(c.final_regrets.len(), 4);
        }
        let oracle = t.get("oracle/no_human").unwrap();
        assert!(oracle.regret.mean.iter().all(|v| *v == 0.0));
        assert!(oracle.final_regrets.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn results_do_not_depend_on_execution() {
        let cfg = small();
        let a = run_mc(&cfg, Execution::Sequential).unwrap();
        let b = crate::par::with_workers(Some(3), || run_mc(&cfg, Execution::Parallel)).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cells_share_environments() {
        let mut cfg = small();
        cfg.policies = vec![PolicyKind::Oracle];
        cfg.fusion_modes = vec![FusionMode::NoHuman, FusionMode::Naive];
        let t = run_mc(&cfg, Execution::Sequential).unwrap();
        // oracle belief errors differ only through the extra human labels; the
        // first steps before any arrival are identical
        let a = &t.cells[0].belief_error.mean;
        let b = &t.cells[1].belief_error.mean;
        assert_eq!(a[..5], b[..5]);
        assert_ne!(a[5], b[5]);
    }
}
