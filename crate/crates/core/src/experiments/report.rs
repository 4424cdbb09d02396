use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::env::FusionMode;
use crate::error::{Error, Result};

use super::config::Cell;
use super::harness::{mean_ci, CellResult, CurveStats, ResultTable, Z95};

pub const REGRET_CSV: &str = "regret.csv";
pub const BELIEF_ERROR_CSV: &str = "belief_error.csv";
pub const RUNS_CSV: &str = "runs.csv";

fn write_curves(path: &Path, header: [&str; 5], table: &ResultTable, pick: fn(&CellResult) -> &CurveStats) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for cell in &table.cells {
        let id = cell.id();
        let c = pick(cell);
        for t in 0..c.len() {
            w.write_record([
                id.clone(),
                (t + 1).to_string(),
                format!("{}", c.mean[t]),
                format!("{}", c.ci_low[t]),
                format!("{}", c.ci_high[t]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `regret.csv`, `belief_error.csv` and `runs.csv` into `dir`.
/// Floats use the shortest representation that parses back exactly.
pub fn emit_csv(table: &ResultTable, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_curves(&dir.join(REGRET_CSV), ["cell", "step", "mean_regret", "ci95_low", "ci95_high"], table, |c| &c.regret)?;
    write_curves(
        &dir.join(BELIEF_ERROR_CSV),
        ["cell", "step", "mean_error", "ci95_low", "ci95_high"],
        table,
        |c| &c.belief_error,
    )?;
    let mut w = csv::Writer::from_path(dir.join(RUNS_CSV))?;
    w.write_record(["cell", "run", "final_regret", "final_error"])?;
    for cell in &table.cells {
        let id = cell.id();
        for (r, (reg, err)) in cell.final_regrets.iter().zip(&cell.final_errors).enumerate() {
            w.write_record([id.clone(), r.to_string(), format!("{reg}"), format!("{err}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Config(format!("bad {what} value {s:?}")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Config(format!("bad {what} value {s:?}")))
}

/// Cells in order of first appearance, each with its rows.
fn read_grouped(path: &Path, columns: usize) -> Result<Vec<(String, Vec<csv::StringRecord>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<(String, Vec<csv::StringRecord>)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != columns {
            return Err(Error::Config(format!("{}: expected {columns} columns, got {}", path.display(), rec.len())));
        }
        match out.last_mut() {
            Some((id, rows)) if id == &rec[0] => rows.push(rec),
            _ => {
                if out.iter().any(|(id, _)| id == &rec[0]) {
                    return Err(Error::Config(format!("{}: rows of cell {} are not contiguous", path.display(), &rec[0])));
                }
                out.push((rec[0].to_string(), vec![rec]));
            }
        }
    }
    Ok(out)
}

fn read_curves(path: &Path) -> Result<Vec<(String, CurveStats)>> {
    read_grouped(path, 5)?
        .into_iter()
        .map(|(id, rows)| {
            let mut c = CurveStats::default();
            for (t, row) in rows.iter().enumerate() {
                if parse_usize(&row[1], "step")? != t + 1 {
                    return Err(Error::Config(format!("{}: cell {id} steps out of order", path.display())));
                }
                c.mean.push(parse_f64(&row[2], "mean")?);
                c.ci_low.push(parse_f64(&row[3], "ci95_low")?);
                c.ci_high.push(parse_f64(&row[4], "ci95_high")?);
            }
            Ok((id, c))
        })
        .collect()
}

/// Loads a table written by [`emit_csv`].
pub fn read_results(dir: &Path) -> Result<ResultTable> {
    let regret = read_curves(&dir.join(REGRET_CSV))?;
    let error = read_curves(&dir.join(BELIEF_ERROR_CSV))?;
    let runs = read_grouped(&dir.join(RUNS_CSV), 4)?;
    if regret.len() != error.len() || regret.len() != runs.len() {
        return Err(Error::Config("result files list different cells".into()));
    }
    let mut cells = Vec::with_capacity(regret.len());
    for (((id, regret), (eid, belief_error)), (rid, rows)) in regret.into_iter().zip(error).zip(runs) {
        if id != eid || id != rid {
            return Err(Error::Config(format!("cell order differs between files ({id}, {eid}, {rid})")));
        }
        let mut final_regrets = Vec::with_capacity(rows.len());
        let mut final_errors = Vec::with_capacity(rows.len());
        for (r, row) in rows.iter().enumerate() {
            if parse_usize(&row[1], "run")? != r {
                return Err(Error::Config(format!("cell {id}: runs out of order")));
            }
            final_regrets.push(parse_f64(&row[2], "final_regret")?);
            final_errors.push(parse_f64(&row[3], "final_error")?);
        }
        cells.push(CellResult { cell: Cell::parse_id(&id)?, regret, belief_error, final_regrets, final_errors });
    }
    Ok(ResultTable { cells })
}

/// Paired comparison `baseline - treatment` over shared runs, with a
/// one-sided t-test of "treatment is lower".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub baseline: String,
    pub treatment: String,
    pub n: usize,
    pub mean_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub t: f64,
    pub p_value: f64,
}

impl PairedComparison {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

pub fn paired_test(baseline_id: &str, baseline: &[f64], treatment_id: &str, treatment: &[f64]) -> Result<PairedComparison> {
    if baseline.len() != treatment.len() || baseline.is_empty() {
        return Err(Error::DimensionMismatch { expected: baseline.len(), got: treatment.len() });
    }
    let diffs: Vec<f64> = baseline.iter().zip(treatment).map(|(a, b)| a - b).collect();
    let n = diffs.len();
    let (mean, half) = mean_ci(&diffs);
    let se = half / Z95;
    let (t, p_value) = if n < 2 {
        (f64::NAN, 1.0)
    } else if se == 0.0 {
        if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (if mean < 0.0 { f64::NEG_INFINITY } else { f64::NAN }, 1.0)
        }
    } else {
        let t = mean / se;
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Config(e.to_string()))?;
        (t, 1.0 - dist.cdf(t))
    };
    Ok(PairedComparison {
        baseline: baseline_id.to_string(),
        treatment: treatment_id.to_string(),
        n,
        mean_diff: mean,
        ci_low: mean - half,
        ci_high: mean + half,
        t,
        p_value,
    })
}

/// Final-regret comparisons within each policy: no human vs naive fusion,
/// and naive vs PSDA fusion, at every fault rate present.
pub fn paired_comparisons(table: &ResultTable) -> Result<Vec<PairedComparison>> {
    let policies: BTreeSet<_> = table.cells.iter().map(|c| c.cell.policy).collect();
    let mut out = Vec::new();
    for policy in policies {
        let of = |mode: FusionMode| table.cells.iter().filter(move |c| c.cell.policy == policy && c.cell.fusion == mode);
        let no_human = of(FusionMode::NoHuman).next();
        for naive in of(FusionMode::Naive) {
            if let Some(base) = no_human {
                out.push(paired_test(&base.id(), &base.final_regrets, &naive.id(), &naive.final_regrets)?);
            }
            if let Some(psda) = of(FusionMode::Psda).find(|c| c.cell.fp_rate == naive.cell.fp_rate) {
                out.push(paired_test(&naive.id(), &naive.final_regrets, &psda.id(), &psda.final_regrets)?);
            }
        }
        if let (Some(base), None) = (no_human, of(FusionMode::Naive).next()) {
            for psda in of(FusionMode::Psda) {
                out.push(paired_test(&base.id(), &base.final_regrets, &psda.id(), &psda.final_regrets)?);
            }
        }
    }
    Ok(out)
}

/// Plain-text report of final regrets, final belief errors and paired
/// differences.
pub fn summarize(table: &ResultTable) -> Result<String> {
    let mut s = String::new();
    let width = table.cells.iter().map(|c| c.id().len()).max().unwrap_or(4).max(4);
    let _ = writeln!(s, "{:<width$}  {:>5}  {:>22}  {:>22}", "cell", "runs", "final regret (95% CI)", "final error (95% CI)");
    for c in &table.cells {
        let (rm, rh) = mean_ci(&c.final_regrets);
        let (em, eh) = mean_ci(&c.final_errors);
        let _ = writeln!(
            s,
            "{:<width$}  {:>5}  {:>10.3} +- {:<8.3}  {:>10.4} +- {:<8.4}",
            c.id(),
            c.final_regrets.len(),
            rm,
            rh,
            em,
            eh
        );
    }
    let comparisons = paired_comparisons(table)?;
    if !comparisons.is_empty() {
        let _ = writeln!(s, "\npaired final-regret differences (baseline - treatment)");
        for p in comparisons {
            let verdict = if p.significant(0.05) {
                "treatment lower (p < 0.05)"
            } else if p.mean_diff > 0.0 {
                "treatment lower, not significant"
            } else {
                "treatment not lower"
            };
            let _ = writeln!(
                s,
                "  {} - {}: {:+.3} [{:+.3}, {:+.3}], t = {:.3}, p = {:.4}: {}",
                p.baseline, p.treatment, p.mean_diff, p.ci_low, p.ci_high, p.t, p.p_value, verdict
            );
        }
    }
    Ok(s)
}
