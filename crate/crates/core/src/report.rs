//! Aggregation of finished runs into regret-versus-calls tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::trainer::{Method, RunMetrics};

/// File name of the per-seed report inside a run directory.
pub const REPORT_FILE: &str = "report.json";

/// Everything recorded about one seed of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Row label in aggregated tables: the method, or an ablation name.
    pub label: String,
    pub method: Method,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub regret_mean: f64,
    pub regret_std: f64,
    pub calls_mean: f64,
    pub calls_std: f64,
    pub runs: usize,
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Group runs by label, keeping first-seen order.
pub fn aggregate(runs: &[RunReport]) -> Result<Vec<SummaryRow>> {
    if runs.is_empty() {
        return Err(ForgeError::Config("no runs to aggregate".into()));
    }
    let mut labels: Vec<&str> = Vec::new();
    for r in runs {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    Ok(labels
        .into_iter()
        .map(|label| {
            let group: Vec<&RunReport> = runs.iter().filter(|r| r.label == label).collect();
            let regrets: Vec<f64> = group.iter().map(|r| r.metrics.test_regret).collect();
            let calls: Vec<f64> = group
                .iter()
                .map(|r| r.metrics.solver_calls_per_instance)
                .collect();
            let (regret_mean, regret_std) = mean_std(&regrets);
            let (calls_mean, calls_std) = mean_std(&calls);
            SummaryRow {
                method: label.to_string(),
                regret_mean,
                regret_std,
                calls_mean,
                calls_std,
                runs: group.len(),
            }
        })
        .collect())
}

/// Every `report.json` below the given paths (files are taken as-is).
pub fn collect_reports(paths: &[PathBuf]) -> Result<Vec<RunReport>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_file() {
            files.push(p.clone());
        } else if p.is_dir() {
            find_reports(p, &mut files)?;
        } else {
            return Err(ForgeError::Config(format!(
                "no such run directory: {}",
                p.display()
            )));
        }
    }
    files.sort();
    files
        .iter()
        .map(|f| Ok(serde_json::from_str(&fs::read_to_string(f)?)?))
        .collect()
}

fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            find_reports(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == REPORT_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

/// Summary table with columns `method, regret_mean, regret_std, calls_mean,
/// calls_std, runs`.
pub fn write_summary(rows: &[SummaryRow], w: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format per-epoch curves: validation regret against cumulative
/// training calls per instance.
pub fn write_curves(runs: &[RunReport], w: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "method",
        "seed",
        "epoch",
        "calls_per_instance",
        "val_regret",
        "wall_time",
    ])?;
    for r in runs {
        let n = r.metrics.n_train.max(1) as f64;
        for e in &r.metrics.epochs {
            w.write_record([
                r.label.clone(),
                r.metrics.seed.to_string(),
                e.epoch.to_string(),
                (e.solver_calls_cum as f64 / n).to_string(),
                e.val_regret.to_string(),
                e.wall_time.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::StopReason;

    pub(crate) fn fake(label: &str, seed: u64, regret: f64, calls: f64) -> RunReport {
        RunReport {
            label: label.into(),
            method: Method::Gsl,
            metrics: RunMetrics {
                seed,
                n_train: 10,
                epochs_run: 0,
                stop_reason: StopReason::MaxEpochs,
                wall_time: 0.0,
                solver_calls_total: 0,
                solver_calls_per_instance: calls,
                pretrain_calls: 0,
                solves_total: 0,
                eval_calls: 0,
                surrogate_hit_rate: 0.0,
                best_epoch: 0,
                best_val_regret: 0.0,
                test_regret: regret,
                sigma: 0.1,
                gp_fits: 0,
                gp_failures: 0,
                weight_underflows: 0,
                low_confidence_targets: 0,
                d_max: None,
                alpha: 0.0,
                epochs: Vec::new(),
                trajectory: Vec::new(),
            },
        }
    }

    #[test]
    fn two_methods_three_seeds() {
        let mut runs = Vec::new();
        for s in 0..3 {
            runs.push(fake("gsl", s, 1.0 + s as f64, 40.0));
            runs.push(fake("sfge", s, 10.0, 300.0 + s as f64));
        }
        let rows = aggregate(&runs).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].method, "gsl");
        assert!((rows[0].regret_mean - 2.0).abs() < 1e-12);
        assert!((rows[0].regret_std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(rows[1].regret_std, 0.0);
        let mut out = Vec::new();
        write_summary(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("method,regret_mean,regret_std,calls_mean,calls_std"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn single_run_has_zero_std() {
        let rows = aggregate(&[fake("pfl", 0, 3.0, 0.0)]).unwrap();
        assert_eq!(rows[0].regret_std, 0.0);
        assert_eq!(rows[0].calls_std, 0.0);
    }

    #[test]
    fn empty_input_is_error() {
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn reports_are_found_recursively() {
        let dir = tempfile::tempdir().unwrap();
        for (k, sub) in ["a/seed-0", "a/seed-1", "b/seed-0"].iter().enumerate() {
            let d = dir.path().join(sub);
            fs::create_dir_all(&d).unwrap();
            let r = fake(
                if sub.starts_with('a') { "gsl" } else { "sfge" },
                k as u64,
                1.0,
                2.0,
            );
            fs::write(d.join(REPORT_FILE), serde_json::to_string(&r).unwrap()).unwrap();
        }
        let runs = collect_reports(&[dir.path().to_path_buf()]).unwrap();
        assert_eq!(runs.len(), 3);
        assert_eq!(aggregate(&runs).unwrap().len(), 2);
        assert!(collect_reports(&[dir.path().join("missing")]).is_err());
    }
}
