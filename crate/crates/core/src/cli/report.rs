//! Multi-seed aggregation of completed runs: per-(arm, η, epoch) means with
//! Student-t 95% intervals, and the final-epoch weedout − baseline table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::pipeline::{load_run, Arm, RunRecord, MANIFEST};

/// `t` such that `P(T ≤ t) = 0.975` for `df` degrees of freedom.
pub fn t975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("df >= 1")
        .inverse_cdf(0.975)
}

/// Sample mean and, for `n ≥ 2`, the 95% half-width `t · s / √n`.
pub fn mean_ci(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(t975(n - 1) * var.sqrt() / (n as f64).sqrt()))
}

fn sample_var(xs: &[f64], mean: f64) -> f64 {
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Pooled-variance 95% half-width for the difference of two means
/// (`df = n₁ + n₂ − 2`). Needs at least three observations in total.
pub fn pooled_ci(a: &[f64], b: &[f64]) -> Option<f64> {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 || n1 + n2 < 3 {
        return None;
    }
    let m1 = a.iter().sum::<f64>() / n1 as f64;
    let m2 = b.iter().sum::<f64>() / n2 as f64;
    let ss1 = if n1 > 1 { sample_var(a, m1) * (n1 - 1) as f64 } else { 0.0 };
    let ss2 = if n2 > 1 { sample_var(b, m2) * (n2 - 1) as f64 } else { 0.0 };
    let df = n1 + n2 - 2;
    let sp = ((ss1 + ss2) / df as f64).sqrt();
    Some(t975(df) * sp * (1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub arm: Arm,
    pub eta: f64,
    pub epoch: usize,
    pub n_runs: usize,
    pub train_accuracy_mean: f64,
    pub train_accuracy_ci: Option<f64>,
    pub train_loss_mean: f64,
    pub test_accuracy_mean: Option<f64>,
    pub test_accuracy_ci: Option<f64>,
    pub test_loss_mean: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Difference within the pooled interval.
    Consistent,
    /// Weedout significantly better: contradicts the expected null result.
    WeedoutBetter,
    BaselineBetter,
    /// Too few runs for an interval.
    Undetermined,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub eta: f64,
    pub n_weedout: usize,
    pub n_baseline: usize,
    pub weedout_mean: f64,
    pub baseline_mean: f64,
    pub difference: f64,
    pub pooled_ci: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlotRow {
    pub arm: Arm,
    pub eta: f64,
    pub epoch: usize,
    pub metric: &'static str,
    pub mean: f64,
    pub ci: Option<f64>,
    pub n_runs: usize,
}

/// Groups by (arm, η) in a stable order. Dense runs are filed under η = 0.
fn group(records: &[RunRecord]) -> BTreeMap<(Arm, u64), Vec<&RunRecord>> {
    let mut g: BTreeMap<(Arm, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        g.entry((r.arm, r.eta.value().to_bits())).or_default().push(r);
    }
    for v in g.values_mut() {
        v.sort_by_key(|r| r.seed);
    }
    g
}

pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for ((arm, eta_bits), runs) in group(records) {
        let max_epoch = runs.iter().map(|r| r.epochs.len()).max().unwrap_or(0);
        for e in 0..max_epoch {
            let at: Vec<_> = runs.iter().filter_map(|r| r.epochs.get(e)).collect();
            let train_acc: Vec<f64> = at.iter().map(|r| r.train_accuracy).collect();
            let train_loss: Vec<f64> = at.iter().map(|r| r.train_loss).collect();
            let test_acc: Vec<f64> = at.iter().filter_map(|r| r.test_accuracy).collect();
            let test_loss: Vec<f64> = at.iter().filter_map(|r| r.test_loss).collect();
            let (tr_m, tr_ci) = mean_ci(&train_acc);
            let (te_m, te_ci) = if test_acc.is_empty() {
                (None, None)
            } else {
                let (m, c) = mean_ci(&test_acc);
                (Some(m), c)
            };
            rows.push(AggregateRow {
                arm,
                eta: f64::from_bits(eta_bits),
                epoch: e + 1,
                n_runs: at.len(),
                train_accuracy_mean: tr_m,
                train_accuracy_ci: tr_ci,
                train_loss_mean: mean_ci(&train_loss).0,
                test_accuracy_mean: te_m,
                test_accuracy_ci: te_ci,
                test_loss_mean: (!test_loss.is_empty()).then(|| mean_ci(&test_loss).0),
            });
        }
    }
    rows
}

/// Final-epoch test accuracy of every run in each (arm, η) group.
pub fn final_accuracies(records: &[RunRecord]) -> BTreeMap<(Arm, u64), Vec<f64>> {
    group(records)
        .into_iter()
        .map(|(k, runs)| {
            let v = runs.iter().filter_map(|r| r.final_test()).map(|m| m.accuracy).collect();
            (k, v)
        })
        .collect()
}

pub fn compare(records: &[RunRecord]) -> Vec<ComparisonRow> {
    let finals = final_accuracies(records);
    let mut out = Vec::new();
    for (&(arm, eta_bits), w) in &finals {
        if arm != Arm::Weedout {
            continue;
        }
        let Some(b) = finals.get(&(Arm::RandomBaseline, eta_bits)) else {
            continue;
        };
        if w.is_empty() || b.is_empty() {
            continue;
        }
        let wm = mean_ci(w).0;
        let bm = mean_ci(b).0;
        let diff = wm - bm;
        let ci = pooled_ci(w, b);
        let verdict = match ci {
            None => Verdict::Undetermined,
            Some(h) if diff.abs() <= h => Verdict::Consistent,
            Some(_) if diff > 0.0 => Verdict::WeedoutBetter,
            Some(_) => Verdict::BaselineBetter,
        };
        out.push(ComparisonRow {
            eta: f64::from_bits(eta_bits),
            n_weedout: w.len(),
            n_baseline: b.len(),
            weedout_mean: wm,
            baseline_mean: bm,
            difference: diff,
            pooled_ci: ci,
            verdict,
        });
    }
    out
}

/// Checks that mean final test accuracy does not increase with η beyond
/// interval overlap: `mean(η₁) + ci(η₁) ≥ mean(η₂) − ci(η₂)` for all η₁ < η₂.
/// Returns the violating pairs per arm.
pub fn monotonicity_violations(records: &[RunRecord], arm: Arm) -> Vec<(f64, f64)> {
    let finals = final_accuracies(records);
    let mut levels: Vec<(f64, f64, f64)> = finals
        .iter()
        .filter(|((a, _), v)| *a == arm && !v.is_empty())
        .map(|((_, bits), v)| {
            let (m, c) = mean_ci(v);
            (f64::from_bits(*bits), m, c.unwrap_or(0.0))
        })
        .collect();
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut bad = Vec::new();
    for (i, &(e1, m1, c1)) in levels.iter().enumerate() {
        for &(e2, m2, c2) in &levels[i + 1..] {
            if m1 + c1 < m2 - c2 {
                bad.push((e1, e2));
            }
        }
    }
    bad
}

pub fn plot_rows(agg: &[AggregateRow]) -> Vec<PlotRow> {
    let mut out = Vec::new();
    for r in agg {
        let mut push = |metric, mean, ci| {
            out.push(PlotRow {
                arm: r.arm,
                eta: r.eta,
                epoch: r.epoch,
                metric,
                mean,
                ci,
                n_runs: r.n_runs,
            })
        };
        push("train_accuracy", r.train_accuracy_mean, r.train_accuracy_ci);
        push("train_loss", r.train_loss_mean, None);
        if let Some(m) = r.test_accuracy_mean {
            push("test_accuracy", m, r.test_accuracy_ci);
        }
        if let Some(m) = r.test_loss_mean {
            push("test_loss", m, None);
        }
    }
    out
}

/// Completed runs found directly under `sweep_dir`; failed or unreadable
/// cells are reported in the second list.
pub fn load_sweep(sweep_dir: &Path) -> Result<(Vec<RunRecord>, Vec<String>)> {
    let entries = std::fs::read_dir(sweep_dir).map_err(|e| Error::io(sweep_dir, e))?;
    let mut dirs: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    let mut records = Vec::new();
    let mut problems = Vec::new();
    for d in dirs {
        match load_run(&d) {
            Ok(s) => match s.record {
                Some(r) => records.push(r),
                None => problems.push(format!(
                    "{}: failed: {}",
                    s.manifest.run_id,
                    s.manifest.error.unwrap_or_default()
                )),
            },
            Err(e) => problems.push(format!("{}: {e}", d.display())),
        }
    }
    Ok((records, problems))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt_ci(ci: Option<f64>) -> String {
    ci.map_or_else(|| "n/a".into(), |c| format!("{c:.4}"))
}

/// Human-readable summary printed by `weedout report`.
pub fn summary_text(records: &[RunRecord], cmp: &[ComparisonRow]) -> String {
    let mut s = String::new();
    let finals = final_accuracies(records);
    let _ = writeln!(s, "final test accuracy (mean ± 95% CI):");
    for ((arm, bits), v) in &finals {
        if v.is_empty() {
            continue;
        }
        let (m, c) = mean_ci(v);
        let _ = writeln!(
            s,
            "  {arm:<16} eta={:.2}  {m:.4} ± {}  (n={})",
            f64::from_bits(*bits),
            fmt_ci(c),
            v.len()
        );
    }
    for arm in [Arm::Weedout, Arm::RandomBaseline] {
        if !finals.keys().any(|(a, _)| *a == arm) {
            continue;
        }
        let bad = monotonicity_violations(records, arm);
        if bad.is_empty() {
            let _ = writeln!(s, "monotone in eta ({arm}): yes");
        } else {
            let _ = writeln!(s, "monotone in eta ({arm}): NO, increasing pairs {bad:?}");
        }
    }
    if !cmp.is_empty() {
        let _ = writeln!(s, "weedout - random_baseline at final epoch:");
    }
    for c in cmp {
        let note = match c.verdict {
            Verdict::Consistent => "no significant difference (consistent with the null result)",
            Verdict::WeedoutBetter => "FLAG: weedout significantly better; contradicts the expected null result, investigate",
            Verdict::BaselineBetter => "baseline significantly better",
            Verdict::Undetermined => "too few runs for an interval",
        };
        let _ = writeln!(
            s,
            "  eta={:.2}  diff={:+.4}  pooled CI ±{}  {note}",
            c.eta,
            c.difference,
            fmt_ci(c.pooled_ci)
        );
    }
    s
}
