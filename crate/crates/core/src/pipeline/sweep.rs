use std::path::Path;

use rayon::prelude::*;

use super::store::{load_run, write_failed, write_run, CellStatus};
use super::{run_arm, run_id, Arm, Parents, RunInputs, RunRecord, TrainConfig};
use crate::data::Splits;
use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::search::SearchConfig;
use crate::sparsity::SparsityRatio;

/// A full factorial of sparsity levels, arms and seeds. The dense arm
/// ignores `etas` and contributes one cell per seed at η = 0.
#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub spec: NetworkSpec,
    pub search: SearchConfig,
    pub train: TrainConfig,
    pub etas: Vec<SparsityRatio>,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub parents: Parents,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub arm: Arm,
    pub eta: SparsityRatio,
    pub seed: u64,
}

impl Cell {
    pub fn run_id(&self) -> String {
        run_id(self.arm, self.eta, self.seed)
    }
}

impl SweepPlan {
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &arm in &self.arms {
            let etas = if arm == Arm::Dense {
                vec![SparsityRatio::ZERO]
            } else {
                self.etas.clone()
            };
            for &eta in &etas {
                for &seed in &self.seeds {
                    cells.push(Cell { arm, eta, seed });
                }
            }
        }
        cells
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("sweep needs at least one arm and one seed"));
        }
        if self.etas.is_empty() && self.arms.iter().any(|&a| a != Arm::Dense) {
            return Err(Error::invalid("sweep needs at least one sparsity level"));
        }
        self.search.validate()?;
        self.train.validate()
    }

    pub fn run_cell(&self, cell: &Cell, splits: &Splits) -> Result<RunRecord> {
        let inputs = RunInputs {
            spec: &self.spec,
            search: &self.search,
            train: &self.train,
            splits,
            parents: self.parents,
        };
        run_arm(&inputs, cell.arm, cell.eta, cell.seed)
    }
}

#[derive(Clone, Debug, Default)]
pub struct SweepOptions {
    /// Stored verbatim in every cell manifest.
    pub config_text: String,
    /// Recompute cells whose previous attempt failed.
    pub retry_failed: bool,
    /// Run cells concurrently on the current rayon pool.
    pub parallel_cells: bool,
}

#[derive(Clone, Debug)]
pub enum CellOutcome {
    Completed(Box<RunRecord>),
    /// Already completed on disk; loaded, not recomputed.
    Skipped(Box<RunRecord>),
    Failed { cell: Cell, error: String },
}

impl CellOutcome {
    pub fn record(&self) -> Option<&RunRecord> {
        match self {
            CellOutcome::Completed(r) | CellOutcome::Skipped(r) => Some(r),
            CellOutcome::Failed { .. } => None,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, CellOutcome::Failed { .. })
    }
}

/// Runs every cell of `plan` into `out_dir/<run_id>/`. Cells already
/// completed on disk are skipped; a failing cell is recorded and the sweep
/// continues. `progress` is called once per cell as it finishes.
pub fn sweep<F>(plan: &SweepPlan, splits: &Splits, out_dir: &Path, opts: &SweepOptions, progress: F) -> Result<Vec<CellOutcome>>
where
    F: Fn(&Cell, &CellOutcome) + Sync,
{
    plan.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let one = |cell: &Cell| -> Result<CellOutcome> {
        let dir = out_dir.join(cell.run_id());
        let out = match load_run(&dir) {
            Ok(stored) if stored.manifest.status == CellStatus::Completed => {
                CellOutcome::Skipped(Box::new(stored.record.expect("completed cell has a record")))
            }
            Ok(stored) if !opts.retry_failed => CellOutcome::Failed {
                cell: *cell,
                error: stored.manifest.error.unwrap_or_default(),
            },
            // missing, unreadable or failed-and-retried
            _ => match plan.run_cell(cell, splits) {
                Ok(rec) => {
                    write_run(&dir, &rec, &opts.config_text)?;
                    CellOutcome::Completed(Box::new(rec))
                }
                Err(e) => {
                    let error = e.to_string();
                    write_failed(&dir, cell.arm, cell.eta, cell.seed, &error, &opts.config_text)?;
                    CellOutcome::Failed { cell: *cell, error }
                }
            },
        };
        progress(cell, &out);
        Ok(out)
    };
    let cells = plan.cells();
    if opts.parallel_cells {
        cells.par_iter().map(one).collect()
    } else {
        cells.iter().map(one).collect()
    }
}
