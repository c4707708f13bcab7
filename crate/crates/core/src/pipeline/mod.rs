//! End-to-end runs: parent init, optional mask search, SGD training of the
//! chosen sub-network and test evaluation, for each experimental arm.

mod store;
mod sweep;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{batches, Splits};
use crate::error::{Error, Result};
use crate::network::{Metrics, Network, NetworkSpec, Sgd};
use crate::numerics::RngStream;
use crate::search::{run_search, SearchConfig, SearchHistory};
use crate::sparsity::{sample_mask, MaskMode, MaskSet, SparsityRatio};

pub use store::{
    history_csv, load_run, metrics_csv, read_manifest, sha256, write_failed, write_run, CellStatus, Manifest, RunSummary,
    StoredRun, HISTORY, MANIFEST, METRICS,
};
pub use sweep::{sweep, Cell, CellOutcome, SweepOptions, SweepPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            lr: 0.05,
            momentum: 0.9,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::invalid("epochs, batch_size and eval_every must be >= 1"));
        }
        Sgd::new(self.lr, self.momentum).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Weedout,
    RandomBaseline,
    Dense,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Weedout => "weedout",
            Arm::RandomBaseline => "random_baseline",
            Arm::Dense => "dense",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weedout" => Ok(Arm::Weedout),
            "random_baseline" => Ok(Arm::RandomBaseline),
            "dense" => Ok(Arm::Dense),
            _ => Err(Error::invalid(format!("unknown arm {s:?}"))),
        }
    }
}

/// Metrics after one training epoch. Train figures are averaged over the
/// epoch's minibatches; test figures are present only on evaluation epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
}

/// Wall-clock seconds per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub weedout_s: f64,
    pub training_s: f64,
    pub evaluation_s: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.weedout_s + self.training_s + self.evaluation_s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub arm: Arm,
    pub eta: SparsityRatio,
    pub seed: u64,
    pub spec: NetworkSpec,
    pub parent_checksum: String,
    pub mask: MaskSet,
    pub active_parameters: usize,
    pub epochs: Vec<EpochRow>,
    pub history: Option<SearchHistory>,
    pub fitness_evaluations: usize,
    pub timings: PhaseTimings,
}

impl RunRecord {
    pub fn final_test(&self) -> Option<Metrics> {
        let last = self.epochs.last()?;
        Some(Metrics {
            accuracy: last.test_accuracy?,
            mean_loss: last.test_loss?,
        })
    }
}

pub fn run_id(arm: Arm, eta: SparsityRatio, seed: u64) -> String {
    format!("{arm}_{eta}_{seed}")
}

/// Whether the arms of one seed start from the same parent weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Parents {
    #[default]
    Shared,
    Independent,
}

/// Named child streams of one run seed.
struct RunStreams {
    root: RngStream,
    parent_seed: u64,
}

impl RunStreams {
    fn new(seed: u64, arm: Arm, parents: Parents) -> Self {
        use rand_core::RngCore;
        let root = RngStream::new(seed);
        let mut p = root.split("parent");
        if parents == Parents::Independent {
            p = p.split(arm.as_str());
        }
        Self {
            parent_seed: p.next_u64(),
            root,
        }
    }
}

/// Everything one run needs besides its arm, sparsity and seed.
#[derive(Clone, Copy)]
pub struct RunInputs<'a> {
    pub spec: &'a NetworkSpec,
    pub search: &'a SearchConfig,
    pub train: &'a TrainConfig,
    pub splits: &'a Splits,
    pub parents: Parents,
}

/// Searches for a mask with the untrained parent, then trains it.
pub fn weedout_run(
    spec: &NetworkSpec,
    search_cfg: &SearchConfig,
    train_cfg: &TrainConfig,
    splits: &Splits,
    seed: u64,
) -> Result<RunRecord> {
    let inputs = RunInputs {
        spec,
        search: search_cfg,
        train: train_cfg,
        splits,
        parents: Parents::Shared,
    };
    run_arm(&inputs, Arm::Weedout, search_cfg.eta, seed)
}

/// Trains one randomly drawn mask at `eta`, with no search.
pub fn baseline_run(
    spec: &NetworkSpec,
    eta: SparsityRatio,
    mode: MaskMode,
    train_cfg: &TrainConfig,
    splits: &Splits,
    seed: u64,
) -> Result<RunRecord> {
    let mut search = SearchConfig::new(eta);
    search.mode = mode;
    let inputs = RunInputs {
        spec,
        search: &search,
        train: train_cfg,
        splits,
        parents: Parents::Shared,
    };
    run_arm(&inputs, Arm::RandomBaseline, eta, seed)
}

/// Trains the unmasked parent.
pub fn dense_run(spec: &NetworkSpec, train_cfg: &TrainConfig, splits: &Splits, seed: u64) -> Result<RunRecord> {
    let search = SearchConfig::new(SparsityRatio::ZERO);
    let inputs = RunInputs {
        spec,
        search: &search,
        train: train_cfg,
        splits,
        parents: Parents::Shared,
    };
    run_arm(&inputs, Arm::Dense, SparsityRatio::ZERO, seed)
}

pub fn run_arm(inputs: &RunInputs<'_>, arm: Arm, eta: SparsityRatio, seed: u64) -> Result<RunRecord> {
    let RunInputs {
        spec,
        search,
        train,
        splits,
        parents,
    } = *inputs;
    train.validate()?;
    for (name, ds) in [("train", &splits.train), ("test", &splits.test)] {
        if ds.input_shape() != spec.input_shape.as_slice() {
            return Err(Error::Spec(format!(
                "{name} inputs have shape {:?}, network expects {:?}",
                ds.input_shape(),
                spec.input_shape
            )));
        }
    }
    let eta = if arm == Arm::Dense { SparsityRatio::ZERO } else { eta };
    let streams = RunStreams::new(seed, arm, parents);
    let mut net = Network::init(spec.clone(), streams.parent_seed)?;
    let parent_checksum = net.checksum();
    let mut timings = PhaseTimings::default();

    let (mask, history, evaluations) = match arm {
        Arm::Weedout => {
            let t = Instant::now();
            let cfg = SearchConfig { eta, ..search.clone() };
            let out = run_search(&net, &cfg, &splits.validation, &streams.root.split("search"))?;
            timings.weedout_s = t.elapsed().as_secs_f64();
            (out.best.mask, Some(out.history), out.evaluations)
        }
        Arm::RandomBaseline => {
            let mut rng = streams.root.split("mask");
            (sample_mask(spec, eta, search.mode, &mut rng)?, None, 0)
        }
        Arm::Dense => (MaskSet::ones(spec, search.mode), None, 0),
    };
    let active_parameters = mask.active_parameters(spec)?;
    let epochs = train_and_evaluate(&mut net, &mask, train, splits, &streams.root.split("train"), &mut timings)?;

    Ok(RunRecord {
        run_id: run_id(arm, eta, seed),
        arm,
        eta,
        seed,
        spec: spec.clone(),
        parent_checksum,
        mask,
        active_parameters,
        epochs,
        history,
        fitness_evaluations: evaluations,
        timings,
    })
}

fn diverged(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged { epoch, batch },
        other => other,
    }
}

/// Momentum SGD on `splits.train`, one shuffled pass per epoch. Any
/// non-finite loss or gradient aborts with [`Error::Diverged`].
pub fn train_and_evaluate(
    net: &mut Network,
    mask: &MaskSet,
    cfg: &TrainConfig,
    splits: &Splits,
    rng: &RngStream,
    timings: &mut PhaseTimings,
) -> Result<Vec<EpochRow>> {
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut rows = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let t = Instant::now();
        let mut epoch_rng = rng.split_index(epoch as u64);
        let (mut loss_sum, mut correct, mut seen, mut nb) = (0.0, 0usize, 0usize, 0usize);
        for (b, batch) in batches(&splits.train, cfg.batch_size, &mut epoch_rng, false)?.enumerate() {
            let pass = net
                .train_pass(mask, &batch.inputs, &batch.labels)
                .map_err(|e| diverged(e, epoch, b))?;
            loss_sum += pass.loss * batch.len() as f64;
            correct += pass.correct;
            seen += batch.len();
            sgd.step(net, &pass.grads)?;
            nb = b + 1;
        }
        timings.training_s += t.elapsed().as_secs_f64();

        let test = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let t = Instant::now();
            let m = net
                .evaluate(mask, splits.test.inputs(), splits.test.labels())
                .map_err(|e| diverged(e, epoch, nb))?;
            timings.evaluation_s += t.elapsed().as_secs_f64();
            Some(m)
        } else {
            None
        };
        rows.push(EpochRow {
            epoch,
            train_accuracy: correct as f64 / seen as f64,
            train_loss: loss_sum / seen as f64,
            test_accuracy: test.map(|m| m.accuracy),
            test_loss: test.map(|m| m.mean_loss),
        });
    }
    Ok(rows)
}
