//! Experiment configuration file (TOML). Unknown keys are rejected and
//! every field is validated before any data is loaded or trained.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    holdout, load_cifar10_binary, load_idx, read_container, split, synthetic_blobs, Dataset, SplitSizes, SplitSpec, Splits,
};
use crate::error::{Error, Result};
use crate::network::{LayerSpec, NetworkSpec};
use crate::pipeline::{Arm, Parents, SweepPlan, TrainConfig};
use crate::search::{Convergence, SearchConfig, Strategy, WinnerScope};
use crate::sparsity::{check_feasible, MaskMode, SparsityBudget, SparsityRatio};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Sweep id; results go to `<output root>/<name>/`.
    pub name: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    #[serde(default)]
    pub independent_parents: bool,
    pub data: DataSource,
    pub split: SplitSection,
    #[serde(default)]
    pub architecture: ArchitectureSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Where samples come from. Relative paths resolve against the config
/// file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    SyntheticBlobs {
        num_classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        seed: u64,
        /// Per-sample shape to reshape the `dim` features into.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input_shape: Option<Vec<usize>>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        /// Keep only the first `limit` samples of the main files.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    Cifar10 {
        files: Vec<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_files: Option<Vec<PathBuf>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    Container {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input_shape: Option<Vec<usize>>,
    },
}

impl DataSource {
    fn has_test_files(&self) -> bool {
        match self {
            DataSource::Idx { test_images, .. } => test_images.is_some(),
            DataSource::Cifar10 { test_files, .. } => test_files.is_some(),
            _ => false,
        }
    }
}

/// A count or a fraction of the source samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Size {
    Count(usize),
    Fraction(f64),
}

/// Train/validation/test partition. `test` must be omitted when the
/// source has its own test files; it is required otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train: Size,
    pub validation: Size,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<Size>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    DeskDefault,
}

/// Either a named preset or an explicit layer list ending in a
/// non-maskable dense logits layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
}

impl Default for ArchitectureSection {
    fn default() -> Self {
        Self {
            preset: Some(Preset::DeskDefault),
            layers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub population_size: usize,
    pub generations: usize,
    pub etas: Vec<f64>,
    pub validation_batch_size: usize,
    pub mask_mode: MaskMode,
    pub strategy: Strategy,
    pub winner_scope: WinnerScope,
    pub budget: SparsityBudget,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<Convergence>,
}

impl Default for SearchSection {
    fn default() -> Self {
        let d = SearchConfig::new(SparsityRatio::ZERO);
        Self {
            population_size: d.population_size,
            generations: d.generations,
            etas: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            validation_batch_size: d.validation_batch_size,
            mask_mode: d.mode,
            strategy: d.strategy,
            winner_scope: d.winner_scope,
            budget: SparsityBudget::PerLayer,
            convergence: None,
        }
    }
}

/// Field-level problems found by [`ExperimentConfig::validate`].
#[derive(Debug, Default)]
pub struct Diagnostics(pub Vec<String>);

impl Diagnostics {
    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.0.push(msg());
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn has_duplicates<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().any(|(i, a)| v[..i].contains(a))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical TOML of the effective configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Diagnostics {
        let mut d = Diagnostics::default();
        d.check(self.schema_version == SCHEMA_VERSION, || {
            format!("schema_version: expected {SCHEMA_VERSION}, got {}", self.schema_version)
        });
        d.check(
            !self.name.is_empty()
                && self
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
                && !self.name.starts_with('.'),
            || format!("name: {:?} must be a non-empty [A-Za-z0-9._-] directory name", self.name),
        );
        d.check(!self.seeds.is_empty(), || "seeds: must not be empty".into());
        d.check(!has_duplicates(&self.seeds), || "seeds: duplicate entries".into());
        d.check(!self.arms.is_empty(), || "arms: must not be empty".into());
        d.check(!has_duplicates(&self.arms), || "arms: duplicate entries".into());

        let s = &self.search;
        d.check(s.population_size >= 2, || {
            format!("search.population_size: must be >= 2, got {}", s.population_size)
        });
        d.check(s.generations >= 1, || "search.generations: must be >= 1".into());
        d.check(s.validation_batch_size >= 1, || "search.validation_batch_size: must be >= 1".into());
        let sparse_arms = self.arms.iter().any(|&a| a != Arm::Dense);
        d.check(!sparse_arms || !s.etas.is_empty(), || "search.etas: must not be empty".into());
        for (i, &eta) in s.etas.iter().enumerate() {
            if let Err(e) = SparsityRatio::new(eta) {
                d.0.push(format!("search.etas[{i}]: {e}"));
            }
        }
        d.check(!has_duplicates(&s.etas), || "search.etas: duplicate entries".into());
        if let Err(e) = s.budget.ensure_supported() {
            d.0.push(format!("search.budget: {e}"));
        }
        if let Some(c) = s.convergence {
            d.check(c.tol >= 0.0 && c.patience >= 1, || {
                "search.convergence: tol must be >= 0 and patience >= 1".into()
            });
        }

        let t = &self.train;
        d.check(t.epochs >= 1, || "train.epochs: must be >= 1".into());
        d.check(t.batch_size >= 1, || "train.batch_size: must be >= 1".into());
        d.check(t.eval_every >= 1, || "train.eval_every: must be >= 1".into());
        d.check(t.lr > 0.0 && t.lr.is_finite(), || format!("train.lr: must be > 0, got {}", t.lr));
        d.check((0.0..1.0).contains(&t.momentum), || {
            format!("train.momentum: must be in [0, 1), got {}", t.momentum)
        });

        let a = &self.architecture;
        d.check(a.preset.is_some() != a.layers.is_some(), || {
            "architecture: set exactly one of preset or layers".into()
        });

        self.validate_split(&mut d);
        if let DataSource::Idx {
            test_images,
            test_labels,
            ..
        } = &self.data
        {
            d.check(test_images.is_some() == test_labels.is_some(), || {
                "data: test_images and test_labels go together".into()
            });
        }
        d
    }

    fn validate_split(&self, d: &mut Diagnostics) {
        let sp = &self.split;
        let separate = self.data.has_test_files();
        match (separate, sp.test) {
            (true, Some(_)) => d.0.push("split.test: omit when the data source has its own test files".into()),
            (false, None) => d.0.push("split.test: required".into()),
            _ => {}
        }
        let sizes: Vec<Size> = [Some(sp.train), Some(sp.validation), sp.test].into_iter().flatten().collect();
        let counts = sizes.iter().all(|s| matches!(s, Size::Count(_)));
        let fractions = sizes.iter().all(|s| matches!(s, Size::Fraction(_)));
        d.check(counts || fractions, || {
            "split: use all counts (integers) or all fractions (reals)".into()
        });
        d.check(!separate || counts, || "split: use counts when the source has test files".into());
    }

    pub fn etas(&self) -> Result<Vec<SparsityRatio>> {
        self.search.etas.iter().map(|&e| SparsityRatio::new(e)).collect()
    }

    pub fn search_config(&self) -> SearchConfig {
        let s = &self.search;
        SearchConfig {
            population_size: s.population_size,
            generations: s.generations,
            eta: SparsityRatio::ZERO,
            mode: s.mask_mode,
            validation_batch_size: s.validation_batch_size,
            strategy: s.strategy,
            winner_scope: s.winner_scope,
            convergence: s.convergence,
        }
    }

    pub fn network_spec(&self, input_shape: &[usize], num_classes: usize) -> Result<NetworkSpec> {
        match (&self.architecture.preset, &self.architecture.layers) {
            (Some(Preset::DeskDefault), None) => NetworkSpec::desk_default(input_shape.to_vec(), num_classes),
            (None, Some(layers)) => {
                let spec = NetworkSpec::new(input_shape.to_vec(), layers.clone())?;
                if spec.num_classes() != num_classes {
                    return Err(Error::Spec(format!(
                        "architecture: logits layer has {} units for {num_classes} classes",
                        spec.num_classes()
                    )));
                }
                Ok(spec)
            }
            _ => Err(Error::Spec("architecture: set exactly one of preset or layers".into())),
        }
    }

    /// The sweep plan for already-loaded data; fails if a sparsity level
    /// is infeasible for the architecture.
    pub fn plan(&self, splits: &Splits) -> Result<SweepPlan> {
        let spec = self.network_spec(splits.train.input_shape(), splits.train.num_classes())?;
        let etas = self.etas()?;
        for &eta in &etas {
            check_feasible(&spec, eta, self.search.mask_mode)?;
        }
        Ok(SweepPlan {
            spec,
            search: self.search_config(),
            train: self.train.clone(),
            etas,
            arms: self.arms.clone(),
            seeds: self.seeds.clone(),
            parents: if self.independent_parents {
                Parents::Independent
            } else {
                Parents::Shared
            },
        })
    }

    pub fn load_splits(&self, base: &Path) -> Result<Splits> {
        let at = |p: &Path| base.join(p);
        let (main, test) = match &self.data {
            DataSource::SyntheticBlobs {
                num_classes,
                per_class,
                dim,
                spread,
                seed,
                input_shape,
            } => {
                let ds = synthetic_blobs(*num_classes, *per_class, *dim, *spread, *seed)?;
                (reshaped(ds, input_shape)?, None)
            }
            DataSource::Idx {
                images,
                labels,
                test_images,
                test_labels,
                limit,
            } => {
                let main = limited(load_idx(&at(images), &at(labels))?, *limit)?;
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(load_idx(&at(i), &at(l))?),
                    _ => None,
                };
                (main, test)
            }
            DataSource::Cifar10 {
                files,
                test_files,
                limit,
            } => {
                let abs: Vec<PathBuf> = files.iter().map(|p| at(p)).collect();
                let main = limited(load_cifar10_binary(&abs)?, *limit)?;
                let test = match test_files {
                    Some(t) => Some(load_cifar10_binary(&t.iter().map(|p| at(p)).collect::<Vec<_>>())?),
                    None => None,
                };
                (main, test)
            }
            DataSource::Container { path, input_shape } => (reshaped(read_container(&at(path))?, input_shape)?, None),
        };
        self.split_data(main, test)
    }

    fn split_data(&self, main: Dataset, test: Option<Dataset>) -> Result<Splits> {
        let sp = &self.split;
        match test {
            None => {
                let sizes = match (sp.train, sp.validation, sp.test) {
                    (Size::Count(train), Size::Count(validation), Some(Size::Count(test))) => SplitSizes::Counts {
                        train,
                        validation,
                        test,
                    },
                    (Size::Fraction(train), Size::Fraction(validation), Some(Size::Fraction(test))) => {
                        SplitSizes::Fractions {
                            train,
                            validation,
                            test,
                        }
                    }
                    _ => return Err(Error::invalid("split: inconsistent sizes")),
                };
                split(&main, &SplitSpec { sizes, seed: sp.seed })
            }
            Some(test) => {
                let (Size::Count(train), Size::Count(validation)) = (sp.train, sp.validation) else {
                    return Err(Error::invalid("split: use counts when the source has test files"));
                };
                let (train, validation) = holdout(&main, train, validation, sp.seed)?;
                Ok(Splits {
                    train,
                    validation,
                    test,
                })
            }
        }
    }
}

fn reshaped(ds: Dataset, shape: &Option<Vec<usize>>) -> Result<Dataset> {
    match shape {
        Some(s) => ds.with_input_shape(s),
        None => Ok(ds),
    }
}

fn limited(ds: Dataset, limit: Option<usize>) -> Result<Dataset> {
    match limit {
        Some(k) if k < ds.len() => {
            let p = format!("{}[..{k}]", ds.provenance());
            ds.subset(&(0..k).collect::<Vec<_>>(), p)
        }
        _ => Ok(ds),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
schema_version = 1
name = "mini"
seeds = [1]
arms = ["weedout"]

[data]
kind = "synthetic_blobs"
num_classes = 3
per_class = 20
dim = 4
spread = 0.3
seed = 0

[split]
train = 40
validation = 10
test = 10
seed = 0

[architecture]
layers = [
  { kind = "dense", units = 8 },
  { kind = "relu" },
  { kind = "dense", units = 3, maskable = false },
]

[search]
population_size = 4
generations = 2
etas = [0.5]
validation_batch_size = 8

[train]
epochs = 2
batch_size = 8
"#;

    #[test]
    fn minimal_config_parses_and_validates() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert!(c.validate().is_empty(), "{:?}", c.validate());
        assert_eq!(c.train.lr, 0.05);
        assert_eq!(c.search.winner_scope, WinnerScope::FinalGeneration);
        let splits = c.load_splits(Path::new(".")).unwrap();
        assert_eq!(splits.train.len(), 40);
        let plan = c.plan(&splits).unwrap();
        assert_eq!(plan.cells().len(), 1);
    }

    #[test]
    fn canonical_toml_round_trips() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        let t = c.to_toml().unwrap();
        let back = ExperimentConfig::parse(&t).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml().unwrap(), t);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("epochs = 2", "epochs = 2\nepoch = 3");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("epoch"), "{err}");
        let text = MINIMAL.replace("spread = 0.3", "spread = 0.3\nspred = 1");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn field_diagnostics() {
        let text = MINIMAL
            .replace("etas = [0.5]", "etas = [0.5, 1.0]")
            .replace("population_size = 4", "population_size = 1");
        let d = ExperimentConfig::parse(&text).unwrap().validate();
        assert!(d.0.iter().any(|m| m.starts_with("search.etas[1]")), "{d:?}");
        assert!(d.0.iter().any(|m| m.starts_with("search.population_size")), "{d:?}");

        let text = MINIMAL.replace("etas = [0.5]", "etas = [0.5]\nbudget = \"global\"");
        let d = ExperimentConfig::parse(&text).unwrap().validate();
        assert!(d.0.iter().any(|m| m.starts_with("search.budget")), "{d:?}");
    }

    #[test]
    fn infeasible_eta_for_architecture() {
        let text = MINIMAL
            .replace("units = 8 }", "units = 2 }")
            .replace("etas = [0.5]", "etas = [0.8]");
        let c = ExperimentConfig::parse(&text).unwrap();
        let splits = c.load_splits(Path::new(".")).unwrap();
        assert!(matches!(c.plan(&splits), Err(Error::InfeasibleSparsity { .. })));
    }
}
