//! Sparsity masks: exact-count sampling at a ratio η, measurement, and the
//! physical graph reduction used as the oracle for masked execution.

use std::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{FeatureShape, LayerParams, LayerSpec, Network, NetworkSpec};
use crate::numerics::{RngStream, Tensor};

/// Fraction of inactive units (or weights) per maskable layer, in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SparsityRatio(f64);

impl SparsityRatio {
    pub const ZERO: SparsityRatio = SparsityRatio(0.0);

    pub fn new(eta: f64) -> Result<Self> {
        if (0.0..1.0).contains(&eta) {
            Ok(Self(eta))
        } else {
            Err(Error::invalid(format!("sparsity ratio must be in [0, 1), got {eta}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `round_half_up(η · n)`. The small slack absorbs representation error
    /// so that e.g. 0.15·10 counts as an exact half.
    pub fn zeros_for(self, n: usize) -> usize {
        (self.0 * n as f64 + 0.5 + 1e-9).floor() as usize
    }
}

impl TryFrom<f64> for SparsityRatio {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SparsityRatio> for f64 {
    fn from(r: SparsityRatio) -> f64 {
        r.0
    }
}

impl fmt::Display for SparsityRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Whole units (dense) or output channels (conv).
    Structured,
    /// Individual weights.
    Unstructured,
}

/// How the sparsity budget is distributed over layers. Only the uniform
/// per-layer budget is available.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityBudget {
    #[default]
    PerLayer,
    Global,
    NonUniform,
}

impl SparsityBudget {
    pub fn ensure_supported(self) -> Result<()> {
        match self {
            SparsityBudget::PerLayer => Ok(()),
            SparsityBudget::Global => Err(Error::NotImplemented("global sparsity budget".into())),
            SparsityBudget::NonUniform => {
                Err(Error::NotImplemented("non-uniform per-layer sparsity".into()))
            }
        }
    }
}

/// One binary mask per maskable layer; `None` slots are implicit all-ones.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    mode: MaskMode,
    eta: SparsityRatio,
    sample_seed: Option<u64>,
    layers: Vec<Option<Vec<bool>>>,
}

fn mask_len(spec: &NetworkSpec, shapes: &[FeatureShape], i: usize, mode: MaskMode) -> usize {
    match mode {
        MaskMode::Structured => spec.layers[i].node_count().unwrap_or(0),
        MaskMode::Unstructured => spec
            .param_shapes(i, shapes)
            .map(|(w, _)| w.iter().product())
            .unwrap_or(0),
    }
}

impl MaskSet {
    pub fn ones(spec: &NetworkSpec, mode: MaskMode) -> Self {
        let shapes = spec.shapes().unwrap_or_default();
        let layers = (0..spec.layers.len())
            .map(|i| {
                spec.layers[i]
                    .is_maskable()
                    .then(|| vec![true; mask_len(spec, &shapes, i, mode)])
            })
            .collect();
        Self {
            mode,
            eta: SparsityRatio::ZERO,
            sample_seed: None,
            layers,
        }
    }

    /// Builds a mask from explicit per-layer vectors and checks congruence.
    pub fn from_layers(
        spec: &NetworkSpec,
        mode: MaskMode,
        eta: SparsityRatio,
        sample_seed: Option<u64>,
        layers: Vec<Option<Vec<bool>>>,
    ) -> Result<Self> {
        let m = Self {
            mode,
            eta,
            sample_seed,
            layers,
        };
        m.check_congruent(spec)?;
        Ok(m)
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn eta(&self) -> SparsityRatio {
        self.eta
    }

    pub fn sample_seed(&self) -> Option<u64> {
        self.sample_seed
    }

    pub fn layer(&self, i: usize) -> Option<&[bool]> {
        self.layers.get(i).and_then(|l| l.as_deref())
    }

    pub fn layers(&self) -> &[Option<Vec<bool>>] {
        &self.layers
    }

    pub fn check_congruent(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.shapes()?;
        if self.layers.len() != spec.layers.len() {
            return Err(Error::MaskMismatch(format!(
                "{} mask slots for {} layers",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (i, slot) in self.layers.iter().enumerate() {
            match (spec.layers[i].is_maskable(), slot) {
                (_, None) => {}
                (false, Some(_)) => {
                    return Err(Error::MaskMismatch(format!("layer {i} is not maskable")))
                }
                (true, Some(m)) => {
                    let want = mask_len(spec, &shapes, i, self.mode);
                    if m.len() != want {
                        return Err(Error::MaskMismatch(format!(
                            "layer {i}: mask length {} != {want}",
                            m.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// `(layer index, zeros, total)` for every explicit mask.
    pub fn layer_counts(&self) -> Vec<(usize, usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                l.as_ref()
                    .map(|m| (i, m.iter().filter(|&&b| !b).count(), m.len()))
            })
            .collect()
    }

    /// Zeros over all maskable positions.
    pub fn realized_sparsity(&self) -> f64 {
        let (zeros, total) = self
            .layer_counts()
            .iter()
            .fold((0, 0), |(z, t), &(_, lz, lt)| (z + lz, t + lt));
        if total == 0 {
            0.0
        } else {
            zeros as f64 / total as f64
        }
    }

    /// Parameters that can influence the output: for structured masks, the
    /// parameter count of the reduced network; for unstructured masks, the
    /// surviving weights plus all biases.
    pub fn active_parameters(&self, spec: &NetworkSpec) -> Result<usize> {
        self.check_congruent(spec)?;
        let shapes = spec.shapes()?;
        let mut count = 0;
        match self.mode {
            MaskMode::Structured => {
                // surviving channels (image) or features (flat) entering layer i
                let mut active = shapes[0].channels();
                for (i, layer) in spec.layers.iter().enumerate() {
                    match *layer {
                        LayerSpec::Dense { units, .. } | LayerSpec::Conv2d { channels: units, .. } => {
                            let out = self.layer(i).map_or(units, |m| m.iter().filter(|&&b| b).count());
                            let per_unit = match *layer {
                                LayerSpec::Conv2d { kernel, .. } => kernel * kernel * active,
                                _ => active,
                            };
                            count += out * per_unit + out;
                            active = out;
                        }
                        LayerSpec::Flatten => {
                            if let FeatureShape::Image { h, w, .. } = shapes[i] {
                                active *= h * w;
                            }
                        }
                        LayerSpec::Relu => {}
                    }
                }
            }
            MaskMode::Unstructured => {
                for i in 0..spec.layers.len() {
                    if let Some((w, b)) = spec.param_shapes(i, &shapes) {
                        let weights = match self.layer(i) {
                            Some(m) => m.iter().filter(|&&k| k).count(),
                            None => w.iter().product(),
                        };
                        count += weights + b[0];
                    }
                }
            }
        }
        Ok(count)
    }

    pub fn to_record(&self) -> MaskRecord {
        MaskRecord {
            mode: self.mode,
            eta: self.eta.value(),
            sample_seed: self.sample_seed,
            layers: self
                .layers
                .iter()
                .map(|l| l.as_ref().map(|m| m.iter().map(|&b| if b { '1' } else { '0' }).collect()))
                .collect(),
        }
    }

    /// Decodes a record; when a sampling seed is present, the stored arrays
    /// must equal a fresh regeneration from `(spec, η, mode, seed)`.
    pub fn from_record(spec: &NetworkSpec, rec: &MaskRecord) -> Result<Self> {
        let layers = rec
            .layers
            .iter()
            .map(|l| {
                l.as_ref()
                    .map(|s| {
                        s.chars()
                            .map(|c| match c {
                                '1' => Ok(true),
                                '0' => Ok(false),
                                other => Err(Error::Serde(format!("bad mask character {other:?}"))),
                            })
                            .collect::<Result<Vec<bool>>>()
                    })
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        let eta = SparsityRatio::new(rec.eta)?;
        let mask = Self::from_layers(spec, rec.mode, eta, rec.sample_seed, layers)?;
        if let Some(seed) = rec.sample_seed {
            let regenerated = regenerate(spec, eta, rec.mode, seed)?;
            if regenerated != mask {
                return Err(Error::Checksum(format!(
                    "mask arrays disagree with sample seed {seed}"
                )));
            }
        }
        Ok(mask)
    }
}

/// Serialized mask: `(mode, η, seed)` plus redundant `'0'/'1'` strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRecord {
    pub mode: MaskMode,
    pub eta: f64,
    pub sample_seed: Option<u64>,
    pub layers: Vec<Option<String>>,
}

/// Exactly `zeros` false entries among `len`, positions uniform without replacement.
fn exact_count_mask(len: usize, zeros: usize, rng: &mut RngStream) -> Vec<bool> {
    let mut m = vec![true; len];
    for i in index::sample(rng, len, zeros) {
        m[i] = false;
    }
    m
}

/// Deterministic mask from its seed. Layer `i` draws from child stream `i`.
pub fn regenerate(spec: &NetworkSpec, eta: SparsityRatio, mode: MaskMode, seed: u64) -> Result<MaskSet> {
    let shapes = spec.shapes()?;
    let root = RngStream::new(seed).split("mask");
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        if !layer.is_maskable() {
            layers.push(None);
            continue;
        }
        let width = mask_len(spec, &shapes, i, mode);
        let zeros = eta.zeros_for(width);
        if zeros >= width {
            return Err(Error::InfeasibleSparsity {
                layer: i,
                eta: eta.value(),
                zeros,
                width,
            });
        }
        layers.push(Some(exact_count_mask(width, zeros, &mut root.split_index(i as u64))));
    }
    Ok(MaskSet {
        mode,
        eta,
        sample_seed: Some(seed),
        layers,
    })
}

/// Checks that every maskable layer keeps at least one active position.
pub fn check_feasible(spec: &NetworkSpec, eta: SparsityRatio, mode: MaskMode) -> Result<()> {
    let shapes = spec.shapes()?;
    for i in spec.maskable_layers() {
        let width = mask_len(spec, &shapes, i, mode);
        let zeros = eta.zeros_for(width);
        if zeros >= width {
            return Err(Error::InfeasibleSparsity {
                layer: i,
                eta: eta.value(),
                zeros,
                width,
            });
        }
    }
    Ok(())
}

pub fn sample_mask(spec: &NetworkSpec, eta: SparsityRatio, mode: MaskMode, rng: &mut RngStream) -> Result<MaskSet> {
    use rand_core::RngCore;
    let seed = rng.next_u64();
    regenerate(spec, eta, mode, seed)
}

/// Per maskable layer, exactly `round_half_up(η · units)` units switched off.
pub fn sample_structured(spec: &NetworkSpec, eta: SparsityRatio, rng: &mut RngStream) -> Result<MaskSet> {
    sample_mask(spec, eta, MaskMode::Structured, rng)
}

/// Per maskable weight tensor, exactly `round_half_up(η · weights)` zeros.
pub fn sample_unstructured(spec: &NetworkSpec, eta: SparsityRatio, rng: &mut RngStream) -> Result<MaskSet> {
    sample_mask(spec, eta, MaskMode::Unstructured, rng)
}

pub fn realized_sparsity(mask: &MaskSet) -> f64 {
    mask.realized_sparsity()
}

/// Physically removes masked units/channels and their incident weights.
/// The result, run with an all-ones mask, computes the same logits as the
/// masked parent.
pub fn reduce_network(net: &Network, mask: &MaskSet) -> Result<Network> {
    if mask.mode() != MaskMode::Structured {
        return Err(Error::UnsupportedMode);
    }
    let spec = net.spec();
    mask.check_congruent(spec)?;
    let shapes = net.shapes();

    // Original indices of the surviving features of the current activation:
    // flat feature indices, or channel indices for images.
    let mut keep: Vec<usize> = (0..shapes[0].channels()).collect();
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut params = Vec::with_capacity(spec.layers.len());

    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Dense { units, .. } => {
                let p = net.params()[i].as_ref().expect("dense params");
                let out: Vec<usize> = surviving(mask.layer(i), units);
                if out.is_empty() {
                    return Err(Error::invalid(format!("layer {i} has no active units")));
                }
                let w = p.weight.data();
                let mut nw = Vec::with_capacity(keep.len() * out.len());
                for &r in &keep {
                    nw.extend(out.iter().map(|&c| w[r * units + c]));
                }
                let nb: Vec<f64> = out.iter().map(|&c| p.bias.data()[c]).collect();
                params.push(Some(LayerParams {
                    weight: Tensor::new(vec![keep.len(), out.len()], nw)?,
                    bias: Tensor::new(vec![out.len()], nb)?,
                }));
                layers.push(layer.with_node_count(out.len()));
                keep = out;
            }
            LayerSpec::Conv2d {
                channels, kernel, ..
            } => {
                let p = net.params()[i].as_ref().expect("conv params");
                let out: Vec<usize> = surviving(mask.layer(i), channels);
                if out.is_empty() {
                    return Err(Error::invalid(format!("layer {i} has no active channels")));
                }
                let c_in = shapes[i].channels();
                let w = p.weight.data();
                let mut nw = Vec::with_capacity(kernel * kernel * keep.len() * out.len());
                for k in 0..kernel * kernel {
                    for &ci in &keep {
                        let base = (k * c_in + ci) * channels;
                        nw.extend(out.iter().map(|&co| w[base + co]));
                    }
                }
                let nb: Vec<f64> = out.iter().map(|&c| p.bias.data()[c]).collect();
                params.push(Some(LayerParams {
                    weight: Tensor::new(vec![kernel, kernel, keep.len(), out.len()], nw)?,
                    bias: Tensor::new(vec![out.len()], nb)?,
                }));
                layers.push(layer.with_node_count(out.len()));
                keep = out;
            }
            LayerSpec::Relu => {
                params.push(None);
                layers.push(LayerSpec::Relu);
            }
            LayerSpec::Flatten => {
                let (h, w, c) = match shapes[i] {
                    FeatureShape::Image { h, w, c } => (h, w, c),
                    FeatureShape::Flat(_) => unreachable!("validated spec"),
                };
                keep = (0..h * w)
                    .flat_map(|pix| keep.iter().map(move |&ch| pix * c + ch))
                    .collect();
                params.push(None);
                layers.push(LayerSpec::Flatten);
            }
        }
    }
    let reduced = NetworkSpec::new(spec.input_shape.clone(), layers)?;
    Network::from_parts(reduced, params, net.init_seed())
}

fn surviving(mask: Option<&[bool]>, n: usize) -> Vec<usize> {
    match mask {
        Some(m) => (0..n).filter(|&j| m[j]).collect(),
        None => (0..n).collect(),
    }
}
