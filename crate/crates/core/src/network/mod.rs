//! The overparameterized parent network: layer stack, He Normal
//! initialization, masked forward/backward passes and momentum SGD.
//!
//! Structured masks multiply a parametric layer's output (pre-activation,
//! bias included) by a per-unit 0/1 vector; since ReLU maps 0 to 0 this is
//! the same as masking the activation output. Unstructured masks multiply
//! the weight tensor itself.

pub mod checkpoint;
mod conv;
mod sgd;
mod spec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{self, he_normal, RngStream, Tensor};
use crate::sparsity::{MaskMode, MaskSet};

pub use sgd::Sgd;
pub use spec::{FeatureShape, LayerSpec, NetworkSpec};

use conv::ConvGeom;

/// Weight and bias of one parametric layer. Also used for gradients and
/// optimizer velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Per-layer tensors congruent with [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerParams>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weight: Tensor::zeros(p.weight.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    })
                })
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| p.weight.data().iter().chain(p.bias.data()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Result of one forward/backward pass over a batch.
#[derive(Clone, Debug)]
pub struct TrainPass {
    pub loss: f64,
    pub correct: usize,
    pub grads: Gradients,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<FeatureShape>,
    params: Vec<Option<LayerParams>>,
    init_seed: u64,
}

/// Per-layer mask in the form the kernels consume.
enum Applied<'a> {
    None,
    Units(Vec<f64>),
    Weights(&'a [bool]),
}

impl Network {
    /// He Normal weights (per-layer child streams of `seed`), zero biases.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let root = RngStream::new(seed).split("init");
        let mut params = Vec::with_capacity(spec.layers.len());
        for i in 0..spec.layers.len() {
            params.push(match spec.param_shapes(i, &shapes) {
                Some((w_shape, b_shape)) => {
                    let fan_in = spec.fan_in(i, &shapes).unwrap_or(0);
                    let mut rng = root.split_index(i as u64);
                    Some(LayerParams {
                        weight: he_normal(fan_in, &w_shape, &mut rng)?,
                        bias: Tensor::zeros(&b_shape),
                    })
                }
                None => None,
            });
        }
        Ok(Self {
            spec,
            shapes,
            params,
            init_seed: seed,
        })
    }

    /// Assembles a network from explicit parameters, checking every shape.
    pub fn from_parts(spec: NetworkSpec, params: Vec<Option<LayerParams>>, init_seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        if params.len() != spec.layers.len() {
            return Err(Error::Spec(format!(
                "{} parameter slots for {} layers",
                params.len(),
                spec.layers.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            match (spec.param_shapes(i, &shapes), p) {
                (None, None) => {}
                (Some((ws, bs)), Some(p)) if p.weight.shape() == ws && p.bias.shape() == bs => {}
                _ => return Err(Error::Spec(format!("layer {i}: parameter shapes do not match spec"))),
            }
        }
        Ok(Self {
            spec,
            shapes,
            params,
            init_seed,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &[FeatureShape] {
        &self.shapes
    }

    pub fn params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Option<LayerParams>] {
        &mut self.params
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// SHA-256 over the spec and the exact bit patterns of every parameter.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.spec).unwrap_or_default());
        for p in self.params.iter().flatten() {
            for v in p.weight.data().iter().chain(p.bias.data()) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() < 2 || batch.shape()[1..] != self.spec.input_shape[..] {
            return Err(Error::ShapeMismatch {
                left: batch.shape().to_vec(),
                right: self.spec.input_shape.clone(),
                context: "batch vs network input",
            });
        }
        Ok(())
    }

    fn applied<'a>(&self, mask: &'a MaskSet) -> Result<Vec<Applied<'a>>> {
        mask.check_congruent(&self.spec)?;
        Ok((0..self.spec.layers.len())
            .map(|i| match (mask.layer(i), mask.mode()) {
                (None, _) => Applied::None,
                (Some(m), MaskMode::Structured) => {
                    Applied::Units(m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
                }
                (Some(m), MaskMode::Unstructured) => Applied::Weights(m),
            })
            .collect())
    }

    fn effective_weight(weight: &Tensor, applied: &Applied) -> Option<Vec<f64>> {
        match applied {
            Applied::Weights(m) => Some(
                weight
                    .data()
                    .iter()
                    .zip(m.iter())
                    .map(|(w, &keep)| if keep { *w } else { 0.0 })
                    .collect(),
            ),
            _ => None,
        }
    }

    fn conv_geom(&self, i: usize) -> ConvGeom {
        let (h, w, c_in) = match self.shapes[i] {
            FeatureShape::Image { h, w, c } => (h, w, c),
            FeatureShape::Flat(_) => unreachable!("validated spec"),
        };
        let (oh, ow) = match self.shapes[i + 1] {
            FeatureShape::Image { h, w, .. } => (h, w),
            FeatureShape::Flat(_) => unreachable!("validated spec"),
        };
        match self.spec.layers[i] {
            LayerSpec::Conv2d {
                channels,
                kernel,
                stride,
                ..
            } => ConvGeom {
                h,
                w,
                c_in,
                c_out: channels,
                kernel,
                stride,
                oh,
                ow,
            },
            _ => unreachable!("conv_geom on non-conv layer"),
        }
    }

    /// Runs the stack; returns the input of every layer followed by the logits.
    fn trace(&self, masks: &[Applied], batch: &Tensor) -> Result<Vec<Tensor>> {
        self.check_batch(batch)?;
        let n = batch.rows();
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        acts.push(batch.clone());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = &acts[i];
            let out_dims = self.shapes[i + 1].dims();
            let mut shape = Vec::with_capacity(out_dims.len() + 1);
            shape.push(n);
            shape.extend(out_dims);
            let out = match layer {
                LayerSpec::Dense { units, .. } => {
                    let p = self.params[i].as_ref().expect("dense params");
                    let eff = Self::effective_weight(&p.weight, &masks[i]);
                    let w = eff.as_deref().unwrap_or(p.weight.data());
                    let mut out = Vec::with_capacity(n * units);
                    for _ in 0..n {
                        out.extend_from_slice(p.bias.data());
                    }
                    numerics::gemm_nn(x.data(), w, &mut out, n, x.row_len(), *units);
                    if let Applied::Units(m) = &masks[i] {
                        apply_units(&mut out, m);
                    }
                    Tensor::from_parts(shape, out)
                }
                LayerSpec::Conv2d { .. } => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let g = self.conv_geom(i);
                    let eff = Self::effective_weight(&p.weight, &masks[i]);
                    let w = eff.as_deref().unwrap_or(p.weight.data());
                    let mut out = vec![0.0; n * g.out_len()];
                    conv::forward(&g, x.data(), w, p.bias.data(), &mut out);
                    if let Applied::Units(m) = &masks[i] {
                        apply_units(&mut out, m);
                    }
                    Tensor::from_parts(shape, out)
                }
                LayerSpec::Relu => numerics::relu(x).reshape(shape)?,
                LayerSpec::Flatten => x.clone().reshape(shape)?,
            };
            if out.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("forward"));
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// Logits of the masked network. Non-maskable layers (including the
    /// logits layer) are never masked.
    pub fn forward(&self, mask: &MaskSet, batch: &Tensor) -> Result<Tensor> {
        let masks = self.applied(mask)?;
        Ok(self.trace(&masks, batch)?.pop().expect("logits"))
    }

    /// Activations entering each layer, then the logits.
    pub fn activations(&self, mask: &MaskSet, batch: &Tensor) -> Result<Vec<Tensor>> {
        let masks = self.applied(mask)?;
        self.trace(&masks, batch)
    }

    /// Mean cross-entropy of the masked network.
    pub fn loss(&self, mask: &MaskSet, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(mask, batch)?;
        check_labels(&logits, labels)?;
        let loss = numerics::cross_entropy_loss(&logits, labels);
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        Ok(loss)
    }

    /// Mean cross-entropy and exact gradients through the masked graph.
    pub fn loss_and_grads(&self, mask: &MaskSet, batch: &Tensor, labels: &[usize]) -> Result<(f64, Gradients)> {
        self.train_pass(mask, batch, labels).map(|p| (p.loss, p.grads))
    }

    /// [`Network::loss_and_grads`] plus the number of correctly classified rows.
    pub fn train_pass(&self, mask: &MaskSet, batch: &Tensor, labels: &[usize]) -> Result<TrainPass> {
        let masks = self.applied(mask)?;
        let acts = self.trace(&masks, batch)?;
        let logits = acts.last().expect("logits");
        let (loss, mut d) = numerics::softmax_cross_entropy(logits, labels)?;
        let correct = logits.argmax_rows().iter().zip(labels).filter(|(p, l)| p == l).count();
        let n = batch.rows();
        let mut grads = Gradients::zeros_like(self);
        for i in (0..self.spec.layers.len()).rev() {
            let x = &acts[i];
            let need_dx = i > 0;
            d = match &self.spec.layers[i] {
                LayerSpec::Dense { units, .. } => {
                    let p = self.params[i].as_ref().expect("dense params");
                    let g = grads.layers[i].as_mut().expect("dense grads");
                    let mut dz = d.into_data();
                    if let Applied::Units(m) = &masks[i] {
                        apply_units(&mut dz, m);
                    }
                    let k = x.row_len();
                    numerics::gemm_tn(x.data(), &dz, g.weight.data_mut(), n, k, *units);
                    for row in dz.chunks_exact(*units) {
                        for (b, v) in g.bias.data_mut().iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                    if let Applied::Weights(m) = &masks[i] {
                        mask_in_place(g.weight.data_mut(), m);
                    }
                    if need_dx {
                        let eff = Self::effective_weight(&p.weight, &masks[i]);
                        let w = eff.as_deref().unwrap_or(p.weight.data());
                        let mut dx = vec![0.0; n * k];
                        numerics::gemm_nt(&dz, w, &mut dx, n, *units, k);
                        Tensor::from_parts(x.shape().to_vec(), dx)
                    } else {
                        break;
                    }
                }
                LayerSpec::Conv2d { .. } => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let g = grads.layers[i].as_mut().expect("conv grads");
                    let geom = self.conv_geom(i);
                    let mut dz = d.into_data();
                    if let Applied::Units(m) = &masks[i] {
                        apply_units(&mut dz, m);
                    }
                    let eff = Self::effective_weight(&p.weight, &masks[i]);
                    let w = eff.as_deref().unwrap_or(p.weight.data());
                    let mut dx = if need_dx { Some(vec![0.0; x.len()]) } else { None };
                    let LayerParams { weight: gw, bias: gb } = g;
                    conv::backward(
                        &geom,
                        x.data(),
                        w,
                        &dz,
                        gw.data_mut(),
                        gb.data_mut(),
                        dx.as_deref_mut(),
                    );
                    if let Applied::Weights(m) = &masks[i] {
                        mask_in_place(gw.data_mut(), m);
                    }
                    match dx {
                        Some(dx) => Tensor::from_parts(x.shape().to_vec(), dx),
                        None => break,
                    }
                }
                LayerSpec::Relu => {
                    let mut dx = d.into_data();
                    for (dv, &xv) in dx.iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    Tensor::from_parts(x.shape().to_vec(), dx)
                }
                LayerSpec::Flatten => d.reshape(x.shape().to_vec())?,
            };
        }
        for p in grads.layers.iter().flatten() {
            if p.weight.data().iter().chain(p.bias.data()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("backward"));
            }
        }
        Ok(TrainPass { loss, correct, grads })
    }

    /// Accuracy and mean loss over a whole dataset, processed in chunks.
    pub fn evaluate(&self, mask: &MaskSet, inputs: &Tensor, labels: &[usize]) -> Result<Metrics> {
        const CHUNK: usize = 512;
        let n = labels.len();
        if n == 0 {
            return Err(Error::invalid("evaluate: empty dataset"));
        }
        if inputs.rows() != n {
            return Err(Error::invalid(format!("{} inputs vs {n} labels", inputs.rows())));
        }
        let masks = self.applied(mask)?;
        let w = inputs.row_len();
        let mut correct = 0usize;
        let mut total_loss = 0.0;
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let mut shape = inputs.shape().to_vec();
            shape[0] = end - start;
            let chunk = Tensor::from_parts(shape, inputs.data()[start * w..end * w].to_vec());
            let logits = self.trace(&masks, &chunk)?.pop().expect("logits");
            let chunk_labels = &labels[start..end];
            check_labels(&logits, chunk_labels)?;
            total_loss += numerics::cross_entropy_loss(&logits, chunk_labels) * (end - start) as f64;
            correct += logits
                .argmax_rows()
                .iter()
                .zip(chunk_labels)
                .filter(|(p, l)| p == l)
                .count();
        }
        let mean_loss = total_loss / n as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite("evaluate"));
        }
        Ok(Metrics {
            accuracy: correct as f64 / n as f64,
            mean_loss,
        })
    }
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<()> {
    let c = logits.row_len();
    if labels.len() != logits.rows() {
        return Err(Error::invalid(format!(
            "{} labels for a batch of {}",
            labels.len(),
            logits.rows()
        )));
    }
    match labels.iter().find(|&&l| l >= c) {
        Some(l) => Err(Error::invalid(format!("label {l} out of range for {c} classes"))),
        None => Ok(()),
    }
}

/// Multiplies the trailing (unit/channel) axis by `m`.
fn apply_units(data: &mut [f64], m: &[f64]) {
    for row in data.chunks_exact_mut(m.len()) {
        for (v, &k) in row.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

fn mask_in_place(data: &mut [f64], m: &[bool]) {
    for (v, &keep) in data.iter_mut().zip(m) {
        if !keep {
            *v = 0.0;
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
