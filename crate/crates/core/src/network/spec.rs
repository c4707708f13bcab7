use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

/// One entry of the layer stack.
///
/// Dense layers take flat `[n, features]` inputs, conv layers take NHWC
/// `[n, h, w, c]` inputs with valid (unpadded) windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        units: usize,
        #[serde(default = "yes")]
        maskable: bool,
    },
    Conv2d {
        channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "yes")]
        maskable: bool,
    },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense {
            units,
            maskable: true,
        }
    }

    pub fn logits(classes: usize) -> Self {
        LayerSpec::Dense {
            units: classes,
            maskable: false,
        }
    }

    pub fn conv(channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d {
            channels,
            kernel,
            stride: 1,
            maskable: true,
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    pub fn is_maskable(&self) -> bool {
        match *self {
            LayerSpec::Dense { maskable, .. } | LayerSpec::Conv2d { maskable, .. } => maskable,
            _ => false,
        }
    }

    /// Output units (dense) or output channels (conv).
    pub fn node_count(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { units, .. } => Some(units),
            LayerSpec::Conv2d { channels, .. } => Some(channels),
            _ => None,
        }
    }

    pub(crate) fn with_node_count(&self, n: usize) -> Self {
        match *self {
            LayerSpec::Dense { maskable, .. } => LayerSpec::Dense { units: n, maskable },
            LayerSpec::Conv2d {
                kernel,
                stride,
                maskable,
                ..
            } => LayerSpec::Conv2d {
                channels: n,
                kernel,
                stride,
                maskable,
            },
            other => other,
        }
    }
}

/// Per-sample activation shape between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureShape {
    Flat(usize),
    Image { h: usize, w: usize, c: usize },
}

impl FeatureShape {
    pub fn len(&self) -> usize {
        match *self {
            FeatureShape::Flat(d) => d,
            FeatureShape::Image { h, w, c } => h * w * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            FeatureShape::Flat(d) => vec![d],
            FeatureShape::Image { h, w, c } => vec![h, w, c],
        }
    }

    /// Channel count for images, feature count for flat shapes.
    pub fn channels(&self) -> usize {
        match *self {
            FeatureShape::Flat(d) => d,
            FeatureShape::Image { c, .. } => c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// `[features]` or `[height, width, channels]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self {
            input_shape,
            layers,
        };
        spec.shapes()?;
        Ok(spec)
    }

    /// conv(16, 3x3) → relu → conv(32, 3x3) → relu → flatten → dense(128) → relu → logits
    pub fn desk_default(input_shape: Vec<usize>, num_classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        if input_shape.len() == 3 {
            layers.extend([
                LayerSpec::conv(16, 3),
                LayerSpec::Relu,
                LayerSpec::conv(32, 3),
                LayerSpec::Relu,
                LayerSpec::Flatten,
            ]);
        }
        layers.extend([
            LayerSpec::dense(128),
            LayerSpec::Relu,
            LayerSpec::logits(num_classes),
        ]);
        Self::new(input_shape, layers)
    }

    pub fn input(&self) -> Result<FeatureShape> {
        match self.input_shape[..] {
            [d] if d > 0 => Ok(FeatureShape::Flat(d)),
            [h, w, c] if h > 0 && w > 0 && c > 0 => Ok(FeatureShape::Image { h, w, c }),
            _ => Err(Error::Spec(format!(
                "input_shape must be [features] or [h, w, c] with positive entries, got {:?}",
                self.input_shape
            ))),
        }
    }

    /// Validates the stack and returns the activation shape entering each
    /// layer, followed by the output shape (length `layers.len() + 1`).
    pub fn shapes(&self) -> Result<Vec<FeatureShape>> {
        let mut cur = self.input()?;
        let mut shapes = vec![cur];
        if self.layers.is_empty() {
            return Err(Error::Spec("network has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match (*layer, cur) {
                (LayerSpec::Dense { units, .. }, FeatureShape::Flat(_)) => {
                    if units == 0 {
                        return Err(Error::Spec(format!("layer {i}: dense units must be >= 1")));
                    }
                    FeatureShape::Flat(units)
                }
                (LayerSpec::Dense { .. }, FeatureShape::Image { .. }) => {
                    return Err(Error::Spec(format!(
                        "layer {i}: dense layer needs flat input; insert a flatten layer"
                    )))
                }
                (
                    LayerSpec::Conv2d {
                        channels,
                        kernel,
                        stride,
                        ..
                    },
                    FeatureShape::Image { h, w, .. },
                ) => {
                    if channels == 0 || kernel == 0 || stride == 0 {
                        return Err(Error::Spec(format!(
                            "layer {i}: conv channels, kernel and stride must be >= 1"
                        )));
                    }
                    if kernel > h || kernel > w {
                        return Err(Error::Spec(format!(
                            "layer {i}: kernel {kernel} larger than input {h}x{w}"
                        )));
                    }
                    FeatureShape::Image {
                        h: (h - kernel) / stride + 1,
                        w: (w - kernel) / stride + 1,
                        c: channels,
                    }
                }
                (LayerSpec::Conv2d { .. }, FeatureShape::Flat(_)) => {
                    return Err(Error::Spec(format!("layer {i}: conv layer needs image input")))
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::Flatten, FeatureShape::Image { h, w, c }) => {
                    FeatureShape::Flat(h * w * c)
                }
                (LayerSpec::Flatten, FeatureShape::Flat(_)) => {
                    return Err(Error::Spec(format!("layer {i}: input is already flat")))
                }
            };
            shapes.push(cur);
        }
        match self.layers.last() {
            Some(LayerSpec::Dense {
                maskable: false, ..
            }) => Ok(shapes),
            Some(LayerSpec::Dense { maskable: true, .. }) => Err(Error::Spec(
                "the logits layer must not be maskable".into(),
            )),
            _ => Err(Error::Spec("the last layer must be a dense logits layer".into())),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().and_then(LayerSpec::node_count).unwrap_or(0)
    }

    pub fn maskable_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_maskable())
            .collect()
    }

    /// Weight and bias shapes of layer `i`, given the input shape list from
    /// [`NetworkSpec::shapes`]. `None` for parameter-free layers.
    pub fn param_shapes(&self, i: usize, shapes: &[FeatureShape]) -> Option<(Vec<usize>, Vec<usize>)> {
        match self.layers[i] {
            LayerSpec::Dense { units, .. } => Some((vec![shapes[i].len(), units], vec![units])),
            LayerSpec::Conv2d {
                channels, kernel, ..
            } => Some((
                vec![kernel, kernel, shapes[i].channels(), channels],
                vec![channels],
            )),
            _ => None,
        }
    }

    pub fn fan_in(&self, i: usize, shapes: &[FeatureShape]) -> Option<usize> {
        match self.layers[i] {
            LayerSpec::Dense { .. } => Some(shapes[i].len()),
            LayerSpec::Conv2d { kernel, .. } => Some(kernel * kernel * shapes[i].channels()),
            _ => None,
        }
    }
}
