use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::RngStream;
use crate::error::{Error, Result};

/// Dense row-major array of `f64` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

fn check_finite(data: &[f64], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid(format!(
                "tensor shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        check_finite(&data, "Tensor::new")?;
        Ok(Self { shape, data })
    }

    /// Caller guarantees the shape/length invariant and finiteness.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self::from_parts(shape.to_vec(), vec![value; shape.iter().product()])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension (batch size for activations).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all non-leading dimensions.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                left: self.shape,
                right: shape,
                context: "reshape",
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn argmax_rows(&self) -> Vec<usize> {
        let w = self.row_len();
        self.data
            .chunks_exact(w)
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// He Normal initialization: i.i.d. `Normal(0, 2 / fan_in)`.
pub fn he_normal(fan_in: usize, shape: &[usize], rng: &mut RngStream) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::invalid("he_normal: fan_in must be >= 1"));
    }
    let sigma = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Elementwise product. `b` may also have the trailing shape of `a`, in which
/// case it is applied to every row of `a`.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
        return Ok(Tensor::from_parts(a.shape.clone(), data));
    }
    if a.shape.len() >= 2 && a.shape[1..] == b.shape[..] {
        let w = b.len();
        let mut data = a.data.clone();
        for row in data.chunks_exact_mut(w) {
            for (x, m) in row.iter_mut().zip(&b.data) {
                *x *= m;
            }
        }
        return Ok(Tensor::from_parts(a.shape.clone(), data));
    }
    Err(Error::ShapeMismatch {
        left: a.shape.clone(),
        right: b.shape.clone(),
        context: "hadamard",
    })
}

fn expect_2d(t: &Tensor, context: &'static str) -> Result<(usize, usize)> {
    match t.shape[..] {
        [r, c] => Ok((r, c)),
        _ => Err(Error::ShapeMismatch {
            left: t.shape.clone(),
            right: vec![],
            context,
        }),
    }
}

/// `[n, k] x [k, m] -> [n, m]`
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = expect_2d(a, "matmul lhs")?;
    let (k2, m) = expect_2d(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            left: a.shape.clone(),
            right: b.shape.clone(),
            context: "matmul",
        });
    }
    let mut out = vec![0.0; n * m];
    gemm_nn(&a.data, &b.data, &mut out, n, k, m);
    check_finite(&out, "matmul")?;
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// `[n, m] + [m]` broadcast over rows.
pub fn add_bias(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, m) = expect_2d(a, "add_bias")?;
    if bias.shape != [m] {
        return Err(Error::ShapeMismatch {
            left: a.shape.clone(),
            right: bias.shape.clone(),
            context: "add_bias",
        });
    }
    let mut data = a.data.clone();
    for row in data.chunks_exact_mut(m) {
        for (x, b) in row.iter_mut().zip(&bias.data) {
            *x += b;
        }
    }
    check_finite(&data, "add_bias")?;
    Ok(Tensor::from_parts(a.shape.clone(), data))
}

pub fn relu(a: &Tensor) -> Tensor {
    Tensor::from_parts(a.shape.clone(), a.data.iter().map(|&x| x.max(0.0)).collect())
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, c) = expect_2d(logits, "softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let mut grad = vec![0.0; n * c];
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for ((row, g), &label) in logits
        .data
        .chunks_exact(c)
        .zip(grad.chunks_exact_mut(c))
        .zip(labels)
    {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - max).exp();
            sum += *gi;
        }
        total += sum.ln() + max - row[label];
        for gi in g.iter_mut() {
            *gi *= inv_n / sum;
        }
        g[label] -= inv_n;
    }
    let loss = total * inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_cross_entropy"));
    }
    Ok((loss, Tensor::from_parts(vec![n, c], grad)))
}

/// Loss only; skips the gradient buffer.
pub(crate) fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> f64 {
    let c = logits.row_len();
    let total: f64 = logits
        .data
        .chunks_exact(c)
        .zip(labels)
        .map(|(row, &label)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
            sum.ln() + max - row[label]
        })
        .sum();
    total / labels.len() as f64
}

/// out[n,m] += a[n,k] * b[k,m]
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(m)).take(n) {
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[k,m] += a[n,k]^T * b[n,m]
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for (arow, brow) in a.chunks_exact(k).zip(b.chunks_exact(m)).take(n) {
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[n,k] += a[n,m] * b[k,m]^T
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], n: usize, m: usize, k: usize) {
    for (arow, orow) in a.chunks_exact(m).zip(out.chunks_exact_mut(k)).take(n) {
        for (o, brow) in orow.iter_mut().zip(b.chunks_exact(m)) {
            *o += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}
