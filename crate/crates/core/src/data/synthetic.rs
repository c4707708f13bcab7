use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

/// Gaussian blobs: class `c` is centred on the indicator of coordinates
/// `j ≡ c (mod num_classes)` (orthogonal simplex vertices) with isotropic
/// standard deviation `spread`. Samples are interleaved by class.
pub fn synthetic_blobs(num_classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::invalid("synthetic_blobs: sizes must be positive"));
    }
    if dim < num_classes {
        return Err(Error::invalid(format!(
            "synthetic_blobs: dim {dim} < num_classes {num_classes}"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::invalid(format!("synthetic_blobs: bad spread {spread}")));
    }
    let mut rng = RngStream::new(seed).split("blobs");
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..per_class {
        for c in 0..num_classes {
            for j in 0..dim {
                let centre = if j % num_classes == c { 1.0 } else { 0.0 };
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(centre + spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(
        Tensor::new(vec![n, dim], data)?,
        labels,
        num_classes,
        format!("synthetic_blobs(classes={num_classes},per_class={per_class},dim={dim},spread={spread},seed={seed})"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let ds = synthetic_blobs(10, 100, 12, 0.5, 3).unwrap();
        assert_eq!(ds.len(), 1000);
        assert!(ds.class_counts().iter().all(|&c| c == 100));
        assert_eq!(ds, synthetic_blobs(10, 100, 12, 0.5, 3).unwrap());
        assert_ne!(ds, synthetic_blobs(10, 100, 12, 0.5, 4).unwrap());
    }

    #[test]
    fn zero_spread_sits_on_centres() {
        let ds = synthetic_blobs(3, 2, 4, 0.0, 1).unwrap();
        assert_eq!(ds.inputs().row(0), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(ds.inputs().row(2), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(synthetic_blobs(0, 1, 1, 0.1, 0).is_err());
        assert!(synthetic_blobs(5, 1, 3, 0.1, 0).is_err());
        assert!(synthetic_blobs(2, 1, 3, f64::NAN, 0).is_err());
    }
}
