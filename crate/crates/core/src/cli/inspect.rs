use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::network::LayerSpec;
use crate::pipeline::{load_run, sha256, CellStatus};

fn describe(layer: &LayerSpec) -> String {
    match *layer {
        LayerSpec::Dense { units, .. } => format!("dense({units})"),
        LayerSpec::Conv2d { channels, kernel, .. } => format!("conv2d({channels}, {kernel}x{kernel})"),
        LayerSpec::Relu => "relu".into(),
        LayerSpec::Flatten => "flatten".into(),
    }
}

/// Summary of one run directory. A tampered manifest or data file is a
/// checksum error.
pub fn inspect(run_dir: &Path) -> Result<String> {
    let stored = load_run(run_dir)?;
    let m = &stored.manifest;
    let mut s = String::new();
    let status = match m.status {
        CellStatus::Completed => "completed",
        CellStatus::Failed => "failed",
    };
    let _ = writeln!(s, "run: {} ({status})", m.run_id);
    let _ = writeln!(s, "arm: {}  eta: {}  seed: {}", m.arm, m.eta, m.seed);
    let _ = writeln!(s, "config sha256: {}", sha256(m.config.as_bytes()));
    if let Some(err) = &m.error {
        let _ = writeln!(s, "error: {err}");
    }
    let Some(rec) = &stored.record else {
        return Ok(s);
    };
    let _ = writeln!(s, "parent checksum: {}", rec.parent_checksum);
    match &rec.history {
        Some(h) => {
            let _ = writeln!(
                s,
                "search: {} generations, {} fitness evaluations",
                h.generations(),
                rec.fitness_evaluations
            );
            for (g, best) in h.best_per_generation().iter().enumerate() {
                let _ = writeln!(s, "  generation {g}: best fitness {best:.6}");
            }
        }
        None => {
            let _ = writeln!(s, "search: none");
        }
    }
    if let Some(last) = rec.epochs.last() {
        let _ = write!(
            s,
            "final (epoch {}): train_accuracy {:.4}  train_loss {:.4}",
            last.epoch, last.train_accuracy, last.train_loss
        );
        if let (Some(a), Some(l)) = (last.test_accuracy, last.test_loss) {
            let _ = write!(s, "  test_accuracy {a:.4}  test_loss {l:.4}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "active parameters: {}", rec.active_parameters);
    let _ = writeln!(
        s,
        "realized sparsity ({:?}): {:.4} overall",
        rec.mask.mode(),
        rec.mask.realized_sparsity()
    );
    for (layer, zeros, total) in rec.mask.layer_counts() {
        let _ = writeln!(
            s,
            "  layer {layer} {}: {zeros}/{total} = {:.4}",
            describe(&rec.spec.layers[layer]),
            zeros as f64 / total as f64
        );
    }
    Ok(s)
}
