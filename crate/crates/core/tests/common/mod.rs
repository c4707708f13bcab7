//! Oracles shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use rand::{Rng, RngCore};
use weedout::data::synthetic_blobs;
use weedout::network::{LayerParams, LayerSpec, Network, NetworkSpec};
use weedout::numerics::{RngStream, Tensor};
use weedout::sparsity::{reduce_network, sample_mask, MaskMode, MaskSet, SparsityRatio};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Dense,
    Conv,
}

/// A small random architecture. Every maskable layer has at least five
/// units so that η = 0.8 leaves one active.
pub fn random_spec(kind: Kind, rng: &mut RngStream) -> NetworkSpec {
    let classes = rng.random_range(2..6);
    match kind {
        Kind::Dense => NetworkSpec::new(
            vec![rng.random_range(3..10)],
            vec![
                LayerSpec::dense(rng.random_range(5..14)),
                LayerSpec::Relu,
                LayerSpec::dense(rng.random_range(5..14)),
                LayerSpec::Relu,
                LayerSpec::logits(classes),
            ],
        )
        .unwrap(),
        Kind::Conv => {
            let stride = rng.random_range(1..3);
            let first = LayerSpec::Conv2d {
                channels: rng.random_range(5..9),
                kernel: rng.random_range(2..4),
                stride,
                maskable: true,
            };
            NetworkSpec::new(
                vec![rng.random_range(6..9), rng.random_range(6..9), rng.random_range(1..4)],
                vec![
                    first,
                    LayerSpec::Relu,
                    LayerSpec::conv(rng.random_range(5..9), 2),
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                    LayerSpec::dense(rng.random_range(5..12)),
                    LayerSpec::Relu,
                    LayerSpec::logits(classes),
                ],
            )
            .unwrap()
        }
    }
}

/// He-initialized network with random (non-zero) biases so bias paths are
/// exercised too.
pub fn random_network(spec: &NetworkSpec, rng: &mut RngStream) -> Network {
    let base = Network::init(spec.clone(), rng.next_u64()).unwrap();
    let params = base
        .params()
        .iter()
        .map(|p| {
            p.as_ref().map(|p| LayerParams {
                weight: p.weight.clone(),
                bias: random_tensor(p.bias.shape(), 0.1, rng),
            })
        })
        .collect();
    Network::from_parts(spec.clone(), params, base.init_seed()).unwrap()
}

pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()).unwrap()
}

pub fn random_batch(spec: &NetworkSpec, n: usize, rng: &mut RngStream) -> (Tensor, Vec<usize>) {
    let mut shape = vec![n];
    shape.extend(&spec.input_shape);
    let x = random_tensor(&shape, 1.0, rng);
    let labels = (0..n).map(|_| rng.random_range(0..spec.num_classes())).collect();
    (x, labels)
}

/// For every parametric layer: which parent input positions (dense rows or
/// conv input channels) and which outputs survive a structured mask.
pub fn surviving_axes(spec: &NetworkSpec, mask: &MaskSet) -> Vec<Option<(Vec<bool>, Vec<bool>)>> {
    let shapes = spec.shapes().unwrap();
    let mut keep: Vec<bool> = vec![true; shapes[0].channels()];
    let mut out = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Dense { units: n, .. } | LayerSpec::Conv2d { channels: n, .. } => {
                let o: Vec<bool> = match mask.layer(i) {
                    Some(m) => m.to_vec(),
                    None => vec![true; n],
                };
                out.push(Some((keep.clone(), o.clone())));
                keep = o;
            }
            LayerSpec::Flatten => {
                let hw = shapes[i].len() / shapes[i].channels();
                keep = (0..hw).flat_map(|_| keep.clone()).collect();
                out.push(None);
            }
            LayerSpec::Relu => out.push(None),
        }
    }
    out
}

fn rank(keep: &[bool]) -> Vec<Option<usize>> {
    let mut k = 0;
    keep.iter()
        .map(|&b| {
            b.then(|| {
                k += 1;
                k - 1
            })
        })
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct EquivalenceStats {
    pub max_logit_diff: f64,
    pub max_loss_diff: f64,
    pub max_grad_diff: f64,
    /// Gradient entries incident to a masked unit that were not exactly 0.
    pub nonzero_masked_grads: usize,
    /// Gradient entries compared against the reduced network.
    pub compared: usize,
}

impl EquivalenceStats {
    pub fn merge(&mut self, o: EquivalenceStats) {
        self.max_logit_diff = self.max_logit_diff.max(o.max_logit_diff);
        self.max_loss_diff = self.max_loss_diff.max(o.max_loss_diff);
        self.max_grad_diff = self.max_grad_diff.max(o.max_grad_diff);
        self.nonzero_masked_grads += o.nonzero_masked_grads;
        self.compared += o.compared;
    }
}

/// Compares the masked parent against the physically reduced network:
/// logits, loss, and every parameter gradient mapped back to parent indices.
pub fn mask_equivalence(net: &Network, mask: &MaskSet, x: &Tensor, labels: &[usize]) -> EquivalenceStats {
    let reduced = reduce_network(net, mask).unwrap();
    let ones = MaskSet::ones(reduced.spec(), MaskMode::Structured);
    let a = net.forward(mask, x).unwrap();
    let b = reduced.forward(&ones, x).unwrap();
    let max_logit_diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let (la, ga) = net.loss_and_grads(mask, x, labels).unwrap();
    let (lb, gb) = reduced.loss_and_grads(&ones, x, labels).unwrap();
    let mut s = EquivalenceStats {
        max_logit_diff,
        max_loss_diff: (la - lb).abs(),
        ..Default::default()
    };
    let axes = surviving_axes(net.spec(), mask);
    for (i, ax) in axes.iter().enumerate() {
        let Some((keep_in, keep_out)) = ax else { continue };
        let pg = ga.layers[i].as_ref().unwrap();
        let rg = gb.layers[i].as_ref().unwrap();
        let (ri, ro) = (rank(keep_in), rank(keep_out));
        let (n_in, n_out) = (keep_in.len(), keep_out.len());
        let r_in = keep_in.iter().filter(|&&k| k).count();
        let r_out = keep_out.iter().filter(|&&k| k).count();
        // Weights are [.., in, out]; the leading block is the kernel window.
        let blocks = pg.weight.len() / (n_in * n_out);
        for blk in 0..blocks {
            for (r, &rr) in ri.iter().enumerate() {
                for (c, &rc) in ro.iter().enumerate() {
                    let g = pg.weight.data()[(blk * n_in + r) * n_out + c];
                    match (rr, rc) {
                        (Some(rr), Some(rc)) => {
                            let h = rg.weight.data()[(blk * r_in + rr) * r_out + rc];
                            s.max_grad_diff = s.max_grad_diff.max((g - h).abs());
                            s.compared += 1;
                        }
                        _ => s.nonzero_masked_grads += usize::from(g != 0.0),
                    }
                }
            }
        }
        for (c, &rc) in ro.iter().enumerate() {
            let g = pg.bias.data()[c];
            match rc {
                Some(rc) => {
                    s.max_grad_diff = s.max_grad_diff.max((g - rg.bias.data()[rc]).abs());
                    s.compared += 1;
                }
                None => s.nonzero_masked_grads += usize::from(g != 0.0),
            }
        }
    }
    s
}

/// Random (network, structured mask, input) triples across the given
/// sparsity levels, alternating dense and conv architectures.
pub fn equivalence_suite(triples: usize, etas: &[f64], seed: u64) -> EquivalenceStats {
    let mut rng = RngStream::new(seed);
    let mut total = EquivalenceStats::default();
    for t in 0..triples {
        let kind = if t % 2 == 0 { Kind::Dense } else { Kind::Conv };
        let spec = random_spec(kind, &mut rng);
        let net = random_network(&spec, &mut rng);
        let eta = SparsityRatio::new(etas[t % etas.len()]).unwrap();
        let mask = sample_mask(&spec, eta, MaskMode::Structured, &mut rng).unwrap();
        let (x, labels) = random_batch(&spec, 4, &mut rng);
        total.merge(mask_equivalence(&net, &mask, &x, &labels));
    }
    total
}

/// Smallest |z| over non-zero inputs to ReLU layers; the finite-difference
/// step must not carry any of them across the kink.
pub fn min_preactivation(net: &Network, mask: &MaskSet, x: &Tensor) -> f64 {
    let acts = net.activations(mask, x).unwrap();
    net.spec()
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Relu))
        .flat_map(|(i, _)| acts[i].data().iter().copied().filter(|v| *v != 0.0).collect::<Vec<_>>())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Denominator floor for the gradient relative error. Central differences
/// at ε = 1e-5 carry about 1e-11 of rounding noise, which swamps entries far
/// below this magnitude.
pub const REL_FLOOR: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, floor)`, taken as 0 when both are exactly equal
/// (masked entries are exactly zero on both sides).
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    if a == n {
        0.0
    } else {
        (a - n).abs() / a.abs().max(n.abs()).max(floor)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub max_rel: f64,
    /// Same, without the denominator floor.
    pub max_rel_raw: f64,
    pub max_abs: f64,
    pub entries: usize,
    /// Gradient magnitude at the entry with the largest relative error.
    pub worst_magnitude: f64,
}

/// Central differences with step `eps` on every weight and bias.
pub fn finite_difference_check(net: &Network, mask: &MaskSet, x: &Tensor, labels: &[usize], eps: f64) -> GradCheck {
    let (_, grads) = net.loss_and_grads(mask, x, labels).unwrap();
    let spec = net.spec().clone();
    let mut out = GradCheck::default();
    for (i, p) in net.params().iter().enumerate() {
        let Some(p) = p else { continue };
        let g = grads.layers[i].as_ref().unwrap();
        for which in 0..2 {
            let (t, gt) = if which == 0 { (&p.weight, &g.weight) } else { (&p.bias, &g.bias) };
            for k in 0..t.len() {
                let loss_at = |delta: f64| {
                    let mut params = net.params().to_vec();
                    let lp = params[i].as_mut().unwrap();
                    let target = if which == 0 { &mut lp.weight } else { &mut lp.bias };
                    let mut d = target.data().to_vec();
                    d[k] += delta;
                    *target = Tensor::new(target.shape().to_vec(), d).unwrap();
                    let n = Network::from_parts(spec.clone(), params, net.init_seed()).unwrap();
                    n.loss(mask, x, labels).unwrap()
                };
                let num = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
                let ana = gt.data()[k];
                out.max_rel = out.max_rel.max(rel_err(ana, num, REL_FLOOR));
                let raw = rel_err(ana, num, 0.0);
                if raw > out.max_rel_raw {
                    out.max_rel_raw = raw;
                    out.worst_magnitude = ana.abs();
                }
                out.max_abs = out.max_abs.max((ana - num).abs());
                out.entries += 1;
            }
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct GradSuite {
    pub check: GradCheck,
    pub instances: usize,
    pub dense: usize,
    pub conv: usize,
    pub masked: usize,
    pub unmasked: usize,
    /// Draws rejected because a pre-activation sat within reach of the ReLU kink.
    pub skipped: usize,
}

/// `per_cell` instances for each of {dense, conv} × {unmasked, structured,
/// unstructured}, with sparsity levels cycling through 0.2..0.8.
pub fn gradcheck_suite(per_cell: usize, seed: u64) -> GradSuite {
    const EPS: f64 = 1e-5;
    let mut rng = RngStream::new(seed);
    let mut s = GradSuite::default();
    let etas = [0.2, 0.4, 0.6, 0.8];
    for kind in [Kind::Dense, Kind::Conv] {
        for mode in [None, Some(MaskMode::Structured), Some(MaskMode::Unstructured)] {
            let mut done = 0;
            while done < per_cell {
                let spec = random_spec(kind, &mut rng);
                let net = random_network(&spec, &mut rng);
                let mask = match mode {
                    None => MaskSet::ones(&spec, MaskMode::Structured),
                    Some(m) => {
                        let eta = SparsityRatio::new(etas[done % etas.len()]).unwrap();
                        sample_mask(&spec, eta, m, &mut rng).unwrap()
                    }
                };
                let (x, y) = random_batch(&spec, 5, &mut rng);
                if min_preactivation(&net, &mask, &x) < 1e-4 {
                    s.skipped += 1;
                    continue;
                }
                let g = finite_difference_check(&net, &mask, &x, &y, EPS);
                s.check.max_rel = s.check.max_rel.max(g.max_rel);
                if g.max_rel_raw > s.check.max_rel_raw {
                    s.check.max_rel_raw = g.max_rel_raw;
                    s.check.worst_magnitude = g.worst_magnitude;
                }
                s.check.max_abs = s.check.max_abs.max(g.max_abs);
                s.check.entries += g.entries;
                s.instances += 1;
                match kind {
                    Kind::Dense => s.dense += 1,
                    Kind::Conv => s.conv += 1,
                }
                if mode.is_some() {
                    s.masked += 1;
                } else {
                    s.unmasked += 1;
                }
                done += 1;
            }
        }
    }
    s
}

/// Desk dataset used by several tests: 10-class blobs shaped as 6x6x1 images.
pub fn desk_blobs(per_class: usize, spread: f64, seed: u64) -> weedout::data::Dataset {
    synthetic_blobs(10, per_class, 36, spread, seed)
        .unwrap()
        .with_input_shape(&[6, 6, 1])
        .unwrap()
}

#[derive(Debug, Default)]
pub struct SparsityStats {
    pub masks: usize,
    pub count_mismatches: usize,
    /// Largest per-node deviation of the empirical zero frequency from the
    /// layer's exact rate `round_half_up(η·w) / w`.
    pub max_dev_from_rate: f64,
    /// Same, measured against η itself, only for layers where η·w is an integer.
    pub max_dev_integral: f64,
    /// Against η for every layer; includes the rounding offset of the layer.
    pub max_dev_from_eta: f64,
}

pub const WIDTHS: [usize; 4] = [10, 16, 32, 128];

/// A dense network whose maskable layers have the given widths.
pub fn width_spec(widths: &[usize]) -> NetworkSpec {
    let mut layers = Vec::new();
    for &w in widths {
        layers.push(LayerSpec::dense(w));
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::logits(3));
    NetworkSpec::new(vec![4], layers).unwrap()
}

/// Zero counts of `count_masks` structured masks per η ∈ {0, .2, .., .8},
/// compared with round-half-up in integer arithmetic, and per-node zero
/// frequencies over `freq_masks` masks.
pub fn sparsity_exactness(count_masks: usize, freq_masks: usize, seed: u64) -> SparsityStats {
    let spec = width_spec(&WIDTHS);
    let root = RngStream::new(seed);
    let mut s = SparsityStats::default();
    for k in 0..5u64 {
        let eta = SparsityRatio::new(k as f64 * 0.2).unwrap();
        let mut rng = root.split_index(k);
        let mut hits: Vec<Vec<usize>> = WIDTHS.iter().map(|&w| vec![0; w]).collect();
        for n in 0..count_masks.max(freq_masks) {
            let mask = sample_mask(&spec, eta, MaskMode::Structured, &mut rng).unwrap();
            for (li, layer) in spec.maskable_layers().into_iter().enumerate() {
                let m = mask.layer(layer).unwrap();
                let w = WIDTHS[li];
                let zeros = m.iter().filter(|&&b| !b).count();
                if n < count_masks {
                    // η·w = 2kw/10, rounded half up.
                    let expected = (2 * k as usize * w + 5) / 10;
                    s.count_mismatches += usize::from(zeros != expected);
                }
                if n < freq_masks {
                    for (node, &b) in m.iter().enumerate() {
                        hits[li][node] += usize::from(!b);
                    }
                }
            }
            if n < count_masks {
                s.masks += 1;
            }
        }
        for (li, &w) in WIDTHS.iter().enumerate() {
            let rate = ((2 * k as usize * w + 5) / 10) as f64 / w as f64;
            let integral = (2 * k as usize * w).is_multiple_of(10);
            for &h in &hits[li] {
                let f = h as f64 / freq_masks as f64;
                s.max_dev_from_rate = s.max_dev_from_rate.max((f - rate).abs());
                s.max_dev_from_eta = s.max_dev_from_eta.max((f - eta.value()).abs());
                if integral {
                    s.max_dev_integral = s.max_dev_integral.max((f - eta.value()).abs());
                }
            }
        }
    }
    s
}

#[derive(Debug, Default)]
pub struct SearchProtocol {
    pub evaluations: usize,
    pub history_rows: usize,
    pub generations: usize,
    /// Generations whose selected candidate did not attain the maximum.
    pub argmax_failures: usize,
    /// Generations after the first whose population did not start with the
    /// previous elite's exact mask and id.
    pub elite_failures: usize,
    /// The driver's winner equals the manual loop's.
    pub matches_manual: bool,
    /// |fitness + ln 10| with all-zero logits on a 10-class batch.
    pub uniform_fitness_error: f64,
}

/// Desk-scale search with m = 100, G = 5, checked against a manual loop over
/// the public building blocks.
pub fn search_protocol(seed: u64) -> SearchProtocol {
    use weedout::data::sample_batch;
    use weedout::search::{fitness, next_generation, run_search, select_best, Candidate, Resample, SearchConfig};

    let ds = desk_blobs(30, 0.5, seed);
    let spec = NetworkSpec::desk_default(vec![6, 6, 1], 10).unwrap();
    let net = Network::init(spec.clone(), seed).unwrap();
    let eta = SparsityRatio::new(0.4).unwrap();
    let mut cfg = SearchConfig::new(eta);
    cfg.validation_batch_size = 64;
    let rng = RngStream::new(seed).split("search");
    let out = run_search(&net, &cfg, &ds, &rng).unwrap();
    let mut s = SearchProtocol {
        evaluations: out.evaluations,
        history_rows: out.history.rows.len(),
        generations: out.history.generations(),
        ..Default::default()
    };

    let ctx = Resample {
        spec: &spec,
        eta,
        mode: cfg.mode,
        rng: &rng,
    };
    let m = cfg.population_size as u64;
    let mut pop: Vec<Candidate> = (0..m).map(|id| ctx.fresh(id, 0).unwrap()).collect();
    let mut next_id = m;
    let mut prev: Option<Candidate> = None;
    let mut last = None;
    for g in 0..cfg.generations {
        if let Some(p) = &prev {
            let carried = pop[0].id == p.id && pop[0].mask == p.mask && pop[0].mask.to_record() == p.mask.to_record();
            s.elite_failures += usize::from(!carried);
        }
        let batch = sample_batch(&ds, cfg.validation_batch_size, &mut rng.split("validation-batch").split_index(g as u64))
            .unwrap();
        for c in pop.iter_mut() {
            fitness(&net, c, &batch).unwrap();
        }
        let best = select_best(&pop).unwrap().clone();
        let max = pop.iter().map(|c| c.fitness().unwrap()).fold(f64::NEG_INFINITY, f64::max);
        s.argmax_failures += usize::from(best.fitness().unwrap() < max);
        // The driver's history must agree with the manual loop.
        let rows: Vec<_> = out.history.rows.iter().filter(|r| r.generation == g).collect();
        let elite_row = rows.iter().find(|r| r.is_elite).unwrap();
        s.argmax_failures += usize::from(elite_row.candidate_id != best.id || rows.iter().any(|r| r.fitness > elite_row.fitness));
        pop = next_generation(&pop, &best, &ctx, g + 1, &mut next_id).unwrap();
        last = Some(best.clone());
        prev = Some(best);
    }
    let last = last.unwrap();
    s.matches_manual = last.id == out.best.id && last.mask == out.best.mask;

    // Zeroed logits layer: every class gets the same score.
    let mut params = net.params().to_vec();
    let li = params.iter().rposition(|p| p.is_some()).unwrap();
    let p = params[li].as_mut().unwrap();
    p.weight = Tensor::zeros(p.weight.shape());
    p.bias = Tensor::zeros(p.bias.shape());
    let flat = Network::from_parts(spec.clone(), params, net.init_seed()).unwrap();
    let mut cand = ctx.fresh(0, 0).unwrap();
    let batch = sample_batch(&ds, 100, &mut rng.split("uniform")).unwrap();
    let f = fitness(&flat, &mut cand, &batch).unwrap();
    s.uniform_fitness_error = (f + 10f64.ln()).abs();
    s
}

/// Small but complete sweep config: all three arms, two sparsity levels,
/// two seeds.
pub const SMALL_SWEEP: &str = r#"
schema_version = 1
name = "small"
seeds = [0, 1]
arms = ["weedout", "random_baseline", "dense"]

[data]
kind = "synthetic_blobs"
num_classes = 4
per_class = 40
dim = 8
spread = 0.5
seed = 1

[split]
train = 100
validation = 30
test = 30
seed = 0

[architecture]
layers = [
  { kind = "dense", units = 16 },
  { kind = "relu" },
  { kind = "dense", units = 12 },
  { kind = "relu" },
  { kind = "dense", units = 4, maskable = false },
]

[search]
population_size = 12
generations = 3
etas = [0.25, 0.5]
validation_batch_size = 16

[train]
epochs = 3
batch_size = 16
"#;

#[derive(Debug, Default)]
pub struct Determinism {
    pub executions: usize,
    pub files_compared: usize,
    pub mismatched: Vec<String>,
}

/// Runs `SMALL_SWEEP` once per `(threads, parallel_cells)` setting into its
/// own directory under `root` and compares every CSV byte for byte.
pub fn determinism(root: &std::path::Path, settings: &[(usize, bool)]) -> Determinism {
    use weedout::cli::ExperimentConfig;
    use weedout::pipeline::{sweep, SweepOptions};

    let cfg = ExperimentConfig::parse(SMALL_SWEEP).unwrap();
    let splits = cfg.load_splits(std::path::Path::new(".")).unwrap();
    let plan = cfg.plan(&splits).unwrap();
    let mut dirs = Vec::new();
    for (i, &(threads, parallel_cells)) in settings.iter().enumerate() {
        let dir = root.join(format!("exec{i}"));
        let opts = SweepOptions {
            config_text: cfg.to_toml().unwrap(),
            retry_failed: false,
            parallel_cells,
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let out = pool.install(|| sweep(&plan, &splits, &dir, &opts, |_, _| {})).unwrap();
        assert!(out.iter().all(|o| !o.is_failed()));
        dirs.push(dir);
    }
    let mut d = Determinism {
        executions: dirs.len(),
        ..Default::default()
    };
    for cell in plan.cells() {
        for file in ["metrics.csv", "history.csv"] {
            let paths: Vec<_> = dirs.iter().map(|dir| dir.join(cell.run_id()).join(file)).collect();
            if !paths[0].exists() {
                continue;
            }
            let first = std::fs::read(&paths[0]).unwrap();
            for p in &paths[1..] {
                d.files_compared += 1;
                if std::fs::read(p).ok().as_ref() != Some(&first) {
                    d.mismatched.push(p.display().to_string());
                }
            }
        }
    }
    d
}

/// Outcome of the byte-level loader fixtures; each failure is described.
#[derive(Debug, Default)]
pub struct FixtureReport {
    pub checks: usize,
    pub failures: Vec<String>,
}

impl FixtureReport {
    fn check(&mut self, ok: bool, what: &str) {
        self.checks += 1;
        if !ok {
            self.failures.push(what.to_string());
        }
    }
}

/// Hand-assembled IDX and CIFAR-10 files (independent of the crate's own
/// encoders), loaded back and inspected, plus corrupted variants that must
/// be rejected with a format error.
pub fn data_fixtures(dir: &std::path::Path) -> FixtureReport {
    use weedout::data::{load_cifar10_binary, load_idx};
    use weedout::error::Error;

    let mut r = FixtureReport::default();
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    };
    let is_format = |e: &Result<weedout::data::Dataset, Error>| matches!(e, Err(Error::Format { .. }));

    // Three 2x3 images.
    #[rustfmt::skip]
    let images: Vec<u8> = [
        &[0x00, 0x00, 0x08, 0x03][..], &[0, 0, 0, 3], &[0, 0, 0, 2], &[0, 0, 0, 3],
        &[0, 51, 102, 153, 204, 255], &[255; 6], &[1, 2, 3, 4, 5, 6],
    ].concat();
    let labels: Vec<u8> = [&[0x00, 0x00, 0x08, 0x01][..], &[0, 0, 0, 3], &[7, 0, 9]].concat();
    let (ip, lp) = (write("img.idx", &images), write("lbl.idx", &labels));
    match load_idx(&ip, &lp) {
        Ok(ds) => {
            r.check(ds.inputs().shape() == [3, 2, 3, 1], "idx shape [3,2,3,1]");
            r.check(ds.labels() == [7, 0, 9], "idx labels");
            r.check(ds.num_classes() == 10, "idx num_classes");
            let px = &ds.inputs().data()[..6];
            r.check(px.iter().zip([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).all(|(a, b)| (a - b).abs() < 1e-15), "idx pixel scaling");
            r.check(ds.inputs().data()[12] == 1.0 / 255.0, "idx row-major order");
        }
        Err(e) => r.check(false, &format!("idx fixture failed to load: {e}")),
    }
    let mut bad = images.clone();
    bad[3] = 0x01;
    r.check(is_format(&load_idx(&write("bad_magic.idx", &bad), &lp)), "idx bad image magic rejected");
    r.check(is_format(&load_idx(&lp, &lp)), "idx labels passed as images rejected");
    r.check(is_format(&load_idx(&write("short.idx", &images[..images.len() - 1]), &lp)), "idx truncated payload rejected");
    r.check(is_format(&load_idx(&write("hdr.idx", &images[..10]), &lp)), "idx truncated header rejected");
    let mut long = images.clone();
    long.push(0);
    r.check(is_format(&load_idx(&write("long.idx", &long), &lp)), "idx trailing bytes rejected");
    let mut miscount = labels.clone();
    miscount[7] = 2;
    r.check(is_format(&load_idx(&ip, &write("mis.idx", &miscount[..10]))), "idx label count mismatch rejected");

    // Two CIFAR-10 records: label byte, then red, green, blue planes.
    let record = |label: u8, r: u8, g: u8, b: u8| {
        let mut v = vec![label];
        v.extend(std::iter::repeat_n(r, 1024));
        v.extend(std::iter::repeat_n(g, 1024));
        v.extend(std::iter::repeat_n(b, 1024));
        v
    };
    let mut first = record(3, 255, 0, 51);
    first[1 + 1] = 102; // red, pixel (0, 1)
    let batch = [first, record(9, 0, 255, 0)].concat();
    r.check(batch.len() == 2 * 3073, "cifar fixture size");
    let cp = write("data_batch_1.bin", &batch);
    match load_cifar10_binary(std::slice::from_ref(&cp)) {
        Ok(ds) => {
            r.check(ds.inputs().shape() == [2, 32, 32, 3], "cifar shape [2,32,32,3]");
            r.check(ds.labels() == [3, 9], "cifar labels");
            r.check(ds.num_classes() == 10, "cifar num_classes");
            let d = ds.inputs().data();
            r.check(d[0] == 1.0 && d[1] == 0.0 && d[2] == 0.2, "cifar pixel (0,0) is (r,g,b)");
            r.check(d[3] == 0.4, "cifar planes interleaved to HWC");
            r.check(d[3072 + 1] == 1.0, "cifar second record");
        }
        Err(e) => r.check(false, &format!("cifar fixture failed to load: {e}")),
    }
    let two = load_cifar10_binary(&[cp.clone(), cp.clone()]);
    r.check(two.map(|d| d.len() == 4).unwrap_or(false), "cifar concatenates batch files");
    r.check(is_format(&load_cifar10_binary(&[write("ragged.bin", &batch[..3073 + 10])])), "cifar ragged file rejected");
    r.check(is_format(&load_cifar10_binary(&[write("empty.bin", &[])])), "cifar empty file rejected");
    let mut badlabel = batch.clone();
    badlabel[3073] = 10;
    r.check(is_format(&load_cifar10_binary(&[write("label.bin", &badlabel)])), "cifar label 10 rejected");
    r
}
