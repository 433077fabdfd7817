//! Helpers and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bika::datasets::{load_mnist_dir, Dataset, Split};
use bika::model::{ArchName, Architecture, InputSpec, LayerSpec};
use bika::model::{BikaModel, ThresholdKind};
use bika::sim::{
    simulate_model, ArrayConfig, BaselineKind, BaselineLayer, BaselineWorkload, PeKind, SimReport,
    Workload,
};
use bika::threshold_math::PiecewiseConstantFn;
use bika::trainer::{
    softmax_cross_entropy, Activation, Grads, ShadowEntry, ShadowLayer, ShadowModel,
};
use bika::IntTensor;

/// `BIKA_MNIST_DIR`, or `data/mnist` at the workspace root.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("BIKA_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("t10k-labels-idx1-ubyte").is_file().then_some(dir)
}

pub fn load_mnist() -> Option<(Dataset, Dataset)> {
    mnist_dir().map(|d| load_mnist_dir(d).expect("MNIST directory is readable"))
}

/// Random function with up to `max_slots` slots and outputs in `[-amp, amp]`.
pub fn random_fn<R: Rng>(rng: &mut R, max_slots: usize, amp: f64) -> PiecewiseConstantFn {
    let t = rng.gen_range(1..=max_slots);
    let mut b = vec![rng.gen_range(-100.0..100.0)];
    for _ in 0..t {
        let last = *b.last().unwrap();
        b.push(last + rng.gen_range(0.01..10.0));
    }
    let o = (0..t).map(|_| rng.gen_range(-amp..=amp)).collect();
    PiecewiseConstantFn::new(b, o).unwrap()
}

/// Integer outputs with an even `O_0 + O_{t-1}` and even successive differences.
pub fn even_difference_fn<R: Rng>(rng: &mut R, max_slots: usize) -> PiecewiseConstantFn {
    let t = rng.gen_range(1..=max_slots);
    let b: Vec<f64> = (0..=t).map(|i| i as f64 * 0.5 - 3.0).collect();
    // all outputs share one parity, which makes every sum and difference even
    let parity = rng.gen_range(0..2);
    let o = (0..t)
        .map(|_| (2 * rng.gen_range(-50..=49) + parity) as f64)
        .collect();
    PiecewiseConstantFn::new(b, o).unwrap()
}

/// Linear-scan slot lookup.
pub fn slot_oracle(f: &PiecewiseConstantFn, x: f64) -> f64 {
    let b = f.boundaries();
    for i in 0..f.slots() {
        if x >= b[i] && x < b[i + 1] {
            return f.outputs()[i];
        }
    }
    panic!("{x} outside the domain");
}

pub fn sign_oracle(w: f64, b: f64, a: i32) -> i32 {
    if w * a as f64 + b >= 0.0 {
        1
    } else {
        -1
    }
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Cycle contract written out independently of the library.
pub fn cycle_oracle(pe: PeKind, r: u64, c: u64, b: u64, k: u64, m: u64) -> u64 {
    let passes = b.div_ceil(r) * m.div_ceil(c);
    let (k_eff, act) = match pe {
        PeKind::BikaCac => (k, 0),
        PeKind::BnnXnorPopcount => (k.div_ceil(8), c + 1),
        PeKind::QnnMac => (k, c + 256),
    };
    passes * (k_eff + (r - 1) + (c - 1) + c + act)
}

pub fn custom_arch(input: Vec<usize>, layers: Vec<LayerSpec>) -> Architecture {
    let a = Architecture {
        name: ArchName::Custom,
        input: InputSpec::pixels(input),
        layers,
    };
    a.validate().unwrap();
    a
}

/// Small MLP or conv net with random widths.
pub fn random_small_arch<R: Rng>(rng: &mut R) -> Architecture {
    if rng.gen_bool(0.5) {
        let mut prev = rng.gen_range(1..=20);
        let input = vec![prev];
        let mut layers = Vec::new();
        for _ in 0..rng.gen_range(1..=3) {
            let out = rng.gen_range(1..=12);
            layers.push(LayerSpec::Linear {
                in_features: prev,
                out_features: out,
            });
            prev = out;
        }
        custom_arch(input, layers)
    } else {
        let c0 = rng.gen_range(1..=3);
        let c1 = rng.gen_range(1..=4);
        let hw = 2 * rng.gen_range(1..=3);
        let mut layers = vec![
            LayerSpec::Conv2d {
                in_channels: c0,
                out_channels: c1,
            },
            LayerSpec::MaxPool,
        ];
        let flat = c1 * (hw / 2) * (hw / 2);
        layers.push(LayerSpec::Linear {
            in_features: flat,
            out_features: rng.gen_range(1..=6),
        });
        custom_arch(vec![c0, hw, hw], layers)
    }
}

pub fn synthetic_dataset<R: Rng>(rng: &mut R, n: usize, shape: [usize; 3]) -> Dataset {
    let per: usize = shape.iter().product();
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..10)).collect();
    // brightness depends on the label so there is something to learn
    let pixels = labels
        .iter()
        .flat_map(|&l| (0..per).map(move |p| ((l as usize * 25 + p * 7) % 256) as u8))
        .collect();
    Dataset::new(shape, pixels, labels, Split::Train).unwrap()
}

pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub failures: Vec<String>,
}

/// Random shadow net with every dimension at most 8: one or two linear
/// layers, or a conv, pool and linear stack.
pub fn random_grad_model<R: Rng>(rng: &mut R) -> (ShadowModel, Vec<f64>) {
    let arch = if rng.gen_bool(0.6) {
        let n_in = rng.gen_range(1..=8);
        let mut layers = Vec::new();
        let mut prev = n_in;
        for _ in 0..rng.gen_range(1..=2) {
            let out = rng.gen_range(2..=8);
            layers.push(LayerSpec::Linear {
                in_features: prev,
                out_features: out,
            });
            prev = out;
        }
        custom_arch(vec![n_in], layers)
    } else {
        let c0 = rng.gen_range(1..=2);
        let c1 = rng.gen_range(1..=2);
        let hw = 2 * rng.gen_range(1..=2);
        let flat = c1 * (hw / 2) * (hw / 2);
        custom_arch(
            vec![c0, hw, hw],
            vec![
                LayerSpec::Conv2d {
                    in_channels: c0,
                    out_channels: c1,
                },
                LayerSpec::MaxPool,
                LayerSpec::Linear {
                    in_features: flat,
                    out_features: rng.gen_range(2..=8),
                },
            ],
        )
    };
    let layers = arch
        .layers
        .iter()
        .map(|spec| match spec.threshold_kind() {
            Some(kind) => {
                let n = kind.connection_count();
                let w = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let b = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                ShadowEntry::Threshold(ShadowLayer::new(kind, w, b).unwrap())
            }
            None => ShadowEntry::MaxPool,
        })
        .collect();
    let n_in: usize = arch.input.shape.iter().product();
    let x = (0..n_in).map(|_| rng.gen_range(-2.0..2.0)).collect();
    (ShadowModel::from_layers(arch, layers, false).unwrap(), x)
}

/// Analytic surrogate gradients against central finite differences of the
/// hard-tanh surrogate loss. A coordinate whose one-sided slopes disagree sits
/// on a kink (a clamp edge or a pooling tie) and is skipped.
pub fn gradient_check(
    model: &ShadowModel,
    x: &[f64],
    label: usize,
    temperature: f64,
    tol: f64,
) -> GradCheck {
    let loss = |m: &ShadowModel, x: &[f64]| {
        let out = m.forward(x, Activation::HardTanh).unwrap();
        softmax_cross_entropy(&out, label, temperature).0
    };
    let trace = model.forward_traced(x, Activation::HardTanh).unwrap();
    let (_, g_out, _) = softmax_cross_entropy(&trace.output, label, temperature);
    let mut grads = Grads::zeros_like(model);
    let g_in = model.backward(&trace, &g_out, &mut grads);

    let h = 1e-6;
    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        failures: Vec::new(),
    };
    let mut judge = |what: String, analytic: f64, f: &dyn Fn(f64) -> f64| {
        let (lo, mid, hi) = (f(-h), f(0.0), f(h));
        let (left, right) = ((mid - lo) / h, (hi - mid) / h);
        let scale = left.abs().max(right.abs()).max(1e-6);
        if (left - right).abs() > 1e-3 * scale {
            out.skipped += 1;
            return;
        }
        out.checked += 1;
        let numeric = (hi - lo) / (2.0 * h);
        let diff = (analytic - numeric).abs();
        if diff > 1e-9 && diff > tol * analytic.abs().max(numeric.abs()) {
            out.failures
                .push(format!("{what}: analytic {analytic:e} numeric {numeric:e}"));
        }
    };
    for (li, entry) in model.layers.iter().enumerate() {
        let ShadowEntry::Threshold(t) = entry else {
            continue;
        };
        for i in 0..t.weights.len() {
            for bias in [false, true] {
                let analytic = if bias {
                    grads.biases[li][i]
                } else {
                    grads.weights[li][i]
                };
                let f = |d: f64| {
                    let mut m = model.clone();
                    if let ShadowEntry::Threshold(t) = &mut m.layers[li] {
                        if bias {
                            t.biases[i] += d;
                        } else {
                            t.weights[i] += d;
                        }
                    }
                    loss(&m, x)
                };
                judge(
                    format!("layer {li} {} {i}", if bias { "bias" } else { "weight" }),
                    analytic,
                    &f,
                );
            }
        }
    }
    for j in 0..x.len() {
        let f = |d: f64| {
            let mut xp = x.to_vec();
            xp[j] += d;
            loss(model, &xp)
        };
        judge(format!("input {j}"), g_in[j], &f);
    }
    out
}

/// Zero-padded 3x3 neighbourhood or the whole vector, in `(c, ky, kx)` order.
fn receptive_fields(kind: ThresholdKind, shape: &[usize], x: &[i16]) -> Vec<Vec<i16>> {
    match kind {
        ThresholdKind::Linear { .. } => vec![x.to_vec()],
        ThresholdKind::Conv2d { in_channels, .. } => {
            let (h, w) = (shape[1] as i64, shape[2] as i64);
            let mut fields = Vec::new();
            for y in 0..h {
                for xx in 0..w {
                    let mut f = Vec::new();
                    for c in 0..in_channels as i64 {
                        for dy in -1..=1 {
                            for dx in -1..=1 {
                                let (sy, sx) = (y + dy, xx + dx);
                                let inside = (0..h).contains(&sy) && (0..w).contains(&sx);
                                f.push(if inside {
                                    x[(c * h * w + sy * w + sx) as usize]
                                } else {
                                    0
                                });
                            }
                        }
                    }
                    fields.push(f);
                }
            }
            fields
        }
    }
}

/// Channel-major output from per-position neuron values.
fn layout(kind: ThresholdKind, shape: &[usize], per_pos: Vec<Vec<i16>>) -> (Vec<usize>, Vec<i16>) {
    match kind {
        ThresholdKind::Linear { out_features, .. } => (vec![out_features], per_pos[0].clone()),
        ThresholdKind::Conv2d { out_channels, .. } => {
            let data = (0..out_channels)
                .flat_map(|o| per_pos.iter().map(move |p| p[o]))
                .collect();
            (vec![out_channels, shape[1], shape[2]], data)
        }
    }
}

fn pool(shape: &[usize], x: &[i16]) -> (Vec<usize>, Vec<i16>) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut out = Vec::new();
    for ch in 0..c {
        for y in (0..h).step_by(2) {
            for xx in (0..w).step_by(2) {
                let v = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(dy, dx)| x[ch * h * w + (y + dy) * w + xx + dx])
                    .max();
                out.push(v.unwrap());
            }
        }
    }
    (vec![c, h / 2, w / 2], out)
}

/// Baseline semantics written out directly: BNN is a {-1,+1} dot product
/// thresholded to +-1, QNN a MAC followed by a 256-level table lookup.
pub fn baseline_oracle(w: &BaselineWorkload, x: &IntTensor) -> Vec<i16> {
    let mut shape = x.shape().to_vec();
    let mut cur = x.data().to_vec();
    for layer in &w.layers {
        (shape, cur) = match layer {
            BaselineLayer::MaxPool => pool(&shape, &cur),
            BaselineLayer::Bnn(l) => {
                let k = l.kind.fan_in();
                let outs = l.thresholds.len();
                let per_pos = receptive_fields(l.kind, &shape, &cur)
                    .iter()
                    .map(|f| {
                        (0..outs)
                            .map(|o| {
                                let dot: i32 = (0..k)
                                    .map(|j| {
                                        let a = if f[j] >= l.input_threshold { 1 } else { -1 };
                                        let wv = if l.weights[o * k + j] { 1 } else { -1 };
                                        a * wv
                                    })
                                    .sum();
                                if dot >= l.thresholds[o] {
                                    1
                                } else {
                                    -1
                                }
                            })
                            .collect()
                    })
                    .collect();
                layout(l.kind, &shape, per_pos)
            }
            BaselineLayer::Qnn(l) => {
                let k = l.kind.fan_in();
                let per_pos = receptive_fields(l.kind, &shape, &cur)
                    .iter()
                    .map(|f| {
                        l.thresholds
                            .iter()
                            .enumerate()
                            .map(|(o, table)| {
                                let acc: i64 = (0..k)
                                    .map(|j| f[j] as i64 * l.weights[o * k + j] as i64)
                                    .sum();
                                let level =
                                    table.iter().take_while(|&&t| t as i64 <= acc).count() as i64;
                                (level - 128).clamp(-128, 127) as i16
                            })
                            .collect()
                    })
                    .collect();
                layout(l.kind, &shape, per_pos)
            }
        };
    }
    cur
}

pub fn random_batch<R: Rng>(rng: &mut R, arch: &Architecture, n: usize) -> IntTensor {
    let per: usize = arch.input.shape.iter().product();
    let mut shape = vec![n];
    shape.extend_from_slice(&arch.input.shape);
    IntTensor::new(
        shape,
        (0..n * per)
            .map(|_| rng.gen_range(arch.input.min..=arch.input.max))
            .collect(),
    )
    .unwrap()
}

/// Layers whose counted cycles differ from the closed-form contract.
fn cycle_mismatches(r: &SimReport) -> usize {
    let mut bad = usize::from(r.total_cycles != r.layers.iter().map(|l| l.cycles).sum::<u64>());
    for l in &r.layers {
        // pooling runs on the side unit at one output per cycle
        let want = if l.label == "P2" {
            l.b * l.m
        } else {
            cycle_oracle(r.engine, r.rows as u64, r.cols as u64, l.b, l.k, l.m)
        };
        bad += usize::from(l.cycles != want);
    }
    bad
}

#[derive(Debug, Default)]
pub struct FunctionalOutcome {
    pub mismatches: usize,
    pub cycle_mismatches: usize,
    pub bika_multiplications: u64,
    pub comparisons: u64,
}

/// One seeded random (model, batch) pair on a random small array, checked
/// against the reference forward and, for baselines, the direct oracle.
pub fn functional_case(pe: PeKind, seed: u64) -> FunctionalOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = random_small_arch(&mut rng);
    let (rows, cols) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
    let n = rng.gen_range(1..=3);
    let batch = random_batch(&mut rng, &arch, n);
    let cfg = ArrayConfig::new(pe).with_array(rows, cols);
    let samples = batch.unbatch().unwrap();
    let mut out = FunctionalOutcome::default();
    let report = match pe {
        PeKind::BikaCac => {
            let model = BikaModel::random(&arch, rng.gen_bool(0.5), &mut rng).unwrap();
            let r = simulate_model(&cfg, Workload::Bika(&model), &batch).unwrap();
            for (x, y) in samples.iter().zip(r.functional_output.unbatch().unwrap()) {
                out.mismatches += usize::from(y != model.forward(x).unwrap());
            }
            out.bika_multiplications = r.ops.multiplications;
            r
        }
        _ => {
            let kind = if pe == PeKind::BnnXnorPopcount {
                BaselineKind::Bnn
            } else {
                BaselineKind::Qnn
            };
            let w = BaselineWorkload::synthetic(kind, &arch, seed).unwrap();
            let r = simulate_model(&cfg, Workload::Baseline(&w), &batch).unwrap();
            for (x, y) in samples.iter().zip(r.functional_output.unbatch().unwrap()) {
                let bad =
                    y != w.reference_forward(x).unwrap() || y.data() != &baseline_oracle(&w, x)[..];
                out.mismatches += usize::from(bad);
            }
            r
        }
    };
    out.comparisons = report.ops.comparisons;
    out.cycle_mismatches = cycle_mismatches(&report);
    out
}
