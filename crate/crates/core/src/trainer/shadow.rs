//! Real-valued shadow parameters `(W, b)` for every threshold connection, with
//! forward and straight-through backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ste::Activation;
use crate::error::{Error, Result};
use crate::model::layer::{ACC_MAX, ACC_MIN};
use crate::model::{Architecture, LayerSpec, ThresholdKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowLayer {
    pub kind: ThresholdKind,
    /// Same `[out][fan_in]` layout as the exported connections.
    #[serde(with = "lossless_reals")]
    pub weights: Vec<f64>,
    #[serde(with = "lossless_reals")]
    pub biases: Vec<f64>,
}

/// JSON has no NaN or infinity; those values are written as strings so a
/// diverged checkpoint still loads and fails at export instead.
mod lossless_reals {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Real {
        Finite(f64),
        Special(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| {
            if x.is_finite() {
                Real::Finite(x)
            } else {
                Real::Special(x.to_string())
            }
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Real>::deserialize(d)?
            .into_iter()
            .map(|r| match r {
                Real::Finite(x) => Ok(x),
                Real::Special(s) => s
                    .parse()
                    .map_err(|_| serde::de::Error::custom(format!("not a number: {s}"))),
            })
            .collect()
    }
}

impl ShadowLayer {
    pub fn new(kind: ThresholdKind, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        let n = kind.connection_count();
        if weights.len() != n || biases.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: weights.len().min(biases.len()),
            });
        }
        Ok(Self {
            kind,
            weights,
            biases,
        })
    }

    /// `W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))` with each initial threshold
    /// `-b/w` drawn uniformly from `[lo, hi]`, the expected activation range.
    pub fn init<R: Rng>(kind: ThresholdKind, lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = kind.connection_count();
        let bound = 1.0 / (kind.fan_in() as f64).sqrt();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for _ in 0..n {
            let w = rng.gen_range(-bound..bound);
            let t = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            weights.push(w);
            biases.push(-w * t);
        }
        Self {
            kind,
            weights,
            biases,
        }
    }

    fn output_len(&self, input_shape: &[usize]) -> usize {
        match self.kind {
            ThresholdKind::Linear { out_features, .. } => out_features,
            ThresholdKind::Conv2d { out_channels, .. } => {
                out_channels * input_shape[1] * input_shape[2]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ShadowEntry {
    Threshold(ShadowLayer),
    MaxPool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowModel {
    pub arch: Architecture,
    pub layers: Vec<ShadowEntry>,
    /// 8-bit accumulator clamp on every threshold layer.
    pub saturate: bool,
}

/// Per-layer gradient buffers; empty for pooling layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(model: &ShadowModel) -> Self {
        let sizes: Vec<usize> = model
            .layers
            .iter()
            .map(|l| match l {
                ShadowEntry::Threshold(t) => t.weights.len(),
                ShadowEntry::MaxPool => 0,
            })
            .collect();
        Self {
            weights: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            biases: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= k);
        }
    }
}

/// Activations recorded by a forward pass for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// Layer inputs; conv layers store their im2col matrix instead.
    inputs: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
    /// Pre-clamp neuron sums of threshold layers.
    sums: Vec<Vec<f64>>,
    /// Flat argmax index per pooled output.
    pool_src: Vec<Vec<usize>>,
    pub output: Vec<f64>,
}

impl ShadowModel {
    pub fn init<R: Rng>(arch: &Architecture, saturate: bool, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        // first layer sees pixels; later layers see sums of +-1 whose
        // spread grows with the previous fan-in
        let (mut lo, mut hi) = (arch.input.min as f64, arch.input.max as f64);
        let mut layers = Vec::with_capacity(arch.layers.len());
        for spec in &arch.layers {
            layers.push(match spec.threshold_kind() {
                Some(kind) => {
                    let l = ShadowLayer::init(kind, lo, hi, rng);
                    let spread = (kind.fan_in() as f64).sqrt().min(ACC_MAX as f64);
                    (lo, hi) = (-spread, spread);
                    ShadowEntry::Threshold(l)
                }
                None => ShadowEntry::MaxPool,
            });
        }
        Ok(Self {
            arch: arch.clone(),
            layers,
            saturate,
        })
    }

    pub fn from_layers(
        arch: Architecture,
        layers: Vec<ShadowEntry>,
        saturate: bool,
    ) -> Result<Self> {
        if arch.layers.len() != layers.len() {
            return Err(Error::LengthMismatch {
                expected: arch.layers.len(),
                got: layers.len(),
            });
        }
        for (spec, l) in arch.layers.iter().zip(&layers) {
            let ok = match (spec, l) {
                (LayerSpec::MaxPool, ShadowEntry::MaxPool) => true,
                (_, ShadowEntry::Threshold(t)) => spec.threshold_kind() == Some(t.kind),
                _ => false,
            };
            if !ok {
                return Err(Error::Model(format!(
                    "shadow layer does not match {spec:?}"
                )));
            }
        }
        arch.validate()?;
        Ok(Self {
            arch,
            layers,
            saturate,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.threshold_layers().map(|t| 2 * t.weights.len()).sum()
    }

    pub fn threshold_layers(&self) -> impl Iterator<Item = &ShadowLayer> {
        self.layers.iter().filter_map(|l| match l {
            ShadowEntry::Threshold(t) => Some(t),
            ShadowEntry::MaxPool => None,
        })
    }

    pub fn forward(&self, x: &[f64], act: Activation) -> Result<Vec<f64>> {
        Ok(self.forward_traced(x, act)?.output)
    }

    pub fn forward_traced(&self, x: &[f64], act: Activation) -> Result<Trace> {
        let mut shape = self.arch.input.shape.clone();
        if x.len() != shape.iter().product::<usize>() {
            return Err(Error::LengthMismatch {
                expected: shape.iter().product(),
                got: x.len(),
            });
        }
        let mut trace = Trace::default();
        let mut cur = x.to_vec();
        for (entry, spec) in self.layers.iter().zip(&self.arch.layers) {
            let next_shape = spec.output_shape(&shape)?;
            let mut sums = Vec::new();
            let mut pool_src = Vec::new();
            let (stored, out) = match entry {
                ShadowEntry::Threshold(t) => {
                    let (stored, s) = threshold_forward(t, &cur, &shape, act);
                    let out = s
                        .iter()
                        .map(|&v| if self.saturate { clamp_acc(v) } else { v })
                        .collect();
                    sums = s;
                    (stored, out)
                }
                ShadowEntry::MaxPool => {
                    let (out, src) = pool_forward(&cur, &shape);
                    pool_src = src;
                    (Vec::new(), out)
                }
            };
            trace.inputs.push(stored);
            trace.shapes.push(shape);
            trace.sums.push(sums);
            trace.pool_src.push(pool_src);
            cur = out;
            shape = next_shape;
        }
        trace.output = cur;
        Ok(trace)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the model input.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut Grads) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let shape = &trace.shapes[i];
            g = match &self.layers[i] {
                ShadowEntry::Threshold(t) => {
                    if self.saturate {
                        for (gv, &s) in g.iter_mut().zip(&trace.sums[i]) {
                            if !(ACC_MIN as f64..=ACC_MAX as f64).contains(&s) {
                                *gv = 0.0;
                            }
                        }
                    }
                    threshold_backward(
                        t,
                        &trace.inputs[i],
                        shape,
                        &g,
                        &mut grads.weights[i],
                        &mut grads.biases[i],
                    )
                }
                ShadowEntry::MaxPool => {
                    let mut gin = vec![0.0; shape.iter().product()];
                    for (&src, &gv) in trace.pool_src[i].iter().zip(&g) {
                        gin[src] += gv;
                    }
                    gin
                }
            };
        }
        g
    }
}

#[inline]
fn clamp_acc(v: f64) -> f64 {
    v.clamp(ACC_MIN as f64, ACC_MAX as f64)
}

#[inline]
fn row_sum(w: &[f64], b: &[f64], a: &[f64], act: Activation) -> f64 {
    match act {
        Activation::Sign => {
            let mut pos = 0usize;
            for ((&w, &b), &a) in w.iter().zip(b).zip(a) {
                pos += (w * a + b >= 0.0) as usize;
            }
            2.0 * pos as f64 - a.len() as f64
        }
        Activation::HardTanh => w
            .iter()
            .zip(b)
            .zip(a)
            .map(|((&w, &b), &a)| act.apply(w * a + b))
            .sum(),
    }
}

#[inline]
fn row_backward(
    w: &[f64],
    b: &[f64],
    a: &[f64],
    g: f64,
    gw: &mut [f64],
    gb: &mut [f64],
    ga: &mut [f64],
) {
    for j in 0..a.len() {
        let z = w[j] * a[j] + b[j];
        if z.abs() <= 1.0 {
            gw[j] += g * a[j];
            gb[j] += g;
            ga[j] += g * w[j];
        }
    }
}

fn im2col(x: &[f64], shape: &[usize]) -> Vec<f64> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let k = c * 9;
    let mut cols = vec![0.0; h * w * k];
    for y in 0..h {
        for xx in 0..w {
            let row = &mut cols[(y * w + xx) * k..(y * w + xx + 1) * k];
            let mut idx = 0;
            for ch in 0..c {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) = (y + ky, xx + kx);
                        if sy >= 1 && sy <= h && sx >= 1 && sx <= w {
                            row[idx] = x[ch * h * w + (sy - 1) * w + (sx - 1)];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
    cols
}

fn col2im(gcols: &[f64], shape: &[usize]) -> Vec<f64> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let k = c * 9;
    let mut g = vec![0.0; c * h * w];
    for y in 0..h {
        for xx in 0..w {
            let row = &gcols[(y * w + xx) * k..(y * w + xx + 1) * k];
            let mut idx = 0;
            for ch in 0..c {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) = (y + ky, xx + kx);
                        if sy >= 1 && sy <= h && sx >= 1 && sx <= w {
                            g[ch * h * w + (sy - 1) * w + (sx - 1)] += row[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
    g
}

/// Returns (stored input for backward, unclamped sums).
fn threshold_forward(
    t: &ShadowLayer,
    x: &[f64],
    shape: &[usize],
    act: Activation,
) -> (Vec<f64>, Vec<f64>) {
    let n = t.kind.fan_in();
    match t.kind {
        ThresholdKind::Linear { out_features, .. } => {
            let sums = (0..out_features)
                .map(|o| {
                    row_sum(
                        &t.weights[o * n..(o + 1) * n],
                        &t.biases[o * n..(o + 1) * n],
                        x,
                        act,
                    )
                })
                .collect();
            (x.to_vec(), sums)
        }
        ThresholdKind::Conv2d { out_channels, .. } => {
            let cols = im2col(x, shape);
            let pixels = shape[1] * shape[2];
            let mut sums = Vec::with_capacity(t.output_len(shape));
            for o in 0..out_channels {
                let (w, b) = (
                    &t.weights[o * n..(o + 1) * n],
                    &t.biases[o * n..(o + 1) * n],
                );
                for p in 0..pixels {
                    sums.push(row_sum(w, b, &cols[p * n..(p + 1) * n], act));
                }
            }
            (cols, sums)
        }
    }
}

fn threshold_backward(
    t: &ShadowLayer,
    stored: &[f64],
    shape: &[usize],
    g: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let n = t.kind.fan_in();
    match t.kind {
        ThresholdKind::Linear { out_features, .. } => {
            let mut ga = vec![0.0; n];
            #[allow(clippy::needless_range_loop)]
            for o in 0..out_features {
                if g[o] == 0.0 {
                    continue;
                }
                let r = o * n..(o + 1) * n;
                row_backward(
                    &t.weights[r.clone()],
                    &t.biases[r.clone()],
                    stored,
                    g[o],
                    &mut gw[r.clone()],
                    &mut gb[r],
                    &mut ga,
                );
            }
            ga
        }
        ThresholdKind::Conv2d { out_channels, .. } => {
            let pixels = shape[1] * shape[2];
            let mut gcols = vec![0.0; stored.len()];
            for o in 0..out_channels {
                let r = o * n..(o + 1) * n;
                for p in 0..pixels {
                    let gv = g[o * pixels + p];
                    if gv == 0.0 {
                        continue;
                    }
                    let pr = p * n..(p + 1) * n;
                    row_backward(
                        &t.weights[r.clone()],
                        &t.biases[r.clone()],
                        &stored[pr.clone()],
                        gv,
                        &mut gw[r.clone()],
                        &mut gb[r.clone()],
                        &mut gcols[pr],
                    );
                }
            }
            col2im(&gcols, shape)
        }
    }
}

fn pool_forward(x: &[f64], shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut src = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * xx;
                let mut best = base;
                // first maximum in row-major window order
                for cand in [base + 1, base + w, base + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                src.push(best);
            }
        }
    }
    (out, src)
}

/// Softmax cross-entropy over `temperature * scores`.
/// Returns (loss, d loss / d scores, prediction).
pub fn softmax_cross_entropy(
    scores: &[f64],
    label: usize,
    temperature: f64,
) -> (f64, Vec<f64>, usize) {
    let logits: Vec<f64> = scores.iter().map(|s| s * temperature).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = -(logits[label] - max - z.ln());
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| temperature * (e / z - if i == label { 1.0 } else { 0.0 }))
        .collect();
    let mut pred = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[pred] {
            pred = i;
        }
    }
    (loss, grad, pred)
}
