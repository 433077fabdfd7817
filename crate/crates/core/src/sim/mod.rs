//! Cycle-level simulator of an `R x C` output-stationary systolic array with
//! comparison-accumulator (BiKA), XNOR-popcount (BNN) or multiply-accumulate
//! (8-bit QNN) processing elements.
//!
//! Every threshold or conv layer is lowered to a matmul with `B` batch rows,
//! reduction length `K` and `M` outputs. Conv layers use im2col with
//! `K = in_channels * 9` and one row per output pixel. Max pooling runs on a
//! scalar side unit at one output per cycle.

pub mod baseline;
pub mod compare;
pub mod cost;
pub mod engine;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use baseline::{
    BaselineKind, BaselineLayer, BaselineWorkload, BnnLayer, QnnLayer, WorkloadDims, WorkloadSpec,
};
pub use compare::{compare_engines, Comparison, EngineRow};
pub use cost::{matmul_cycles, CycleBreakdown, MatmulShape};
use engine::{
    ActivationMode, CacDatapath, ColumnActivation, Datapath, MacDatapath, SystolicArray,
    TimingCache, XnorDatapath,
};

use crate::error::{Error, Result};
use crate::model::layer::{maxpool_forward, OpCounter};
use crate::model::{BikaModel, Layer, ThresholdKind, ThresholdLayer};
use crate::tensor::IntTensor;
use baseline::{gather_output, lowered_rows, out_channels};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PeKind {
    #[serde(rename = "bika")]
    BikaCac,
    #[serde(rename = "bnn")]
    BnnXnorPopcount,
    #[serde(rename = "qnn")]
    QnnMac,
}

impl PeKind {
    pub const ALL: [PeKind; 3] = [PeKind::BikaCac, PeKind::BnnXnorPopcount, PeKind::QnnMac];

    pub fn as_str(self) -> &'static str {
        match self {
            PeKind::BikaCac => "bika",
            PeKind::BnnXnorPopcount => "bnn",
            PeKind::QnnMac => "qnn",
        }
    }

    pub fn default_clock_mhz(self) -> f64 {
        match self {
            PeKind::BikaCac | PeKind::BnnXnorPopcount => 300.0,
            PeKind::QnnMac => 250.0,
        }
    }

    fn activation_mode(self) -> ActivationMode {
        match self {
            PeKind::BikaCac => ActivationMode::None,
            PeKind::BnnXnorPopcount => ActivationMode::Sign,
            PeKind::QnnMac => ActivationMode::Table,
        }
    }
}

impl fmt::Display for PeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bika" => Ok(PeKind::BikaCac),
            "bnn" => Ok(PeKind::BnnXnorPopcount),
            "qnn" => Ok(PeKind::QnnMac),
            other => Err(Error::Config(format!(
                "unknown engine '{other}' (expected bika, bnn or qnn)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    pub pe_kind: PeKind,
    /// Only used to convert cycles to latency.
    pub clock_mhz: f64,
}

impl ArrayConfig {
    /// 8x8 array at the engine's default clock.
    pub fn new(pe_kind: PeKind) -> Self {
        Self {
            rows: 8,
            cols: 8,
            pe_kind,
            clock_mhz: pe_kind.default_clock_mhz(),
        }
    }

    pub fn with_array(self, rows: usize, cols: usize) -> Self {
        Self { rows, cols, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config(format!(
                "array must be at least 1x1, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.clock_mhz > 0.0 && self.clock_mhz.is_finite()) {
            return Err(Error::Config(format!(
                "clock must be positive, got {} MHz",
                self.clock_mhz
            )));
        }
        Ok(())
    }
}

/// Parses `RxC`, e.g. `8x8`.
pub fn parse_array(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("array must look like RxC, got '{s}'"));
    let (r, c) = s
        .to_ascii_lowercase()
        .split_once('x')
        .map(|(r, c)| (r.trim().to_string(), c.trim().to_string()))
        .ok_or_else(bad)?;
    let r: usize = r.parse().map_err(|_| bad())?;
    let c: usize = c.parse().map_err(|_| bad())?;
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok((r, c))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOps {
    pub comparisons: u64,
    pub additions: u64,
    pub multiplications: u64,
    pub xnor_bit_ops: u64,
    /// Threshold values loaded into the activation unit.
    pub threshold_loads: u64,
}

impl SimOps {
    pub fn merge(&mut self, o: &SimOps) {
        self.comparisons += o.comparisons;
        self.additions += o.additions;
        self.multiplications += o.multiplications;
        self.xnor_bit_ops += o.xnor_bit_ops;
        self.threshold_loads += o.threshold_loads;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub index: usize,
    pub label: String,
    pub b: u64,
    pub k: u64,
    pub m: u64,
    pub k_eff: u64,
    pub passes: u64,
    pub cycles_per_pass: u64,
    pub cycles: u64,
    pub ops: SimOps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub engine: PeKind,
    pub rows: usize,
    pub cols: usize,
    pub clock_mhz: f64,
    pub batch: usize,
    pub total_cycles: u64,
    pub latency_us: f64,
    pub ops: SimOps,
    pub layers: Vec<LayerReport>,
    pub functional_output: IntTensor,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "layer,label,b,k,m,k_eff,passes,cycles_per_pass,cycles,comparisons,additions,multiplications,xnor_bit_ops,threshold_loads\n",
        );
        let row = |s: &mut String,
                   idx: &str,
                   label: &str,
                   l: Option<&LayerReport>,
                   cycles: u64,
                   o: &SimOps| {
            let dims = l
                .map(|l| {
                    format!(
                        "{},{},{},{},{},{}",
                        l.b, l.k, l.m, l.k_eff, l.passes, l.cycles_per_pass
                    )
                })
                .unwrap_or_else(|| ",,,,,".into());
            s.push_str(&format!(
                "{idx},{label},{dims},{cycles},{},{},{},{},{}\n",
                o.comparisons, o.additions, o.multiplications, o.xnor_bit_ops, o.threshold_loads
            ));
        };
        for l in &self.layers {
            row(
                &mut s,
                &l.index.to_string(),
                &l.label,
                Some(l),
                l.cycles,
                &l.ops,
            );
        }
        row(&mut s, "total", "", None, self.total_cycles, &self.ops);
        s
    }

    fn assemble(
        cfg: &ArrayConfig,
        batch: usize,
        layers: Vec<LayerReport>,
        output: IntTensor,
    ) -> Self {
        let total_cycles = layers.iter().map(|l| l.cycles).sum();
        let mut ops = SimOps::default();
        for l in &layers {
            ops.merge(&l.ops);
        }
        SimReport {
            engine: cfg.pe_kind,
            rows: cfg.rows,
            cols: cfg.cols,
            clock_mhz: cfg.clock_mhz,
            batch,
            total_cycles,
            latency_us: total_cycles as f64 / cfg.clock_mhz,
            ops,
            layers,
            functional_output: output,
        }
    }
}

/// One layer as seen by the simulator.
#[derive(Clone, Copy, Debug)]
pub enum SimLayer<'a> {
    Bika(&'a ThresholdLayer),
    Bnn(&'a BnnLayer),
    Qnn(&'a QnnLayer),
    MaxPool,
}

impl SimLayer<'_> {
    fn label(&self) -> String {
        let tk = match self {
            SimLayer::Bika(l) => l.kind(),
            SimLayer::Bnn(l) => l.kind,
            SimLayer::Qnn(l) => l.kind,
            SimLayer::MaxPool => return "P2".into(),
        };
        crate::model::LayerSpec::from_kind(tk).label()
    }

    fn supported_by(&self, pe: PeKind) -> bool {
        matches!(
            (self, pe),
            (SimLayer::MaxPool, _)
                | (SimLayer::Bika(_), PeKind::BikaCac)
                | (SimLayer::Bnn(_), PeKind::BnnXnorPopcount)
                | (SimLayer::Qnn(_), PeKind::QnnMac)
        )
    }
}

/// A full network to simulate.
#[derive(Clone, Copy, Debug)]
pub enum Workload<'a> {
    Bika(&'a BikaModel),
    Baseline(&'a BaselineWorkload),
}

impl<'a> Workload<'a> {
    pub fn pe_kind(&self) -> PeKind {
        match self {
            Workload::Bika(_) => PeKind::BikaCac,
            Workload::Baseline(w) => match w.kind {
                BaselineKind::Bnn => PeKind::BnnXnorPopcount,
                BaselineKind::Qnn => PeKind::QnnMac,
            },
        }
    }

    fn layers(&self) -> Vec<SimLayer<'a>> {
        match *self {
            Workload::Bika(m) => m
                .layers()
                .iter()
                .map(|l| match l {
                    Layer::Threshold(t) => SimLayer::Bika(t),
                    Layer::MaxPool => SimLayer::MaxPool,
                })
                .collect(),
            Workload::Baseline(w) => w
                .layers
                .iter()
                .map(|l| match l {
                    BaselineLayer::Bnn(b) => SimLayer::Bnn(b),
                    BaselineLayer::Qnn(q) => SimLayer::Qnn(q),
                    BaselineLayer::MaxPool => SimLayer::MaxPool,
                })
                .collect(),
        }
    }

    /// Scalar reference forward of one sample.
    pub fn reference_forward(&self, x: &IntTensor) -> Result<IntTensor> {
        match self {
            Workload::Bika(m) => m.forward(x),
            Workload::Baseline(w) => w.reference_forward(x),
        }
    }
}

fn pack_bits(bits: impl Iterator<Item = bool>, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len.div_ceil(8)];
    for (i, b) in bits.enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

struct MatmulRun {
    out: Vec<Vec<i32>>,
    passes: u64,
    cycles_per_pass: u64,
    cycles: u64,
}

fn run_matmul<D: Datapath>(
    cfg: &ArrayConfig,
    dp: &D,
    k_eff: usize,
    a_rows: &[Vec<D::Row>],
    w_cols: &[Vec<D::Col>],
    act: &[ColumnActivation<'_>],
    ops: &mut SimOps,
) -> MatmulRun {
    let array = SystolicArray::new(cfg.rows, cfg.cols);
    let mode = cfg.pe_kind.activation_mode();
    let (b, m) = (a_rows.len(), w_cols.len());
    let mut out = vec![vec![0i32; m]; b];
    let (mut passes, mut cycles, mut cycles_per_pass) = (0u64, 0u64, 0u64);
    for r0 in (0..b).step_by(cfg.rows) {
        let rows: Vec<Option<&[D::Row]>> = (0..cfg.rows)
            .map(|i| a_rows.get(r0 + i).map(|v| v.as_slice()))
            .collect();
        for c0 in (0..m).step_by(cfg.cols) {
            let cols: Vec<Option<&[D::Col]>> = (0..cfg.cols)
                .map(|j| w_cols.get(c0 + j).map(|v| v.as_slice()))
                .collect();
            let tile_act: Vec<Option<ColumnActivation>> =
                (0..cfg.cols).map(|j| act.get(c0 + j).copied()).collect();
            let (tile, pc) = array.run_pass(dp, k_eff, &rows, &cols, &tile_act, mode, ops);
            for (i, trow) in tile.iter().enumerate() {
                for (j, v) in trow.iter().enumerate() {
                    if let Some(v) = v {
                        out[r0 + i][c0 + j] = *v;
                    }
                }
            }
            passes += 1;
            cycles_per_pass = cycles_per_pass.max(pc.total());
            cycles += pc.total();
        }
    }
    MatmulRun {
        out,
        passes,
        cycles_per_pass,
        cycles,
    }
}

/// Per-image lowered rows, concatenated into one batch.
fn lower_batch(
    kind: ThresholdKind,
    images: &[IntTensor],
) -> Result<(Vec<Vec<i16>>, usize, Vec<usize>)> {
    let mut all = Vec::new();
    let mut per_image = 0;
    let mut shape = Vec::new();
    for x in images {
        let (rows, s) = lowered_rows(kind, x)?;
        per_image = rows.len();
        shape = s;
        all.extend(rows);
    }
    Ok((all, per_image, shape))
}

fn split_batch(
    kind: ThresholdKind,
    out: Vec<Vec<i32>>,
    per_image: usize,
    shape: &[usize],
) -> Result<Vec<IntTensor>> {
    out.chunks(per_image)
        .map(|rows| gather_output(kind, rows, shape.to_vec()))
        .collect()
}

fn layer_forward(
    cfg: &ArrayConfig,
    layer: SimLayer<'_>,
    images: &[IntTensor],
    index: usize,
) -> Result<(Vec<IntTensor>, LayerReport)> {
    if !layer.supported_by(cfg.pe_kind) {
        return Err(Error::Unsupported(format!(
            "{} layer on {} processing elements",
            layer.label(),
            cfg.pe_kind
        )));
    }
    let mut ops = SimOps::default();
    if let SimLayer::MaxPool = layer {
        let mut counted = OpCounter::default();
        let outs = images
            .iter()
            .map(|x| maxpool_forward(x, &mut counted))
            .collect::<Result<Vec<_>>>()?;
        ops.comparisons = counted.comparisons;
        let s = outs[0].shape();
        let (b, m) = ((images.len() * s[1] * s[2]) as u64, s[0] as u64);
        let cycles = cost::maxpool_cycles(b * m);
        let report = LayerReport {
            index,
            label: layer.label(),
            b,
            k: 4,
            m,
            k_eff: 0,
            passes: 0,
            cycles_per_pass: 0,
            cycles,
            ops,
        };
        return Ok((outs, report));
    }

    let (kind, run, k_eff, per_image, shape) = match layer {
        SimLayer::Bika(l) => {
            let kind = l.kind();
            let (rows, per_image, shape) = lower_batch(kind, images)?;
            let cols: Vec<Vec<_>> = (0..out_channels(kind)).map(|o| l.row(o).to_vec()).collect();
            let act = vec![
                ColumnActivation::Identity {
                    saturate: l.saturate()
                };
                cols.len()
            ];
            let k = kind.fan_in();
            (
                kind,
                run_matmul(cfg, &CacDatapath, k, &rows, &cols, &act, &mut ops),
                k,
                per_image,
                shape,
            )
        }
        SimLayer::Bnn(l) => {
            let kind = l.kind;
            let k = kind.fan_in();
            let (rows, per_image, shape) = lower_batch(kind, images)?;
            let rows: Vec<Vec<u8>> = rows
                .iter()
                .map(|r| pack_bits(r.iter().map(|&a| a >= l.input_threshold), k))
                .collect();
            let cols: Vec<Vec<u8>> = l
                .weights
                .chunks(k)
                .map(|w| pack_bits(w.iter().copied(), k))
                .collect();
            let act: Vec<_> = l
                .thresholds
                .iter()
                .map(|&t| ColumnActivation::Sign {
                    threshold: t,
                    bits: k,
                })
                .collect();
            let k_eff = k.div_ceil(8);
            (
                kind,
                run_matmul(
                    cfg,
                    &XnorDatapath { bits: k },
                    k_eff,
                    &rows,
                    &cols,
                    &act,
                    &mut ops,
                ),
                k_eff,
                per_image,
                shape,
            )
        }
        SimLayer::Qnn(l) => {
            let kind = l.kind;
            let k = kind.fan_in();
            let (rows, per_image, shape) = lower_batch(kind, images)?;
            let cols: Vec<Vec<i8>> = l.weights.chunks(k).map(|w| w.to_vec()).collect();
            let act: Vec<_> = l
                .thresholds
                .iter()
                .map(|t| ColumnActivation::Table { thresholds: t })
                .collect();
            (
                kind,
                run_matmul(cfg, &MacDatapath, k, &rows, &cols, &act, &mut ops),
                k,
                per_image,
                shape,
            )
        }
        SimLayer::MaxPool => unreachable!(),
    };
    let report = LayerReport {
        index,
        label: layer.label(),
        b: run.out.len() as u64,
        k: kind.fan_in() as u64,
        m: out_channels(kind) as u64,
        k_eff: k_eff as u64,
        passes: run.passes,
        cycles_per_pass: run.cycles_per_pass,
        cycles: run.cycles,
        ops,
    };
    Ok((split_batch(kind, run.out, per_image, &shape)?, report))
}

fn check_batch(batch: &IntTensor) -> Result<Vec<IntTensor>> {
    let images = batch.unbatch()?;
    if images.is_empty() || images[0].is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(images)
}

/// Simulates one layer on a `[N, ...]` batch.
pub fn simulate_layer(
    cfg: &ArrayConfig,
    layer: SimLayer<'_>,
    batch: &IntTensor,
) -> Result<SimReport> {
    cfg.validate()?;
    let images = check_batch(batch)?;
    let (outs, report) = layer_forward(cfg, layer, &images, 0)?;
    Ok(SimReport::assemble(
        cfg,
        images.len(),
        vec![report],
        IntTensor::batch(&outs)?,
    ))
}

/// Simulates a whole network on a `[N, ...]` batch, layer after layer.
pub fn simulate_model(
    cfg: &ArrayConfig,
    workload: Workload<'_>,
    batch: &IntTensor,
) -> Result<SimReport> {
    cfg.validate()?;
    if workload.pe_kind() != cfg.pe_kind {
        return Err(Error::Unsupported(format!(
            "{} workload on {} processing elements",
            workload.pe_kind(),
            cfg.pe_kind
        )));
    }
    let mut images = check_batch(batch)?;
    let mut reports = Vec::new();
    for (i, layer) in workload.layers().into_iter().enumerate() {
        let (next, report) = layer_forward(cfg, layer, &images, i)?;
        images = next;
        reports.push(report);
    }
    Ok(SimReport::assemble(
        cfg,
        images.len(),
        reports,
        IntTensor::batch(&images)?,
    ))
}

/// Cycles counted by stepping the engine without operand values. Tiles are
/// grouped by shape (interior, right edge, bottom edge, corner) and each
/// distinct shape is stepped once.
pub fn engine_matmul_cycles(
    pe: PeKind,
    rows: usize,
    cols: usize,
    shape: MatmulShape,
    cache: &mut TimingCache,
) -> Result<CycleBreakdown> {
    // validates and rejects overflow the same way as the closed form
    cost::matmul_cycles(pe, rows as u64, cols as u64, shape)?;
    let array = SystolicArray::new(rows, cols);
    let k_eff = cost::k_eff(pe, shape.k) as usize;
    let (b, m) = (shape.b as usize, shape.m as usize);
    let row_tiles = [(b / rows, rows), (usize::from(b % rows != 0), b % rows)];
    let col_tiles = [(m / cols, cols), (usize::from(m % cols != 0), m % cols)];
    let mut passes = 0u64;
    let mut total = 0u64;
    let mut cycles_per_pass = 0u64;
    for &(nr, live_r) in &row_tiles {
        for &(nc, live_c) in &col_tiles {
            if nr == 0 || nc == 0 {
                continue;
            }
            let pc = array
                .timing_pass(k_eff, live_r, live_c, pe.activation_mode(), cache)
                .total();
            let count = (nr * nc) as u64;
            passes += count;
            total += count * pc;
            cycles_per_pass = cycles_per_pass.max(pc);
        }
    }
    Ok(CycleBreakdown {
        passes,
        k_eff: k_eff as u64,
        cycles_per_pass,
        total,
    })
}
