//! Side-by-side BiKA, BNN and QNN runs on identical layer dimensions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    simulate_model, ArrayConfig, BaselineKind, BaselineWorkload, PeKind, SimOps, Workload,
};
use crate::error::Result;
use crate::model::{ArchName, Architecture, BikaModel};
use crate::tensor::IntTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineRow {
    pub engine: PeKind,
    pub clock_mhz: f64,
    pub cycles: u64,
    pub latency_us: f64,
    pub ops: SimOps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub arch: ArchName,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub engines: Vec<EngineRow>,
    /// QNN cycles over BiKA cycles.
    pub qnn_over_bika_cycles: f64,
    /// QNN latency over BiKA latency at the per-engine clocks.
    pub qnn_over_bika_latency: f64,
    /// BiKA latency over BNN latency.
    pub bika_over_bnn_latency: f64,
}

impl Comparison {
    pub fn row(&self, pe: PeKind) -> &EngineRow {
        self.engines
            .iter()
            .find(|r| r.engine == pe)
            .expect("every engine is simulated")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "engine,clock_mhz,cycles,latency_us,comparisons,additions,multiplications,xnor_bit_ops,threshold_loads\n",
        );
        for r in &self.engines {
            let o = &r.ops;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.engine,
                r.clock_mhz,
                r.cycles,
                r.latency_us,
                o.comparisons,
                o.additions,
                o.multiplications,
                o.xnor_bit_ops,
                o.threshold_loads
            ));
        }
        s
    }

    /// `cycles(BNN) < cycles(BiKA) < cycles(QNN)` and the same for latency.
    pub fn ordering_holds(&self) -> bool {
        let (bnn, bika, qnn) = (
            self.row(PeKind::BnnXnorPopcount),
            self.row(PeKind::BikaCac),
            self.row(PeKind::QnnMac),
        );
        bnn.cycles < bika.cycles
            && bika.cycles < qnn.cycles
            && bnn.latency_us < bika.latency_us
            && bika.latency_us < qnn.latency_us
    }
}

/// One seeded image within the architecture's input range.
pub fn random_input(arch: &Architecture, seed: u64) -> Result<IntTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = arch.input.shape.iter().product();
    let data = (0..n)
        .map(|_| rng.gen_range(arch.input.min..=arch.input.max))
        .collect();
    let mut shape = vec![1];
    shape.extend_from_slice(&arch.input.shape);
    IntTensor::new(shape, data)
}

pub fn compare_engines(arch: ArchName, seed: u64) -> Result<Comparison> {
    compare_engines_on(arch, seed, 8, 8)
}

/// Runs all three engines on seeded parameters and a seeded single image.
pub fn compare_engines_on(
    arch: ArchName,
    seed: u64,
    rows: usize,
    cols: usize,
) -> Result<Comparison> {
    let a = Architecture::preset(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = BikaModel::random(&a, true, &mut rng)?;
    let bnn = BaselineWorkload::synthetic(BaselineKind::Bnn, &a, seed)?;
    let qnn = BaselineWorkload::synthetic(BaselineKind::Qnn, &a, seed)?;
    let input = random_input(&a, seed)?;
    let mut engines = Vec::with_capacity(3);
    for workload in [
        Workload::Baseline(&bnn),
        Workload::Bika(&model),
        Workload::Baseline(&qnn),
    ] {
        let cfg = ArrayConfig::new(workload.pe_kind()).with_array(rows, cols);
        let r = simulate_model(&cfg, workload, &input)?;
        engines.push(EngineRow {
            engine: r.engine,
            clock_mhz: r.clock_mhz,
            cycles: r.total_cycles,
            latency_us: r.latency_us,
            ops: r.ops,
        });
    }
    let (bnn_r, bika_r, qnn_r) = (&engines[0], &engines[1], &engines[2]);
    Ok(Comparison {
        arch,
        seed,
        rows,
        cols,
        qnn_over_bika_cycles: qnn_r.cycles as f64 / bika_r.cycles as f64,
        qnn_over_bika_latency: qnn_r.latency_us / bika_r.latency_us,
        bika_over_bnn_latency: bika_r.latency_us / bnn_r.latency_us,
        engines,
    })
}
