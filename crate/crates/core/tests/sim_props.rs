mod common;

use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bika::model::{ArchName, Architecture, BikaModel, ThresholdKind};
use bika::sim::engine::TimingCache;
use bika::sim::{
    compare_engines, engine_matmul_cycles, simulate_model, ArrayConfig, BaselineKind,
    BaselineWorkload, MatmulShape, PeKind, Workload,
};
use common::{cycle_oracle, functional_case, random_batch};

#[test]
fn every_engine_is_bit_exact() {
    for pe in PeKind::ALL {
        for seed in 0..100 {
            let o = functional_case(pe, 1000 * pe as u64 + seed);
            assert_eq!(
                (o.mismatches, o.cycle_mismatches, o.bika_multiplications),
                (0, 0, 0),
                "{pe} seed {seed}"
            );
        }
    }
}

#[test]
fn counted_cycles_match_closed_form_sweep() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dims: Vec<u64> = (0..100).map(|_| rng.gen_range(1..=4096)).collect();
    let sizes = [1u64, 2, 4, 8, 16];
    let mut cache = TimingCache::default();
    for case in 0..500 {
        let pe = PeKind::ALL[case % 3];
        let (k, m) = (dims[rng.gen_range(0..100)], dims[rng.gen_range(0..100)]);
        let b = rng.gen_range(1..=64);
        let (r, c) = (sizes[rng.gen_range(0..5)], sizes[rng.gen_range(0..5)]);
        let got = engine_matmul_cycles(
            pe,
            r as usize,
            c as usize,
            MatmulShape { b, k, m },
            &mut cache,
        )
        .unwrap();
        assert_eq!(
            got.total,
            cycle_oracle(pe, r, c, b, k, m),
            "{pe} K={k} M={m} B={b} R={r} C={c}"
        );
    }
    assert!(
        started.elapsed().as_secs_f64() < 10.0,
        "sweep took {:?}",
        started.elapsed()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn doubling_an_evenly_tiling_dimension_never_costs_cycles(
        pe_idx in 0usize..3,
        k in 1u64..2048,
        r_exp in 0u32..4,
        c_exp in 0u32..4,
        b_tiles in 1u64..6,
        m_tiles in 1u64..6,
    ) {
        let pe = PeKind::ALL[pe_idx];
        let (r, c) = (1u64 << r_exp, 1u64 << c_exp);
        // B and M are multiples of the doubled sizes, so tiles stay full
        let (b, m) = (2 * r * b_tiles, 2 * c * m_tiles);
        let base = cycle_oracle(pe, r, c, b, k, m);
        prop_assert!(cycle_oracle(pe, 2 * r, c, b, k, m) <= base);
        prop_assert!(cycle_oracle(pe, r, 2 * c, b, k, m) <= base);
        let mut cache = TimingCache::default();
        let shape = MatmulShape { b, k, m };
        let wide = engine_matmul_cycles(pe, r as usize, 2 * c as usize, shape, &mut cache).unwrap();
        prop_assert!(wide.total <= base);
    }
}

#[test]
fn larger_array_wins_on_wide_preset_layers() {
    for name in [ArchName::Tfc, ArchName::Sfc, ArchName::Lfc] {
        let arch = Architecture::preset(name).unwrap();
        for spec in &arch.layers {
            let Some(ThresholdKind::Linear {
                in_features,
                out_features,
            }) = spec.threshold_kind()
            else {
                continue;
            };
            if out_features <= 8 {
                continue;
            }
            for pe in PeKind::ALL {
                let (k, m) = (in_features as u64, out_features as u64);
                let mut cache = TimingCache::default();
                let small =
                    engine_matmul_cycles(pe, 8, 8, MatmulShape { b: 1, k, m }, &mut cache).unwrap();
                let big = engine_matmul_cycles(pe, 16, 16, MatmulShape { b: 1, k, m }, &mut cache)
                    .unwrap();
                assert!(
                    big.total < small.total,
                    "{name:?} {pe} K={k} M={m}: {} vs {}",
                    big.total,
                    small.total
                );
            }
        }
    }
}

#[test]
fn mlp_presets_keep_latency_ordering() {
    for name in [ArchName::Tfc, ArchName::Sfc, ArchName::Lfc] {
        let c = compare_engines(name, 1).unwrap();
        assert!(c.ordering_holds(), "{name:?}: {}", c.to_csv());
        assert!(
            c.qnn_over_bika_latency > 1.2,
            "{name:?}: ratio {}",
            c.qnn_over_bika_latency
        );
        assert_eq!(c.row(PeKind::BikaCac).ops.multiplications, 0);
        let arch = Architecture::preset(name).unwrap();
        let neurons: u64 = arch
            .layers
            .iter()
            .filter_map(|l| l.threshold_kind())
            .map(|k| k.outputs() as u64)
            .sum();
        assert_eq!(
            c.row(PeKind::QnnMac).ops.comparisons,
            256 * neurons,
            "{name:?}"
        );
    }
}

#[test]
fn tfc_cycle_counts_on_the_default_array() {
    let c = compare_engines(ArchName::Tfc, 0).unwrap();
    let cycles: Vec<u64> = [PeKind::BnnXnorPopcount, PeKind::BikaCac, PeKind::QnnMac]
        .iter()
        .map(|&p| c.row(p).cycles)
        .collect();
    assert_eq!(cycles, [1258, 6900, 10596]);
}

#[test]
fn reports_are_reproducible() {
    let arch = Architecture::preset(ArchName::Tfc).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = BikaModel::random(&arch, true, &mut rng).unwrap();
    let batch = random_batch(&mut rng, &arch, 3);
    let cfg = ArrayConfig::new(PeKind::BikaCac).with_array(4, 8);
    let a = simulate_model(&cfg, Workload::Bika(&model), &batch).unwrap();
    let b = simulate_model(&cfg, Workload::Bika(&model), &batch).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.to_csv(), b.to_csv());
    for kind in [BaselineKind::Bnn, BaselineKind::Qnn] {
        let w1 = BaselineWorkload::synthetic(kind, &arch, 8).unwrap();
        let w2 = BaselineWorkload::synthetic(kind, &arch, 8).unwrap();
        assert_eq!(w1, w2);
        let pe = Workload::Baseline(&w1).pe_kind();
        let r1 = simulate_model(&ArrayConfig::new(pe), Workload::Baseline(&w1), &batch).unwrap();
        let r2 = simulate_model(&ArrayConfig::new(pe), Workload::Baseline(&w2), &batch).unwrap();
        assert_eq!(r1.to_json(), r2.to_json());
    }
}

#[test]
fn mismatched_engine_is_refused() {
    let arch = Architecture::preset(ArchName::Tfc).unwrap();
    let model = BikaModel::random(&arch, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let batch = random_batch(&mut ChaCha8Rng::seed_from_u64(0), &arch, 1);
    assert!(simulate_model(
        &ArrayConfig::new(PeKind::QnnMac),
        Workload::Bika(&model),
        &batch
    )
    .is_err());
    let zero = ArrayConfig::new(PeKind::BikaCac).with_array(0, 8);
    assert!(simulate_model(&zero, Workload::Bika(&model), &batch).is_err());
}
