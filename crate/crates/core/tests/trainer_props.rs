mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bika::datasets::{split_train_val, Dataset};
use bika::model::{connection_activate, ArchName, Architecture, LayerSpec};
use bika::trainer::{
    batch_gradient, export, export_connection, train, verify_export, Activation, ShadowModel,
    TrainConfig,
};
use bika::Exec;
use common::{
    custom_arch, gradient_check, load_mnist, random_grad_model, sign_oracle, synthetic_dataset,
};

#[test]
fn surrogate_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut skipped) = (0, 0);
    for case in 0..50 {
        let (model, x) = random_grad_model(&mut rng);
        let classes = model.arch.output_len().unwrap();
        let label = rng.gen_range(0..classes);
        let temperature = rng.gen_range(0.25..2.0);
        let r = gradient_check(&model, &x, label, temperature, 1e-4);
        assert!(
            r.failures.is_empty(),
            "case {case} ({}): {:?}",
            model.arch.describe(),
            r.failures
        );
        checked += r.checked;
        skipped += r.skipped;
    }
    eprintln!("gradient check: {checked} coordinates checked, {skipped} on kinks");
    assert!(
        checked > 10 * skipped,
        "checked {checked}, skipped {skipped}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn exported_connection_matches_sign(
        w in prop_oneof![-100.0f64..100.0, -1e-6f64..1e-6, Just(0.0)],
        b in -30000.0f64..30000.0,
        integral in any::<bool>(),
        t in -300i32..300,
    ) {
        // put the real threshold exactly on an integer half the time
        let b = if integral { -w * t as f64 } else { b };
        let c = export_connection(w, b).unwrap();
        for a in -256..=255 {
            prop_assert_eq!(connection_activate(c, a as i16), sign_oracle(w, b, a), "w={} b={} a={}", w, b, a);
        }
    }
}

#[test]
fn non_finite_parameters_refuse_to_export() {
    for (w, b) in [
        (f64::NAN, 0.0),
        (1.0, f64::INFINITY),
        (f64::NEG_INFINITY, 1.0),
    ] {
        assert!(export_connection(w, b).is_err());
    }
}

fn pixels(d: &Dataset, i: usize) -> Vec<f64> {
    d.pixels(i).iter().map(|&p| p as f64).collect()
}

/// Shadow `Sign` forward and integer forward of the export agree exactly.
fn assert_export_fidelity(shadow: &ShadowModel, images: &Dataset, n: usize) {
    let model = export(shadow).unwrap();
    assert!(verify_export(shadow, &model, -256, 255).passed());
    for i in 0..n.min(images.len()) {
        let want = shadow
            .forward(&pixels(images, i), Activation::Sign)
            .unwrap();
        let got = model.forward(&images.image(i)).unwrap();
        let got: Vec<f64> = got.data().iter().map(|&v| v as f64).collect();
        assert_eq!(got, want, "image {i}");
    }
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 64,
        ..TrainConfig::default()
    }
}

#[test]
fn export_reproduces_trained_shadow_bit_exactly() {
    match load_mnist() {
        Some((train_set, test_set)) => {
            let arch = Architecture::preset(ArchName::Tfc).unwrap();
            let (shadow, _) = train(
                &arch,
                &train_set.take(2000),
                None,
                &quick_cfg(1),
                Exec::Parallel,
            )
            .unwrap();
            assert_export_fidelity(&shadow, &test_set, 100);
        }
        None => eprintln!("MNIST not found, using synthetic images"),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let conv = custom_arch(
        vec![1, 8, 8],
        vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 4,
            },
            LayerSpec::MaxPool,
            LayerSpec::Linear {
                in_features: 64,
                out_features: 10,
            },
        ],
    );
    let d = synthetic_dataset(&mut rng, 300, [1, 8, 8]);
    let (shadow, _) = train(&conv, &d, None, &quick_cfg(2), Exec::Parallel).unwrap();
    assert_export_fidelity(&shadow, &d, 100);
}

#[test]
fn training_is_deterministic_across_runs_and_strategies() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let arch = custom_arch(
        vec![1, 4, 4],
        vec![
            LayerSpec::Linear {
                in_features: 16,
                out_features: 12,
            },
            LayerSpec::Linear {
                in_features: 12,
                out_features: 10,
            },
        ],
    );
    let d = synthetic_dataset(&mut rng, 500, [1, 4, 4]);
    let (tr, val) = split_train_val(&d, 0.2, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 50,
        seed: 17,
        ..TrainConfig::default()
    };
    let (m1, r1) = train(&arch, &tr, Some(&val), &cfg, Exec::Parallel).unwrap();
    let (m2, r2) = train(&arch, &tr, Some(&val), &cfg, Exec::Parallel).unwrap();
    let (m3, r3) = train(&arch, &tr, Some(&val), &cfg, Exec::Sequential).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(m1, m3);
    assert_eq!(r1.metrics(), r2.metrics());
    assert_eq!(r1.metrics(), r3.metrics());
    assert_eq!(
        serde_json::to_string(&m1).unwrap(),
        serde_json::to_string(&m3).unwrap()
    );

    let other = TrainConfig { seed: 18, ..cfg };
    let (m4, _) = train(&arch, &tr, Some(&val), &other, Exec::Parallel).unwrap();
    assert_ne!(m1, m4);
}

#[test]
fn batch_gradient_ignores_worker_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let arch = custom_arch(
        vec![1, 4, 4],
        vec![LayerSpec::Linear {
            in_features: 16,
            out_features: 10,
        }],
    );
    let d = synthetic_dataset(&mut rng, 300, [1, 4, 4]);
    let model = ShadowModel::init(&arch, true, &mut rng).unwrap();
    let batch: Vec<usize> = (0..300).rev().collect();
    let cfg = TrainConfig {
        chunk_size: 7,
        ..TrainConfig::default()
    };
    let a = batch_gradient(&model, &d, &batch, &cfg, Exec::Parallel).unwrap();
    let b = batch_gradient(&model, &d, &batch, &cfg, Exec::Sequential).unwrap();
    assert_eq!(a, b);
}

#[test]
fn schedule_splits_into_thirds() {
    let cfg = TrainConfig {
        epochs: 6,
        learning_rates: [3.0, 2.0, 1.0],
        ..TrainConfig::default()
    };
    let lrs: Vec<f64> = (0..6).map(|e| cfg.learning_rate(e)).collect();
    assert_eq!(lrs, [3.0, 3.0, 2.0, 2.0, 1.0, 1.0]);
    let one = TrainConfig { epochs: 1, ..cfg };
    assert_eq!(one.learning_rate(0), 3.0);
}
