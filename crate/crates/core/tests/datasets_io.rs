mod common;

use std::collections::HashSet;

use proptest::prelude::*;

use bika::datasets::{
    encode_idx_images, encode_idx_labels, load_cifar_dir, load_mnist_dir, load_mnist_idx,
    parse_cifar10, parse_idx_images, parse_idx_labels, split_train_val, write_mnist_idx, Dataset,
    Split, CIFAR_RECORD,
};
use bika::Error;
use common::mnist_dir;

/// Images whose first two pixels spell out their index.
fn tagged(n: usize) -> Dataset {
    let pixels = (0..n)
        .flat_map(|i| [(i >> 8) as u8, i as u8, 7, 9])
        .collect();
    let labels = (0..n).map(|i| (i % 10) as u8).collect();
    Dataset::new([1, 2, 2], pixels, labels, Split::Train).unwrap()
}

fn tag(d: &Dataset, i: usize) -> usize {
    let p = d.pixels(i);
    ((p[0] as usize) << 8) | p[1] as usize
}

proptest! {
    #[test]
    fn split_is_seeded_and_disjoint(n in 2usize..3000, frac in 0.01f64..0.99, seed in any::<u64>()) {
        let d = tagged(n);
        let Ok((train, val)) = split_train_val(&d, frac, seed) else {
            // only fractions that round to an empty side are refused
            let v = (n as f64 * frac).round() as usize;
            prop_assert!(v == 0 || v >= n);
            return Ok(());
        };
        prop_assert_eq!(train.len() + val.len(), n);
        prop_assert_eq!(val.len(), (n as f64 * frac).round() as usize);
        let a: HashSet<usize> = (0..train.len()).map(|i| tag(&train, i)).collect();
        let b: HashSet<usize> = (0..val.len()).map(|i| tag(&val, i)).collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.len() + b.len(), n);
        for i in 0..val.len() {
            prop_assert_eq!(val.label(i), tag(&val, i) % 10);
        }
        let (train2, val2) = split_train_val(&d, frac, seed).unwrap();
        prop_assert_eq!(train2.pixels(0), train.pixels(0));
        prop_assert_eq!(val2.labels(), val.labels());
    }

    #[test]
    fn idx_bytes_round_trip(n in 1usize..50, rows in 1usize..6, cols in 1usize..6, fill in any::<u8>()) {
        let pixels: Vec<u8> = (0..n * rows * cols).map(|i| (i as u8).wrapping_mul(31).wrapping_add(fill)).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let d = Dataset::new([1, rows, cols], pixels, labels, Split::Train).unwrap();
        let (ib, lb) = (encode_idx_images(&d), encode_idx_labels(&d));
        let (pn, pr, pc, body) = parse_idx_images(&ib).unwrap();
        prop_assert_eq!((pn, pr, pc), (n, rows, cols));
        let back = Dataset::new([1, pr, pc], body.to_vec(), parse_idx_labels(&lb).unwrap().to_vec(), Split::Train).unwrap();
        prop_assert_eq!(encode_idx_images(&back), ib);
        prop_assert_eq!(encode_idx_labels(&back), lb);
    }
}

#[test]
fn real_mnist_reencodes_byte_for_byte() {
    let Some(dir) = mnist_dir() else {
        eprintln!("MNIST not found, skipping");
        return;
    };
    let (train, test) = load_mnist_dir(&dir).unwrap();
    assert_eq!((train.len(), test.len()), (60_000, 10_000));
    assert_eq!(train.image_shape(), [1, 28, 28]);
    assert!(train.labels().iter().all(|&l| l < 10));
    let raw_images = std::fs::read(dir.join("t10k-images-idx3-ubyte")).unwrap();
    let raw_labels = std::fs::read(dir.join("t10k-labels-idx1-ubyte")).unwrap();
    assert_eq!(encode_idx_images(&test), raw_images);
    assert_eq!(encode_idx_labels(&test), raw_labels);

    let tmp = tempfile::tempdir().unwrap();
    let (ip, lp) = (tmp.path().join("i"), tmp.path().join("l"));
    write_mnist_idx(&test, &ip, &lp).unwrap();
    assert_eq!(std::fs::read(&ip).unwrap(), raw_images);
    assert_eq!(load_mnist_idx(&ip, &lp).unwrap().labels(), test.labels());
}

#[test]
fn malformed_idx_is_rejected() {
    let d = tagged(3);
    let (ib, lb) = (encode_idx_images(&d), encode_idx_labels(&d));
    assert!(matches!(
        parse_idx_images(&lb),
        Err(Error::WrongMagic { .. })
    ));
    assert!(matches!(
        parse_idx_labels(&ib),
        Err(Error::WrongMagic { .. })
    ));
    for cut in 0..ib.len() {
        assert!(parse_idx_images(&ib[..cut]).is_err(), "cut at {cut}");
    }
    for cut in 0..lb.len() {
        assert!(parse_idx_labels(&lb[..cut]).is_err(), "cut at {cut}");
    }
    let mut extra = ib.clone();
    extra.push(0);
    assert!(parse_idx_images(&extra).is_err());

    let tmp = tempfile::tempdir().unwrap();
    let (ip, lp) = (tmp.path().join("i"), tmp.path().join("l"));
    std::fs::write(&ip, &ib).unwrap();
    std::fs::write(&lp, encode_idx_labels(&tagged(4))).unwrap();
    assert!(load_mnist_idx(&ip, &lp).is_err(), "count mismatch");
    assert!(load_mnist_dir(tmp.path().join("missing")).is_err());
    assert!(load_mnist_dir(tmp.path()).is_err());
}

fn cifar_record(label: u8, seed: u8) -> Vec<u8> {
    let mut r = vec![label];
    r.extend((0..CIFAR_RECORD - 1).map(|i| (i as u8).wrapping_add(seed)));
    r
}

#[test]
fn cifar_records_parse_and_load() {
    let buf: Vec<u8> = (0..4).flat_map(|i| cifar_record(i * 3 % 10, i)).collect();
    let (pixels, labels) = parse_cifar10(&buf).unwrap();
    assert_eq!(labels, [0, 3, 6, 9]);
    assert_eq!(pixels.len(), 4 * 3072);
    assert_eq!(&pixels[3072..3075], &[1, 2, 3]);
    assert!(parse_cifar10(&buf[..buf.len() - 1]).is_err());
    assert!(parse_cifar10(&cifar_record(10, 0)).is_err());

    let tmp = tempfile::tempdir().unwrap();
    let sub = tmp.path().join("cifar-10-batches-bin");
    std::fs::create_dir(&sub).unwrap();
    for i in 1..=5u8 {
        std::fs::write(sub.join(format!("data_batch_{i}.bin")), cifar_record(i, i)).unwrap();
    }
    std::fs::write(
        sub.join("test_batch.bin"),
        [cifar_record(0, 0), cifar_record(1, 1)].concat(),
    )
    .unwrap();
    let (train, test) = load_cifar_dir(tmp.path()).unwrap();
    assert_eq!(train.labels(), [1, 2, 3, 4, 5]);
    assert_eq!(test.len(), 2);
    assert_eq!(train.image_shape(), [3, 32, 32]);
    assert_eq!(train.image(0).shape(), &[3, 32, 32]);

    std::fs::remove_file(sub.join("data_batch_3.bin")).unwrap();
    assert!(load_cifar_dir(tmp.path()).is_err());
}

#[test]
fn bad_split_fractions() {
    let d = tagged(10);
    for f in [0.0, 1.0, -0.1, f64::NAN, 0.01] {
        assert!(split_train_val(&d, f, 0).is_err(), "{f}");
    }
}
