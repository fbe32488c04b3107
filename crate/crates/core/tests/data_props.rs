use std::collections::HashSet;
use std::io::Write;

use gradcon::data::{
    corrupt, encode_cifar10_bin, encode_idx_images, encode_idx_labels, load_idx_pair, make_fmnist_folds,
    make_one_class_split, parse_cifar10_bin, parse_idx, resize_bilinear, CorruptionKind, CorruptionSpec, IdxData,
    ImageDataset, Provenance,
};
use gradcon::Tensor;
use proptest::prelude::*;

fn labelled(n: usize, seed: u64) -> ImageDataset {
    let labels: Vec<u8> = (0..n).map(|i| ((i as u64 * 7 + seed) % 10) as u8).collect();
    ImageDataset::new(Tensor::zeros(&[n, 1, 2, 2]).unwrap(), labels, Provenance::Synthetic).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn idx_images_round_trip(count in 1usize..4, rows in 1usize..9, cols in 1usize..9, seed in any::<u64>()) {
        let bytes: Vec<u8> = (0..count * rows * cols).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        match parse_idx(&encode_idx_images(count, rows, cols, &bytes)).unwrap() {
            IdxData::Images { count: c, rows: r, cols: w, pixels } => {
                prop_assert_eq!((c, r, w), (count, rows, cols));
                let back: Vec<u8> = pixels.iter().map(|p| (p * 255.0).round() as u8).collect();
                prop_assert_eq!(back, bytes);
            }
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn idx_labels_round_trip(labels in prop::collection::vec(0u8..10, 1..50)) {
        prop_assert_eq!(parse_idx(&encode_idx_labels(&labels)).unwrap(), IdxData::Labels(labels));
    }

    #[test]
    fn idx_truncation_always_errors(labels in prop::collection::vec(0u8..10, 1..20), cut in 1usize..8) {
        let bytes = encode_idx_labels(&labels);
        let cut = cut.min(bytes.len());
        prop_assert!(parse_idx(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn cifar_round_trip(records in prop::collection::vec((0u8..10, any::<u8>(), any::<u8>()), 1..4)) {
        let mut bytes = Vec::new();
        for (label, a, b) in &records {
            bytes.push(*label);
            bytes.extend((0..3072).map(|i| if i % 3 == 0 { *a } else { b.wrapping_add(i as u8) }));
        }
        let ds = parse_cifar10_bin(&bytes).unwrap();
        prop_assert_eq!(ds.len(), records.len());
        prop_assert_eq!(encode_cifar10_bin(&ds).unwrap(), bytes);
    }

    #[test]
    fn one_class_split_invariants(n_train in 60usize..300, n_test in 40usize..200, class in 0u8..10, seed in any::<u64>()) {
        let (tr, te) = (labelled(n_train, 1), labelled(n_test, 2));
        let s = make_one_class_split(&tr, &te, class, seed).unwrap();
        prop_assert_eq!(&s, &make_one_class_split(&tr, &te, class, seed).unwrap());
        let pool = tr.indices_of_class(class).len();
        prop_assert_eq!(s.train.len() + s.val.len(), pool);
        prop_assert_eq!(s.val.len(), (pool as f64 * 0.1).round() as usize);
        prop_assert_eq!(s.test_out.len(), s.test_in.len());
        let train: HashSet<_> = s.train.iter().collect();
        prop_assert!(s.val.iter().all(|i| !train.contains(i)));
        let tin: HashSet<_> = s.test_in.iter().collect();
        prop_assert!(s.test_out.iter().all(|i| !tin.contains(i)));
        prop_assert_eq!(s.test_out.iter().collect::<HashSet<_>>().len(), s.test_out.len());
        prop_assert!(s.test_out.iter().all(|&i| te.labels()[i] != class));
    }

    #[test]
    fn folds_partition(n in 200usize..600, class in 0u8..10, ratio_step in 1usize..6, seed in any::<u64>()) {
        let ds = labelled(n, 3);
        let ratio = ratio_step as f64 / 10.0;
        let folds = make_fmnist_folds(&ds, class, 5, ratio, seed).unwrap();
        let mut seen = HashSet::new();
        for s in &folds {
            for i in &s.test_in {
                prop_assert!(seen.insert(*i));
            }
            let expect = (s.test_in.len() as f64 * ratio / (1.0 - ratio)).round() as usize;
            prop_assert_eq!(s.test_out.len(), expect);
            let all: HashSet<_> = s.train.iter().chain(&s.val).chain(&s.test_in).collect();
            prop_assert_eq!(all.len(), s.train.len() + s.val.len() + s.test_in.len());
        }
        prop_assert_eq!(seen.len(), ds.indices_of_class(class).len());
    }

    #[test]
    fn resize_stays_within_input_range(values in prop::collection::vec(0f32..=1.0, 28 * 28)) {
        let img = Tensor::new(&[1, 28, 28], values.clone()).unwrap();
        let out = resize_bilinear(&img, 32, 32).unwrap();
        let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
    }

    #[test]
    fn corruption_keeps_unit_range(values in prop::collection::vec(0f32..=1.0, 3 * 8 * 8), level in 1u8..=5) {
        let img = Tensor::new(&[3, 8, 8], values).unwrap();
        for kind in CorruptionKind::ALL {
            let out = corrupt(&img, CorruptionSpec::new(kind, level).unwrap()).unwrap();
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn mnist_class_one_outliers_match_inliers() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-subset/");
    let train = load_idx_pair(
        format!("{root}train-images-idx3-ubyte.gz").as_ref(),
        format!("{root}train-labels-idx1-ubyte.gz").as_ref(),
        32,
        Provenance::Mnist,
    )
    .unwrap();
    let test = load_idx_pair(
        format!("{root}t10k-images-idx3-ubyte.gz").as_ref(),
        format!("{root}t10k-labels-idx1-ubyte.gz").as_ref(),
        32,
        Provenance::Mnist,
    )
    .unwrap();
    assert_eq!(test.images().shape(), &[2000, 1, 32, 32]);
    let s = make_one_class_split(&train, &test, 1, 0).unwrap();
    assert_eq!(s.test_in.len(), test.indices_of_class(1).len());
    assert_eq!(s.test_out.len(), s.test_in.len());
}

#[test]
fn gzip_and_plain_idx_agree() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..2 * 28 * 28).map(|i| (i % 251) as u8).collect();
    let images = encode_idx_images(2, 28, 28, &pixels);
    let labels = encode_idx_labels(&[4, 9]);
    std::fs::write(dir.path().join("im"), &images).unwrap();
    std::fs::write(dir.path().join("lb"), &labels).unwrap();
    let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
    gz.write_all(&images).unwrap();
    std::fs::write(dir.path().join("im.gz"), gz.finish().unwrap()).unwrap();
    let plain = load_idx_pair(&dir.path().join("im"), &dir.path().join("lb"), 32, Provenance::Mnist).unwrap();
    let zipped = load_idx_pair(&dir.path().join("im.gz"), &dir.path().join("lb"), 32, Provenance::Mnist).unwrap();
    assert_eq!(plain, zipped);
    assert_eq!(plain.labels(), &[4, 9]);
}
