//! Loaders on crafted on-disk fixtures, and the synthetic generators.

use std::fs;
use std::path::Path;

use hebbnet::data::{
    encode_idx_images, encode_idx_labels, load_cifar10, load_mnist_idx, synth_gaussian,
    synth_mixture, IdxImages, SplitLimits, CIFAR_RECORD_LEN,
};
use hebbnet::oracle::covariance;
use hebbnet::{Error, Tensor};

const CIFAR_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];

/// Full-size CIFAR-10 batches of zero records, except the first two train
/// records (red plane constant 0 and 255, other planes 51) and the first
/// validation record (label 3, red 102).
fn write_cifar(dir: &Path) {
    for name in CIFAR_FILES {
        let mut bytes = vec![0u8; 10_000 * CIFAR_RECORD_LEN];
        if name == "data_batch_1.bin" {
            for (r, red) in [(0usize, 0u8), (1, 255)] {
                let rec = &mut bytes[r * CIFAR_RECORD_LEN..(r + 1) * CIFAR_RECORD_LEN];
                rec[0] = r as u8 + 1;
                rec[1..1025].fill(red);
                rec[1025..].fill(51);
            }
        }
        if name == "data_batch_5.bin" {
            // the validation split is the last 10000 training records
            bytes[0] = 3;
            bytes[1..1025].fill(102);
        }
        fs::write(dir.join(name), bytes).unwrap();
    }
}

#[test]
fn cifar_fixture_standardizes_with_train_statistics() {
    let dir = tempfile::tempdir().unwrap();
    write_cifar(dir.path());
    let limits = SplitLimits {
        train: 2,
        val: 1,
        test: 3,
    };
    let d = load_cifar10(dir.path(), Some(limits)).unwrap();
    assert_eq!((d.train.len(), d.val.len(), d.test.len()), (2, 1, 3));
    assert_eq!(d.train.labels, vec![1, 2]);
    assert_eq!(d.val.labels, vec![3]);
    assert_eq!(d.input_shape(), [3, 32, 32]);
    // red: values 0 and 1, mean 0.5, std 0.5; green/blue constant, std falls back to 1
    assert_eq!(d.normalization.mean[0], 0.5);
    assert_eq!(d.normalization.std[0], 0.5);
    assert_eq!(d.normalization.std[1], 1.0);
    assert_eq!(d.train.image(0)[0], -1.0);
    assert_eq!(d.train.image(1)[0], 1.0);
    assert!(d.train.image(0)[1024].abs() < 1e-12);
    assert!((d.val.image(0)[0] - (0.4 - 0.5) / 0.5).abs() < 1e-12);
    assert!((d.test.image(0)[2000] + 0.2).abs() < 1e-12);
}

#[test]
fn cifar_truncated_file_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    write_cifar(dir.path());
    fs::write(
        dir.path().join("test_batch.bin"),
        vec![0u8; CIFAR_RECORD_LEN * 3],
    )
    .unwrap();
    assert!(matches!(
        load_cifar10(dir.path(), None),
        Err(Error::Format { .. })
    ));
}

fn write_mnist(dir: &Path, train: usize, test: usize) {
    let imgs = |n: usize, offset: u8| IdxImages {
        rows: 28,
        cols: 28,
        pixels: (0..n * 784)
            .map(|i| ((i / 784) as u8).wrapping_add(offset).wrapping_mul(5))
            .collect(),
    };
    let labels = |n: usize| (0..n).map(|i| (i % 10) as u8).collect::<Vec<u8>>();
    fs::write(
        dir.join("train-images-idx3-ubyte"),
        encode_idx_images(&imgs(train, 0)),
    )
    .unwrap();
    fs::write(
        dir.join("train-labels-idx1-ubyte"),
        encode_idx_labels(&labels(train)),
    )
    .unwrap();
    fs::write(
        dir.join("t10k-images-idx3-ubyte"),
        encode_idx_images(&imgs(test, 40)),
    )
    .unwrap();
    fs::write(
        dir.join("t10k-labels-idx1-ubyte"),
        encode_idx_labels(&labels(test)),
    )
    .unwrap();
}

#[test]
fn mnist_holds_out_the_last_sixth() {
    let dir = tempfile::tempdir().unwrap();
    write_mnist(dir.path(), 12, 3);
    let d = load_mnist_idx(dir.path(), None).unwrap();
    assert_eq!((d.train.len(), d.val.len(), d.test.len()), (10, 2, 3));
    assert_eq!(d.val.labels, vec![0, 1]);
    assert_eq!(d.input_shape(), [1, 28, 28]);
    assert_eq!(d.train.image(3)[0], 15.0 / 255.0);
    assert_eq!(d.test.image(0)[0], 200.0 / 255.0);
}

#[test]
fn single_image_mnist_and_limits() {
    let dir = tempfile::tempdir().unwrap();
    write_mnist(dir.path(), 1, 1);
    let d = load_mnist_idx(dir.path(), None).unwrap();
    assert_eq!((d.train.len(), d.val.len(), d.test.len()), (1, 0, 1));

    write_mnist(dir.path(), 60, 20);
    let limits = SplitLimits {
        train: 7,
        val: usize::MAX,
        test: 0,
    };
    let d = load_mnist_idx(dir.path(), Some(limits)).unwrap();
    assert_eq!((d.train.len(), d.val.len(), d.test.len()), (7, 10, 0));
}

#[test]
fn mnist_label_count_mismatch_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    write_mnist(dir.path(), 6, 2);
    fs::write(
        dir.path().join("t10k-labels-idx1-ubyte"),
        encode_idx_labels(&[1]),
    )
    .unwrap();
    assert!(matches!(
        load_mnist_idx(dir.path(), None),
        Err(Error::Format { .. })
    ));
}

#[test]
fn missing_mnist_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_mnist_idx(dir.path(), None),
        Err(Error::Io { .. })
    ));
}

#[test]
fn gaussian_sample_eigenvalues_are_close_to_the_spec() {
    let cov = hebbnet::data::CovarianceSpec {
        eigenvalues: vec![5.0, 2.0, 1.0, 0.5],
        rotation_seed: Some(3),
    };
    let x = synth_gaussian(4, 50_000, &cov, 8).unwrap();
    let basis = hebbnet::oracle::batch_pca(&x, 4).unwrap();
    for (got, want) in basis.eigenvalues.iter().zip(&cov.eigenvalues) {
        assert!((got / want - 1.0).abs() < 0.05, "{got} vs {want}");
    }
    // and the sample covariance is close to V^T diag(l) V
    let v = cov.eigenvectors();
    let c = covariance(&x).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let want: f64 = (0..4)
                .map(|k| cov.eigenvalues[k] * v[k * 4 + i] * v[k * 4 + j])
                .sum();
            assert!(
                (c[i * 4 + j] - want).abs() < 0.1,
                "({i},{j}) {} vs {want}",
                c[i * 4 + j]
            );
        }
    }
}

#[test]
fn mixture_component_means_match_centroids() {
    let centroids = Tensor::from_rows(&[vec![-4.0, 1.0, 0.0], vec![3.0, 3.0, 3.0]]).unwrap();
    let (x, labels) = synth_mixture(&centroids, 0.5, 20_000, 2).unwrap();
    for k in 0..2 {
        let members: Vec<&[f64]> = x
            .rows()
            .zip(&labels)
            .filter(|(_, &l)| l == k)
            .map(|(r, _)| r)
            .collect();
        assert!(members.len() > 9_000);
        for d in 0..3 {
            let mean = members.iter().map(|r| r[d]).sum::<f64>() / members.len() as f64;
            assert!((mean - centroids.row(k)[d]).abs() < 0.02);
        }
    }
}

#[test]
fn generators_are_seeded() {
    let cov = hebbnet::data::CovarianceSpec {
        eigenvalues: vec![1.0, 1.0],
        rotation_seed: None,
    };
    assert_eq!(
        synth_gaussian(2, 10, &cov, 1).unwrap(),
        synth_gaussian(2, 10, &cov, 1).unwrap()
    );
    assert_ne!(
        synth_gaussian(2, 10, &cov, 1).unwrap(),
        synth_gaussian(2, 10, &cov, 2).unwrap()
    );
}
