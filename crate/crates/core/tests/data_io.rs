use std::io::Write;
use std::path::{Path, PathBuf};

use proptest::prelude::*;

use spherical::data::{
    load_mnist, random_split, split_indices, synthetic_categorical, zipf_probs, MnistFiles, SplitSpec, SyntheticSpec,
};
use spherical::Error;

fn write_file(dir: &Path, name: &str, header: &[u32], body: &[u8]) -> PathBuf {
    let p = dir.join(name);
    let mut f = std::fs::File::create(&p).unwrap();
    for v in header {
        f.write_all(&v.to_be_bytes()).unwrap();
    }
    f.write_all(body).unwrap();
    p
}

fn tiny_mnist(dir: &Path, prefix: &str, n: u32) -> (PathBuf, PathBuf) {
    let pixels: Vec<u8> = (0..n * 784).map(|i| (i * 7 % 256) as u8).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    (
        write_file(dir, &format!("{prefix}-images-idx3-ubyte"), &[0x0803, n, 28, 28], &pixels),
        write_file(dir, &format!("{prefix}-labels-idx1-ubyte"), &[0x0801, n], &labels),
    )
}

#[test]
fn loading_twice_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = tiny_mnist(dir.path(), "train", 20);
    let a = load_mnist(&img, &lbl).unwrap();
    let b = load_mnist(&img, &lbl).unwrap();
    assert_eq!(a.labels(), b.labels());
    assert!(a.features().iter().zip(b.features()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.input_dim(), 784);
    assert_eq!(a.num_classes(), 10);
    assert!(a.features().iter().all(|&x| (0.0..=1.0).contains(&x)));
}

#[test]
fn standard_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let files = MnistFiles::in_dir(dir.path());
    assert!(!files.exist());
    tiny_mnist(dir.path(), "train", 12);
    let (img, lbl) = tiny_mnist(dir.path(), "t10k", 5);
    assert!(img.ends_with("t10k-images-idx3-ubyte") && lbl.ends_with("t10k-labels-idx1-ubyte"));
    assert!(files.exist());
    let (train, test) = files.load().unwrap();
    assert_eq!((train.len(), test.len()), (12, 5));
}

#[test]
fn corrupt_files_report_where() {
    let dir = tempfile::tempdir().unwrap();
    let (img, _) = tiny_mnist(dir.path(), "train", 3);
    let bad_magic = write_file(dir.path(), "bad", &[0x0802, 3, 28, 28], &[0; 3 * 784]);
    let short = write_file(dir.path(), "short", &[0x0803, 3, 28, 28], &[0; 100]);
    let few_labels = write_file(dir.path(), "lbl", &[0x0801, 2], &[1, 2]);
    for (images, labels) in [(&bad_magic, &few_labels), (&short, &few_labels), (&img, &few_labels)] {
        match load_mnist(images, labels) {
            Err(Error::Parse { .. }) => {}
            other => panic!("expected a parse error, got {other:?}"),
        }
    }
    assert!(matches!(load_mnist(&dir.path().join("missing"), &few_labels), Err(Error::Io { .. })));
}

#[test]
fn zipf_frequencies_within_three_sigma() {
    let n = 100_000;
    let data = synthetic_categorical(&SyntheticSpec {
        num_classes: 50,
        input_dim: 1,
        n,
        zipf_exponent: 1.0,
        separation: 0.0,
        seed: 3,
    })
    .unwrap();
    for (k, (&p, count)) in zipf_probs(50, 1.0).probs().iter().zip(data.class_counts()).enumerate() {
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let dev = (count as f64 - n as f64 * p).abs();
        assert!(dev <= 3.0 * sigma + 1.0, "class {k}: {count} vs {}", n as f64 * p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn splits_are_disjoint_and_sized(n in 3usize..500, a in 1usize..200, b in 1usize..200, c in 1usize..200, seed in any::<u64>()) {
        let spec = SplitSpec { train_n: a, valid_n: b, test_n: c, seed };
        match split_indices(n, &spec) {
            Ok((tr, va, te)) => {
                prop_assert!(a + b + c <= n);
                prop_assert_eq!((tr.len(), va.len(), te.len()), (a, b, c));
                let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
                all.sort_unstable();
                all.dedup();
                prop_assert_eq!(all.len(), a + b + c);
                prop_assert!(all.iter().all(|&i| i < n));
                prop_assert_eq!(split_indices(n, &spec).unwrap(), (tr, va, te));
            }
            Err(_) => prop_assert!(a + b + c > n),
        }
    }
}

#[test]
fn random_split_keeps_rows_with_their_labels() {
    let data = synthetic_categorical(&SyntheticSpec {
        num_classes: 5,
        input_dim: 3,
        n: 300,
        zipf_exponent: 0.5,
        separation: 4.0,
        seed: 1,
    })
    .unwrap();
    let spec = SplitSpec { train_n: 100, valid_n: 50, test_n: 50, seed: 9 };
    let (tr, _, _) = random_split(&data, &spec).unwrap();
    let (idx, _, _) = split_indices(data.len(), &spec).unwrap();
    for (row, &src) in idx.iter().enumerate() {
        assert_eq!(tr.labels()[row], data.labels()[src]);
        assert_eq!(tr.features().row(row), data.features().row(src));
    }
}
