//! File-format and split behavior: exact CSV round-trips, line-anchored
//! parse failures, header tolerance, and split guarantees.

use std::fs;
use std::path::Path;

use crowdsparse::data::{load_features_csv, load_votes_csv, Dataset, SplitSpec};
use crowdsparse_testkit as oracle;

fn write(path: &Path, content: &str) {
    fs::write(path, content).unwrap();
}

#[test]
fn csv_round_trip_reproduces_everything_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("features.csv");
    let v = dir.path().join("votes.csv");
    let l = dir.path().join("labels.csv");
    for seed in 0..5u64 {
        let ds = oracle::random_dataset(seed, 40, 3, 4);
        ds.write_csv(&f, &v, Some(&l)).unwrap();
        let back = Dataset::load_csv(&f, &v, Some(&l)).unwrap();
        assert_eq!(ds.features(), back.features(), "seed {seed}");
        assert_eq!(ds.available(), back.available(), "seed {seed}");
        for i in 0..ds.n() {
            for k in 0..ds.d() {
                assert_eq!(ds.vote(i, k), back.vote(i, k), "seed {seed}");
            }
        }
        assert_eq!(ds.true_labels(), back.true_labels(), "seed {seed}");
    }
}

#[test]
fn awkward_floats_survive_the_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("features.csv");
    let v = dir.path().join("votes.csv");
    let features = ndarray::array![[1.0 / 3.0, 1e-300], [f64::MAX, -2.0 / 7.0]];
    let votes = ndarray::array![[1], [0]];
    let ds = Dataset::new_complete(features.clone(), votes, None).unwrap();
    ds.write_csv(&f, &v, None).unwrap();
    let back = Dataset::load_csv(&f, &v, None).unwrap();
    for (a, b) in features.iter().zip(back.features().iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn header_rows_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("features.csv");
    let v = dir.path().join("votes.csv");
    write(&f, "x1,x2\n0.5,1.25\n-1.0,2.0\n");
    write(&v, "rater_a,rater_b\n1,0\n,1\n");
    let ds = Dataset::load_csv(&f, &v, None).unwrap();
    assert_eq!(ds.n(), 2);
    assert_eq!(ds.k(), 2);
    assert_eq!(ds.vote(0, 0), Some(1));
    assert_eq!(ds.vote(1, 0), None);
    assert_eq!(ds.vote(1, 1), Some(1));
}

#[test]
fn parse_errors_point_at_the_offending_line() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("features.csv");
    let v = dir.path().join("votes.csv");

    write(&f, "0.5,1.0\n0.25,oops\n");
    write(&v, "1\n0\n");
    let err = Dataset::load_csv(&f, &v, None).unwrap_err().to_string();
    assert!(err.contains("features.csv:2"), "{err}");

    write(&f, "0.5,1.0\n0.25,1.5\n");
    write(&v, "1\n2\n");
    let err = Dataset::load_csv(&f, &v, None).unwrap_err().to_string();
    assert!(err.contains("votes.csv:2"), "{err}");

    write(&v, "1\n\u{20},\n");
    let err = Dataset::load_csv(&f, &v, None).unwrap_err().to_string();
    assert!(err.contains("votes.csv:2"), "{err}");

    // Ragged feature rows.
    write(&f, "0.5,1.0\n0.25\n");
    write(&v, "1\n0\n");
    let err = Dataset::load_csv(&f, &v, None).unwrap_err().to_string();
    assert!(err.contains("features.csv:2"), "{err}");
}

#[test]
fn row_count_mismatches_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("features.csv");
    let v = dir.path().join("votes.csv");
    let l = dir.path().join("labels.csv");
    write(&f, "0.5\n1.5\n");
    write(&v, "1\n");
    assert!(Dataset::load_csv(&f, &v, None).is_err());
    write(&v, "1\n0\n");
    write(&l, "1\n");
    assert!(Dataset::load_csv(&f, &v, Some(&l)).is_err());
}

#[test]
fn missing_file_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("features.csv");
    let v = dir.path().join("nope.csv");
    write(&f, "0.5\n");
    let err = Dataset::load_csv(&f, &v, None).unwrap_err().to_string();
    assert!(err.contains("nope.csv"), "{err}");
}

#[test]
fn standalone_loaders_allow_empty_vote_rows() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("features.csv");
    let v = dir.path().join("votes.csv");
    write(&f, "0.5,1.0\n0.25,0.75\n");
    write(&v, ",\n1,0\n");
    let features = load_features_csv(&f).unwrap();
    assert_eq!(features.dim(), (2, 2));
    let (votes, available) = load_votes_csv(&v).unwrap();
    assert!(!available[(0, 0)] && !available[(0, 1)]);
    assert!(available[(1, 0)]);
    assert_eq!(votes[(1, 0)], 1);
    // The Dataset constructor still rejects vote-free units.
    assert!(Dataset::load_csv(&f, &v, None).is_err());
}

#[test]
fn split_partitions_without_overlap() {
    let ds = oracle::random_dataset(3, 100, 2, 3);
    let spec = SplitSpec::new(0.3, 42);
    let (train, test) = ds.split(&spec).unwrap();
    assert_eq!(train.n(), 70);
    assert_eq!(test.n(), 30);
    // Feature rows must cover the original multiset exactly.
    let mut seen: Vec<String> = Vec::new();
    for part in [&train, &test] {
        for i in 0..part.n() {
            seen.push(format!("{:?}", part.feature_row(i).to_vec()));
        }
    }
    let mut orig: Vec<String> = (0..ds.n())
        .map(|i| format!("{:?}", ds.feature_row(i).to_vec()))
        .collect();
    seen.sort();
    orig.sort();
    assert_eq!(seen, orig);
}

#[test]
fn split_is_seed_deterministic_and_seed_sensitive() {
    let ds = oracle::random_dataset(4, 60, 2, 3);
    let (a_train, a_test) = ds.split(&SplitSpec::new(0.25, 7)).unwrap();
    let (b_train, b_test) = ds.split(&SplitSpec::new(0.25, 7)).unwrap();
    assert_eq!(a_train.features(), b_train.features());
    assert_eq!(a_test.features(), b_test.features());
    let (c_train, _) = ds.split(&SplitSpec::new(0.25, 8)).unwrap();
    assert_ne!(a_train.features(), c_train.features());
}

#[test]
fn stratified_split_balances_majority_classes() {
    // 80 units leaning 1, 20 leaning 0; a 25% stratified test set should
    // carry 20 of the former and 5 of the latter.
    let mut votes = ndarray::Array2::zeros((100, 1));
    for i in 0..80 {
        votes[(i, 0)] = 1;
    }
    let features = ndarray::Array2::from_shape_fn((100, 1), |(i, _)| i as f64);
    let ds = Dataset::new_complete(features, votes, None).unwrap();
    let mut spec = SplitSpec::new(0.25, 11);
    spec.stratify_on_majority = true;
    let (_, test) = ds.split(&spec).unwrap();
    let ones = (0..test.n()).filter(|&i| test.vote(i, 0) == Some(1)).count();
    assert_eq!(test.n(), 25);
    assert_eq!(ones, 20);
}

#[test]
fn labels_follow_their_units_through_splits() {
    let ds = oracle::random_dataset(9, 50, 2, 2);
    let (train, test) = ds.split(&SplitSpec::new(0.2, 3)).unwrap();
    // Re-locate each test unit in the original by its feature row and check
    // the label moved with it.
    let labels = ds.true_labels().unwrap();
    for part in [&train, &test] {
        let part_labels = part.true_labels().unwrap();
        for i in 0..part.n() {
            let row = part.feature_row(i);
            let j = (0..ds.n())
                .find(|&j| ds.feature_row(j) == row)
                .expect("row present in original");
            assert_eq!(part_labels[i], labels[j]);
        }
    }
}
