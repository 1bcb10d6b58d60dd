mod common;

use std::fs;
use std::io::Write;

use common::random_model;
use dgd::data::{
    load_checkpoint, load_dense_csv, load_mtx, save_checkpoint, split_indices, write_mtx,
    CountMatrix, DenseCsvOptions, ModelBundle, Orientation, SplitSpec,
};
use dgd::model::Profile;
use dgd::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn triplets(
    max_n: usize,
    max_g: usize,
) -> impl Strategy<Value = (usize, usize, Vec<(usize, usize, u64)>)> {
    (1..max_n, 1..max_g).prop_flat_map(|(n, g)| {
        (
            Just(n),
            Just(g),
            prop::collection::vec((0..n, 0..g, 0u64..50), 0..40),
        )
            // Samples without any count are rejected on load, so give each one.
            .prop_map(|(n, g, mut t)| {
                t.extend((0..n).map(|r| (r, r % g, 1)));
                (n, g, t)
            })
    })
}

#[test]
fn tenx_layout_is_transposed() {
    let dir = tempfile::tempdir().unwrap();
    let mtx = dir.path().join("m.mtx");
    // 3 genes × 2 cells.
    fs::write(
        &mtx,
        "%%MatrixMarket matrix coordinate integer general\n3 2 3\n1 1 5\n3 1 1\n2 2 7\n",
    )
    .unwrap();
    let genes = dir.path().join("genes.txt");
    fs::write(&genes, "a\nb\nc\n").unwrap();
    let m = load_mtx(&mtx, Some(&genes), None, Orientation::Auto).unwrap();
    assert_eq!((m.n_samples(), m.n_genes()), (2, 3));
    assert_eq!(m.triplets(), vec![(0, 0, 5), (0, 2, 1), (1, 1, 7)]);
    assert_eq!(m.scale(), &[5.0, 7.0]);
}

#[test]
fn malformed_matrices_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let mtx = dir.path().join("m.mtx");
    fs::write(
        &mtx,
        "%%MatrixMarket matrix coordinate integer general\n2 2 2\n1 1 3\n2 2 -1\n",
    )
    .unwrap();
    match load_mtx(&mtx, None, None, Orientation::SamplesByGenes) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected parse error, got {other:?}"),
    }
    assert!(load_mtx(
        &dir.path().join("missing.mtx"),
        None,
        None,
        Orientation::Auto
    )
    .is_err());
}

#[test]
fn unused_genes_are_masked() {
    let m = CountMatrix::from_triplets(2, 4, &[(0, 1, 2), (1, 3, 4)]).unwrap();
    assert_eq!(m.feature_mask(), &[1, 3]);
    assert_eq!(m.n_modelled(), 2);
    let (values, scale) = m.gather(&[1, 0]);
    assert_eq!(values, vec![0.0, 4.0, 2.0, 0.0]);
    assert_eq!(scale, vec![4.0, 2.0]);
}

#[test]
fn dense_csv_bounds_are_checked() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "0,128,255\n255,0,64").unwrap();
    let opts = DenseCsvOptions {
        rescale_255: true,
        has_header: false,
    };
    let d = load_dense_csv(f.path(), opts).unwrap();
    assert_eq!((d.n_samples(), d.n_features()), (2, 3));
    assert_eq!(d.values()[2], 1.0);
    assert!(load_dense_csv(f.path(), DenseCsvOptions::default()).is_err());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    for (i, profile) in [Profile::Counts, Profile::Binary].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let bundle = ModelBundle {
            model: random_model(profile, 7, &mut rng),
            representations: None,
            feature_mask: (profile == Profile::Counts).then(|| vec![0, 2, 3, 5, 8, 9, 11]),
            label_names: Some(vec!["x".into(), "y".into()]),
            config: serde_json::json!({"seed": 3}),
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&bundle, dir.path()).unwrap();
        let back = load_checkpoint(dir.path(), Some(profile)).unwrap();
        assert_eq!(back, bundle);

        let other = tempfile::tempdir().unwrap();
        save_checkpoint(&back, other.path()).unwrap();
        for f in ["manifest.json", "params.bin"] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(other.path().join(f)).unwrap()
            );
        }
        let wrong = if profile == Profile::Counts {
            Profile::Binary
        } else {
            Profile::Counts
        };
        assert!(matches!(
            load_checkpoint(dir.path(), Some(wrong)),
            Err(Error::ProfileMismatch { .. })
        ));
    }
}

#[test]
fn truncated_parameters_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let bundle = ModelBundle {
        model: random_model(Profile::Binary, 3, &mut rng),
        representations: None,
        feature_mask: None,
        label_names: None,
        config: serde_json::Value::Null,
    };
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&bundle, dir.path()).unwrap();
    let p = dir.path().join("params.bin");
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_checkpoint(dir.path(), None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mtx_write_read_is_idempotent((n, g, t) in triplets(12, 12)) {
        let m = CountMatrix::from_triplets(n, g, &t).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.mtx");
        let b = dir.path().join("b.mtx");
        write_mtx(&a, &m).unwrap();
        let back = load_mtx(&a, None, None, Orientation::SamplesByGenes).unwrap();
        prop_assert_eq!(back.triplets(), m.triplets());
        prop_assert_eq!(back.scale(), m.scale());
        write_mtx(&b, &back).unwrap();
        prop_assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn duplicates_are_summed((n, g, t) in triplets(6, 6)) {
        let m = CountMatrix::from_triplets(n, g, &t).unwrap();
        let mut dense = vec![0u64; n * g];
        for &(r, c, v) in &t {
            dense[r * g + c] += v;
        }
        let mut got = vec![0u64; n * g];
        for (r, c, v) in m.triplets() {
            got[r * g + c] = v;
        }
        prop_assert_eq!(got, dense);
    }

    #[test]
    fn splits_partition_the_samples(n in 0usize..300, seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (train, rest) = (a, (1.0 - a) * b);
        let spec = SplitSpec::new(train, rest, 1.0 - train - rest).unwrap();
        let s = split_indices(n, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let again = split_indices(n, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(again, s);
    }
}
