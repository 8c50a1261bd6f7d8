use std::io::Write;

use nyscluster::bench::{kmeans_seed, landmark_seed, run_experiment, ExperimentSpec};
use nyscluster::datagen::{fingerprint, read_csv, read_libsvm, write_csv, Shape, SyntheticSpec};
use nyscluster::embedding::{cluster_embedding, exact_embedding, nystrom_embedding};
use nyscluster::{
    build_dense_kernel, build_nystrom_factors, f_score, largest_principal_angle, nmi,
    proposed_nystrom_sc, sample_landmarks_uniform, DataMatrix, KMeansConfig, KernelConfig, Method,
    NystromOptions, RankPolicy,
};
use proptest::prelude::*;

fn run_nystrom(
    data: &DataMatrix,
    method: Method,
    m: usize,
    sigma: f64,
    k: usize,
    seed: u64,
) -> Vec<usize> {
    let idx = sample_landmarks_uniform(data.n(), m, landmark_seed(seed, m, 0)).unwrap();
    let f = build_nystrom_factors(data, &idx, &KernelConfig::new(sigma).unwrap()).unwrap();
    let policy = RankPolicy::new(1e-2, k).unwrap();
    let emb = nystrom_embedding(method, &f, k, &policy, &NystromOptions::default()).unwrap();
    cluster_embedding(&emb, k, &KMeansConfig::new(kmeans_seed(seed, m, 0)))
        .unwrap()
        .labels
}

#[test]
fn proposed_separates_blobs_with_forty_landmarks() {
    let data = SyntheticSpec::new(Shape::Blobs, 3000, 1)
        .generate()
        .unwrap();
    let idx = sample_landmarks_uniform(data.n(), 40, 9).unwrap();
    let f = build_nystrom_factors(&data, &idx, &KernelConfig::new(0.2).unwrap()).unwrap();
    let out = proposed_nystrom_sc(
        &f,
        3,
        &RankPolicy::new(1e-2, 3).unwrap(),
        &NystromOptions::default(),
        &KMeansConfig::new(3),
    )
    .unwrap();
    let truth = data.labels().unwrap();
    assert!(f_score(truth, &out.clustering.labels, 3).unwrap() >= 0.99);
    assert!(nmi(truth, &out.clustering.labels).unwrap() >= 0.95);
}

#[test]
fn csv_file_gives_the_same_clustering_as_memory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("moons.csv");
    let data = SyntheticSpec::new(Shape::Moons, 1500, 4)
        .generate()
        .unwrap();
    write_csv(&data, &path).unwrap();
    let back = read_csv(&path).unwrap();
    assert_eq!(fingerprint(&back), fingerprint(&data));
    assert_eq!(
        run_nystrom(&data, Method::Proposed, 60, 0.2, 2, 5),
        run_nystrom(&back, Method::Proposed, 60, 0.2, 2, 5)
    );
}

#[test]
fn libsvm_input_clusters_two_groups() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.libsvm");
    let mut file = std::fs::File::create(&path).unwrap();
    for i in 0..60 {
        let (label, col) = if i % 2 == 0 { ("+1", 1) } else { ("-1", 3) };
        writeln!(
            file,
            "{label} {col}:1 {}:{}",
            col + 1,
            0.01 * (i % 5) as f64
        )
        .unwrap();
    }
    drop(file);
    let data = read_libsvm(&path).unwrap();
    assert_eq!((data.n(), data.d(), data.num_classes()), (60, 4, Some(2)));
    for method in [Method::Proposed, Method::Fowlkes, Method::Li] {
        let labels = run_nystrom(&data, method, 10, 0.5, 2, 0);
        assert_eq!(
            f_score(data.labels().unwrap(), &labels, 2).unwrap(),
            1.0,
            "{method}"
        );
    }
}

#[test]
fn every_landmark_recovers_the_exact_subspace() {
    let data = SyntheticSpec::new(Shape::Blobs, 240, 2).generate().unwrap();
    let cfg = KernelConfig::new(1.0).unwrap();
    let exact = exact_embedding(&build_dense_kernel(&data, &cfg).unwrap(), 3).unwrap();
    let all: Vec<usize> = (0..data.n()).collect();
    let f = build_nystrom_factors(&data, &all, &cfg).unwrap();
    let policy = RankPolicy::new(f64::MIN_POSITIVE, 3).unwrap();
    for method in [Method::Proposed, Method::Fowlkes, Method::Li] {
        let emb = nystrom_embedding(method, &f, 3, &policy, &NystromOptions::default()).unwrap();
        let angle = largest_principal_angle(&emb.orthonormal_basis(), &exact.u).unwrap();
        assert!(angle <= 1e-6, "{method}: {angle}");
    }
}

#[test]
fn experiment_records_are_reproducible() {
    let data = SyntheticSpec::new(Shape::Circles, 1200, 0)
        .generate()
        .unwrap();
    let mut spec = ExperimentSpec::new(vec![Method::Li, Method::Proposed], vec![30, 60], 0.2, 2);
    spec.trials = 3;
    spec.base_seed = 11;
    let a = run_experiment(&data, &spec).unwrap();
    spec.parallel = true;
    let b = run_experiment(&data, &spec).unwrap();
    let strip = |r: &nyscluster::bench::ExperimentResult| {
        r.records
            .iter()
            .map(|x| x.without_timing())
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.records.len(), 2 * 2 * 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // Scaling points and bandwidth by a power of two leaves every kernel
    // entry bit-identical, so the whole pipeline must agree exactly.
    #[test]
    fn power_of_two_rescaling_is_invisible(exp in -3i32..4, seed in 0u64..1000) {
        let data = SyntheticSpec::new(Shape::Blobs, 400, seed).generate().unwrap();
        let c = 2f64.powi(exp);
        let scaled = DataMatrix::new(
            data.values().iter().map(|v| v * c).collect(),
            data.n(),
            data.d(),
            data.labels().map(<[usize]>::to_vec),
        )
        .unwrap();
        prop_assert_eq!(
            run_nystrom(&data, Method::Proposed, 30, 0.4, 3, seed),
            run_nystrom(&scaled, Method::Proposed, 30, 0.4 * c, 3, seed)
        );
    }
}
