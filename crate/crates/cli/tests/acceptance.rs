//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Run with `cargo test -p nyscluster-cli --test acceptance`. Positional
//! numbers restrict the run to those criteria. The process fails only when a
//! criterion outside [`KNOWN_RED`] fails.

use std::alloc::{GlobalAlloc, Layout, System};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use nyscluster::analysis::{
    perturbation_report_factored, perturbation_sweep, random_well_posed_instance, sweep_gamma,
    RandomInstance, IDENTITY_MAX_CONDITION,
};
use nyscluster::bench::{run_experiment, timing_profile, ExperimentResult, ExperimentSpec};
use nyscluster::datagen::{read_libsvm, Shape, SyntheticSpec};
use nyscluster::embedding::{
    exact_embedding, low_rank_factor, modified_kernel, nystrom_embedding, unclamped_rank,
};
use nyscluster::kernel::{nystrom_reconstruct, ReconstructionRank};
use nyscluster::kmeans::within_cluster_sse;
use nyscluster::linalg::{full_sym_spectrum, spectral_norm_sym, sym_evd};
use nyscluster::metrics::{f_score_assignment, f_score_brute_force};
use nyscluster::rng::{derive_seed, rng_from_seed};
use nyscluster::{
    build_dense_kernel, build_nystrom_factors, f_score, kmeans, largest_principal_angle, nmi,
    proposed_nystrom_sc, sample_landmarks_uniform, DataMatrix, KMeansConfig, KernelConfig, Method,
    NystromOptions, RankPolicy,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

/// Criteria that are expected to fail; see the README.
const KNOWN_RED: &[usize] = &[6];

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            if new_size >= layout.size() {
                let grow = new_size - layout.size();
                let now = CURRENT.fetch_add(grow, Ordering::Relaxed) + grow;
                PEAK.fetch_max(now, Ordering::Relaxed);
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

/// Resets the peak to the current level and returns that level.
fn reset_peak() -> usize {
    let now = CURRENT.load(Ordering::Relaxed);
    PEAK.store(now, Ordering::Relaxed);
    now
}

type Criterion = (usize, &'static str, fn() -> Verdict);

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Verdict::{Fail, Pass, Skip};

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn mushrooms_path() -> Option<PathBuf> {
    let path = std::env::var_os("NYSCLUSTER_MUSHROOMS")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mushrooms"));
    path.is_file().then_some(path)
}

fn mushrooms() -> Option<&'static DataMatrix> {
    static DATA: OnceLock<Option<DataMatrix>> = OnceLock::new();
    DATA.get_or_init(|| {
        mushrooms_path().map(|p| read_libsvm(&p).expect("unreadable mushrooms file"))
    })
    .as_ref()
}

/// Categorical data of the same size and encoding as mushrooms: 22 one-hot
/// attributes, two classes, each class a mixture of four noisy prototypes.
fn mushrooms_like(seed: u64) -> DataMatrix {
    const CARD: [usize; 22] = [
        6, 4, 10, 2, 9, 2, 2, 2, 12, 2, 5, 4, 4, 9, 9, 1, 4, 3, 5, 9, 6, 7,
    ];
    const PROTOTYPES: usize = 4;
    let (n, d) = (8124, CARD.iter().sum::<usize>());
    let mut rng = rng_from_seed(seed);
    let protos: Vec<Vec<usize>> = (0..2 * PROTOTYPES)
        .map(|_| CARD.iter().map(|&c| rng.random_range(0..c)).collect())
        .collect();
    let mut values = vec![0.0; n * d];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(rng.random::<f64>() >= 0.518);
        let p = &protos[class * PROTOTYPES + rng.random_range(0..PROTOTYPES)];
        let mut offset = 0;
        for (a, &c) in CARD.iter().enumerate() {
            let v = if rng.random::<f64>() < 0.8 {
                p[a]
            } else {
                rng.random_range(0..c)
            };
            values[i * d + offset + v] = 1.0;
            offset += c;
        }
        labels.push(class);
    }
    DataMatrix::new(values, n, d, Some(labels)).unwrap()
}

fn blobs(n: usize, seed: u64) -> DataMatrix {
    SyntheticSpec::new(Shape::Blobs, n, seed)
        .generate()
        .unwrap()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, c) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    s / c as f64
}

fn stat_mean(
    r: &ExperimentResult,
    method: Method,
    m: usize,
    pick: fn(&nyscluster::bench::Aggregate) -> Option<f64>,
) -> f64 {
    r.aggregate(method, m).and_then(pick).unwrap_or(f64::NAN)
}

fn f_mean(a: &nyscluster::bench::Aggregate) -> Option<f64> {
    a.f_score.as_ref().map(|s| s.mean)
}

fn nmi_mean(a: &nyscluster::bench::Aggregate) -> Option<f64> {
    a.nmi.as_ref().map(|s| s.mean)
}

fn l_mean(a: &nyscluster::bench::Aggregate) -> Option<f64> {
    a.rank_l.as_ref().map(|s| s.mean)
}

fn align_mean(a: &nyscluster::bench::Aggregate) -> Option<f64> {
    a.alignment.as_ref().map(|s| s.mean)
}

/// The 100 analysis instances shared by criteria 1, 2 and 11, with the
/// number of rejected ill-posed draws.
fn instances() -> &'static (Vec<RandomInstance>, usize) {
    static INSTANCES: OnceLock<(Vec<RandomInstance>, usize)> = OnceLock::new();
    INSTANCES.get_or_init(|| {
        let mut rejected = 0;
        let list = (0..100u64)
            .map(|i| {
                let (inst, r) = random_well_posed_instance(derive_seed(0, &[i]), 100, 30).unwrap();
                rejected += r;
                inst
            })
            .collect();
        (list, rejected)
    })
}

fn identity_reports() -> &'static Vec<nyscluster::analysis::Theorem1Report> {
    static REPORTS: OnceLock<Vec<nyscluster::analysis::Theorem1Report>> = OnceLock::new();
    REPORTS.get_or_init(|| {
        instances()
            .0
            .iter()
            .flat_map(|inst| inst.theorem1_all_ranks().unwrap())
            .collect()
    })
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let (list, rejected) = instances();
    let reports = identity_reports();
    let worst = reports.iter().map(|r| r.identity_gap).fold(0.0, f64::max);
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-8 && elapsed < 30.0,
        format!(
            "{} instances ({rejected} ill-posed draws rejected), {} (instance, l) pairs, max identity gap {worst:.2e}, {elapsed:.1} s",
            list.len(),
            reports.len()
        ),
    )
}

fn criterion_2() -> Verdict {
    let reports = identity_reports();
    let worst = reports
        .iter()
        .map(|r| r.normalized_error)
        .fold(0.0, f64::max);
    let l1 = reports.iter().filter(|r| r.l == 1).count();
    let gamma_one = instances().0.iter().all(|inst| {
        let w = inst
            .kernel
            .select_rows(inst.indices.iter())
            .select_columns(inst.indices.iter());
        let evd = sym_evd(&w).unwrap();
        unclamped_rank(evd.values.as_slice(), 1.0) == 1
    });
    verdict(
        worst <= 1.0 + 1e-8 && l1 == instances().0.len() && gamma_one,
        format!("max normalized error {worst:.6} over {} pairs, {l1} at l=1, gamma=1 gives l=1: {gamma_one}", reports.len()),
    )
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for shape in [Shape::Blobs, Shape::Moons, Shape::Circles] {
        let data = SyntheticSpec::new(shape, 200, 3).generate().unwrap();
        let k = shape.default_k();
        let cfg = KernelConfig::new(0.2).unwrap();
        let dense = build_dense_kernel(&data, &cfg).unwrap();
        let all: Vec<usize> = (0..data.n()).collect();
        let f = build_nystrom_factors(&data, &all, &cfg).unwrap();
        let (kev, _) = full_sym_spectrum(&dense.k).unwrap();
        let (k_norm, cond) = (kev[0], kev[0] / kev[kev.len() - 1]);
        let recon = spectral_norm_sym(
            &(nystrom_reconstruct(&f, ReconstructionRank::Full).unwrap() - &dense.k),
        )
        .unwrap()
            / k_norm;
        let policy = RankPolicy::new(f64::MIN_POSITIVE, k).unwrap();
        let fac = low_rank_factor(&f, &policy).unwrap();
        let factored =
            spectral_norm_sym(&(&fac.g * fac.g.transpose() - &dense.k)).unwrap() / k_norm;
        ok &= recon <= 1e-10 && factored <= 1e-10;
        let (evals, _) = full_sym_spectrum(&modified_kernel(&dense).unwrap()).unwrap();
        let gap = evals[k - 1] - evals[k];
        let exact = exact_embedding(&dense, k).unwrap();
        let mut angles = Vec::new();
        for method in [Method::Proposed, Method::Fowlkes, Method::Li] {
            let emb =
                nystrom_embedding(method, &f, k, &policy, &NystromOptions::default()).unwrap();
            angles.push(largest_principal_angle(&emb.orthonormal_basis(), &exact.u).unwrap());
        }
        let worst = angles.iter().copied().fold(0.0, f64::max);
        let gated = gap > 1e-8 && cond <= IDENTITY_MAX_CONDITION;
        ok &= gated && worst <= 1e-6;
        notes.push(format!(
            "{shape}: cond(W) {cond:.1e}, recon {recon:.1e}, GG^T {factored:.1e} (l={}), gap {gap:.1e}, max angle {worst:.1e}",
            fac.l
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        ok && elapsed < 10.0,
        format!("{}; {elapsed:.1} s", notes.join("; ")),
    )
}

fn blobs_seed_runs(m: usize) -> &'static Vec<ExperimentResult> {
    static RUNS: OnceLock<Vec<ExperimentResult>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..10u64)
            .map(|seed| {
                let mut spec = ExperimentSpec::new(vec![Method::Proposed], vec![m], 0.2, 3);
                spec.trials = 1;
                spec.base_seed = seed;
                run_experiment(&blobs(10_000, seed), &spec).unwrap()
            })
            .collect()
    })
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let runs = blobs_seed_runs(40);
    let f = mean(
        runs.iter()
            .map(|r| stat_mean(r, Method::Proposed, 40, f_mean)),
    );
    let n = mean(
        runs.iter()
            .map(|r| stat_mean(r, Method::Proposed, 40, nmi_mean)),
    );
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        f >= 0.99 && n >= 0.99 && elapsed < 60.0,
        format!("10 seeds: mean F {f:.4}, mean NMI {n:.4}, {elapsed:.1} s"),
    )
}

fn criterion_5() -> Verdict {
    let data = blobs(10_000, 0);
    let mut ok = true;
    let mut times = Vec::new();
    let mut notes = Vec::new();
    for gamma in [1e-3, 5e-3, 1e-2, 5e-2] {
        let mut spec = ExperimentSpec::new(vec![Method::Proposed], vec![200], 0.2, 3);
        spec.trials = 10;
        spec.gamma = gamma;
        let r = run_experiment(&data, &spec).unwrap();
        let fs: Vec<f64> = r.records.iter().map(|x| x.f_score.unwrap_or(0.0)).collect();
        let min = fs.iter().copied().fold(1.0, f64::min);
        let avg = mean(fs.iter().copied());
        // Two-decimal display of 1.00.
        ok &= if gamma < 5e-2 {
            min >= 0.995
        } else {
            avg >= 0.85
        };
        let a = r.aggregate(Method::Proposed, 200).unwrap();
        let t = a.wall_time_seconds.as_ref().map_or(f64::NAN, |s| s.mean);
        times.push(t);
        notes.push(format!(
            "gamma {gamma:e}: min F {min:.4} mean F {avg:.4} l {:.1} t {t:.3}s",
            l_mean(a).unwrap_or(f64::NAN)
        ));
    }
    let decreasing = times.windows(2).all(|w| w[1] < w[0]);
    verdict(
        ok && decreasing,
        format!("{}; time decreasing: {decreasing}", notes.join("; ")),
    )
}

fn criterion_6() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for shape in [Shape::Moons, Shape::Circles, Shape::Blobs] {
        for m in [40, 80] {
            let mut acc = [[0.0; 2]; 2];
            for seed in 0..10u64 {
                let data = SyntheticSpec::new(shape, 10_000, seed).generate().unwrap();
                let mut spec = ExperimentSpec::new(
                    vec![Method::Proposed, Method::Li],
                    vec![m],
                    0.2,
                    shape.default_k(),
                );
                spec.trials = 1;
                spec.base_seed = seed;
                let r = run_experiment(&data, &spec).unwrap();
                for (i, method) in [Method::Proposed, Method::Li].into_iter().enumerate() {
                    acc[i][0] += stat_mean(&r, method, m, f_mean) / 10.0;
                    acc[i][1] += stat_mean(&r, method, m, nmi_mean) / 10.0;
                }
            }
            let good = acc[0][0] >= acc[1][0] && acc[0][1] >= acc[1][1];
            ok &= good;
            notes.push(format!(
                "{shape} m={m}: F {:.4} vs {:.4}, NMI {:.4} vs {:.4}{}",
                acc[0][0],
                acc[1][0],
                acc[0][1],
                acc[1][1],
                if good { "" } else { " (li ahead)" }
            ));
        }
    }
    let (data, label) = match mushrooms() {
        Some(d) => (d.clone(), "mushrooms"),
        None => (mushrooms_like(0), "mushrooms-scale stand-in"),
    };
    let mut spec = ExperimentSpec::new(vec![Method::Fowlkes, Method::Li], vec![40, 80], 3.5, 2);
    spec.trials = 10;
    spec.alignment = true;
    let r = run_experiment(&data, &spec).unwrap();
    for m in [40, 80] {
        let fw = stat_mean(&r, Method::Fowlkes, m, align_mean);
        let li = stat_mean(&r, Method::Li, m, align_mean);
        ok &= fw >= li;
        notes.push(format!(
            "{label} m={m}: alignment fowlkes {fw:.3} vs li {li:.3}"
        ));
    }
    verdict(ok, notes.join("; "))
}

fn criterion_7() -> Verdict {
    let Some(data) = mushrooms() else {
        return Skip(
            "mushrooms file not found; set NYSCLUSTER_MUSHROOMS or place it at data/mushrooms"
                .into(),
        );
    };
    let mut spec = ExperimentSpec::new(vec![Method::Proposed], vec![40, 80], 3.5, 2);
    spec.trials = 50;
    let r = run_experiment(data, &spec).unwrap();
    let f40 = stat_mean(&r, Method::Proposed, 40, f_mean);
    let n40 = stat_mean(&r, Method::Proposed, 40, nmi_mean);
    let f80 = stat_mean(&r, Method::Proposed, 80, f_mean);
    verdict(
        (f40 - 0.888).abs() <= 0.02 && (n40 - 0.551).abs() <= 0.06 && (f80 - 0.890).abs() <= 0.02,
        format!("m=40: F {f40:.4} NMI {n40:.4}; m=80: F {f80:.4}"),
    )
}

fn mushrooms_kernel() -> Option<&'static DMatrix<f64>> {
    static K: OnceLock<Option<DMatrix<f64>>> = OnceLock::new();
    K.get_or_init(|| {
        mushrooms().map(|d| {
            build_dense_kernel(d, &KernelConfig::new(3.5).unwrap())
                .unwrap()
                .k
        })
    })
    .as_ref()
}

fn criterion_8() -> Verdict {
    let Some(k) = mushrooms_kernel() else {
        return Skip("mushrooms file not found".into());
    };
    let rows = perturbation_sweep(
        k,
        &[40, 80, 160, 320],
        &RankPolicy::new(1e-2, 2).unwrap(),
        10,
        0,
    )
    .unwrap();
    let eta_ok = rows.iter().all(|r| r.mean_eta < 1.0);
    let eta_dec = rows.windows(2).all(|w| w[1].mean_eta < w[0].mean_eta);
    let err_dec = rows
        .windows(2)
        .all(|w| w[1].mean_modkernel_err < w[0].mean_modkernel_err);
    let last = rows.last().map_or(f64::NAN, |r| r.mean_modkernel_err);
    let detail = rows
        .iter()
        .map(|r| {
            format!(
                "m={} eta {:.3} err {:.4}",
                r.m, r.mean_eta, r.mean_modkernel_err
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    verdict(eta_ok && eta_dec && err_dec && last <= 0.05, detail)
}

fn criterion_9() -> Verdict {
    let data = blobs(10_000, 0);
    let mut spec = ExperimentSpec::new(vec![Method::Proposed], vec![40], 0.2, 3);
    spec.trials = 50;
    let r = run_experiment(&data, &spec).unwrap();
    let l = stat_mean(&r, Method::Proposed, 40, l_mean);
    let blobs_ok = (l / 37.9 - 1.0).abs() <= 0.15;
    let blobs_note = format!("blobs m=40: mean l {l:.1} (target 37.9)");
    let Some(k) = mushrooms_kernel() else {
        let note = format!("{blobs_note}; mushrooms part skipped, file not found");
        return if blobs_ok {
            Pass(format!("partial: {note}"))
        } else {
            Fail(note)
        };
    };
    let rows = sweep_gamma(k, 200, &[1e-3, 1e-2], 10, 0).unwrap();
    let (l3, l2) = (rows[0].mean_l, rows[1].mean_l);
    verdict(
        blobs_ok && (l3 / 196.6 - 1.0).abs() <= 0.15 && (l2 / 6.2 - 1.0).abs() <= 0.15,
        format!("{blobs_note}; mushrooms m=200: gamma 1e-3 l {l3:.1} (196.6), gamma 1e-2 l {l2:.1} (6.2)"),
    )
}

fn criterion_10() -> Verdict {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let spec = ExperimentSpec::new(vec![Method::Proposed], vec![], 0.2, 2);
    let moons = |n| SyntheticSpec::new(Shape::Moons, n, 0).generate().unwrap();
    let (small, large) = (moons(40_000), moons(80_000));
    let (m_rows, n_row) = pool.install(|| {
        (
            timing_profile(&small, Method::Proposed, &[100, 200], &spec, 5).unwrap(),
            timing_profile(&large, Method::Proposed, &[100], &spec, 5).unwrap(),
        )
    });
    let base = m_rows[0].median_seconds;
    let m_ratio = m_rows[1].median_seconds / base;
    let n_ratio = n_row[0].median_seconds / base;

    let (n, m, k) = (200_000, 50, 2);
    let data = moons(n);
    let before = reset_peak();
    let start = Instant::now();
    let idx = sample_landmarks_uniform(n, m, 0).unwrap();
    let f = build_nystrom_factors(&data, &idx, &KernelConfig::new(0.2).unwrap()).unwrap();
    let out = proposed_nystrom_sc(
        &f,
        k,
        &RankPolicy::new(1e-2, k).unwrap(),
        &NystromOptions::default(),
        &KMeansConfig::new(0),
    )
    .unwrap();
    let peak = PEAK.load(Ordering::Relaxed) - before;
    let elapsed = start.elapsed().as_secs_f64();
    let quality = f_score(data.labels().unwrap(), &out.clustering.labels, k).unwrap();
    drop((f, out));
    let unit = n * m.max(k) * 8;
    let budget = 6 * unit;
    verdict(
        m_ratio <= 2.5 && n_ratio <= 2.5 && peak <= budget,
        format!(
            "moons n=40k m=100 median {base:.3}s; m x2 ratio {m_ratio:.2}; n x2 ratio {n_ratio:.2}; n=200k m=50 peak {:.1} MB = {:.2} n*m*8 (budget 6, n*n would be {:.0} GB), {elapsed:.1} s, F {quality:.3}",
            peak as f64 / 1e6,
            peak as f64 / unit as f64,
            (n * n * 8) as f64 / 1e9
        ),
    )
}

fn property<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
    .run(&strategy, test)
    .map_err(|e| e.to_string())
}

fn labels(
    k: usize,
    len: std::ops::Range<usize>,
) -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
    (2..=k).prop_flat_map(move |k| {
        len.clone().prop_flat_map(move |n| {
            (
                Just(k),
                prop::collection::vec(0..k, n),
                prop::collection::vec(0..k, n),
            )
        })
    })
}

fn cli_runs_match(args: &[&str], dir: &Path, output: Option<&str>) -> Result<(), String> {
    let run = |tag: &str| -> Result<(Vec<u8>, Option<Vec<u8>>), String> {
        let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        let file = output.map(|name| dir.join(format!("{tag}-{name}")));
        if let Some(f) = &file {
            let flag = if name_is_records(output) {
                "--records"
            } else {
                "--out"
            };
            full.push(flag.into());
            full.push(f.display().to_string());
        }
        let out = Command::new(env!("CARGO_BIN_EXE_nyscluster"))
            .args(&full)
            .env("SOURCE_DATE_EPOCH", "0")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "{args:?} exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr)
            ));
        }
        let body = file
            .map(|f| std::fs::read(f).map_err(|e| e.to_string()))
            .transpose()?;
        Ok((out.stdout, body))
    };
    let (a, b) = (run("a")?, run("b")?);
    let strip = |bytes: &[u8]| -> Vec<serde_json::Value> {
        String::from_utf8_lossy(bytes)
            .lines()
            .map(|l| {
                let mut v: serde_json::Value =
                    serde_json::from_str(l).unwrap_or(serde_json::Value::Null);
                if let Some(o) = v.as_object_mut() {
                    o.retain(|k, _| !k.contains("seconds"));
                }
                v
            })
            .collect()
    };
    let same = if name_is_records(output) {
        strip(a.1.as_deref().unwrap_or_default()) == strip(b.1.as_deref().unwrap_or_default())
    } else if args.contains(&"cluster") {
        strip(&a.0) == strip(&b.0) && a.1 == b.1
    } else {
        a == b
    };
    if same {
        Ok(())
    } else {
        Err(format!("{args:?} differed between runs"))
    }
}

fn name_is_records(output: Option<&str>) -> bool {
    output.is_some_and(|n| n.ends_with(".jsonl"))
}

fn criterion_11() -> Verdict {
    let mut failures = Vec::new();
    let mut check = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };

    check(
        "k-means SSE monotone",
        property(
            64,
            (2usize..6, 10usize..80, 1usize..4, any::<u64>()),
            |(k, n, p, seed)| {
                let mut rng = rng_from_seed(seed);
                let points = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 4.0);
                let res = kmeans(&points, k, &KMeansConfig::new(seed).with_max_iter(50)).unwrap();
                for w in res.sse_history.windows(2) {
                    prop_assert!(
                        w[1] <= w[0] * (1.0 + 1e-12) + 1e-12,
                        "{:?}",
                        res.sse_history
                    );
                }
                prop_assert!(
                    (within_cluster_sse(&points, &res.labels, k) - res.sse).abs()
                        <= 1e-9 * (1.0 + res.sse)
                );
                Ok(())
            },
        ),
    );

    check(
        "metric permutation invariance",
        property(
            128,
            (labels(6, 2..120), any::<u64>()),
            |((k, truth, pred), seed)| {
                let mut rng = rng_from_seed(seed);
                let mut perm: Vec<usize> = (0..k).collect();
                for i in (1..k).rev() {
                    perm.swap(i, rng.random_range(0..=i));
                }
                let relabeled: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
                let mut order: Vec<usize> = (0..truth.len()).collect();
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                let t2: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
                let p2: Vec<usize> = order.iter().map(|&i| pred[i]).collect();
                let f = f_score(&truth, &pred, k).unwrap();
                let n = nmi(&truth, &pred).unwrap();
                for (a, b) in [(&truth, &relabeled), (&t2, &p2)] {
                    prop_assert!((f_score(a, b, k).unwrap() - f).abs() <= 1e-12);
                    prop_assert!((nmi(a, b).unwrap() - n).abs() <= 1e-12);
                }
                Ok(())
            },
        ),
    );

    check(
        "f_score brute force vs assignment",
        property(256, labels(6, 1..150), |(k, truth, pred)| {
            let a = f_score_brute_force(&truth, &pred, k).unwrap();
            let b = f_score_assignment(&truth, &pred, k).unwrap();
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            Ok(())
        }),
    );

    let mut delta_checks = 0;
    let delta = instances().0.iter().try_for_each(|inst| {
        let f = nyscluster::kernel::nystrom_factors_from_kernel(&inst.kernel, &inst.indices)
            .map_err(|e| e.to_string())?;
        let m = inst.indices.len();
        let gamma_rank = low_rank_factor(&f, &RankPolicy::new(1e-2, 1).unwrap())
            .unwrap()
            .l;
        for l in [1, gamma_rank, m] {
            let policy = RankPolicy::new(f64::MIN_POSITIVE, l).unwrap();
            let mut fac = low_rank_factor(&f, &policy).unwrap();
            fac.g = fac.g.columns(0, l.min(fac.g.ncols())).into_owned();
            let rep =
                perturbation_report_factored(&inst.kernel, &fac.g).map_err(|e| e.to_string())?;
            delta_checks += 1;
            if !rep.delta_bound_holds() {
                return Err(format!(
                    "seed {} l={l}: {} > {}",
                    inst.seed, rep.delta_norm, rep.delta_bound
                ));
            }
        }
        Ok(())
    });
    check("delta bound", delta);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("moons.csv");
    let csv_arg = csv.display().to_string();
    check(
        "cli generate",
        cli_runs_match(
            &["generate", "--shape", "moons", "--n", "2000", "--seed", "7"],
            dir.path(),
            Some("gen.csv"),
        ),
    );
    let gen = Command::new(env!("CARGO_BIN_EXE_nyscluster"))
        .args([
            "generate", "--shape", "moons", "--n", "2000", "--seed", "7", "--out", &csv_arg,
        ])
        .status();
    check(
        "cli generate input",
        gen.map_err(|e| e.to_string()).and_then(|s| {
            if s.success() {
                Ok(())
            } else {
                Err(s.to_string())
            }
        }),
    );
    check(
        "cli cluster",
        cli_runs_match(
            &[
                "cluster", "--input", &csv_arg, "--method", "proposed", "--m", "50", "--sigma",
                "0.2", "--seed", "3", "--format", "json",
            ],
            dir.path(),
            Some("labels.csv"),
        ),
    );
    check(
        "cli bench",
        cli_runs_match(
            &[
                "bench", "--shape", "circles", "--n", "1500", "--m", "30,60", "--sigma", "0.2",
                "--trials", "4", "--seed", "5",
            ],
            dir.path(),
            Some("records.jsonl"),
        ),
    );
    check(
        "cli verify",
        cli_runs_match(
            &[
                "verify",
                "--theorem",
                "1",
                "--instances",
                "20",
                "--format",
                "json",
            ],
            dir.path(),
            None,
        ),
    );

    let detail = format!(
        "k-means SSE, permutation invariance, brute force vs assignment (k<=6), delta bound on {delta_checks} factors, CLI reruns"
    );
    if failures.is_empty() {
        Pass(detail)
    } else {
        Fail(failures.join("; "))
    }
}

fn main() {
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [Criterion; 11] = [
        (1, "truncation identity", criterion_1),
        (2, "normalized truncation error", criterion_2),
        (3, "exact recovery", criterion_3),
        (4, "blobs accuracy", criterion_4),
        (5, "gamma sweep", criterion_5),
        (6, "baseline dominance", criterion_6),
        (7, "mushrooms reproduction", criterion_7),
        (8, "perturbation trends", criterion_8),
        (9, "rank parameter means", criterion_9),
        (10, "scaling contracts", criterion_10),
        (11, "property suites", criterion_11),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let t = fmt_duration(start.elapsed());
        match v {
            Pass(d) => println!("criterion {id:>2} {name}: PASS [{t}] {d}"),
            Skip(d) => println!("criterion {id:>2} {name}: SKIP [{t}] warning: {d}"),
            Fail(d) => {
                let known = KNOWN_RED.contains(&id);
                println!(
                    "criterion {id:>2} {name}: FAIL{} [{t}] {d}",
                    if known { " (known)" } else { "" }
                );
                if !known {
                    unexpected.push(id);
                }
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}
