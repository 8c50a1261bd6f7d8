//! Seeded multi-trial experiments: every trial samples one landmark set that
//! all Nyström methods share, then records accuracy and wall time per method.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::mean_std;
use crate::embedding::{
    cluster_embedding, exact_embedding, nystrom_embedding, Method, NystromOptions, RankPolicy,
    SpectralEmbedding,
};
use crate::error::{invalid, Result};
use crate::kernel::{
    build_dense_kernel, build_nystrom_factors, dense_cap, sample_landmarks_uniform, DataMatrix,
    KernelConfig,
};
use crate::kmeans::{KMeansConfig, DEFAULT_MAX_ITER};
use crate::metrics::{eigenvector_alignment, f_score, nmi};
use crate::rng::derive_seed;

pub const DEFAULT_TRIALS: usize = 50;
pub const DEFAULT_GAMMA: f64 = 1e-2;

/// Stream ids mixed into the base seed.
const STREAM_LANDMARKS: u64 = 1;
const STREAM_KMEANS: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub methods: Vec<Method>,
    pub m_values: Vec<usize>,
    pub gamma: f64,
    pub sigma: f64,
    pub k: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub kmeans_max_iter: usize,
    /// Compare every embedding with the exact one (needs the dense kernel).
    pub alignment: bool,
    /// Run trials concurrently; leave off when wall times matter.
    pub parallel: bool,
    pub li_orthogonalize: bool,
}

impl ExperimentSpec {
    pub fn new(methods: Vec<Method>, m_values: Vec<usize>, sigma: f64, k: usize) -> Self {
        Self {
            methods,
            m_values,
            gamma: DEFAULT_GAMMA,
            sigma,
            k,
            trials: DEFAULT_TRIALS,
            base_seed: 0,
            kmeans_max_iter: DEFAULT_MAX_ITER,
            alignment: false,
            parallel: false,
            li_orthogonalize: false,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(invalid("no methods selected"));
        }
        if let Some(&m) = self.m_values.iter().find(|&&m| m == 0 || m > n) {
            return Err(invalid(format!("landmark count {m} out of range 1..={n}")));
        }
        if self.methods.iter().any(|m| m.is_nystrom()) && self.m_values.is_empty() {
            return Err(invalid("Nyström methods need at least one m value"));
        }
        if (self.alignment || self.methods.contains(&Method::Exact)) && n > dense_cap() {
            return Err(invalid(format!(
                "the exact method needs the dense kernel and n = {n} exceeds the cap {}; use the proposed method",
                dense_cap()
            )));
        }
        RankPolicy::new(self.gamma, self.k)?;
        KernelConfig::new(self.sigma)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: Method,
    /// Landmark count; n for the exact method.
    pub m: usize,
    pub trial: usize,
    pub f_score: Option<f64>,
    pub nmi: Option<f64>,
    pub alignment: Option<f64>,
    pub rank_l: Option<usize>,
    /// Embedding plus k-means.
    pub wall_time_seconds: f64,
    /// Including kernel / factor construction.
    pub end_to_end_seconds: f64,
    pub isolated: usize,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    /// Same record with timing fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_seconds: 0.0,
            end_to_end_seconds: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(xs: &[f64]) -> Option<Self> {
        (!xs.is_empty()).then(|| {
            let (mean, std) = mean_std(xs);
            Stat { mean, std }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub method: Method,
    pub m: usize,
    pub completed: usize,
    pub failed: usize,
    pub f_score: Option<Stat>,
    pub nmi: Option<Stat>,
    pub alignment: Option<Stat>,
    pub rank_l: Option<Stat>,
    pub wall_time_seconds: Option<Stat>,
    pub end_to_end_seconds: Option<Stat>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentResult {
    pub fn aggregate(&self, method: Method, m: usize) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.m == m)
    }
}

/// Groups records by (method, m) in first-seen order; failed trials are
/// counted and left out of the statistics.
pub fn aggregate(records: &[TrialRecord]) -> Vec<Aggregate> {
    let mut order: Vec<(Method, usize)> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        let key = (
            Method::ALL.iter().position(|&m| m == r.method).unwrap_or(0),
            r.m,
        );
        if !groups.contains_key(&key) {
            order.push((r.method, r.m));
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|(method, m)| {
            let key = (
                Method::ALL.iter().position(|&x| x == method).unwrap_or(0),
                m,
            );
            let group = &groups[&key];
            let ok: Vec<&&TrialRecord> = group.iter().filter(|r| !r.failed()).collect();
            let collect = |f: &dyn Fn(&TrialRecord) -> Option<f64>| -> Option<Stat> {
                Stat::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            Aggregate {
                method,
                m,
                completed: ok.len(),
                failed: group.len() - ok.len(),
                f_score: collect(&|r| r.f_score),
                nmi: collect(&|r| r.nmi),
                alignment: collect(&|r| r.alignment),
                rank_l: collect(&|r| r.rank_l.map(|l| l as f64)),
                wall_time_seconds: collect(&|r| Some(r.wall_time_seconds)),
                end_to_end_seconds: collect(&|r| Some(r.end_to_end_seconds)),
            }
        })
        .collect()
}

struct ExactReference {
    embedding: SpectralEmbedding,
    seconds: f64,
}

fn score(
    method: Method,
    m: usize,
    trial: usize,
    data: &DataMatrix,
    emb: &SpectralEmbedding,
    labels: &[usize],
    exact: Option<&ExactReference>,
) -> TrialRecord {
    let k = emb.u.ncols();
    let truth = data.labels();
    let metric = |f: &dyn Fn(&[usize]) -> Result<f64>| truth.and_then(|t| f(t).ok());
    let alignment =
        exact.and_then(|e| eigenvector_alignment(&emb.orthonormal_basis(), &e.embedding.u).ok());
    TrialRecord {
        method,
        m,
        trial,
        f_score: metric(&|t| f_score(t, labels, k)),
        nmi: metric(&|t| nmi(t, labels)),
        alignment,
        rank_l: emb.rank_l,
        wall_time_seconds: 0.0,
        end_to_end_seconds: 0.0,
        isolated: emb.isolated.len(),
        error: None,
    }
}

fn failed_record(method: Method, m: usize, trial: usize, err: &crate::error::Error) -> TrialRecord {
    TrialRecord {
        method,
        m,
        trial,
        f_score: None,
        nmi: None,
        alignment: None,
        rank_l: None,
        wall_time_seconds: 0.0,
        end_to_end_seconds: 0.0,
        isolated: 0,
        error: Some(err.to_string()),
    }
}

fn kmeans_config(spec: &ExperimentSpec, m: usize, trial: usize) -> KMeansConfig {
    KMeansConfig::new(kmeans_seed(spec.base_seed, m, trial)).with_max_iter(spec.kmeans_max_iter)
}

/// Seed of the k-means run for (m, trial). The exact method uses m = n.
pub fn kmeans_seed(base_seed: u64, m: usize, trial: usize) -> u64 {
    derive_seed(base_seed, &[STREAM_KMEANS, m as u64, trial as u64])
}

/// Seed of the landmark draw for (m, trial).
pub fn landmark_seed(base_seed: u64, m: usize, trial: usize) -> u64 {
    derive_seed(base_seed, &[STREAM_LANDMARKS, m as u64, trial as u64])
}

fn run_trial(
    data: &DataMatrix,
    spec: &ExperimentSpec,
    trial: usize,
    exact: Option<&ExactReference>,
) -> Vec<TrialRecord> {
    let mut out = Vec::new();
    let k = spec.k;
    if spec.methods.contains(&Method::Exact) {
        if let Some(reference) = exact {
            let start = Instant::now();
            let res = cluster_embedding(
                &reference.embedding,
                k,
                &kmeans_config(spec, data.n(), trial),
            );
            let secs = start.elapsed().as_secs_f64() + reference.seconds;
            out.push(match res {
                Ok(c) => {
                    let mut r = score(
                        Method::Exact,
                        data.n(),
                        trial,
                        data,
                        &reference.embedding,
                        &c.labels,
                        exact,
                    );
                    r.wall_time_seconds = secs;
                    r.end_to_end_seconds = secs;
                    r
                }
                Err(e) => failed_record(Method::Exact, data.n(), trial, &e),
            });
        }
    }
    let cfg = KernelConfig::new(spec.sigma).expect("validated sigma");
    let policy = RankPolicy::new(spec.gamma, k).expect("validated gamma");
    let opts = NystromOptions {
        li_orthogonalize: spec.li_orthogonalize,
        ..NystromOptions::default()
    };
    for &m in &spec.m_values {
        let nystrom: Vec<Method> = spec
            .methods
            .iter()
            .copied()
            .filter(|x| x.is_nystrom())
            .collect();
        if nystrom.is_empty() {
            continue;
        }
        let start = Instant::now();
        let factors =
            sample_landmarks_uniform(data.n(), m, landmark_seed(spec.base_seed, m, trial))
                .and_then(|idx| build_nystrom_factors(data, &idx, &cfg));
        let factor_secs = start.elapsed().as_secs_f64();
        let factors = match factors {
            Ok(f) => f,
            Err(e) => {
                out.extend(nystrom.iter().map(|&x| failed_record(x, m, trial, &e)));
                continue;
            }
        };
        let kcfg = kmeans_config(spec, m, trial);
        for method in nystrom {
            let start = Instant::now();
            let res = nystrom_embedding(method, &factors, k, &policy, &opts)
                .and_then(|emb| cluster_embedding(&emb, k, &kcfg).map(|c| (emb, c)));
            let secs = start.elapsed().as_secs_f64();
            out.push(match res {
                Ok((emb, c)) => {
                    let mut r = score(method, m, trial, data, &emb, &c.labels, exact);
                    r.wall_time_seconds = secs;
                    r.end_to_end_seconds = secs + factor_secs;
                    r
                }
                Err(e) => failed_record(method, m, trial, &e),
            });
        }
    }
    out
}

/// Runs every (method, m, trial) cell. Pipeline failures are recorded on the
/// trial and do not stop the sweep.
pub fn run_experiment(data: &DataMatrix, spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate(data.n())?;
    if spec.k < 2 || spec.k > data.n() {
        return Err(invalid(format!("need 2 <= k <= n, got k = {}", spec.k)));
    }
    let exact = if spec.alignment || spec.methods.contains(&Method::Exact) {
        let start = Instant::now();
        let dk = build_dense_kernel(data, &KernelConfig::new(spec.sigma)?)?;
        let embedding = exact_embedding(&dk, spec.k)?;
        Some(ExactReference {
            embedding,
            seconds: start.elapsed().as_secs_f64(),
        })
    } else {
        None
    };
    let trials: Vec<Vec<TrialRecord>> = if spec.parallel {
        (0..spec.trials)
            .into_par_iter()
            .map(|t| run_trial(data, spec, t, exact.as_ref()))
            .collect()
    } else {
        (0..spec.trials)
            .map(|t| run_trial(data, spec, t, exact.as_ref()))
            .collect()
    };
    let mut records: Vec<TrialRecord> = trials.into_iter().flatten().collect();
    records.sort_by_key(|r| {
        (
            Method::ALL.iter().position(|&x| x == r.method),
            r.m,
            r.trial,
        )
    });
    let aggregates = aggregate(&records);
    Ok(ExperimentResult {
        records,
        aggregates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub m: usize,
    pub runs: usize,
    pub mean_seconds: f64,
    pub median_seconds: f64,
    pub mean_end_to_end_seconds: f64,
    pub median_end_to_end_seconds: f64,
}

/// Wall time of one Nyström method per m over `runs` timed runs, after one
/// untimed warm-up per m. Runs sequentially.
pub fn timing_profile(
    data: &DataMatrix,
    method: Method,
    m_values: &[usize],
    spec: &ExperimentSpec,
    runs: usize,
) -> Result<Vec<TimingRow>> {
    if !method.is_nystrom() {
        return Err(invalid("timing profiles cover the Nyström methods"));
    }
    if runs == 0 {
        return Err(invalid("runs must be at least 1"));
    }
    let cfg = KernelConfig::new(spec.sigma)?;
    let policy = RankPolicy::new(spec.gamma, spec.k)?;
    let opts = NystromOptions {
        li_orthogonalize: spec.li_orthogonalize,
        ..NystromOptions::default()
    };
    let mut rows = Vec::with_capacity(m_values.len());
    for &m in m_values {
        let mut pipeline = Vec::with_capacity(runs);
        let mut total = Vec::with_capacity(runs);
        for run in 0..=runs {
            let start = Instant::now();
            let idx = sample_landmarks_uniform(data.n(), m, landmark_seed(spec.base_seed, m, run))?;
            let f = build_nystrom_factors(data, &idx, &cfg)?;
            let mid = Instant::now();
            let emb = nystrom_embedding(method, &f, spec.k, &policy, &opts)?;
            cluster_embedding(&emb, spec.k, &kmeans_config(spec, m, run))?;
            let end = Instant::now();
            if run > 0 {
                pipeline.push((end - mid).as_secs_f64());
                total.push((end - start).as_secs_f64());
            }
        }
        rows.push(TimingRow {
            m,
            runs,
            mean_seconds: mean_std(&pipeline).0,
            median_seconds: median(&pipeline),
            mean_end_to_end_seconds: mean_std(&total).0,
            median_end_to_end_seconds: median(&total),
        });
    }
    Ok(rows)
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}
