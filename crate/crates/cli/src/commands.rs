use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, ValueEnum};
use nyscluster::analysis::{perturbation_sweep, random_instance, random_well_posed_instance};
use nyscluster::bench::{
    kmeans_seed, landmark_seed, run_experiment, timing_profile, ExperimentSpec, TimingRow,
    DEFAULT_GAMMA, DEFAULT_TRIALS,
};
use nyscluster::datagen::{fingerprint, write_csv, SyntheticSpec};
use nyscluster::embedding::{cluster_embedding, nystrom_embedding};
use nyscluster::kmeans::DEFAULT_MAX_ITER;
use nyscluster::rng::derive_seed;
use nyscluster::{
    build_dense_kernel, build_nystrom_factors, f_score, nmi, prototypical_sc,
    sample_landmarks_uniform, DegreeRepair, KMeansConfig, KernelConfig, Method, NystromOptions,
    RankPolicy,
};
use serde::Serialize;
use serde_json::json;

use crate::data::{DatasetArgs, ShapeArg};
use crate::output::{emit, write_jsonl, Format, RunManifest};
use crate::Failure;

const IDENTITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairArg {
    /// Fail on a clearly negative approximate degree.
    Strict,
    /// Isolate such samples and place them by projection.
    OutOfSample,
}

impl From<RepairArg> for DegreeRepair {
    fn from(r: RepairArg) -> Self {
        match r {
            RepairArg::Strict => DegreeRepair::Strict,
            RepairArg::OutOfSample => DegreeRepair::OutOfSample,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    shape: ShapeArg,
    #[arg(long)]
    n: usize,
    /// Cluster count (blobs only; moons and circles have 2).
    #[arg(long)]
    k: Option<usize>,
    /// Noise stddev, or blob stddev for blobs.
    #[arg(long)]
    noise: Option<f64>,
    /// Inner radius of the circles data.
    #[arg(long)]
    factor: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn generate(a: &GenerateArgs) -> Result<(), Failure> {
    let mut spec = SyntheticSpec::new(a.shape.into(), a.n, a.seed);
    if let Some(k) = a.k {
        spec = spec.with_k(k);
    }
    if let Some(noise) = a.noise {
        spec = spec.with_noise(noise);
    }
    if let Some(factor) = a.factor {
        spec.factor = factor;
    }
    let data = spec.generate()?;
    write_csv(&data, &a.out)?;
    if let Some(path) = &a.manifest {
        RunManifest::new(
            "generate",
            a,
            a.seed,
            json!({ "synthetic": spec }),
            Some(fingerprint(&data)),
        )
        .write(path)?;
    }
    Ok(())
}

/// Options common to every pipeline run.
#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    /// Gaussian kernel bandwidth.
    #[arg(long)]
    sigma: f64,
    /// Cluster count (default: number of classes in the labels).
    #[arg(long)]
    k: Option<usize>,
    /// Threshold on λᵢ/λ₁ of W that selects the rank l.
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lloyd iterations per k-means run.
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Orthonormalize the li embedding with a thin QR.
    #[arg(long)]
    li_orthogonalize: bool,
    #[arg(long, value_enum, default_value_t = RepairArg::OutOfSample)]
    degree_repair: RepairArg,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write a JSON run manifest here.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn resolve_k(k: Option<usize>, default: Option<usize>) -> Result<usize, Failure> {
    k.or(default)
        .ok_or_else(|| Failure::Usage("--k is required when the data has no labels".into()))
}

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// exact, proposed, fowlkes or li.
    #[arg(long)]
    method: Method,
    /// Landmark count (Nyström methods).
    #[arg(long)]
    m: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Per-sample labels CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ClusterRecord {
    method: Method,
    n: usize,
    k: usize,
    m: Option<usize>,
    rank_l: Option<usize>,
    isolated: usize,
    f_score: Option<f64>,
    nmi: Option<f64>,
    sse: f64,
    wall_time_seconds: f64,
    end_to_end_seconds: f64,
}

pub fn cluster(a: &ClusterArgs) -> Result<(), Failure> {
    let p = &a.pipeline;
    let ds = a.dataset.load(p.k)?;
    let data = &ds.data;
    let n = data.n();
    let k = resolve_k(p.k, ds.default_k)?;
    let cfg = KernelConfig::new(p.sigma)?;
    let start = Instant::now();
    let (out, m, embed_start) = if a.method == Method::Exact {
        if a.m.is_some() {
            log::warn!("--m is ignored by the exact method");
        }
        let kcfg = KMeansConfig::new(kmeans_seed(p.seed, n, 0)).with_max_iter(p.max_iter);
        (prototypical_sc(data, &cfg, k, &kcfg)?, None, start)
    } else {
        let m = a.m.ok_or_else(|| {
            Failure::Usage(format!("--m is required for the {} method", a.method))
        })?;
        let policy = RankPolicy::new(p.gamma, k)?;
        let opts = NystromOptions {
            repair: p.degree_repair.into(),
            li_orthogonalize: p.li_orthogonalize,
        };
        let idx = sample_landmarks_uniform(n, m, landmark_seed(p.seed, m, 0))?;
        let f = build_nystrom_factors(data, &idx, &cfg)?;
        let mid = Instant::now();
        let embedding = nystrom_embedding(a.method, &f, k, &policy, &opts)?;
        let kcfg = KMeansConfig::new(kmeans_seed(p.seed, m, 0)).with_max_iter(p.max_iter);
        let clustering = cluster_embedding(&embedding, k, &kcfg)?;
        (
            nyscluster::PipelineOutput {
                embedding,
                clustering,
            },
            Some(m),
            mid,
        )
    };
    let end = Instant::now();
    let labels = &out.clustering.labels;
    let (fs, nm) = match data.labels() {
        Some(truth) => (Some(f_score(truth, labels, k)?), Some(nmi(truth, labels)?)),
        None => (None, None),
    };
    if let Some(path) = &a.out {
        let mut text = String::with_capacity(labels.len() * 2 + 6);
        text.push_str("label\n");
        for l in labels {
            text.push_str(&l.to_string());
            text.push('\n');
        }
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let record = ClusterRecord {
        method: a.method,
        n,
        k,
        m,
        rank_l: out.embedding.rank_l,
        isolated: out.embedding.isolated.len(),
        f_score: fs,
        nmi: nm,
        sse: out.clustering.sse,
        wall_time_seconds: (end - embed_start).as_secs_f64(),
        end_to_end_seconds: (end - start).as_secs_f64(),
    };
    emit(&mut std::io::stdout().lock(), p.format, &[record])?;
    if let Some(path) = &p.manifest {
        RunManifest::new("cluster", a, p.seed, ds.source, Some(fingerprint(data))).write(path)?;
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "proposed,li")]
    methods: Vec<Method>,
    /// Comma-separated landmark counts.
    #[arg(long = "m", value_delimiter = ',')]
    m_values: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    /// Also measure alignment with the exact embedding (dense kernel).
    #[arg(long)]
    alignment: bool,
    /// Raw per-trial records as JSON lines.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Time the pipeline per m on one thread instead of scoring trials.
    #[arg(long)]
    timing: bool,
    /// Timed runs per m (after one warm-up).
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Serialize)]
struct MethodTiming<'a> {
    method: Method,
    #[serde(flatten)]
    row: &'a TimingRow,
}

pub fn bench(a: &BenchArgs) -> Result<(), Failure> {
    let p = &a.pipeline;
    if p.degree_repair != RepairArg::OutOfSample {
        log::warn!("bench always isolates degenerate samples; --degree-repair is ignored");
    }
    let ds = a.dataset.load(p.k)?;
    let k = resolve_k(p.k, ds.default_k)?;
    let mut spec = ExperimentSpec::new(a.methods.clone(), a.m_values.clone(), p.sigma, k);
    spec.gamma = p.gamma;
    spec.trials = a.trials;
    spec.base_seed = p.seed;
    spec.kmeans_max_iter = p.max_iter;
    spec.alignment = a.alignment;
    spec.li_orthogonalize = p.li_orthogonalize;
    let mut stdout = std::io::stdout().lock();
    if a.timing {
        spec.validate(ds.data.n())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .context("cannot build timing pool")?;
        let mut rows = Vec::new();
        for &method in a.methods.iter().filter(|m| m.is_nystrom()) {
            let table =
                pool.install(|| timing_profile(&ds.data, method, &a.m_values, &spec, a.runs))?;
            rows.extend(table.into_iter().map(|row| (method, row)));
        }
        let view: Vec<MethodTiming> = rows
            .iter()
            .map(|(method, row)| MethodTiming {
                method: *method,
                row,
            })
            .collect();
        emit(&mut stdout, p.format, &view)?;
    } else {
        spec.parallel = true;
        let result = run_experiment(&ds.data, &spec)?;
        if let Some(path) = &a.records {
            write_jsonl(path, &result.records)?;
        }
        emit(&mut stdout, p.format, &result.aggregates)?;
        let failed: usize = result.aggregates.iter().map(|g| g.failed).sum();
        if failed > 0 {
            log::warn!("{failed} trials failed; see the records for their errors");
        }
    }
    stdout.flush()?;
    if let Some(path) = &p.manifest {
        RunManifest::new("bench", a, p.seed, ds.source, Some(fingerprint(&ds.data))).write(path)?;
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// 1: truncation identity on random instances. 2: perturbation bound on a data set.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    theorem: u8,
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Kernel bandwidth (theorem 2).
    #[arg(long)]
    sigma: Option<f64>,
    /// Comma-separated landmark counts (theorem 2).
    #[arg(long = "m", value_delimiter = ',')]
    m_values: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    /// Landmark draws per m (theorem 2).
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Random instances (theorem 1).
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 100)]
    n_max: usize,
    #[arg(long, default_value_t = 30)]
    m_max: usize,
    /// Keep ill-conditioned or tied landmark matrices (theorem 1).
    #[arg(long)]
    unfiltered: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct IdentitySummary {
    instances: usize,
    /// Draws redrawn for an ill-conditioned W or tied eigenvalues.
    rejected: usize,
    checks: usize,
    rank_deficient: usize,
    max_identity_gap: f64,
    max_normalized_error: f64,
}

pub fn verify(a: &VerifyArgs) -> Result<(), Failure> {
    match a.theorem {
        1 => verify_identity(a),
        _ => verify_perturbation(a),
    }
}

fn verify_identity(a: &VerifyArgs) -> Result<(), Failure> {
    let mut summary = IdentitySummary {
        instances: a.instances,
        rejected: 0,
        checks: 0,
        rank_deficient: 0,
        max_identity_gap: 0.0,
        max_normalized_error: 0.0,
    };
    let mut offending = Vec::new();
    for i in 0..a.instances {
        let seed = derive_seed(a.seed, &[i as u64]);
        let inst = if a.unfiltered {
            random_instance(seed, a.n_max, a.m_max)?
        } else {
            let (inst, rejected) = random_well_posed_instance(seed, a.n_max, a.m_max)?;
            summary.rejected += rejected;
            inst
        };
        for r in inst.theorem1_all_ranks()? {
            summary.checks += 1;
            summary.rank_deficient += usize::from(r.warning.is_some());
            summary.max_identity_gap = summary.max_identity_gap.max(r.identity_gap);
            summary.max_normalized_error = summary.max_normalized_error.max(r.normalized_error);
            if r.identity_gap > IDENTITY_TOL || r.normalized_error > 1.0 + IDENTITY_TOL {
                offending.push(json!({
                    "instance": i,
                    "seed": inst.seed,
                    "sigma": inst.sigma,
                    "landmarks": inst.indices,
                    "points": inst.data.values(),
                    "d": inst.data.d(),
                    "report": r,
                }));
            }
        }
    }
    emit(&mut std::io::stdout().lock(), a.format, &[&summary])?;
    if let Some(path) = &a.manifest {
        RunManifest::new(
            "verify",
            a,
            a.seed,
            json!({ "random_instances": a.instances }),
            None,
        )
        .write(path)?;
    }
    if offending.is_empty() {
        Ok(())
    } else {
        for o in &offending {
            eprintln!("{o}");
        }
        Err(Failure::Invariant(format!(
            "{} identity checks exceeded {IDENTITY_TOL:e}",
            offending.len()
        )))
    }
}

fn verify_perturbation(a: &VerifyArgs) -> Result<(), Failure> {
    if !a.dataset.is_set() {
        return Err(Failure::Usage("theorem 2 needs --input or --shape".into()));
    }
    let sigma = a
        .sigma
        .ok_or_else(|| Failure::Usage("theorem 2 needs --sigma".into()))?;
    if a.m_values.is_empty() {
        return Err(Failure::Usage("theorem 2 needs --m".into()));
    }
    let ds = a.dataset.load(None)?;
    let k = ds.default_k.unwrap_or(2);
    let dk = build_dense_kernel(&ds.data, &KernelConfig::new(sigma)?)?;
    let policy = RankPolicy::new(
        a.gamma,
        k.min(a.m_values.iter().copied().min().unwrap_or(1)),
    )?;
    let rows = perturbation_sweep(&dk.k, &a.m_values, &policy, a.trials, a.seed)?;
    emit(&mut std::io::stdout().lock(), a.format, &rows)?;
    if let Some(path) = &a.manifest {
        RunManifest::new("verify", a, a.seed, ds.source, Some(fingerprint(&ds.data)))
            .write(path)?;
    }
    let violations: usize = rows.iter().map(|r| r.delta_bound_violations).sum();
    if violations > 0 {
        return Err(Failure::Invariant(format!(
            "degree perturbation above sqrt(n)‖E‖₂ in {violations} trials"
        )));
    }
    Ok(())
}
