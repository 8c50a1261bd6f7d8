//! Spectral embeddings: the exact modified-kernel eigenvectors, the rank-l
//! Nyström factor pipeline, and the two earlier Nyström baselines.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{
    build_dense_kernel, check_dense_cap, column_sums, row_sums, DataMatrix, DenseKernel,
    KernelConfig, NystromFactors,
};
use crate::kmeans::{kmeans, normalize_rows, ClusteringResult, KMeansConfig};
use crate::linalg::{
    full_sym_spectrum, lanczos_top_k, leading_left_singular, orthonormality_error, scale_columns,
    scale_rows_mut, sym_evd, SymmetricEvd,
};

/// Size up to which the exact embedding uses a full dense eigendecomposition.
/// Larger problems go through Lanczos on the dense M.
pub const EXACT_DENSE_EVD_MAX: usize = 1500;

/// Degree entries in (−CLAMP_WINDOW·max, 0] count as rounding noise.
const CLAMP_WINDOW: f64 = 1e-10;
/// Floor that noise-level degrees are clamped to, relative to the largest degree.
const CLAMP_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Proposed,
    Fowlkes,
    Li,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Exact, Method::Proposed, Method::Fowlkes, Method::Li];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Proposed => "proposed",
            Method::Fowlkes => "fowlkes",
            Method::Li => "li",
        }
    }

    pub fn is_nystrom(self) -> bool {
        self != Method::Exact
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                invalid(format!(
                    "unknown method `{s}` (expected exact, proposed, fowlkes or li)"
                ))
            })
    }
}

/// Threshold γ on σᵢ(W)/σ₁(W) that selects the rank l, with a lower clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankPolicy {
    gamma: f64,
    min_rank: usize,
}

impl RankPolicy {
    /// γ ∈ (0, 1]; γ = 1 keeps only the eigenvalues tied with the largest.
    pub fn new(gamma: f64, min_rank: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(invalid(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if min_rank == 0 {
            return Err(invalid("min_rank must be at least 1"));
        }
        Ok(Self { gamma, min_rank })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn min_rank(&self) -> usize {
        self.min_rank
    }
}

/// What to do with approximate degrees that come out nonpositive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegreeRepair {
    /// Clamp noise-level entries, fail on anything more negative.
    Strict,
    /// Clamp noise-level entries; samples with clearly negative degree are
    /// left out of the subspace estimate and embedded afterwards by projecting
    /// their unweighted row onto it.
    #[default]
    OutOfSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NystromOptions {
    pub repair: DegreeRepair,
    /// Thin-QR orthogonalization of the Li embedding.
    pub li_orthogonalize: bool,
}

#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    /// n×k.
    pub u: DMatrix<f64>,
    /// Length k, descending.
    pub evals: DVector<f64>,
    pub method: Method,
    /// Rank of the W factor actually used (proposed only).
    pub rank_l: Option<usize>,
    /// Whether the columns of `u` are orthonormal by construction.
    pub orthonormal: bool,
    /// Samples whose approximate degree was nonpositive. Their rows of `u`
    /// are zero; `out_of_sample` holds their projected rows in the same order.
    pub isolated: Vec<usize>,
    pub out_of_sample: DMatrix<f64>,
    /// Eigenvalues clamped away as nonpositive noise.
    pub clamped_evals: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub embedding: SpectralEmbedding,
    pub clustering: ClusteringResult,
}

/// M = D^{-1/2} K D^{-1/2}.
pub fn modified_kernel(dk: &DenseKernel) -> Result<DMatrix<f64>> {
    let inv = inv_sqrt_degrees(dk.degrees.as_slice())?;
    let mut m = scale_columns(&dk.k, &inv);
    scale_rows_mut(&mut m, &inv);
    Ok(m)
}

fn inv_sqrt_degrees(degrees: &[f64]) -> Result<Vec<f64>> {
    degrees
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if d > 0.0 {
                Ok(1.0 / d.sqrt())
            } else {
                Err(Error::DegenerateGraph(i))
            }
        })
        .collect()
}

/// Top-k eigenpairs of M.
pub fn exact_embedding(dk: &DenseKernel, k: usize) -> Result<SpectralEmbedding> {
    let n = dk.n();
    if k == 0 || k > n {
        return Err(invalid(format!(
            "cannot embed {n} samples into {k} dimensions"
        )));
    }
    let m = modified_kernel(dk)?;
    let (evals, u) = if n <= EXACT_DENSE_EVD_MAX {
        let (values, vectors) = full_sym_spectrum(&m)?;
        (
            values.rows(0, k).into_owned(),
            vectors.columns(0, k).into_owned(),
        )
    } else {
        lanczos_top_k(
            n,
            k,
            |x, y| {
                let r = &m * DVector::from_column_slice(x);
                y.copy_from_slice(r.as_slice());
            },
            1e-10,
            n.min(1000),
        )?
    };
    Ok(SpectralEmbedding {
        u,
        evals,
        method: Method::Exact,
        rank_l: None,
        orthonormal: true,
        isolated: Vec::new(),
        out_of_sample: DMatrix::zeros(0, k),
        clamped_evals: 0,
    })
}

impl SpectralEmbedding {
    /// Orthonormal basis of the column span (thin QR when `u` is not orthonormal).
    pub fn orthonormal_basis(&self) -> DMatrix<f64> {
        if self.orthonormal {
            self.u.clone()
        } else {
            nalgebra::linalg::QR::new(self.u.clone()).q()
        }
    }
}

/// Rows used for clustering: `u` with the isolated rows replaced by their
/// out-of-sample projections.
pub fn clustering_rows(emb: &SpectralEmbedding) -> DMatrix<f64> {
    let mut rows = emb.u.clone();
    for (r, &i) in emb.isolated.iter().enumerate() {
        rows.row_mut(i).copy_from(&emb.out_of_sample.row(r));
    }
    rows
}

/// Row-normalizes the embedding and runs k-means on its rows.
pub fn cluster_embedding(
    emb: &SpectralEmbedding,
    k: usize,
    cfg: &KMeansConfig,
) -> Result<ClusteringResult> {
    kmeans(&normalize_rows(&clustering_rows(emb)), k, cfg)
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k < 2 || k > n {
        return Err(invalid(format!(
            "need 2 <= k <= n, got k = {k} with n = {n}"
        )));
    }
    Ok(())
}

/// Exact normalized spectral clustering on the dense kernel.
pub fn prototypical_sc(
    data: &DataMatrix,
    cfg: &KernelConfig,
    k: usize,
    kmeans_cfg: &KMeansConfig,
) -> Result<PipelineOutput> {
    check_k(k, data.n())?;
    check_dense_cap("exact spectral clustering", data.n())?;
    let dk = build_dense_kernel(data, cfg)?;
    let embedding = exact_embedding(&dk, k)?;
    let clustering = cluster_embedding(&embedding, k, kmeans_cfg)?;
    Ok(PipelineOutput {
        embedding,
        clustering,
    })
}

/// Number of leading eigenvalues with λᵢ/λ₁ ≥ γ (no clamping).
pub fn unclamped_rank(values: &[f64], gamma: f64) -> usize {
    match values.first() {
        Some(&top) if top > 0.0 => values.iter().take_while(|&&v| v / top >= gamma).count(),
        _ => 0,
    }
}

/// l from the threshold rule, clamped to [min_rank, rank(W)].
pub fn determine_rank(evd: &SymmetricEvd, policy: &RankPolicy) -> usize {
    let r = evd.rank();
    let raw = unclamped_rank(evd.values.as_slice(), policy.gamma);
    let l = raw.max(policy.min_rank).min(r);
    if l != raw {
        log::info!(
            "rank clamped from {raw} to {l} (min_rank {}, rank(W) {r})",
            policy.min_rank
        );
    }
    l
}

/// The rank-l factor G = C U_l Σ_l^{-1/2}, so that G Gᵀ = C ⟦W⟧ₗ† Cᵀ.
#[derive(Debug, Clone)]
pub struct LowRankFactor {
    pub g: DMatrix<f64>,
    pub l: usize,
    pub w_evd: SymmetricEvd,
}

pub fn low_rank_factor(f: &NystromFactors, policy: &RankPolicy) -> Result<LowRankFactor> {
    let w_evd = sym_evd(&f.w)?;
    if w_evd.rank() == 0 {
        return Err(Error::Numerical(
            "landmark matrix W is numerically zero".into(),
        ));
    }
    let l = determine_rank(&w_evd, policy);
    let scale: Vec<f64> = w_evd
        .values
        .iter()
        .take(l)
        .map(|x| 1.0 / x.sqrt())
        .collect();
    let g = &f.c * scale_columns(&w_evd.vectors.columns(0, l).into_owned(), &scale);
    Ok(LowRankFactor { g, l, w_evd })
}

/// D̂ = diag(G (Gᵀ 1)) with two matrix-vector products.
pub fn factor_degrees(g: &DMatrix<f64>) -> DVector<f64> {
    let t = column_sums(g);
    g * t
}

/// D̂^{-1/2} with the configured treatment of nonpositive entries. Returns the
/// scale vector and the samples that were zeroed out.
fn degree_scaling(degrees: &[f64], repair: DegreeRepair) -> Result<(Vec<f64>, Vec<usize>)> {
    let top = degrees.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top.is_nan() || top <= 0.0 {
        return Err(Error::DegenerateDegree {
            indices: (0..degrees.len()).collect(),
        });
    }
    let mut scale = Vec::with_capacity(degrees.len());
    let mut bad = Vec::new();
    for (i, &d) in degrees.iter().enumerate() {
        if d > 0.0 {
            scale.push(1.0 / d.sqrt());
        } else if d > -CLAMP_WINDOW * top {
            scale.push(1.0 / (CLAMP_FLOOR * top).sqrt());
        } else {
            scale.push(0.0);
            bad.push(i);
        }
    }
    if !bad.is_empty() {
        match repair {
            DegreeRepair::Strict => return Err(Error::DegenerateDegree { indices: bad }),
            DegreeRepair::OutOfSample => {
                log::warn!(
                    "{} samples have nonpositive approximate degree; treated as isolated",
                    bad.len()
                )
            }
        }
    }
    Ok((scale, bad))
}

/// Embedding from the rank-l factor: top-k left singular vectors of D̂^{-1/2} G.
pub fn proposed_embedding(
    f: &NystromFactors,
    k: usize,
    policy: &RankPolicy,
    opts: &NystromOptions,
) -> Result<SpectralEmbedding> {
    let LowRankFactor { g, l, .. } = low_rank_factor(f, policy)?;
    if l < k {
        return Err(Error::Numerical(format!(
            "rank l = {l} of W is below k = {k}"
        )));
    }
    let degrees = factor_degrees(&g);
    let (scale, isolated) = degree_scaling(degrees.as_slice(), opts.repair)?;
    let mut gt = g.clone();
    scale_rows_mut(&mut gt, &scale);
    let (u, svals) = leading_left_singular(&gt, k)?;
    let evals = svals.map(|s| s * s);
    // Right singular vectors over σ: V Σ⁻¹ = G̃ᵀ U Σ⁻².
    let inv2: Vec<f64> = evals.iter().map(|e| 1.0 / e).collect();
    let lift = scale_columns(&gt.tr_mul(&u), &inv2);
    let out_of_sample = g.select_rows(isolated.iter()) * lift;
    Ok(SpectralEmbedding {
        u,
        evals,
        method: Method::Proposed,
        rank_l: Some(l),
        orthonormal: true,
        isolated,
        out_of_sample,
        clamped_evals: 0,
    })
}

/// W^{-1/2} over the retained spectrum.
fn inv_sqrt_psd(evd: &SymmetricEvd) -> DMatrix<f64> {
    let s: Vec<f64> = evd.values.iter().map(|x| 1.0 / x.sqrt()).collect();
    scale_columns(&evd.vectors, &s) * evd.vectors.transpose()
}

/// One-shot Nyström extension of the normalized kernel with the R = W̃ + W̃^{-1/2}B̃B̃ᵀW̃^{-1/2} trick.
pub fn fowlkes_embedding(
    f: &NystromFactors,
    k: usize,
    opts: &NystromOptions,
) -> Result<SpectralEmbedding> {
    let m = f.m();
    if k == 0 || k > m {
        return Err(invalid(format!("k = {k} exceeds the {m} landmarks")));
    }
    let w_pinv = crate::linalg::pseudo_inverse_from_evd(&sym_evd(&f.w)?);
    let degrees = &f.c * (w_pinv * column_sums(&f.c));
    let bad_landmarks: Vec<usize> = f
        .indices
        .iter()
        .copied()
        .filter(|&i| degrees[i] <= 0.0)
        .collect();
    if !bad_landmarks.is_empty() {
        return Err(Error::DegenerateDegree {
            indices: bad_landmarks,
        });
    }
    let (row_scale, isolated) = degree_scaling(degrees.as_slice(), opts.repair)?;
    let col_scale: Vec<f64> = f.indices.iter().map(|&i| 1.0 / degrees[i].sqrt()).collect();
    let mut ct = scale_columns(&f.c, &col_scale);
    scale_rows_mut(&mut ct, &row_scale);
    let wt = ct.select_rows(f.indices.iter());
    let wt = (&wt + wt.transpose()) * 0.5;
    let wt_evd = sym_evd(&wt)?;
    if wt_evd.rank() < k {
        return Err(Error::Numerical(format!(
            "normalized W has rank {} below k = {k}",
            wt_evd.rank()
        )));
    }
    let wt_isqrt = inv_sqrt_psd(&wt_evd);
    let gram = ct.tr_mul(&ct);
    let r = &wt_isqrt * gram * &wt_isqrt;
    let r = (&r + r.transpose()) * 0.5;
    let (values, vectors) = full_sym_spectrum(&r)?;
    let top = values[0].max(0.0);
    let positive = values
        .iter()
        .filter(|&&v| v > crate::linalg::DEFAULT_RANK_TOL * top && v > 0.0)
        .count();
    if positive < k {
        return Err(Error::Numerical(format!(
            "R has only {positive} positive eigenvalues, need {k}"
        )));
    }
    let clamped_evals = values.len() - positive;
    let scale: Vec<f64> = values.iter().take(k).map(|x| 1.0 / x.sqrt()).collect();
    let lift = wt_isqrt * scale_columns(&vectors.columns(0, k).into_owned(), &scale);
    let u = ct * &lift;
    let out_of_sample = scale_columns(&f.c.select_rows(isolated.iter()), &col_scale) * lift;
    let orthonormal = orthonormality_error(&u) <= 1e-6;
    Ok(SpectralEmbedding {
        u,
        evals: values.rows(0, k).into_owned(),
        method: Method::Fowlkes,
        rank_l: None,
        orthonormal,
        isolated,
        out_of_sample,
        clamped_evals,
    })
}

/// Rank-k extension of the landmark-normalized W̄ = Dₘ^{-1/2} W Dₘ^{-1/2}.
pub fn li_embedding(
    f: &NystromFactors,
    k: usize,
    opts: &NystromOptions,
) -> Result<SpectralEmbedding> {
    let m = f.m();
    if k == 0 || k > m {
        return Err(invalid(format!("k = {k} exceeds the {m} landmarks")));
    }
    let dm = row_sums(&f.w);
    let dm_isqrt = inv_sqrt_degrees(dm.as_slice()).map_err(|_| Error::DegenerateDegree {
        indices: (0..m).filter(|&i| dm[i] <= 0.0).collect(),
    })?;
    let mut wbar = scale_columns(&f.w, &dm_isqrt);
    scale_rows_mut(&mut wbar, &dm_isqrt);
    let evd = sym_evd(&wbar)?;
    if evd.rank() < k {
        return Err(Error::Numerical(format!(
            "normalized W has rank {} below k = {k}",
            evd.rank()
        )));
    }
    let lambda: Vec<f64> = evd.values.iter().take(k).copied().collect();
    let inv: Vec<f64> = lambda.iter().map(|x| 1.0 / x).collect();
    let mut basis = evd.vectors.columns(0, k).into_owned();
    scale_rows_mut(&mut basis, &dm_isqrt);
    let mut q = &f.c * scale_columns(&basis, &inv);
    // Dₙ = Q Σ Qᵀ 1 as matrix-vector products.
    let t = column_sums(&q).component_mul(&DVector::from_column_slice(&lambda));
    let dn = &q * t;
    let (scale, isolated) = degree_scaling(dn.as_slice(), opts.repair)?;
    let mut out_of_sample = q.select_rows(isolated.iter());
    scale_rows_mut(&mut q, &scale);
    let (u, orthonormal) = if opts.li_orthogonalize {
        let qr = nalgebra::linalg::QR::new(q);
        // Rows outside the factorization follow the same change of basis.
        if !isolated.is_empty() {
            let r = qr.r();
            out_of_sample = r
                .transpose()
                .solve_lower_triangular(&out_of_sample.transpose())
                .ok_or_else(|| {
                    Error::Numerical("singular R factor in Li orthogonalization".into())
                })?
                .transpose();
        }
        (qr.q(), true)
    } else {
        (q, false)
    };
    Ok(SpectralEmbedding {
        u,
        evals: DVector::from_vec(lambda),
        method: Method::Li,
        rank_l: None,
        orthonormal,
        isolated,
        out_of_sample,
        clamped_evals: evd.discarded,
    })
}

/// Embedding for any Nyström method from shared factors.
pub fn nystrom_embedding(
    method: Method,
    f: &NystromFactors,
    k: usize,
    policy: &RankPolicy,
    opts: &NystromOptions,
) -> Result<SpectralEmbedding> {
    match method {
        Method::Proposed => proposed_embedding(f, k, policy, opts),
        Method::Fowlkes => fowlkes_embedding(f, k, opts),
        Method::Li => li_embedding(f, k, opts),
        Method::Exact => Err(invalid("the exact method does not use Nyström factors")),
    }
}

pub fn proposed_nystrom_sc(
    f: &NystromFactors,
    k: usize,
    policy: &RankPolicy,
    opts: &NystromOptions,
    kmeans_cfg: &KMeansConfig,
) -> Result<PipelineOutput> {
    check_k(k, f.n())?;
    let embedding = proposed_embedding(f, k, policy, opts)?;
    let clustering = cluster_embedding(&embedding, k, kmeans_cfg)?;
    Ok(PipelineOutput {
        embedding,
        clustering,
    })
}

pub fn baseline_fowlkes_sc(
    f: &NystromFactors,
    k: usize,
    opts: &NystromOptions,
    kmeans_cfg: &KMeansConfig,
) -> Result<PipelineOutput> {
    check_k(k, f.n())?;
    let embedding = fowlkes_embedding(f, k, opts)?;
    let clustering = cluster_embedding(&embedding, k, kmeans_cfg)?;
    Ok(PipelineOutput {
        embedding,
        clustering,
    })
}

pub fn baseline_li_sc(
    f: &NystromFactors,
    k: usize,
    opts: &NystromOptions,
    kmeans_cfg: &KMeansConfig,
) -> Result<PipelineOutput> {
    check_k(k, f.n())?;
    let embedding = li_embedding(f, k, opts)?;
    let clustering = cluster_embedding(&embedding, k, kmeans_cfg)?;
    Ok(PipelineOutput {
        embedding,
        clustering,
    })
}
