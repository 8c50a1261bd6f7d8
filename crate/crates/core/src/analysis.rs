//! Numerical checks of the rank-l truncation identity
//! C(W† − ⟦W⟧ₗ†)Cᵀ = K^{1/2}(U_F U_Fᵀ − U_{F,l}U_{F,l}ᵀ)K^{1/2} with F = K^{1/2}P,
//! and of the first-order perturbation bound on the modified kernel.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::embedding::{factor_degrees, low_rank_factor, unclamped_rank, RankPolicy};
use crate::error::{invalid, Result};
use crate::kernel::{
    build_dense_kernel, check_dense_cap, nystrom_factors_from_kernel, row_sums,
    sample_landmarks_uniform, DataMatrix, KernelConfig, NystromFactors,
};
use crate::linalg::{
    best_rank_l, full_sym_spectrum, lanczos_extremes, psd_sqrt, pseudo_inverse_from_evd,
    scale_columns, spectral_norm_sym, sym_evd, truncated_svd, SymmetricEvd, DENSE_NORM_MAX,
};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Report {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    /// Numerical rank of W after the rank tolerance.
    pub w_rank: usize,
    pub lhs_norm: f64,
    pub rhs_norm: f64,
    pub k_norm: f64,
    /// ‖LHS − RHS‖₂ / ‖K‖₂.
    pub identity_gap: f64,
    /// ‖LHS‖₂ / ‖K‖₂.
    pub normalized_error: f64,
    /// λ₁/λ_r of W over the retained spectrum.
    pub w_condition: f64,
    /// (λ_l − λ_{l+1})/λ₁; zero when l ≥ r.
    pub split_gap: f64,
    pub warning: Option<String>,
}

/// Compares both sides of the truncation identity for landmarks `indices`
/// and rank `l` on an explicit PSD kernel matrix.
pub fn verify_theorem1(k: &DMatrix<f64>, indices: &[usize], l: usize) -> Result<Theorem1Report> {
    let n = k.nrows();
    check_dense_cap("truncation identity check", n)?;
    let f = nystrom_factors_from_kernel(k, indices)?;
    let m = f.m();
    if l == 0 || l > m {
        return Err(invalid(format!("rank {l} out of range 1..={m}")));
    }
    let evd = sym_evd(&f.w)?;
    let r = evd.rank();
    let warning = (r < m).then(|| {
        format!(
            "W is numerically rank {r} < m = {m}; {} eigenvalues dropped",
            evd.discarded
        )
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }

    // Route 1: pseudo-inverses of W and of its rank-l truncation.
    let lhs = if l >= r {
        DMatrix::zeros(n, n)
    } else {
        let diff = pseudo_inverse_from_evd(&evd) - pseudo_inverse_from_evd(&best_rank_l(&evd, l)?);
        &f.c * diff * f.c.transpose()
    };

    // Route 2: K^{1/2} and the left singular vectors of F = K^{1/2} P.
    let k_half = psd_sqrt(k)?;
    let fmat = k_half.select_columns(indices.iter());
    let svd = truncated_svd(&fmat, m)?;
    let rhs = if l >= r {
        DMatrix::zeros(n, n)
    } else {
        let tail = svd.u.columns(l, r - l);
        let proj = tail * tail.transpose();
        &k_half * proj * &k_half
    };

    let k_norm = spectral_norm_sym(k)?;
    let lhs_norm = spectral_norm_sym(&symmetrize(lhs.clone()))?;
    let rhs_norm = spectral_norm_sym(&symmetrize(rhs.clone()))?;
    let gap = spectral_norm_sym(&symmetrize(lhs - rhs))?;
    Ok(Theorem1Report {
        n,
        m,
        l,
        w_rank: r,
        lhs_norm,
        rhs_norm,
        k_norm,
        identity_gap: gap / k_norm,
        normalized_error: lhs_norm / k_norm,
        w_condition: evd.values[0] / evd.values[r - 1],
        split_gap: if l < r {
            (evd.values[l - 1] - evd.values[l]) / evd.values[0]
        } else {
            0.0
        },
        warning,
    })
}

/// A small seeded Gaussian-kernel problem: points, kernel and landmarks.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub seed: u64,
    pub sigma: f64,
    pub data: DataMatrix,
    pub kernel: DMatrix<f64>,
    pub indices: Vec<usize>,
}

/// Largest λ₁/λ_m of W accepted by [`random_well_posed_instance`]. Rounding in
/// either side of the identity grows like ε·cond(W).
pub const IDENTITY_MAX_CONDITION: f64 = 1e8;
/// Smallest accepted (λ_l − λ_{l+1})/λ_l; below it the rank-l truncation of W
/// is not unique.
pub const IDENTITY_MIN_SPLIT: f64 = 1e-6;

pub fn random_instance(seed: u64, n_max: usize, m_max: usize) -> Result<RandomInstance> {
    if n_max < 2 || m_max == 0 {
        return Err(invalid("need n_max >= 2 and m_max >= 1"));
    }
    draw_instance(seed, n_max, m_max)
}

/// Redraws from `seed` until W is full rank with condition number at most
/// [`IDENTITY_MAX_CONDITION`] and all eigenvalue splits at least
/// [`IDENTITY_MIN_SPLIT`]. Returns the instance and the number of rejected draws.
pub fn random_well_posed_instance(
    seed: u64,
    n_max: usize,
    m_max: usize,
) -> Result<(RandomInstance, usize)> {
    for attempt in 0..1000 {
        let inst = random_instance(derive_seed(seed, &[attempt]), n_max, m_max)?;
        if inst.is_well_posed()? {
            return Ok((inst, attempt as usize));
        }
    }
    Err(crate::error::Error::Numerical(
        "no well-posed instance in 1000 draws".into(),
    ))
}

/// Standard normal points with n in 2..=n_max, d in 2..=5 and m in
/// 1..=min(m_max, n). σ is the median pairwise distance times a factor drawn
/// from [0.3, 1].
fn draw_instance(seed: u64, n_max: usize, m_max: usize) -> Result<RandomInstance> {
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(2..=n_max);
    let d = rng.random_range(2..=5usize);
    let m = rng.random_range(1..=m_max.min(n));
    let values: Vec<f64> = (0..n * d)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let data = DataMatrix::new(values, n, d, None)?;
    let mut dists: Vec<f64> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .map(|(a, b)| {
            data.row(a)
                .iter()
                .zip(data.row(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    let sigma = dists[dists.len() / 2] * rng.random_range(0.3..=1.0);
    let kernel = build_dense_kernel(&data, &KernelConfig::new(sigma)?)?.k;
    let indices = sample_landmarks_uniform(n, m, rng.random())?;
    Ok(RandomInstance {
        seed,
        sigma,
        data,
        kernel,
        indices,
    })
}

impl RandomInstance {
    pub fn is_well_posed(&self) -> Result<bool> {
        let w = self
            .kernel
            .select_rows(self.indices.iter())
            .select_columns(self.indices.iter());
        let (ev, _) = full_sym_spectrum(&w)?;
        let m = ev.len();
        if ev[m - 1].is_nan() || ev[m - 1] <= 0.0 || ev[0] / ev[m - 1] > IDENTITY_MAX_CONDITION {
            return Ok(false);
        }
        Ok(ev
            .as_slice()
            .windows(2)
            .all(|p| (p[0] - p[1]) / p[0] >= IDENTITY_MIN_SPLIT))
    }

    /// Identity reports for every l in 1..=m.
    pub fn theorem1_all_ranks(&self) -> Result<Vec<Theorem1Report>> {
        (1..=self.indices.len())
            .map(|l| verify_theorem1(&self.kernel, &self.indices, l))
            .collect()
    }
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

/// ‖C(W† − ⟦W⟧ₗ†)Cᵀ‖₂ = σ_max(H)² with H = C U_tail Σ_tail^{-1/2}; no n×n work.
pub fn truncation_error_norm(f: &NystromFactors, evd: &SymmetricEvd, l: usize) -> Result<f64> {
    let r = evd.rank();
    if l >= r {
        return Ok(0.0);
    }
    let scale: Vec<f64> = evd.values.iter().skip(l).map(|x| 1.0 / x.sqrt()).collect();
    let h = &f.c * scale_columns(&evd.vectors.columns(l, r - l).into_owned(), &scale);
    spectral_norm_sym(&h.tr_mul(&h))
}

/// y ← K x for a dense symmetric K, parallel over rows.
pub fn par_symv(k: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let n = k.nrows();
    y.par_iter_mut().enumerate().for_each(|(i, yi)| {
        let col = &k.as_slice()[i * n..(i + 1) * n];
        *yi = col.iter().zip(x).map(|(a, b)| a * b).sum();
    });
}

/// Largest |λ| of a symmetric operator, dense below [`DENSE_NORM_MAX`].
fn operator_norm<F>(n: usize, mut apply: F) -> Result<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if n <= DENSE_NORM_MAX {
        let mut dense = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut y = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            apply(&e, &mut y);
            dense.column_mut(j).copy_from_slice(&y);
            e[j] = 0.0;
        }
        return spectral_norm_sym(&symmetrize(dense));
    }
    let (hi, lo) = lanczos_extremes(n, apply, 1e-10, 300)?;
    Ok(hi.abs().max(lo.abs()))
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationReport {
    /// ‖Δ D^{-1}‖₂ = max |Δᵢ / Dᵢ|.
    pub eta: f64,
    /// ‖K̂ − K‖₂.
    pub kernel_err: f64,
    /// ‖Δ‖₂ with Δ = diag((K̂ − K) 1).
    pub delta_norm: f64,
    /// √n ‖E‖₂, the ceiling on ‖Δ‖₂.
    pub delta_bound: f64,
    /// ‖M − M̂‖₂ / ‖M‖₂; absent when K̂ has a nonpositive degree.
    pub modkernel_err: Option<f64>,
    pub f1: f64,
    pub f2: f64,
    /// f1 + f2 with the O(η²) terms dropped.
    pub bound_first_order: f64,
    pub khat_degenerate: bool,
}

impl PerturbationReport {
    /// ‖Δ‖₂ ≤ √n‖E‖₂ up to rounding.
    pub fn delta_bound_holds(&self) -> bool {
        self.delta_norm <= self.delta_bound * (1.0 + 1e-12) + 1e-8
    }
}

/// Perturbation quantities for explicit K and K̂.
pub fn perturbation_report(k: &DMatrix<f64>, k_hat: &DMatrix<f64>) -> Result<PerturbationReport> {
    let n = k.nrows();
    check_dense_cap("perturbation report", n)?;
    if k.shape() != k_hat.shape() || k.nrows() != k.ncols() {
        return Err(invalid(
            "K and K_hat must be square matrices of the same size",
        ));
    }
    let e = k_hat - k;
    let d_hat = row_sums(k_hat);
    let apply_k_hat = |x: &[f64], y: &mut [f64]| {
        let r = k_hat * DVector::from_column_slice(x);
        y.copy_from_slice(r.as_slice());
    };
    report(k, &d_hat, apply_k_hat, |x, y| {
        let r = &e * DVector::from_column_slice(x);
        y.copy_from_slice(r.as_slice());
    })
}

/// Perturbation quantities for K̂ = G Gᵀ without forming K̂.
pub fn perturbation_report_factored(
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> Result<PerturbationReport> {
    let n = k.nrows();
    check_dense_cap("perturbation report", n)?;
    if g.nrows() != n {
        return Err(invalid("factor G must have one row per sample"));
    }
    let d_hat = factor_degrees(g);
    let apply_g = |x: &[f64], y: &mut [f64]| {
        let t = g.tr_mul(&DVector::from_column_slice(x));
        y.copy_from_slice((g * t).as_slice());
    };
    let mut buf = vec![0.0; n];
    let apply_e = |x: &[f64], y: &mut [f64]| {
        apply_g(x, y);
        par_symv(k, x, &mut buf);
        y.iter_mut().zip(&buf).for_each(|(a, b)| *a -= b);
    };
    report(k, &d_hat, apply_g, apply_e)
}

fn report<A, B>(
    k: &DMatrix<f64>,
    d_hat: &DVector<f64>,
    mut apply_k_hat: A,
    mut apply_e: B,
) -> Result<PerturbationReport>
where
    A: FnMut(&[f64], &mut [f64]),
    B: FnMut(&[f64], &mut [f64]),
{
    let n = k.nrows();
    let d = row_sums(k);
    if let Some(i) = d.iter().position(|&x| x <= 0.0) {
        return Err(crate::error::Error::DegenerateGraph(i));
    }
    let delta = d_hat - &d;
    let eta = delta
        .iter()
        .zip(d.iter())
        .map(|(a, b)| (a / b).abs())
        .fold(0.0, f64::max);
    let delta_norm = delta.amax();
    let kernel_err = operator_norm(n, &mut apply_e)?;
    let d_isqrt: Vec<f64> = d.iter().map(|x| 1.0 / x.sqrt()).collect();

    let mut tmp = vec![0.0; n];
    let mut scaled = vec![0.0; n];
    let normalized_e = operator_norm(n, |x, y| {
        scaled
            .iter_mut()
            .zip(x)
            .zip(&d_isqrt)
            .for_each(|((s, a), b)| *s = a * b);
        apply_e(&scaled, &mut tmp);
        y.iter_mut()
            .zip(&tmp)
            .zip(&d_isqrt)
            .for_each(|((o, a), b)| *o = a * b);
    })?;
    let m_norm = operator_norm(n, |x, y| {
        scaled
            .iter_mut()
            .zip(x)
            .zip(&d_isqrt)
            .for_each(|((s, a), b)| *s = a * b);
        par_symv(k, &scaled, &mut tmp);
        y.iter_mut()
            .zip(&tmp)
            .zip(&d_isqrt)
            .for_each(|((o, a), b)| *o = a * b);
    })?;

    let khat_degenerate = d_hat.iter().any(|&x| x <= 0.0);
    let modkernel_err = if khat_degenerate {
        None
    } else {
        let dh_isqrt: Vec<f64> = d_hat.iter().map(|x| 1.0 / x.sqrt()).collect();
        let mut tmp2 = vec![0.0; n];
        let diff = operator_norm(n, |x, y| {
            scaled
                .iter_mut()
                .zip(x)
                .zip(&d_isqrt)
                .for_each(|((s, a), b)| *s = a * b);
            par_symv(k, &scaled, &mut tmp);
            scaled
                .iter_mut()
                .zip(x)
                .zip(&dh_isqrt)
                .for_each(|((s, a), b)| *s = a * b);
            apply_k_hat(&scaled, &mut tmp2);
            for i in 0..n {
                y[i] = d_isqrt[i] * tmp[i] - dh_isqrt[i] * tmp2[i];
            }
        })?;
        Some(diff / m_norm)
    };

    let f1 = (1.0 + eta) * normalized_e / m_norm;
    let f2 = eta;
    Ok(PerturbationReport {
        eta,
        kernel_err,
        delta_norm,
        delta_bound: (n as f64).sqrt() * kernel_err,
        modkernel_err,
        f1,
        f2,
        bound_first_order: f1 + f2,
        khat_degenerate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaSweepRow {
    pub gamma: f64,
    pub mean_l: f64,
    pub std_l: f64,
    pub mean_error: f64,
    pub max_error: f64,
}

/// For each γ, over seeded landmark draws on the dense kernel `k`: the
/// unclamped rank l and the normalized truncation error ‖C(W†−⟦W⟧ₗ†)Cᵀ‖₂/‖K‖₂.
pub fn sweep_gamma(
    k: &DMatrix<f64>,
    m: usize,
    gammas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<GammaSweepRow>> {
    let n = k.nrows();
    check_dense_cap("gamma sweep", n)?;
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    if let Some(&g) = gammas.iter().find(|&&g| !(g > 0.0 && g <= 1.0)) {
        return Err(invalid(format!("gamma must lie in (0, 1], got {g}")));
    }
    let k_norm = operator_norm(n, |x, y| par_symv(k, x, y))?;
    let per_trial: Vec<Vec<(usize, f64)>> = (0..trials)
        .map(|t| {
            let idx = sample_landmarks_uniform(n, m, derive_seed(seed, &[t as u64]))?;
            let f = nystrom_factors_from_kernel(k, &idx)?;
            let evd = sym_evd(&f.w)?;
            gammas
                .iter()
                .map(|&g| {
                    let l = unclamped_rank(evd.values.as_slice(), g).max(1);
                    Ok((l, truncation_error_norm(&f, &evd, l)? / k_norm))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(gammas
        .iter()
        .enumerate()
        .map(|(gi, &gamma)| {
            let ls: Vec<f64> = per_trial.iter().map(|r| r[gi].0 as f64).collect();
            let errs: Vec<f64> = per_trial.iter().map(|r| r[gi].1).collect();
            let (mean_l, std_l) = mean_std(&ls);
            GammaSweepRow {
                gamma,
                mean_l,
                std_l,
                mean_error: mean_std(&errs).0,
                max_error: errs.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationRow {
    pub m: usize,
    pub mean_l: f64,
    pub mean_eta: f64,
    pub mean_modkernel_err: f64,
    pub mean_bound: f64,
    /// Trials where K̂ had a nonpositive degree (excluded from the M̂ mean).
    pub degenerate: usize,
    /// Trials with ‖Δ‖₂ above √n‖E‖₂.
    pub delta_bound_violations: usize,
}

/// Perturbation statistics of the rank-l factor K̂ = G Gᵀ for each m.
pub fn perturbation_sweep(
    k: &DMatrix<f64>,
    m_values: &[usize],
    policy: &RankPolicy,
    trials: usize,
    seed: u64,
) -> Result<Vec<PerturbationRow>> {
    let n = k.nrows();
    let mut rows = Vec::with_capacity(m_values.len());
    for &m in m_values {
        let mut ls = Vec::new();
        let mut etas = Vec::new();
        let mut errs = Vec::new();
        let mut bounds = Vec::new();
        let mut degenerate = 0;
        let mut violations = 0;
        for t in 0..trials {
            let idx = sample_landmarks_uniform(n, m, derive_seed(seed, &[m as u64, t as u64]))?;
            let f = nystrom_factors_from_kernel(k, &idx)?;
            let fac = low_rank_factor(&f, policy)?;
            let rep = perturbation_report_factored(k, &fac.g)?;
            ls.push(fac.l as f64);
            etas.push(rep.eta);
            bounds.push(rep.bound_first_order);
            if !rep.delta_bound_holds() {
                violations += 1;
            }
            match rep.modkernel_err {
                Some(e) => errs.push(e),
                None => degenerate += 1,
            }
        }
        rows.push(PerturbationRow {
            m,
            mean_l: mean_std(&ls).0,
            mean_eta: mean_std(&etas).0,
            mean_modkernel_err: mean_std(&errs).0,
            mean_bound: mean_std(&bounds).0,
            degenerate,
            delta_bound_violations: violations,
        });
    }
    Ok(rows)
}

/// λ_k − λ_{k+1} of a descending spectrum (diagnostic only).
pub fn eigengap(values: &[f64], k: usize) -> Option<f64> {
    (k >= 1 && k < values.len()).then(|| values[k - 1] - values[k])
}

/// Mean and sample standard deviation; NaN mean for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
