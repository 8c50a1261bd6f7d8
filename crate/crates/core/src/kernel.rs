//! Gaussian kernels, degree vectors and Nyström factors.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg::{scale_columns, sym_evd};
use crate::rng::rng_from_seed;

/// Default cap on n for paths that materialize n×n matrices.
pub const DEFAULT_DENSE_CAP: usize = 20_000;

/// Environment variable that overrides [`DEFAULT_DENSE_CAP`].
pub const DENSE_CAP_ENV: &str = "NYSCLUSTER_DENSE_CAP";

/// Effective dense cap: the environment override if set and valid, else the default.
pub fn dense_cap() -> usize {
    std::env::var(DENSE_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_DENSE_CAP)
}

pub(crate) fn check_dense_cap(what: &'static str, n: usize) -> Result<()> {
    let cap = dense_cap();
    if n > cap {
        return Err(Error::SizeLimit { what, n, cap });
    }
    Ok(())
}

/// n×d samples stored row-major, with optional ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Vec<f64>,
    n: usize,
    d: usize,
    labels: Option<Vec<usize>>,
}

impl DataMatrix {
    pub fn new(values: Vec<f64>, n: usize, d: usize, labels: Option<Vec<usize>>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(invalid(format!(
                "data must have n >= 1 and d >= 1 (got {n}x{d})"
            )));
        }
        if values.len() != n * d {
            return Err(invalid(format!(
                "expected {} values for {n}x{d}, got {}",
                n * d,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
            return Err(invalid(format!(
                "non-finite feature at sample {}, column {}",
                pos / d,
                pos % d
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(invalid(format!("{} labels for {n} samples", labels.len())));
            }
        }
        Ok(Self {
            values,
            n,
            d,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<usize>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(invalid("rows have inconsistent dimension"));
        }
        Self::new(rows.concat(), rows.len(), d, labels)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of distinct ground-truth classes (max label + 1).
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    pub fn with_labels(mut self, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.n {
                return Err(invalid(format!(
                    "{} labels for {} samples",
                    l.len(),
                    self.n
                )));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.values)
    }
}

/// Kernel bandwidth σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    sigma: f64,
}

impl KernelConfig {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid(format!(
                "kernel bandwidth must be positive, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut dist2 = 0.0;
        for (a, b) in x.iter().zip(y) {
            let t = a - b;
            dist2 += t * t;
        }
        (-dist2 / (self.sigma * self.sigma)).exp()
    }
}

/// exp(−‖x−y‖²/σ²).
pub fn gaussian_similarity(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    let cfg = KernelConfig::new(sigma)?;
    if x.len() != y.len() {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite input to kernel"));
    }
    Ok(cfg.eval(x, y))
}

/// Dense kernel matrix K and its degree vector D = K 1.
#[derive(Debug, Clone)]
pub struct DenseKernel {
    pub k: DMatrix<f64>,
    pub degrees: DVector<f64>,
}

impl DenseKernel {
    /// Wraps an arbitrary symmetric similarity matrix, computing its degrees.
    pub fn from_matrix(k: DMatrix<f64>) -> Result<Self> {
        if k.nrows() != k.ncols() {
            return Err(invalid("kernel matrix must be square"));
        }
        let degrees = row_sums(&k);
        Ok(Self { k, degrees })
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Compensated row sums of a dense matrix.
pub fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    let (n, c) = m.shape();
    DVector::from_iterator(
        n,
        (0..n).map(|i| compensated_sum((0..c).map(|j| m[(i, j)]))),
    )
}

/// Compensated column sums (Mᵀ1).
pub fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        m.ncols(),
        m.column_iter()
            .map(|col| compensated_sum(col.iter().copied())),
    )
}

/// Similarities between every sample and the samples at `cols`, as an n×|cols|
/// matrix. Each entry is computed independently, so the result does not depend
/// on the thread count.
fn cross_kernel(data: &DataMatrix, cols: &[usize], cfg: &KernelConfig) -> DMatrix<f64> {
    let n = data.n();
    let m = cols.len();
    let mut out = DMatrix::zeros(n, m);
    out.as_mut_slice()
        .par_chunks_mut(n)
        .zip(cols.par_iter())
        .for_each(|(col, &j)| {
            let z = data.row(j);
            for (i, slot) in col.iter_mut().enumerate() {
                *slot = cfg.eval(data.row(i), z);
            }
        });
    out
}

pub fn build_dense_kernel(data: &DataMatrix, cfg: &KernelConfig) -> Result<DenseKernel> {
    check_dense_cap("dense kernel", data.n())?;
    let all: Vec<usize> = (0..data.n()).collect();
    let k = cross_kernel(data, &all, cfg);
    DenseKernel::from_matrix(k)
}

/// m distinct indices drawn uniformly without replacement, returned sorted.
pub fn sample_landmarks_uniform(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(invalid(format!(
            "cannot sample {m} landmarks from {n} points"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut idx = sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Landmark indices with the cross-similarity matrix C (n×m) and the inner
/// matrix W (m×m). W is taken from the landmark rows of C, so the two are
/// bit-consistent.
#[derive(Debug, Clone)]
pub struct NystromFactors {
    pub indices: Vec<usize>,
    pub c: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl NystromFactors {
    pub fn m(&self) -> usize {
        self.indices.len()
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }
}

pub fn build_nystrom_factors(
    data: &DataMatrix,
    indices: &[usize],
    cfg: &KernelConfig,
) -> Result<NystromFactors> {
    let n = data.n();
    if indices.is_empty() {
        return Err(invalid("landmark set is empty"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(invalid(format!(
            "landmark index {bad} out of range for n = {n}"
        )));
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(invalid(format!("duplicate landmark index {}", w[0])));
    }
    warn_on_coincident_landmarks(data, indices);
    let c = cross_kernel(data, indices, cfg);
    let w = c.select_rows(indices.iter());
    Ok(NystromFactors {
        indices: indices.to_vec(),
        c,
        w,
    })
}

/// Nyström factors for an explicit PSD matrix (C = K P, W = Pᵀ K P).
pub fn nystrom_factors_from_kernel(k: &DMatrix<f64>, indices: &[usize]) -> Result<NystromFactors> {
    let n = k.nrows();
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    if indices.is_empty()
        || sorted.windows(2).any(|w| w[0] == w[1])
        || sorted.last().is_some_and(|&i| i >= n)
    {
        return Err(invalid(
            "landmark indices must be distinct and within range",
        ));
    }
    let c = k.select_columns(indices.iter());
    let w = c.select_rows(indices.iter());
    Ok(NystromFactors {
        indices: indices.to_vec(),
        c,
        w,
    })
}

fn warn_on_coincident_landmarks(data: &DataMatrix, indices: &[usize]) {
    for (a, &i) in indices.iter().enumerate() {
        for &j in &indices[a + 1..] {
            let dist2: f64 = data
                .row(i)
                .iter()
                .zip(data.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            if dist2.sqrt() < 1e-12 {
                log::warn!("landmarks {i} and {j} coincide; W will be singular");
                return;
            }
        }
    }
}

/// Rank used when reconstructing C W† Cᵀ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructionRank {
    Full,
    Truncated(usize),
}

/// C W† Cᵀ, or C ⟦W⟧ₗ† Cᵀ for a rank-l truncation, formed as G Gᵀ so the
/// result is symmetric. Materializes n×n.
pub fn nystrom_reconstruct(f: &NystromFactors, rank: ReconstructionRank) -> Result<DMatrix<f64>> {
    check_dense_cap("Nyström reconstruction", f.n())?;
    let evd = sym_evd(&f.w)?;
    let l = match rank {
        ReconstructionRank::Full if evd.rank() == 0 => return Ok(DMatrix::zeros(f.n(), f.n())),
        ReconstructionRank::Full => evd.rank(),
        ReconstructionRank::Truncated(l) => l,
    };
    if l == 0 || l > evd.rank() {
        return Err(invalid(format!("rank {l} out of range 1..={}", evd.rank())));
    }
    let scale: Vec<f64> = evd.values.iter().take(l).map(|x| 1.0 / x.sqrt()).collect();
    let g = &f.c * scale_columns(&evd.vectors.columns(0, l).into_owned(), &scale);
    Ok(&g * g.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{asymmetry, full_sym_spectrum, spectral_norm};
    use rand::Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> DataMatrix {
        let mut rng = rng_from_seed(seed);
        let values = (0..n * d).map(|_| rng.random::<f64>()).collect();
        DataMatrix::new(values, n, d, None).unwrap()
    }

    #[test]
    fn similarity_special_values() {
        assert_eq!(
            gaussian_similarity(&[0.3, -1.0], &[0.3, -1.0], 0.7).unwrap(),
            1.0
        );
        let e1 = (-1.0f64).exp();
        assert!((gaussian_similarity(&[0.0, 0.0], &[3.0, 4.0], 5.0).unwrap() - e1).abs() < 1e-15);
        assert!(
            (gaussian_similarity(&[1.0], &[3.0], 2.0).unwrap() - 0.367_879_441_171_442_3).abs()
                < 1e-15
        );
        let a = gaussian_similarity(&[0.1, 0.2], &[0.5, -0.4], 0.9).unwrap();
        let b = gaussian_similarity(&[0.5, -0.4], &[0.1, 0.2], 0.9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn similarity_rejects_bad_input() {
        assert!(gaussian_similarity(&[f64::NAN], &[0.0], 1.0).is_err());
        assert!(gaussian_similarity(&[0.0], &[0.0], 0.0).is_err());
        assert!(gaussian_similarity(&[0.0], &[0.0, 1.0], 1.0).is_err());
        assert!(KernelConfig::new(-1.0).is_err());
    }

    #[test]
    fn dense_kernel_small_cases() {
        let one = DataMatrix::new(vec![0.5, 0.5], 1, 2, None).unwrap();
        let dk = build_dense_kernel(&one, &KernelConfig::new(1.0).unwrap()).unwrap();
        assert_eq!(dk.k, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(dk.degrees[0], 1.0);

        let twins = DataMatrix::new(vec![1.0, 2.0, 1.0, 2.0], 2, 2, None).unwrap();
        let dk = build_dense_kernel(&twins, &KernelConfig::new(0.3).unwrap()).unwrap();
        assert_eq!(dk.k, DMatrix::from_element(2, 2, 1.0));
        assert_eq!(dk.degrees.as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn dense_kernel_matches_pairwise_oracle() {
        let data = random_data(3, 4, 1);
        let dk = build_dense_kernel(&data, &KernelConfig::new(1.0).unwrap()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d2: f64 = data
                    .row(i)
                    .iter()
                    .zip(data.row(j))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                assert!((dk.k[(i, j)] - (-d2).exp()).abs() < 1e-15);
            }
            let sum: f64 = (0..3).map(|j| dk.k[(i, j)]).sum();
            assert!((dk.degrees[i] - sum).abs() < 1e-15);
        }
    }

    #[test]
    fn dense_kernel_invariants() {
        let data = random_data(40, 3, 2);
        let dk = build_dense_kernel(&data, &KernelConfig::new(0.4).unwrap()).unwrap();
        assert!(asymmetry(&dk.k) <= 1e-12);
        assert!(dk.k.iter().all(|&x| x > 0.0 && x <= 1.0));
        assert!((0..40).all(|i| dk.k[(i, i)] == 1.0));
        assert!(dk.degrees.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn dense_cap_is_enforced() {
        assert!(check_dense_cap("test", dense_cap() + 1).is_err());
        assert!(check_dense_cap("test", 10).is_ok());
    }

    #[test]
    fn landmarks_full_set_is_permutation() {
        let idx = sample_landmarks_uniform(5, 5, 99).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        assert!(sample_landmarks_uniform(5, 6, 0).is_err());
        assert!(sample_landmarks_uniform(5, 0, 0).is_err());
    }

    #[test]
    fn landmarks_are_deterministic_and_distinct() {
        let a = sample_landmarks_uniform(1000, 100, 42).unwrap();
        let b = sample_landmarks_uniform(1000, 100, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, sample_landmarks_uniform(1000, 100, 43).unwrap());
    }

    #[test]
    fn landmark_sampling_is_uniform() {
        let trials = 10_000;
        let mut counts = [0usize; 10];
        for seed in 0..trials {
            for i in sample_landmarks_uniform(10, 3, seed as u64).unwrap() {
                counts[i] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / trials as f64;
            assert!((freq - 0.3).abs() <= 0.05, "{freq}");
        }
    }

    #[test]
    fn full_landmark_factors_equal_dense_kernel() {
        let data = random_data(12, 2, 5);
        let cfg = KernelConfig::new(0.5).unwrap();
        let dk = build_dense_kernel(&data, &cfg).unwrap();
        let all: Vec<usize> = (0..12).collect();
        let f = build_nystrom_factors(&data, &all, &cfg).unwrap();
        assert_eq!(f.c, dk.k);
        assert_eq!(f.w, dk.k);
    }

    #[test]
    fn single_landmark_factors() {
        let data = random_data(6, 2, 6);
        let cfg = KernelConfig::new(0.5).unwrap();
        let f = build_nystrom_factors(&data, &[3], &cfg).unwrap();
        assert_eq!(f.w, DMatrix::from_element(1, 1, 1.0));
        for i in 0..6 {
            assert_eq!(f.c[(i, 0)], cfg.eval(data.row(i), data.row(3)));
        }
    }

    #[test]
    fn landmark_rows_of_c_reproduce_w() {
        let data = random_data(50, 3, 7);
        let cfg = KernelConfig::new(0.6).unwrap();
        let idx = sample_landmarks_uniform(50, 9, 1).unwrap();
        let f = build_nystrom_factors(&data, &idx, &cfg).unwrap();
        for (a, &i) in idx.iter().enumerate() {
            for b in 0..9 {
                assert_eq!(f.c[(i, b)].to_bits(), f.w[(a, b)].to_bits());
            }
        }
        assert!(asymmetry(&f.w) <= 1e-12);
        let (values, _) = full_sym_spectrum(&f.w).unwrap();
        assert!(values[8] >= -1e-10 * values[0]);
    }

    #[test]
    fn duplicate_or_out_of_range_landmarks_rejected() {
        let data = random_data(5, 2, 8);
        let cfg = KernelConfig::new(1.0).unwrap();
        assert!(build_nystrom_factors(&data, &[1, 1], &cfg).is_err());
        assert!(build_nystrom_factors(&data, &[7], &cfg).is_err());
        assert!(build_nystrom_factors(&data, &[], &cfg).is_err());
    }

    #[test]
    fn reconstruction_is_exact_with_all_landmarks() {
        // σ small relative to spacing keeps K well conditioned.
        let data = random_data(30, 3, 9);
        let cfg = KernelConfig::new(0.35).unwrap();
        let dk = build_dense_kernel(&data, &cfg).unwrap();
        let all: Vec<usize> = (0..30).collect();
        let f = build_nystrom_factors(&data, &all, &cfg).unwrap();
        let full = nystrom_reconstruct(&f, ReconstructionRank::Full).unwrap();
        let kn = spectral_norm(&dk.k).unwrap();
        assert!(spectral_norm(&(&full - &dk.k)).unwrap() <= 1e-10 * kn);
        let m = sym_evd(&f.w).unwrap().rank();
        let trunc = nystrom_reconstruct(&f, ReconstructionRank::Truncated(m)).unwrap();
        assert!(spectral_norm(&(&trunc - &full)).unwrap() <= 1e-10 * kn);
    }

    #[test]
    fn reconstruction_is_psd() {
        let data = random_data(40, 2, 10);
        let cfg = KernelConfig::new(0.3).unwrap();
        let idx = sample_landmarks_uniform(40, 10, 3).unwrap();
        let f = build_nystrom_factors(&data, &idx, &cfg).unwrap();
        for rank in [ReconstructionRank::Full, ReconstructionRank::Truncated(4)] {
            let r = nystrom_reconstruct(&f, rank).unwrap();
            assert!(asymmetry(&r) <= 1e-12);
            let (values, _) = full_sym_spectrum(&r).unwrap();
            assert!(values[values.len() - 1] >= -1e-8 * values[0]);
        }
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(xs), 2.0);
    }
}
