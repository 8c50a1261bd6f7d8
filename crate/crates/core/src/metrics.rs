//! Clustering quality (permutation-matched F-score, NMI) and subspace
//! agreement (eigenvector alignment, largest principal angle).

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::linalg::{orthonormality_error, spectral_norm};

/// Largest k for which the F-score maximization enumerates permutations.
pub const BRUTE_FORCE_MAX_K: usize = 8;

const ORTHONORMAL_TOL: f64 = 1e-6;

/// counts[i][j] = |{s : truth[s] = i, pred[s] = j}|.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<usize>>,
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
    pub total: usize,
}

impl ContingencyTable {
    /// Square k×k table; every label must be below k.
    pub fn new(truth: &[usize], pred: &[usize], k: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(invalid(format!(
                "label vectors differ in length ({} vs {})",
                truth.len(),
                pred.len()
            )));
        }
        if let Some(&bad) = truth.iter().chain(pred).find(|&&l| l >= k) {
            return Err(invalid(format!("label {bad} out of range for k = {k}")));
        }
        Ok(Self::build(truth, pred, k, k))
    }

    /// Table sized to the labels present in each argument.
    pub fn from_labels(truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(invalid(format!(
                "label vectors differ in length ({} vs {})",
                truth.len(),
                pred.len()
            )));
        }
        let rows = truth.iter().max().map_or(0, |m| m + 1);
        let cols = pred.iter().max().map_or(0, |m| m + 1);
        Ok(Self::build(truth, pred, rows, cols))
    }

    fn build(truth: &[usize], pred: &[usize], rows: usize, cols: usize) -> Self {
        let mut counts = vec![vec![0usize; cols]; rows];
        for (&t, &p) in truth.iter().zip(pred) {
            counts[t][p] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..cols)
            .map(|j| counts.iter().map(|r| r[j]).sum())
            .collect();
        Self {
            counts,
            row_sums,
            col_sums,
            total: truth.len(),
        }
    }

    /// F[i][j] = 2 p r / (p + r) with p = n_ij/|pred_j|, r = n_ij/|truth_i|; zero when n_ij = 0.
    pub fn f_matrix(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &nij)| {
                        if nij == 0 {
                            return 0.0;
                        }
                        let p = nij as f64 / self.col_sums[j] as f64;
                        let r = nij as f64 / self.row_sums[i] as f64;
                        2.0 * p * r / (p + r)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Mean F over the best one-to-one matching of true to predicted clusters.
pub fn f_score(truth: &[usize], pred: &[usize], k: usize) -> Result<f64> {
    if k <= BRUTE_FORCE_MAX_K {
        f_score_brute_force(truth, pred, k)
    } else {
        f_score_assignment(truth, pred, k)
    }
}

pub fn f_score_brute_force(truth: &[usize], pred: &[usize], k: usize) -> Result<f64> {
    let f = ContingencyTable::new(truth, pred, k)?.f_matrix();
    let mut used = vec![false; k];
    Ok(best_matching(&f, 0, &mut used) / k as f64)
}

fn best_matching(f: &[Vec<f64>], row: usize, used: &mut [bool]) -> f64 {
    if row == f.len() {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    for j in 0..used.len() {
        if !used[j] {
            used[j] = true;
            best = best.max(f[row][j] + best_matching(f, row + 1, used));
            used[j] = false;
        }
    }
    best
}

pub fn f_score_assignment(truth: &[usize], pred: &[usize], k: usize) -> Result<f64> {
    let f = ContingencyTable::new(truth, pred, k)?.f_matrix();
    let cost: Vec<Vec<f64>> = f.iter().map(|r| r.iter().map(|x| -x).collect()).collect();
    let assign = hungarian(&cost);
    Ok(assign
        .iter()
        .enumerate()
        .map(|(i, &j)| f[i][j])
        .sum::<f64>()
        / k as f64)
}

/// Minimum-cost perfect assignment on a square cost matrix (row → column).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // Potentials and matching over 1-based indices, column 0 as sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn entropy(sizes: &[usize], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// 2 I(truth; pred) / (H(truth) + H(pred)), natural log.
pub fn nmi(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let table = ContingencyTable::from_labels(truth, pred)?;
    if table.total == 0 {
        return Err(Error::UndefinedMetric("NMI of empty labelings".into()));
    }
    let n = table.total as f64;
    let h = entropy(&table.row_sums, n) + entropy(&table.col_sums, n);
    if h == 0.0 {
        // Both labelings put everything in one cluster, hence agree.
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let pij = nij as f64 / n;
                mi += pij
                    * (nij as f64 * n / (table.row_sums[i] as f64 * table.col_sums[j] as f64)).ln();
            }
        }
    }
    Ok((2.0 * mi / h).clamp(0.0, 1.0))
}

fn check_orthonormal(u: &DMatrix<f64>, name: &str) -> Result<()> {
    let err = orthonormality_error(u);
    if err.is_nan() || err > ORTHONORMAL_TOL {
        return Err(invalid(format!(
            "{name} does not have orthonormal columns (max |UᵀU - I| = {err:e})"
        )));
    }
    Ok(())
}

fn check_pair(a: &DMatrix<f64>, b: &DMatrix<f64>, names: (&str, &str)) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(invalid(format!(
            "{} is {:?} but {} is {:?}",
            names.0,
            a.shape(),
            names.1,
            b.shape()
        )));
    }
    check_orthonormal(a, names.0)?;
    check_orthonormal(b, names.1)
}

/// (1/k)‖Ûᵀ U‖_F²; 1 exactly when the column spans coincide.
pub fn eigenvector_alignment(u_hat: &DMatrix<f64>, u_ref: &DMatrix<f64>) -> Result<f64> {
    check_pair(u_hat, u_ref, ("U_hat", "U_ref"))?;
    let k = u_hat.ncols() as f64;
    Ok(u_hat.tr_mul(u_ref).norm_squared() / k)
}

/// arcsin ‖(I − U₂U₂ᵀ) U₁‖₂.
pub fn largest_principal_angle(u1: &DMatrix<f64>, u2: &DMatrix<f64>) -> Result<f64> {
    check_pair(u1, u2, ("U1", "U2"))?;
    let resid = u1 - u2 * u2.tr_mul(u1);
    let s = spectral_norm(&resid)?;
    Ok(s.clamp(0.0, 1.0).asin())
}
