//! Nearest-codeword search and sparse least-squares reconstruction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

/// Parameters of the sparse reconstruction step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparseRegressionConfig {
    /// Candidate set: this many nearest codewords.
    pub k_neighbors: usize,
    /// At most this many nonzero coefficients.
    pub max_nonzeros: usize,
    pub nonnegative: bool,
    pub ridge: f64,
}

impl Default for SparseRegressionConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 8,
            max_nonzeros: 4,
            nonnegative: false,
            ridge: 1e-8,
        }
    }
}

impl SparseRegressionConfig {
    pub fn validate(&self, codebook_size: usize) -> Result<()> {
        let (k, t) = (self.k_neighbors, self.max_nonzeros);
        if !(1 <= t && t <= k && k <= codebook_size) {
            return Err(Error::Config(format!(
                "sparse regression needs 1 <= t ({t}) <= k ({k}) <= C ({codebook_size})"
            )));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::Config("ridge must be >= 0".into()));
        }
        Ok(())
    }
}

/// A reconstruction as a weighted set of codewords.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCode {
    pub reconstruction: Vec<f64>,
    /// Codeword indices, in the order of `coefficients`.
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
}

impl SparseCode {
    pub fn terms(&self) -> Vec<(usize, f64)> {
        self.support
            .iter()
            .copied()
            .zip(self.coefficients.iter().copied())
            .collect()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(x: &[f64], codebook: &Tensor) -> Result<()> {
    if codebook.ndim() != 2 || codebook.cols() != x.len() {
        return Err(Error::Shape(format!(
            "token of dimension {} against codebook {:?}",
            x.len(),
            codebook.shape()
        )));
    }
    Ok(())
}

/// Index of the closest codeword and its distance (Euclidean distance, or
/// `1 − cosine similarity`). Ties go to the lowest index.
pub fn nearest_codeword(x: &[f64], codebook: &Tensor, metric: Metric) -> Result<(usize, f64)> {
    check_dims(x, codebook)?;
    match metric {
        Metric::Euclidean => {
            let mut best = (0, f64::INFINITY);
            for j in 0..codebook.rows() {
                let d = sq_dist(x, codebook.row(j));
                if d < best.1 {
                    best = (j, d);
                }
            }
            Ok((best.0, best.1.sqrt()))
        }
        Metric::Cosine => {
            let nx = dot(x, x).sqrt();
            if nx == 0.0 {
                return Err(Error::Numeric("cosine distance of a zero vector".into()));
            }
            let mut best = (0, f64::NEG_INFINITY);
            for j in 0..codebook.rows() {
                let z = codebook.row(j);
                let nz = dot(z, z).sqrt();
                if nz == 0.0 {
                    return Err(Error::Numeric(format!("codeword {j} is the zero vector")));
                }
                let sim = dot(x, z) / (nx * nz);
                if sim > best.1 {
                    best = (j, sim);
                }
            }
            Ok((best.0, 1.0 - best.1))
        }
    }
}

/// The `k` nearest codewords (Euclidean), closest first, ties by index.
pub fn k_nearest(x: &[f64], codebook: &Tensor, k: usize) -> Result<Vec<usize>> {
    check_dims(x, codebook)?;
    let mut d: Vec<(f64, usize)> = (0..codebook.rows())
        .map(|j| (sq_dist(x, codebook.row(j)), j))
        .collect();
    let k = k.min(d.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k, cmp);
        d.truncate(k);
    }
    d.sort_unstable_by(cmp);
    Ok(d.into_iter().map(|(_, j)| j).collect())
}

/// Solves `A w = b` for a small symmetric positive definite `A` (row-major,
/// `n × n`) by Cholesky. Returns `None` when `A` is not numerically PD.
pub(crate) fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    let scale = (0..n)
        .map(|i| a[i * n + i].abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if s <= 1e-13 * scale {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s = b[i] - (0..i).map(|p| l[i * n + p] * y[p]).sum::<f64>();
        y[i] = s / l[i * n + i];
    }
    let mut w = vec![0.0; n];
    for i in (0..n).rev() {
        let s = y[i] - (i + 1..n).map(|p| l[p * n + i] * w[p]).sum::<f64>();
        w[i] = s / l[i * n + i];
    }
    Some(w)
}

/// Least-squares fit of `x` by the candidate codewords, working on the
/// candidates' Gram matrix.
struct CandidateSystem {
    gram: Vec<f64>,
    rhs: Vec<f64>,
    xx: f64,
    k: usize,
    ridge: f64,
}

impl CandidateSystem {
    fn new(x: &[f64], codebook: &Tensor, candidates: &[usize], ridge: f64) -> Self {
        let k = candidates.len();
        let mut gram = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..=a {
                let g = dot(codebook.row(candidates[a]), codebook.row(candidates[b]));
                gram[a * k + b] = g;
                gram[b * k + a] = g;
            }
        }
        let rhs = candidates
            .iter()
            .map(|&j| dot(codebook.row(j), x))
            .collect();
        Self {
            gram,
            rhs,
            xx: dot(x, x),
            k,
            ridge,
        }
    }

    /// Coefficients on the candidate positions `subset` and the squared
    /// residual `‖x − Σ w z‖²`.
    fn solve(&self, subset: &[usize]) -> Option<(Vec<f64>, f64)> {
        let n = subset.len();
        let mut a = vec![0.0; n * n];
        for (i, &p) in subset.iter().enumerate() {
            for (j, &q) in subset.iter().enumerate() {
                a[i * n + j] = self.gram[p * self.k + q];
            }
            a[i * n + i] += self.ridge;
        }
        let b: Vec<f64> = subset.iter().map(|&p| self.rhs[p]).collect();
        let w = cholesky_solve(&a, &b, n)?;
        let mut quad = 0.0;
        for (i, &p) in subset.iter().enumerate() {
            for (j, &q) in subset.iter().enumerate() {
                quad += w[i] * w[j] * self.gram[p * self.k + q];
            }
        }
        let resid = (self.xx - 2.0 * dot(&w, &b) + quad).max(0.0);
        Some((w, resid))
    }
}

/// Largest number of candidate supports searched exhaustively.
const EXHAUSTIVE_LIMIT: usize = 4096;

fn support_count(k: usize, t: usize) -> usize {
    let mut total = 0usize;
    let mut c = 1usize;
    for s in 1..=t {
        c = c * (k + 1 - s) / s;
        total = total.saturating_add(c);
    }
    total
}

/// Visits every subset of `0..k` with `1..=t` elements in order of size,
/// then lexicographically.
fn for_each_subset(k: usize, t: usize, mut f: impl FnMut(&[usize])) {
    for size in 1..=t.min(k) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            f(&idx);
            let mut i = size;
            while i > 0 && idx[i - 1] == k - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
}

/// Reconstructs `x` as a sparse combination of its nearest codewords.
///
/// The candidate set is the `k_neighbors` nearest codewords. When the
/// number of supports of size `≤ max_nonzeros` is small the best support is
/// found exhaustively; otherwise the ridge solution on all candidates is
/// hard-thresholded to the largest coefficients (always keeping the nearest
/// codeword) and re-solved. The result is never worse than snapping to the
/// nearest codeword, which is returned when nothing beats it.
pub fn sparse_reconstruct(
    x: &[f64],
    codebook: &Tensor,
    cfg: &SparseRegressionConfig,
) -> Result<SparseCode> {
    check_dims(x, codebook)?;
    cfg.validate(codebook.rows())?;
    let candidates = k_nearest(x, codebook, cfg.k_neighbors)?;
    let nearest = candidates[0];
    let nn_resid = sq_dist(x, codebook.row(nearest));
    let sys = CandidateSystem::new(x, codebook, &candidates, cfg.ridge);
    let feasible = |w: &[f64]| !cfg.nonnegative || w.iter().all(|&v| v >= 0.0);

    let mut best: Option<(Vec<usize>, Vec<f64>, f64)> = None;
    let mut consider = |subset: &[usize], w: Vec<f64>, resid: f64| {
        if best.as_ref().map_or(true, |b| resid < b.2) {
            best = Some((subset.to_vec(), w, resid));
        }
    };

    let t = cfg.max_nonzeros.min(candidates.len());
    if support_count(candidates.len(), t) <= EXHAUSTIVE_LIMIT {
        for_each_subset(candidates.len(), t, |subset| {
            if let Some((w, resid)) = sys.solve(subset) {
                if feasible(&w) {
                    consider(subset, w, resid);
                }
            }
        });
    } else {
        let all: Vec<usize> = (0..candidates.len()).collect();
        let (w_all, _) = sys.solve(&all).ok_or_else(|| {
            Error::Numeric("candidate Gram matrix is singular; increase ridge".into())
        })?;
        let mut order: Vec<usize> = (1..candidates.len()).collect();
        order.sort_by(|&a, &b| w_all[b].abs().total_cmp(&w_all[a].abs()).then(a.cmp(&b)));
        let mut subset = vec![0];
        subset.extend(order.into_iter().take(t - 1));
        subset.sort_unstable();
        if let Some((w, resid)) = sys.solve(&subset) {
            if feasible(&w) {
                consider(&subset, w, resid);
            }
        }
    }

    let (support, coefficients) = match best {
        Some((subset, w, resid)) if resid <= nn_resid => {
            (subset.iter().map(|&p| candidates[p]).collect::<Vec<_>>(), w)
        }
        _ => (vec![nearest], vec![1.0]),
    };
    let mut reconstruction = vec![0.0; x.len()];
    for (&j, &w) in support.iter().zip(&coefficients) {
        for (r, z) in reconstruction.iter_mut().zip(codebook.row(j)) {
            *r += w * z;
        }
    }
    // The Gram-based residual is exact only up to rounding; re-check on the
    // materialized reconstruction.
    if sq_dist(x, &reconstruction) > nn_resid {
        return Ok(SparseCode {
            reconstruction: codebook.row(nearest).to_vec(),
            support: vec![nearest],
            coefficients: vec![1.0],
        });
    }
    Ok(SparseCode {
        reconstruction,
        support,
        coefficients,
    })
}
