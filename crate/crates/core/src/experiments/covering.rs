use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svq::{nearest_codeword, sparse_reconstruct, Metric, SparseRegressionConfig};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoveringConfig {
    /// Ambient dimension.
    pub n: usize,
    /// Error radius for the coverage fractions.
    pub epsilon: f64,
    pub codebook_size: usize,
    /// Codewords combined by the sparse scheme.
    pub t: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for CoveringConfig {
    fn default() -> Self {
        Self {
            n: 16,
            epsilon: 0.5,
            codebook_size: 64,
            t: 4,
            trials: 1000,
            seed: 0,
        }
    }
}

impl CoveringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.codebook_size == 0 || self.t == 0 {
            return Err(Error::Config("n, codebook size and t must be >= 1".into()));
        }
        if self.t > self.codebook_size {
            return Err(Error::Config(format!(
                "t = {} exceeds the codebook size {}",
                self.t, self.codebook_size
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must be in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.trials < 100 {
            return Err(Error::Config(format!(
                "at least 100 trials are needed, got {}",
                self.trials
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoveringReport {
    pub config: CoveringConfig,
    pub nn_mean_error: f64,
    pub sparse_mean_error: f64,
    /// `sparse_mean_error / nn_mean_error`.
    pub ratio: f64,
    pub nn_within_epsilon: f64,
    pub sparse_within_epsilon: f64,
    /// Trials where the sparse error exceeds the nearest-neighbour error.
    pub dominance_violations: usize,
}

/// Report fields without the configuration, for one-row CSV output.
#[derive(Serialize)]
pub(crate) struct CoveringRow {
    n: usize,
    codebook_size: usize,
    t: usize,
    trials: usize,
    seed: u64,
    nn_mean_error: f64,
    sparse_mean_error: f64,
    ratio: f64,
    dominance_violations: usize,
}

impl CoveringReport {
    pub(crate) fn without_config(&self) -> CoveringRow {
        CoveringRow {
            n: self.config.n,
            codebook_size: self.config.codebook_size,
            t: self.config.t,
            trials: self.config.trials,
            seed: self.config.seed,
            nn_mean_error: self.nn_mean_error,
            sparse_mean_error: self.sparse_mean_error,
            ratio: self.ratio,
            dominance_violations: self.dominance_violations,
        }
    }
}

fn gaussian_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng, unit: bool) -> Tensor {
    let mut data: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    if unit {
        for row in data.chunks_mut(cols) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Tensor::new(vec![rows, cols], data).expect("positive extents")
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Per-point nearest-neighbour and sparse (least squares on the `t`
/// nearest codewords) reconstruction errors.
pub fn covering_errors(
    points: &Tensor,
    codebook: &Tensor,
    t: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if points.ndim() != 2 || codebook.ndim() != 2 || points.cols() != codebook.cols() {
        return Err(Error::Shape(format!(
            "points {:?} and codebook {:?} are incompatible",
            points.shape(),
            codebook.shape()
        )));
    }
    if !codebook.is_finite()
        || (0..codebook.rows()).any(|i| codebook.row(i).iter().all(|&v| v == 0.0))
    {
        return Err(Error::Numeric(
            "codebook has a zero or non-finite codeword".into(),
        ));
    }
    let cfg = SparseRegressionConfig {
        k_neighbors: t,
        max_nonzeros: t,
        nonnegative: false,
        ridge: 0.0,
    };
    cfg.validate(codebook.rows())?;
    let mut nn = Vec::with_capacity(points.rows());
    let mut sparse = Vec::with_capacity(points.rows());
    for i in 0..points.rows() {
        let x = points.row(i);
        let (_, d) = nearest_codeword(x, codebook, Metric::Euclidean)?;
        let code = sparse_reconstruct(x, codebook, &cfg)?;
        nn.push(d);
        sparse.push(distance(x, &code.reconstruction));
    }
    Ok((nn, sparse))
}

/// Random unit vectors against one Gaussian codebook of the given size:
/// nearest-neighbour error versus sparse-combination error.
pub fn covering_demo(cfg: &CoveringConfig) -> Result<CoveringReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let codebook = gaussian_rows(cfg.codebook_size, cfg.n, &mut rng, false);
    let points = gaussian_rows(cfg.trials, cfg.n, &mut rng, true);
    let (nn, sparse) = covering_errors(&points, &codebook, cfg.t)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let within =
        |v: &[f64]| v.iter().filter(|&&e| e <= cfg.epsilon).count() as f64 / v.len() as f64;
    let (nn_mean, sparse_mean) = (mean(&nn), mean(&sparse));
    Ok(CoveringReport {
        config: *cfg,
        nn_mean_error: nn_mean,
        sparse_mean_error: sparse_mean,
        ratio: sparse_mean / nn_mean,
        nn_within_epsilon: within(&nn),
        sparse_within_epsilon: within(&sparse),
        dominance_violations: nn
            .iter()
            .zip(&sparse)
            .filter(|(n, s)| **s > **n + 1e-9)
            .count(),
    })
}
