use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, KMeansResult};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_CODEBOOK_SIZE: usize = 750;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Random,
    Kmeans,
}

/// `C` codewords of dimension `D`, stored one per row, with usage counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub z: Tensor,
    pub usage_counts: Vec<u64>,
    pub seed: u64,
}

/// Draws a `C × D` matrix with i.i.d. `Normal(0, 1/D)` entries.
pub fn random_codewords(size: usize, dim: usize, seed: u64) -> Result<Tensor> {
    if size == 0 || dim == 0 {
        return Err(Error::Config(
            "codebook size and dimension must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("valid normal");
    let data = (0..size * dim).map(|_| normal.sample(&mut rng)).collect();
    Tensor::new(vec![size, dim], data)
}

impl Codebook {
    pub fn random(size: usize, dim: usize, seed: u64) -> Result<Self> {
        Ok(Self::from_codewords(
            random_codewords(size, dim, seed)?,
            seed,
        ))
    }

    pub fn from_codewords(z: Tensor, seed: u64) -> Self {
        let c = z.rows();
        Self {
            z,
            usage_counts: vec![0; c],
            seed,
        }
    }

    pub fn size(&self) -> usize {
        self.z.rows()
    }

    pub fn dim(&self) -> usize {
        self.z.cols()
    }

    /// Re-initializes the codewords. `Kmeans` needs at least `C` sample
    /// rows in `data` and returns the clustering trace.
    pub fn init(&mut self, mode: InitMode, data: Option<&Tensor>) -> Result<Option<KMeansResult>> {
        match mode {
            InitMode::Random => {
                self.z = random_codewords(self.size(), self.dim(), self.seed)?;
                self.reset_usage();
                Ok(None)
            }
            InitMode::Kmeans => {
                let sample = data.ok_or_else(|| {
                    Error::Config("k-means initialization needs a token sample".into())
                })?;
                if sample.cols() != self.dim() {
                    return Err(Error::Shape(format!(
                        "sample dimension {} differs from codebook dimension {}",
                        sample.cols(),
                        self.dim()
                    )));
                }
                let result = kmeans(sample, self.size(), self.seed)?;
                self.z = result.centroids.clone();
                self.reset_usage();
                Ok(Some(result))
            }
        }
    }

    pub fn reset_usage(&mut self) {
        self.usage_counts.iter_mut().for_each(|c| *c = 0);
    }

    pub fn stats(&self) -> Result<CodebookStats> {
        CodebookStats::from_counts(&self.usage_counts)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CodebookStats {
    pub perplexity: f64,
    pub dead_count: usize,
    pub histogram: Vec<u64>,
}

impl CodebookStats {
    /// `exp(entropy)` of the usage distribution, and the number of unused
    /// codewords.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Usage(
                "no tokens quantized since the last reset".into(),
            ));
        }
        let entropy: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total as f64;
                -p * p.ln()
            })
            .sum();
        Ok(Self {
            perplexity: entropy.exp(),
            dead_count: counts.iter().filter(|&&c| c == 0).count(),
            histogram: counts.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn random_is_seeded() {
        let a = Codebook::random(16, 4, 3).unwrap();
        let b = Codebook::random(16, 4, 3).unwrap();
        let c = Codebook::random(16, 4, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.z, c.z);
    }

    #[test]
    fn perplexity_cases() {
        let s = CodebookStats::from_counts(&[5; 10]).unwrap();
        assert_abs_diff_eq!(s.perplexity, 10.0, epsilon = 1e-9);
        assert_eq!(s.dead_count, 0);

        let s = CodebookStats::from_counts(&[0, 9, 0, 0]).unwrap();
        assert_abs_diff_eq!(s.perplexity, 1.0, epsilon = 1e-12);
        assert_eq!(s.dead_count, 3);

        let s = CodebookStats::from_counts(&[3, 1]).unwrap();
        let h: f64 = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert_abs_diff_eq!(s.perplexity, h.exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.perplexity, 1.7548, epsilon = 1e-4);

        assert!(matches!(
            CodebookStats::from_counts(&[0, 0]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn kmeans_init_requires_sample() {
        let mut cb = Codebook::random(4, 2, 0).unwrap();
        assert!(cb.init(InitMode::Kmeans, None).is_err());
        let few = Tensor::zeros(&[3, 2]);
        assert!(matches!(
            cb.init(InitMode::Kmeans, Some(&few)),
            Err(Error::Config(_))
        ));
    }
}
