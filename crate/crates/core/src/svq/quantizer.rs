use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::codebook::{Codebook, InitMode};
use super::sparse::{nearest_codeword, sparse_reconstruct, Metric, SparseRegressionConfig};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantTag {
    /// Sparse combination of nearest codewords.
    Svq,
    /// Nearest codeword.
    Vq,
    /// Nearest codeword by cosine similarity.
    VqCosine,
    /// Nearest codeword, codebook seeded from k-means centroids.
    VqKmeans,
    /// Residual quantization over several codebooks.
    VqRecursive,
    /// Sparse combination whose codebook is trained through the
    /// reconstruction itself.
    VqAdaptive,
}

impl VariantTag {
    pub const ALL: [VariantTag; 6] = [
        VariantTag::Svq,
        VariantTag::Vq,
        VariantTag::VqCosine,
        VariantTag::VqKmeans,
        VariantTag::VqRecursive,
        VariantTag::VqAdaptive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantTag::Svq => "svq",
            VariantTag::Vq => "vq",
            VariantTag::VqCosine => "vq_cosine",
            VariantTag::VqKmeans => "vq_kmeans",
            VariantTag::VqRecursive => "vq_recursive",
            VariantTag::VqAdaptive => "vq_adaptive",
        }
    }

    fn is_sparse(self) -> bool {
        matches!(self, VariantTag::Svq | VariantTag::VqAdaptive)
    }
}

pub const DEFAULT_STAGES: usize = 3;

/// Deserializes either as a bare tag (`"svq"`) or as a full object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VariantRepr")]
pub struct QuantizerVariant {
    pub tag: VariantTag,
    /// Number of residual stages; only meaningful for `vq_recursive`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    /// Only meaningful for `svq` and `vq_adaptive`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse: Option<SparseRegressionConfig>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum VariantRepr {
    Tag(VariantTag),
    Full {
        tag: VariantTag,
        #[serde(default)]
        stages: Option<usize>,
        #[serde(default)]
        sparse: Option<SparseRegressionConfig>,
    },
}

impl From<VariantRepr> for QuantizerVariant {
    fn from(r: VariantRepr) -> Self {
        match r {
            VariantRepr::Tag(tag) => Self::new(tag),
            VariantRepr::Full {
                tag,
                stages,
                sparse,
            } => Self {
                tag,
                stages,
                sparse,
            },
        }
    }
}

impl Default for QuantizerVariant {
    fn default() -> Self {
        Self::new(VariantTag::Svq)
    }
}

impl QuantizerVariant {
    /// A variant with the default settings for `tag`.
    pub fn new(tag: VariantTag) -> Self {
        Self {
            tag,
            stages: (tag == VariantTag::VqRecursive).then_some(DEFAULT_STAGES),
            sparse: tag.is_sparse().then(SparseRegressionConfig::default),
        }
    }

    pub fn validate(&self, codebook_size: usize) -> Result<()> {
        match (self.tag, self.stages) {
            (VariantTag::VqRecursive, Some(0)) => {
                return Err(Error::Config("recursive VQ needs stages >= 1".into()))
            }
            (VariantTag::VqRecursive, _) => {}
            (tag, Some(_)) => {
                return Err(Error::Config(format!(
                    "`stages` is not a setting of the {} quantizer",
                    tag.name()
                )))
            }
            _ => {}
        }
        match (self.tag.is_sparse(), &self.sparse) {
            (true, Some(cfg)) => cfg.validate(codebook_size)?,
            (true, None) => SparseRegressionConfig::default().validate(codebook_size)?,
            (false, Some(_)) => {
                return Err(Error::Config(format!(
                    "sparse regression settings do not apply to the {} quantizer",
                    self.tag.name()
                )))
            }
            (false, None) => {}
        }
        Ok(())
    }

    pub fn num_codebooks(&self) -> usize {
        match self.tag {
            VariantTag::VqRecursive => self.stages.unwrap_or(DEFAULT_STAGES),
            _ => 1,
        }
    }

    pub fn metric(&self) -> Metric {
        match self.tag {
            VariantTag::VqCosine => Metric::Cosine,
            _ => Metric::Euclidean,
        }
    }

    pub fn init_mode(&self) -> InitMode {
        match self.tag {
            VariantTag::VqKmeans => InitMode::Kmeans,
            _ => InitMode::Random,
        }
    }

    pub fn sparse_config(&self) -> SparseRegressionConfig {
        self.sparse.unwrap_or_default()
    }
}

/// Weighted codewords chosen for each token, per codebook stage:
/// `stages[s][token]` is a list of `(codeword, weight)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignments {
    pub stages: Vec<Vec<Vec<(usize, f64)>>>,
}

impl Assignments {
    pub fn n_tokens(&self) -> usize {
        self.stages.first().map_or(0, Vec::len)
    }

    /// The dominant codeword of a token at a stage: largest absolute weight,
    /// lowest index on ties.
    pub fn primary(&self, stage: usize, token: usize) -> usize {
        let terms = &self.stages[stage][token];
        let mut best = terms[0];
        for &(j, w) in &terms[1..] {
            if w.abs() > best.1.abs() || (w.abs() == best.1.abs() && j < best.0) {
                best = (j, w);
            }
        }
        best.0
    }

    /// Per-token dominant codeword of the first stage.
    pub fn codeword_indices(&self) -> Vec<usize> {
        (0..self.n_tokens()).map(|i| self.primary(0, i)).collect()
    }

    /// Per-token supports of the first stage.
    pub fn supports(&self) -> Vec<Vec<usize>> {
        self.stages[0]
            .iter()
            .map(|t| t.iter().map(|&(j, _)| j).collect())
            .collect()
    }

    /// Per-token coefficients of the first stage.
    pub fn coefficients(&self) -> Vec<Vec<f64>> {
        self.stages[0]
            .iter()
            .map(|t| t.iter().map(|&(_, w)| w).collect())
            .collect()
    }

    /// Adds one count per token and stage to the dominant codeword.
    pub fn accumulate_usage(&self, counts: &mut [Vec<u64>]) {
        for (s, stage_counts) in counts.iter_mut().enumerate().take(self.stages.len()) {
            for i in 0..self.n_tokens() {
                stage_counts[self.primary(s, i)] += 1;
            }
        }
    }
}

pub struct QuantizeResult {
    /// Straight-through output: forward value is the reconstruction, the
    /// Jacobian with respect to the tokens is the identity.
    pub quantized: Var,
    /// The reconstruction itself, differentiable in the codebooks.
    pub reconstruction: Var,
    pub commitment_loss: Var,
    pub assignments: Assignments,
}

/// `‖sg[x] − q‖² + ‖x − sg[q]‖²`, summed over the feature axis and
/// averaged over tokens (rows).
pub fn commitment_loss_on(tape: &mut Tape, x: Var, q: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(q) {
        return Err(Error::Shape(format!(
            "commitment loss operands differ: {:?} vs {:?}",
            tape.shape(x),
            tape.shape(q)
        )));
    }
    let n_tokens = tape.value(x).rows() as f64;
    let sx = tape.stop_gradient(x);
    let sq = tape.stop_gradient(q);
    let d1 = tape.sub(sx, q)?;
    let d1 = tape.square(d1);
    let t1 = tape.sum(d1);
    let d2 = tape.sub(x, sq)?;
    let d2 = tape.square(d2);
    let t2 = tape.sum(d2);
    let total = tape.add(t1, t2)?;
    Ok(tape.scale(total, 1.0 / n_tokens))
}

/// Value of the commitment loss for plain tensors.
pub fn commitment_loss(x: &Tensor, q: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let qv = tape.constant(q.clone());
    let l = commitment_loss_on(&mut tape, xv, qv)?;
    tape.value(l).item()
}

fn select(
    tokens: &Tensor,
    codebooks: &[&Tensor],
    variant: &QuantizerVariant,
) -> Result<Assignments> {
    let n = tokens.rows();
    let stages = match variant.tag {
        VariantTag::Vq | VariantTag::VqKmeans | VariantTag::VqCosine => {
            let metric = variant.metric();
            let terms = (0..n)
                .map(|i| {
                    nearest_codeword(tokens.row(i), codebooks[0], metric)
                        .map(|(j, _)| vec![(j, 1.0)])
                })
                .collect::<Result<Vec<_>>>()?;
            vec![terms]
        }
        VariantTag::Svq | VariantTag::VqAdaptive => {
            let cfg = variant.sparse_config();
            let terms = (0..n)
                .map(|i| sparse_reconstruct(tokens.row(i), codebooks[0], &cfg).map(|c| c.terms()))
                .collect::<Result<Vec<_>>>()?;
            vec![terms]
        }
        VariantTag::VqRecursive => {
            let mut residual = tokens.clone();
            let mut stages = Vec::with_capacity(codebooks.len());
            for cb in codebooks {
                let mut terms = Vec::with_capacity(n);
                for i in 0..n {
                    let (j, _) = nearest_codeword(residual.row(i), cb, Metric::Euclidean)?;
                    for (r, z) in residual.row_mut(i).iter_mut().zip(cb.row(j)) {
                        *r -= z;
                    }
                    terms.push(vec![(j, 1.0)]);
                }
                stages.push(terms);
            }
            stages
        }
    };
    Ok(Assignments { stages })
}

/// Quantizes the rows of `tokens` (`[n, D]`) against `codebooks` (one
/// `[C, D]` matrix per stage).
///
/// With `replay`, the codeword selection and weights are taken from a
/// previous call instead of being searched again; the forward value is then
/// a smooth function of the tokens and codebooks.
pub fn quantize(
    tape: &mut Tape,
    tokens: Var,
    codebooks: &[Var],
    variant: &QuantizerVariant,
    replay: Option<&Assignments>,
) -> Result<QuantizeResult> {
    let tshape = tape.shape(tokens).to_vec();
    if tshape.len() != 2 {
        return Err(Error::Shape(format!(
            "tokens must be [n, D], got {tshape:?}"
        )));
    }
    if codebooks.len() != variant.num_codebooks() {
        return Err(Error::Config(format!(
            "{} quantizer needs {} codebook(s), got {}",
            variant.tag.name(),
            variant.num_codebooks(),
            codebooks.len()
        )));
    }
    for &cb in codebooks {
        let s = tape.shape(cb);
        if s.len() != 2 || s[1] != tshape[1] {
            return Err(Error::Shape(format!(
                "codebook {s:?} does not match tokens {tshape:?}"
            )));
        }
        variant.validate(s[0])?;
    }

    let assignments = match replay {
        Some(a) => {
            if a.stages.len() != codebooks.len() || a.n_tokens() != tshape[0] {
                return Err(Error::Usage(
                    "replayed assignments do not match this call".into(),
                ));
            }
            a.clone()
        }
        None => {
            let values: Vec<&Tensor> = codebooks.iter().map(|&v| tape.value(v)).collect();
            select(tape.value(tokens), &values, variant)?
        }
    };

    let mut reconstruction: Option<Var> = None;
    for (&cb, terms) in codebooks.iter().zip(&assignments.stages) {
        let part = tape.combine_rows(cb, Rc::new(terms.clone()))?;
        reconstruction = Some(match reconstruction {
            Some(acc) => tape.add(acc, part)?,
            None => part,
        });
    }
    let q = reconstruction.expect("at least one codebook");

    let quantized = if variant.tag == VariantTag::VqAdaptive {
        // value q; identity Jacobian in the tokens; codebook gradient
        // through q from every downstream loss
        let frozen = tape.stop_gradient(tokens);
        let zero = tape.sub(tokens, frozen)?;
        tape.add(q, zero)?
    } else {
        let diff = tape.sub(q, tokens)?;
        let frozen = tape.stop_gradient(diff);
        tape.add(tokens, frozen)?
    };
    let commitment_loss = commitment_loss_on(tape, tokens, q)?;

    Ok(QuantizeResult {
        quantized,
        reconstruction: q,
        commitment_loss,
        assignments,
    })
}

/// Quantizes plain tokens against stand-alone codebooks and records usage.
/// Returns the reconstruction, the commitment loss and the assignments.
pub fn quantize_tokens(
    tokens: &Tensor,
    codebooks: &mut [Codebook],
    variant: &QuantizerVariant,
) -> Result<(Tensor, f64, Assignments)> {
    let mut tape = Tape::new();
    let t = tape.constant(tokens.clone());
    let cbs: Vec<Var> = codebooks
        .iter()
        .map(|c| tape.constant(c.z.clone()))
        .collect();
    let r = quantize(&mut tape, t, &cbs, variant, None)?;
    let mut counts: Vec<Vec<u64>> = codebooks.iter().map(|c| c.usage_counts.clone()).collect();
    r.assignments.accumulate_usage(&mut counts);
    for (cb, c) in codebooks.iter_mut().zip(counts) {
        cb.usage_counts = c;
    }
    Ok((
        tape.value(r.quantized).clone(),
        tape.value(r.commitment_loss).item()?,
        r.assignments,
    ))
}
