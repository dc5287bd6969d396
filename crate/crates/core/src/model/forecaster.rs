use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ModelConfig, VqPlacement};
use super::params::{BoundParams, ParamId, ParamStore};
use crate::data::WindowDataset;
use crate::error::{Error, Result};
use crate::revin;
use crate::svq::{self, Assignments, CodebookStats, InitMode};
use crate::tensor::{Tape, Tensor, Var};

/// Splits a length-`L` series into `floor((L − P)/S) + 1` patches of length
/// `P`; a trailing remainder shorter than `P` is dropped.
pub fn patchify(x: &[f64], patch_length: usize, stride: usize) -> Result<Tensor> {
    if patch_length == 0 || stride == 0 {
        return Err(Error::Config("patch length and stride must be >= 1".into()));
    }
    if patch_length > x.len() {
        return Err(Error::Config(format!(
            "patch length {patch_length} exceeds series length {}",
            x.len()
        )));
    }
    let n = (x.len() - patch_length) / stride + 1;
    let data = (0..n)
        .flat_map(|i| x[i * stride..i * stride + patch_length].iter().copied())
        .collect();
    Tensor::new(vec![n, patch_length], data)
}

fn patch_index(
    sequences: usize,
    len: usize,
    patch_length: usize,
    stride: usize,
    n_patches: usize,
) -> Vec<usize> {
    let mut idx = Vec::with_capacity(sequences * n_patches * patch_length);
    for s in 0..sequences {
        for i in 0..n_patches {
            let start = s * len + i * stride;
            idx.extend(start..start + patch_length);
        }
    }
    idx
}

#[derive(Clone, Debug)]
struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Linear {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut uniform =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        let w =
            Tensor::new(vec![fan_in, fan_out], uniform(fan_in * fan_out)).expect("weight shape");
        let b = Tensor::new(vec![fan_out], uniform(fan_out)).expect("bias shape");
        Self {
            weight: store.insert(format!("{name}.weight"), w),
            bias: Some(store.insert(format!("{name}.bias"), b)),
        }
    }

    fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var> {
        tape.linear(x, p.var(self.weight), self.bias.map(|b| p.var(b)))
    }
}

/// Mutable state threaded through one forward pass.
struct PassState {
    eps: f64,
    dropout: f64,
    rng: Option<ChaCha8Rng>,
    attention: Vec<Var>,
}

impl PassState {
    fn dropout(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut().filter(|_| self.dropout > 0.0) else {
            return Ok(x);
        };
        let keep = 1.0 - self.dropout;
        let shape = tape.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let mask = tape.constant(Tensor::new(shape, mask)?);
        tape.mul(x, mask)
    }
}

/// Pre-norm self-attention block with an optional feed-forward sub-layer.
/// Both sub-layers are normalized with the block's single layer norm.
#[derive(Clone, Debug)]
struct AttentionBlock {
    norm_gain: ParamId,
    norm_bias: ParamId,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ffn: Option<(Linear, Linear)>,
    n_heads: usize,
}

impl AttentionBlock {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &ModelConfig,
        use_ffn: bool,
    ) -> Self {
        let d = cfg.d_model;
        let norm_gain = store.insert(format!("{name}.norm.gain"), Tensor::ones(&[d]));
        let norm_bias = store.insert(format!("{name}.norm.bias"), Tensor::zeros(&[d]));
        let q = Linear::new(store, rng, &format!("{name}.attn.q"), d, d);
        let k = Linear::new(store, rng, &format!("{name}.attn.k"), d, d);
        let v = Linear::new(store, rng, &format!("{name}.attn.v"), d, d);
        let o = Linear::new(store, rng, &format!("{name}.attn.o"), d, d);
        let ffn = use_ffn.then(|| {
            (
                Linear::new(store, rng, &format!("{name}.ffn.in"), d, cfg.d_ff),
                Linear::new(store, rng, &format!("{name}.ffn.out"), cfg.d_ff, d),
            )
        });
        Self {
            norm_gain,
            norm_bias,
            q,
            k,
            v,
            o,
            ffn,
            n_heads: cfg.n_heads,
        }
    }

    fn norm(&self, tape: &mut Tape, p: &BoundParams, x: Var, st: &PassState) -> Result<Var> {
        tape.layernorm(x, p.var(self.norm_gain), p.var(self.norm_bias), st.eps)
    }

    fn split_heads(&self, tape: &mut Tape, x: Var, s: usize, n: usize, d: usize) -> Result<Var> {
        let h = self.n_heads;
        let x = tape.reshape(x, &[s, n, h, d / h])?;
        let x = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(x, &[s * h, n, d / h])
    }

    fn attention(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        x: Var,
        st: &mut PassState,
    ) -> Result<Var> {
        let &[s, n, d] = tape.shape(x) else {
            return Err(Error::Shape(format!(
                "attention expects [seq, tokens, d], got {:?}",
                tape.shape(x)
            )));
        };
        let h = self.n_heads;
        let q = self.q.forward(tape, p, x)?;
        let k = self.k.forward(tape, p, x)?;
        let v = self.v.forward(tape, p, x)?;
        let q = self.split_heads(tape, q, s, n, d)?;
        let k = self.split_heads(tape, k, s, n, d)?;
        let v = self.split_heads(tape, v, s, n, d)?;
        let kt = tape.transpose(k)?;
        let scores = tape.bmm(q, kt)?;
        let scores = tape.scale(scores, 1.0 / ((d / h) as f64).sqrt());
        let weights = tape.softmax(scores, 2)?;
        st.attention.push(weights);
        let ctx = tape.bmm(weights, v)?;
        let ctx = tape.reshape(ctx, &[s, h, n, d / h])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[s, n, d])?;
        self.o.forward(tape, p, ctx)
    }

    fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var, st: &mut PassState) -> Result<Var> {
        let h = self.norm(tape, p, x, st)?;
        let a = self.attention(tape, p, h, st)?;
        let a = st.dropout(tape, a)?;
        let mut x = tape.add(x, a)?;
        if let Some((inner, outer)) = &self.ffn {
            let h = self.norm(tape, p, x, st)?;
            let f = inner.forward(tape, p, h)?;
            let f = tape.gelu(f);
            let f = outer.forward(tape, p, f)?;
            let f = st.dropout(tape, f)?;
            x = tape.add(x, f)?;
        }
        Ok(x)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions<'a> {
    /// Enables dropout.
    pub training: bool,
    pub dropout_seed: u64,
    /// Reuse the quantizer's codeword selection from an earlier pass.
    pub replay: Option<&'a Assignments>,
}

/// Handles produced by [`Forecaster::forward`].
pub struct ForwardOutput {
    /// `[batch, T, M]`
    pub forecast: Var,
    /// Commitment loss when a quantizer is present.
    pub commitment: Option<Var>,
    pub assignments: Option<Assignments>,
    /// Tokens entering the quantizer, `[tokens, D]`.
    pub quant_input: Option<Var>,
    /// Straight-through quantizer output, `[tokens, D]`.
    pub quant_output: Option<Var>,
    /// Encoder output, `[sequences, patches, d_model]`.
    pub encoder_output: Var,
    /// Attention weights of every block, `[sequences · heads, patches, patches]`.
    pub attention: Vec<Var>,
    pub params: BoundParams,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    pub embed: usize,
    pub positional: usize,
    pub attention: usize,
    pub ffn: usize,
    pub head: usize,
    pub quantizer: usize,
    pub revin: usize,
    pub total: usize,
}

/// Closed-form feed-forward parameter count of a configuration.
pub fn ffn_param_count(cfg: &ModelConfig) -> usize {
    let per_layer = cfg.d_model * cfg.d_ff + cfg.d_ff + cfg.d_ff * cfg.d_model + cfg.d_model;
    let layers = usize::from(cfg.use_ffn_encoder) * cfg.encoder_layers
        + usize::from(cfg.use_ffn_decoder) * cfg.decoder_layers;
    layers * per_layer
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    PreQuant,
    PostQuant,
}

/// Channel-independent patch transformer with an optional quantizer between
/// (or before) its attention stacks.
#[derive(Clone, Debug)]
pub struct Forecaster {
    config: ModelConfig,
    params: ParamStore,
    revin: Option<(ParamId, ParamId)>,
    embed: Linear,
    position: ParamId,
    encoder: Vec<AttentionBlock>,
    decoder: Vec<AttentionBlock>,
    codebooks: Vec<ParamId>,
    head: Linear,
    usage: Vec<Vec<u64>>,
}

impl Forecaster {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, np) = (config.d_model, config.n_patches());

        let revin = (config.use_revin && config.revin_affine).then(|| {
            (
                store.insert("revin.gain", Tensor::ones(&[config.channels])),
                store.insert("revin.bias", Tensor::zeros(&[config.channels])),
            )
        });
        let embed = Linear::new(&mut store, &mut rng, "embed", config.patch_length, d);
        let pos = (0..np * d).map(|_| rng.gen_range(-0.02..0.02)).collect();
        let position = store.insert("embed.position", Tensor::new(vec![np, d], pos)?);
        let encoder = (0..config.encoder_layers)
            .map(|i| {
                AttentionBlock::new(
                    &mut store,
                    &mut rng,
                    &format!("encoder.{i}"),
                    &config,
                    config.use_ffn_encoder,
                )
            })
            .collect();
        let mut codebooks = Vec::new();
        if config.vq_placement != VqPlacement::None {
            for s in 0..config.vq_variant.num_codebooks() {
                let seed = config
                    .seed
                    .wrapping_add(1 + s as u64)
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let z = svq::random_codewords(config.codebook_size, config.codebook_dim(), seed)?;
                codebooks.push(store.insert(format!("quantizer.codebook.{s}"), z));
            }
        }
        let decoder = (0..config.decoder_layers)
            .map(|i| {
                AttentionBlock::new(
                    &mut store,
                    &mut rng,
                    &format!("decoder.{i}"),
                    &config,
                    config.use_ffn_decoder,
                )
            })
            .collect();
        let head = Linear::new(&mut store, &mut rng, "head", np * d, config.horizon);
        let usage = vec![vec![0; config.codebook_size]; codebooks.len()];
        Ok(Self {
            config,
            params: store,
            revin,
            embed,
            position,
            encoder,
            decoder,
            codebooks,
            head,
            usage,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn has_quantizer(&self) -> bool {
        !self.codebooks.is_empty()
    }

    /// Codebook matrix of a quantizer stage.
    pub fn codebook(&self, stage: usize) -> Option<&Tensor> {
        self.codebooks.get(stage).map(|&id| self.params.get(id))
    }

    pub fn usage(&self) -> &[Vec<u64>] {
        &self.usage
    }

    pub fn set_usage(&mut self, usage: Vec<Vec<u64>>) -> Result<()> {
        if usage.len() != self.usage.len()
            || usage.iter().any(|u| u.len() != self.config.codebook_size)
        {
            return Err(Error::Shape(
                "usage counts do not match the codebooks".into(),
            ));
        }
        self.usage = usage;
        Ok(())
    }

    pub fn record_usage(&mut self, assignments: &Assignments) {
        assignments.accumulate_usage(&mut self.usage);
    }

    pub fn reset_usage(&mut self) {
        self.usage.iter_mut().flatten().for_each(|c| *c = 0);
    }

    /// Usage statistics of the first codebook stage.
    pub fn codebook_stats(&self) -> Result<CodebookStats> {
        let counts = self
            .usage
            .first()
            .ok_or_else(|| Error::Usage("model has no quantizer".into()))?;
        CodebookStats::from_counts(counts)
    }

    /// Zeroes the prediction head.
    pub fn zero_head(&mut self) {
        for id in [Some(self.head.weight), self.head.bias]
            .into_iter()
            .flatten()
        {
            self.params
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }

    /// Records the forward pass for a `[batch, L, M]` input.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        opts: ForwardOptions<'_>,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let &[b, l, m] = x.shape() else {
            return Err(Error::Shape(format!(
                "input must be [batch, L, M], got {:?}",
                x.shape()
            )));
        };
        if l != cfg.input_length || m != cfg.channels {
            return Err(Error::Shape(format!(
                "input [{b}, {l}, {m}] does not match L = {}, M = {}",
                cfg.input_length, cfg.channels
            )));
        }
        let p = self.params.bind(tape);
        let mut st = PassState {
            eps: cfg.norm_eps,
            dropout: cfg.dropout,
            rng: opts
                .training
                .then(|| ChaCha8Rng::seed_from_u64(opts.dropout_seed)),
            attention: Vec::new(),
        };
        let (s, np, d, pl) = (b * m, cfg.n_patches(), cfg.d_model, cfg.patch_length);

        let mut h = tape.constant(x.clone());
        let mut stats = None;
        let affine = if cfg.use_revin {
            let (g, bias) = match self.revin {
                Some((g, bias)) => (p.var(g), p.var(bias)),
                None => (
                    tape.constant(Tensor::ones(&[m])),
                    tape.constant(Tensor::zeros(&[m])),
                ),
            };
            let (z, rs) = revin::normalize_on(tape, h, g, bias, revin::DEFAULT_EPS)?;
            h = z;
            stats = Some(rs);
            Some((g, bias))
        } else {
            None
        };

        let h = tape.permute(h, &[0, 2, 1])?;
        let h = tape.reshape(h, &[s * l])?;
        let index = patch_index(s, l, pl, cfg.patch_stride, np);
        let mut patches = tape.gather(h, Rc::new(index), &[s * np, pl])?;

        let mut commitment = None;
        let mut assignments = None;
        let mut quant_input = None;
        let mut quant_output = None;
        let codebook_vars: Vec<Var> = self.codebooks.iter().map(|&id| p.var(id)).collect();

        if cfg.vq_placement == VqPlacement::PreEncoder {
            let r = svq::quantize(tape, patches, &codebook_vars, &cfg.vq_variant, opts.replay)?;
            quant_input = Some(patches);
            quant_output = Some(r.quantized);
            patches = r.quantized;
            commitment = Some(r.commitment_loss);
            assignments = Some(r.assignments);
        }

        let tokens = self.embed.forward(tape, &p, patches)?;
        let tokens = tape.reshape(tokens, &[s, np, d])?;
        let mut h = tape.add(tokens, p.var(self.position))?;
        for block in &self.encoder {
            h = block.forward(tape, &p, h, &mut st)?;
        }
        let encoder_output = h;

        if cfg.vq_placement == VqPlacement::PostEncoder {
            let flat = tape.reshape(h, &[s * np, d])?;
            let r = svq::quantize(tape, flat, &codebook_vars, &cfg.vq_variant, opts.replay)?;
            quant_input = Some(flat);
            quant_output = Some(r.quantized);
            h = tape.reshape(r.quantized, &[s, np, d])?;
            commitment = Some(r.commitment_loss);
            assignments = Some(r.assignments);
        }

        for block in &self.decoder {
            h = block.forward(tape, &p, h, &mut st)?;
        }

        let flat = tape.reshape(h, &[s, np * d])?;
        let y = self.head.forward(tape, &p, flat)?;
        let y = tape.reshape(y, &[b, m, cfg.horizon])?;
        let mut y = tape.permute(y, &[0, 2, 1])?;
        if let (Some((g, bias)), Some(rs)) = (affine, stats.as_ref()) {
            y = revin::denormalize_on(tape, y, g, bias, rs)?;
        }

        Ok(ForwardOutput {
            forecast: y,
            commitment,
            assignments,
            quant_input,
            quant_output,
            encoder_output,
            attention: st.attention,
            params: p,
        })
    }

    /// Forecast for a `[batch, L, M]` input; records codebook usage.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x, ForwardOptions::default())?;
        if let Some(a) = &out.assignments {
            self.record_usage(a);
        }
        Ok(tape.value(out.forecast).clone())
    }

    /// Exact parameter counts grouped by component.
    pub fn count_parameters(&self) -> ParamBreakdown {
        let mut b = ParamBreakdown::default();
        for (name, t) in self.params.iter() {
            let n = t.numel();
            let slot = if name.starts_with("revin.") {
                &mut b.revin
            } else if name == "embed.position" {
                &mut b.positional
            } else if name.starts_with("embed.") {
                &mut b.embed
            } else if name.contains(".ffn.") {
                &mut b.ffn
            } else if name.starts_with("encoder.") || name.starts_with("decoder.") {
                &mut b.attention
            } else if name.starts_with("quantizer.") {
                &mut b.quantizer
            } else {
                &mut b.head
            };
            *slot += n;
            b.total += n;
        }
        b
    }

    /// Token embeddings over every window of `dataset`, one row per token:
    /// the quantizer input (`PreQuant`, or the encoder output when there is
    /// no quantizer) or the quantizer output (`PostQuant`).
    pub fn embeddings(
        &self,
        dataset: &WindowDataset,
        which: EmbeddingSource,
        batch_size: usize,
    ) -> Result<Tensor> {
        if which == EmbeddingSource::PostQuant && !self.has_quantizer() {
            return Err(Error::Usage(
                "no quantizer: post-quantization embeddings do not exist".into(),
            ));
        }
        if dataset.is_empty() {
            return Err(Error::Usage("dataset has no windows".into()));
        }
        let mut rows = Vec::new();
        let mut cols = 0;
        let all: Vec<usize> = (0..dataset.len()).collect();
        for chunk in all.chunks(batch_size.max(1)) {
            let (x, _) = dataset.batch(chunk)?;
            let mut tape = Tape::new();
            let out = self.forward(&mut tape, &x, ForwardOptions::default())?;
            let var = match which {
                EmbeddingSource::PreQuant => out.quant_input.unwrap_or(out.encoder_output),
                EmbeddingSource::PostQuant => out.quant_output.expect("quantizer present"),
            };
            let t = tape.value(var);
            cols = t.cols();
            rows.extend_from_slice(t.data());
        }
        Tensor::new(vec![rows.len() / cols, cols], rows)
    }

    /// Writes embeddings to `embeddings_csv` and, when a quantizer exists,
    /// the first codebook to `codebook_csv`. Returns `(rows, cols, codewords)`.
    pub fn export_embeddings(
        &self,
        dataset: &WindowDataset,
        which: EmbeddingSource,
        embeddings_csv: &std::path::Path,
        codebook_csv: Option<&std::path::Path>,
    ) -> Result<(usize, usize, usize)> {
        let emb = self.embeddings(dataset, which, 64)?;
        write_matrix_csv(embeddings_csv, &emb)?;
        let mut codewords = 0;
        if let (Some(path), Some(cb)) = (codebook_csv, self.codebook(0)) {
            write_matrix_csv(path, cb)?;
            codewords = cb.rows();
        }
        Ok((emb.rows(), emb.cols(), codewords))
    }

    /// Re-seeds the codebooks according to the variant's init mode. For
    /// k-means, the sample is the quantizer input over (a strided subset
    /// of) the training windows.
    pub fn init_codebooks(&mut self, train: &WindowDataset, max_windows: usize) -> Result<()> {
        if !self.has_quantizer() || self.config.vq_variant.init_mode() != InitMode::Kmeans {
            return Ok(());
        }
        let step = (train.len() / max_windows.max(1)).max(1);
        let picked: Vec<usize> = (0..train.len())
            .step_by(step)
            .take(max_windows.max(1))
            .collect();
        let mut rows = Vec::new();
        let mut cols = 0;
        for chunk in picked.chunks(64) {
            let (x, _) = train.batch(chunk)?;
            let mut tape = Tape::new();
            let out = self.forward(&mut tape, &x, ForwardOptions::default())?;
            let t = tape.value(out.quant_input.expect("quantizer present"));
            cols = t.cols();
            rows.extend_from_slice(t.data());
        }
        let sample = Tensor::new(vec![rows.len() / cols, cols], rows)?;
        let seed = self.config.seed;
        for s in 0..self.codebooks.len() {
            let result = svq::kmeans(
                &sample,
                self.config.codebook_size,
                seed.wrapping_add(s as u64),
            )?;
            self.params
                .set(&format!("quantizer.codebook.{s}"), result.centroids)?;
        }
        self.reset_usage();
        Ok(())
    }
}

fn write_matrix_csv(path: &std::path::Path, m: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..m.cols()).map(|j| format!("d{j}")))?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}
