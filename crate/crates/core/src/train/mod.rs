//! Losses, the Adam optimizer, the training loop and forecast metrics.

mod metrics;
mod optim;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{
    as_forecast_tensor, baseline_forecast, baseline_metrics, compute_metrics, evaluate,
    forecast_all, naive2_reference, seasonal_naive_scale, Baseline, Metrics, NaiveReference,
};
pub use optim::{adam_step, TrainState};

use crate::data::WindowDataset;
use crate::error::{Error, Result};
use crate::model::{Forecaster, ForwardOptions};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the commitment loss.
    pub lambda1: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda1: 0.25 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0) {
            return Err(Error::Config(format!(
                "lambda1 must be >= 0, got {}",
                self.lambda1
            )));
        }
        Ok(())
    }
}

/// Mean absolute error over batch, horizon and channels.
pub fn prediction_loss(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(truth) {
        return Err(Error::Shape(format!(
            "prediction {:?} and truth {:?} differ",
            tape.shape(pred),
            tape.shape(truth)
        )));
    }
    let d = tape.sub(pred, truth)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// `L_pred + lambda1 · L_ct`; without a commitment term this is `L_pred`.
pub fn total_loss(
    tape: &mut Tape,
    pred: Var,
    truth: Var,
    commitment: Option<Var>,
    cfg: &LossConfig,
) -> Result<Var> {
    let l = prediction_loss(tape, pred, truth)?;
    match commitment {
        Some(c) if cfg.lambda1 != 0.0 => {
            let c = tape.scale(c, cfg.lambda1);
            tape.add(l, c)
        }
        _ => Ok(l),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Training windows sampled for k-means codebook initialisation.
    pub kmeans_init_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr: 1e-4,
            patience: 5,
            seed: 0,
            loss: LossConfig::default(),
            kmeans_init_windows: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        self.loss.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub commit_loss: f64,
    pub perplexity: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub state: TrainState,
}

#[derive(Serialize)]
struct Summary<'a> {
    epochs_run: usize,
    best_epoch: Option<usize>,
    best_val_loss: Option<f64>,
    stopped_early: bool,
    steps: u64,
    final_perplexity: Option<f64>,
    history: &'a [EpochRecord],
}

impl TrainReport {
    pub fn write_history_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "epoch",
            "train_loss",
            "val_loss",
            "commit_loss",
            "perplexity",
        ])?;
        for r in &self.history {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.commit_loss.to_string(),
                r.perplexity.map(|p| p.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(Summary {
            epochs_run: self.history.len(),
            best_epoch: self.best_epoch,
            best_val_loss: self.best_val_loss.is_finite().then_some(self.best_val_loss),
            stopped_early: self.stopped_early,
            steps: self.state.step,
            final_perplexity: self.history.last().and_then(|r| r.perplexity),
            history: &self.history,
        })
        .expect("summary serializes")
    }

    pub fn write_summary_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &self.summary_json())?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// Mean prediction loss over every window of `dataset`.
pub fn dataset_loss(model: &Forecaster, dataset: &WindowDataset, batch_size: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{:?} split has no windows",
            dataset.split
        )));
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = dataset.batch(chunk)?;
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &x, ForwardOptions::default())?;
        let truth = tape.constant(y);
        let l = prediction_loss(&mut tape, out.forecast, truth)?;
        total += tape.value(l).item()? * chunk.len() as f64;
    }
    Ok(total / dataset.len() as f64)
}

fn diverged(epoch: usize, step: usize, err: Error) -> Error {
    match err {
        Error::Numeric(msg) => Error::Diverged { epoch, step, msg },
        e => e,
    }
}

/// Trains with shuffled mini-batches under `cfg.seed` and keeps the weights
/// of the epoch with the lowest validation prediction loss. Training stops
/// once `patience` consecutive epochs fail to improve on it.
pub fn fit(
    model: &mut Forecaster,
    train: &WindowDataset,
    val: &WindowDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut state = TrainState::new(model.params(), cfg.lr, cfg.seed);
    let mut report = TrainReport {
        history: Vec::new(),
        best_epoch: None,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
        state: state.clone(),
    };
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if train.is_empty() {
        return Err(Error::InsufficientData(
            "training split has no windows".into(),
        ));
    }
    if val.is_empty() {
        return Err(Error::InsufficientData(
            "validation split has no windows".into(),
        ));
    }
    model.init_codebooks(train, cfg.kmeans_init_windows)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (model.params().clone(), model.usage().to_vec());
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        model.reset_usage();
        let (mut loss_sum, mut commit_sum, mut seen) = (0.0, 0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let step = step + 1;
            let (x, y) = train.batch(chunk)?;
            let mut tape = Tape::new();
            let opts = ForwardOptions {
                training: true,
                dropout_seed: cfg.seed ^ (state.step + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                replay: None,
            };
            let out = model.forward(&mut tape, &x, opts)?;
            let truth = tape.constant(y);
            let loss = total_loss(&mut tape, out.forecast, truth, out.commitment, &cfg.loss)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    msg: format!("loss is {value}"),
                });
            }
            let commit = match out.commitment {
                Some(c) => tape.value(c).item()?,
                None => 0.0,
            };
            let grads = tape.backward(loss).map_err(|e| diverged(epoch, step, e))?;
            let grads = out.params.gradients(&grads, model.params());
            adam_step(&mut state, model.params_mut(), &grads)
                .map_err(|e| diverged(epoch, step, e))?;
            if let Some(a) = &out.assignments {
                model.record_usage(a);
            }
            loss_sum += value * chunk.len() as f64;
            commit_sum += commit * chunk.len() as f64;
            seen += chunk.len();
        }
        let perplexity = if model.has_quantizer() {
            Some(model.codebook_stats()?.perplexity)
        } else {
            None
        };
        let val_loss = dataset_loss(model, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: 0,
                msg: format!("validation loss is {val_loss}"),
            });
        }
        report.history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss,
            commit_loss: commit_sum / seen as f64,
            perplexity,
        });
        if val_loss < state.best_val {
            state.best_val = val_loss;
            report.best_epoch = Some(epoch);
            best = (model.params().clone(), model.usage().to_vec());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience.max(1) {
                report.stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    *model.params_mut() = best.0;
    model.set_usage(best.1)?;
    report.best_val_loss = state.best_val;
    report.state = state;
    Ok(report)
}
