//! Experiment drivers: axis sweeps over the model and data settings, the
//! parameter audit, the covering demo, and the `svq` command line.

pub mod cli;
mod covering;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use covering::{covering_demo, covering_errors, CoveringConfig, CoveringReport};

use crate::data::{self, RawSeries, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{ffn_param_count, Forecaster, ModelConfig, VqPlacement};
use crate::svq::QuantizerVariant;
use crate::train::{self, TrainConfig};

/// Version string stamped on every result row.
pub const VERSION: &str = concat!("sparse-vq ", env!("CARGO_PKG_VERSION"));

/// Where an experiment's series comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default = "default_true")]
        has_header: bool,
        #[serde(default)]
        date_column: Option<usize>,
        /// Frequency label, e.g. `hourly`; sets the MASE seasonal period.
        #[serde(default)]
        frequency: String,
    },
    Synthetic {
        length: usize,
        period: f64,
        noise: f64,
        channels: usize,
        seed: u64,
    },
}

fn default_true() -> bool {
    true
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            length: 2000,
            period: 24.0,
            noise: 0.1,
            channels: 1,
            seed: 0,
        }
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<RawSeries> {
        match self {
            DatasetSource::Csv {
                path,
                has_header,
                date_column,
                frequency,
            } => {
                let mut s = data::load_csv(path, *has_header, *date_column)?;
                s.frequency_label = frequency.clone();
                Ok(s)
            }
            DatasetSource::Synthetic {
                length,
                period,
                noise,
                channels,
                seed,
            } => {
                if !(*period > 0.0) || *channels == 0 {
                    return Err(Error::Config(
                        "synthetic series needs period > 0 and channels >= 1".into(),
                    ));
                }
                data::synthetic_sine(*length, *period, *noise, *channels, *seed)
            }
        }
    }
}

/// The knob an experiment sweeps, with its values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum Axis {
    Ffn(Vec<bool>),
    Revin(Vec<bool>),
    VqPlacement(Vec<VqPlacement>),
    VqVariant(Vec<QuantizerVariant>),
    CodebookSize(Vec<usize>),
    Eta(Vec<f64>),
    FewShot(Vec<f64>),
}

/// One value of an [`Axis`].
#[derive(Clone, Debug, PartialEq)]
pub enum AxisValue {
    Ffn(bool),
    Revin(bool),
    VqPlacement(VqPlacement),
    VqVariant(QuantizerVariant),
    CodebookSize(usize),
    Eta(f64),
    FewShot(f64),
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Ffn(_) => "ffn",
            Axis::Revin(_) => "revin",
            Axis::VqPlacement(_) => "vq_placement",
            Axis::VqVariant(_) => "vq_variant",
            Axis::CodebookSize(_) => "codebook_size",
            Axis::Eta(_) => "eta",
            Axis::FewShot(_) => "few_shot",
        }
    }

    pub fn values(&self) -> Vec<AxisValue> {
        match self {
            Axis::Ffn(v) => v.iter().map(|&x| AxisValue::Ffn(x)).collect(),
            Axis::Revin(v) => v.iter().map(|&x| AxisValue::Revin(x)).collect(),
            Axis::VqPlacement(v) => v.iter().map(|&x| AxisValue::VqPlacement(x)).collect(),
            Axis::VqVariant(v) => v.iter().cloned().map(AxisValue::VqVariant).collect(),
            Axis::CodebookSize(v) => v.iter().map(|&x| AxisValue::CodebookSize(x)).collect(),
            Axis::Eta(v) => v.iter().map(|&x| AxisValue::Eta(x)).collect(),
            Axis::FewShot(v) => v.iter().map(|&x| AxisValue::FewShot(x)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl AxisValue {
    pub fn label(&self) -> String {
        let on_off = |b: bool| if b { "on" } else { "off" }.to_string();
        match self {
            AxisValue::Ffn(b) | AxisValue::Revin(b) => on_off(*b),
            AxisValue::VqPlacement(p) => p.name().to_string(),
            AxisValue::VqVariant(v) => match v.stages {
                Some(s) => format!("{}_{s}", v.tag.name()),
                None => v.tag.name().to_string(),
            },
            AxisValue::CodebookSize(c) => c.to_string(),
            AxisValue::Eta(x) | AxisValue::FewShot(x) => x.to_string(),
        }
    }

    fn apply(&self, cfg: &mut ModelConfig) {
        match self {
            AxisValue::Ffn(on) => *cfg = cfg.with_ffn(*on),
            AxisValue::Revin(on) => cfg.use_revin = *on,
            AxisValue::VqPlacement(p) => cfg.vq_placement = *p,
            AxisValue::VqVariant(v) => cfg.vq_variant = v.clone(),
            AxisValue::CodebookSize(c) => cfg.codebook_size = *c,
            AxisValue::Eta(_) | AxisValue::FewShot(_) => {}
        }
    }
}

/// A sweep over one axis, each value trained `repeats` times per horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: DatasetSource,
    pub split: SplitSpec,
    /// Window stride of every split.
    pub stride: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub axis: Axis,
    pub horizons: Vec<usize>,
    pub repeats: usize,
    pub seed_base: u64,
    /// Reuse the same seeds for every axis value, so values are compared
    /// on identical initialisations and batch orders.
    pub paired_seeds: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "ablation".into(),
            dataset: DatasetSource::default(),
            split: SplitSpec::default(),
            stride: 1,
            model: desk_model(),
            train: TrainConfig {
                epochs: 10,
                lr: 1e-3,
                patience: 3,
                ..Default::default()
            },
            axis: Axis::Ffn(vec![true, false]),
            horizons: vec![24],
            repeats: 3,
            seed_base: 0,
            paired_seeds: false,
        }
    }
}

/// Small model that trains in seconds on the synthetic series.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        input_length: 96,
        horizon: 24,
        patch_length: 16,
        patch_stride: 8,
        d_model: 32,
        n_heads: 4,
        encoder_layers: 1,
        decoder_layers: 1,
        d_ff: 64,
        codebook_size: 64,
        ..Default::default()
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "invalid experiment name {:?}",
                self.name
            )));
        }
        if self.axis.is_empty() {
            return Err(Error::Config(format!(
                "axis {} has no values",
                self.axis.name()
            )));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config(
                "horizons must be a non-empty list of positive lengths".into(),
            ));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        self.split.validate()?;
        self.train.validate()?;
        for &h in &self.horizons {
            for v in self.axis.values() {
                self.cell_config(&v, h, 0).validate()?;
            }
        }
        Ok(())
    }

    fn cell_config(&self, value: &AxisValue, horizon: usize, seed: u64) -> ModelConfig {
        let mut cfg = self.model.clone();
        cfg.horizon = horizon;
        cfg.seed = seed;
        value.apply(&mut cfg);
        cfg
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }
}

/// Hex SHA-256 of a JSON text.
pub fn config_hash(json: &str) -> String {
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Outcome of one (value, horizon, repeat) training run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellRecord {
    pub value: String,
    pub horizon: usize,
    pub repeat: usize,
    pub seed: u64,
    pub config_hash: String,
    pub params: Option<usize>,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub best_epoch: Option<usize>,
    pub perplexity: Option<f64>,
    pub error: Option<String>,
}

/// Aggregate over the repeats of one (value, horizon) pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub axis: String,
    pub value: String,
    pub horizon: usize,
    pub repeats: usize,
    pub completed: usize,
    pub seeds: String,
    pub config_hash: String,
    pub params: Option<usize>,
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
    pub mae_mean: Option<f64>,
    pub mae_std: Option<f64>,
    pub status: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationResult {
    pub experiment: String,
    pub spec_hash: String,
    pub rows: Vec<ResultRow>,
    pub cells: Vec<CellRecord>,
    pub incomplete: bool,
}

fn run_cell(
    spec: &ExperimentSpec,
    series: &RawSeries,
    value: &AxisValue,
    horizon: usize,
    seed: u64,
) -> Result<CellRecord> {
    let cfg = spec.cell_config(value, horizon, seed);
    let cfg = ModelConfig {
        channels: series.channels,
        ..cfg
    };
    let tc = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    let splits = data::make_windows(series, &spec.split, cfg.input_length, horizon, spec.stride)?;
    let train_ds = match value {
        AxisValue::Eta(eta) => data::inject_noise(&splits.train, *eta, seed)?,
        AxisValue::FewShot(f) => data::few_shot_subset(&splits.train, *f)?,
        _ => splits.train.clone(),
    };
    let mut model = Forecaster::new(cfg)?;
    let report = train::fit(&mut model, &train_ds, &splits.val, &tc)?;
    let metrics = train::evaluate(&model, &splits.test, &splits.train, None)?;
    Ok(CellRecord {
        value: value.label(),
        horizon,
        repeat: 0,
        seed,
        config_hash: String::new(),
        params: Some(model.count_parameters().total),
        mse: Some(metrics.mse),
        mae: Some(metrics.mae),
        best_epoch: report.best_epoch,
        perplexity: report
            .best_epoch
            .and_then(|e| report.history.get(e - 1))
            .and_then(|r| r.perplexity),
        error: None,
    })
}

fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Trains and evaluates every (value, horizon, repeat) cell. Cell `i` (in
/// value, horizon, repeat order) uses seed `seed_base + i`; with paired
/// seeds the index restarts at every axis value. A failing cell is recorded
/// and the sweep continues.
pub fn run_ablation(spec: &ExperimentSpec) -> Result<AblationResult> {
    spec.validate()?;
    let series = spec.dataset.load()?;
    let values = spec.axis.values();
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    let mut index = 0u64;
    for value in &values {
        if spec.paired_seeds {
            index = 0;
        }
        for &horizon in &spec.horizons {
            let hash_cfg = spec.cell_config(value, horizon, 0);
            let hash_src = serde_json::json!({
                "model": hash_cfg,
                "train": TrainConfig { seed: 0, ..spec.train.clone() },
                "dataset": spec.dataset,
                "split": spec.split,
                "stride": spec.stride,
                "axis": spec.axis.name(),
                "value": value.label(),
            });
            let hash = config_hash(&hash_src.to_string());
            let mut group = Vec::new();
            for repeat in 0..spec.repeats {
                let seed = spec.seed_base.wrapping_add(index);
                index += 1;
                let mut cell =
                    run_cell(spec, &series, value, horizon, seed).unwrap_or_else(|e| CellRecord {
                        value: value.label(),
                        horizon,
                        repeat,
                        seed,
                        config_hash: String::new(),
                        params: None,
                        mse: None,
                        mae: None,
                        best_epoch: None,
                        perplexity: None,
                        error: Some(e.to_string()),
                    });
                cell.repeat = repeat;
                cell.config_hash = hash.clone();
                group.push(cell);
            }
            let mse: Vec<f64> = group.iter().filter_map(|c| c.mse).collect();
            let mae: Vec<f64> = group.iter().filter_map(|c| c.mae).collect();
            let completed = mse.len();
            rows.push(ResultRow {
                experiment: spec.name.clone(),
                axis: spec.axis.name().into(),
                value: value.label(),
                horizon,
                repeats: spec.repeats,
                completed,
                seeds: group
                    .iter()
                    .map(|c| c.seed.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
                config_hash: hash,
                params: group.iter().find_map(|c| c.params),
                mse_mean: mean_std(&mse).map(|m| m.0),
                mse_std: mean_std(&mse).map(|m| m.1),
                mae_mean: mean_std(&mae).map(|m| m.0),
                mae_std: mean_std(&mae).map(|m| m.1),
                status: if completed == spec.repeats {
                    "ok"
                } else {
                    "incomplete"
                }
                .into(),
                version: VERSION.into(),
            });
            cells.extend(group);
        }
    }
    let incomplete = rows.iter().any(|r| r.status != "ok");
    Ok(AblationResult {
        experiment: spec.name.clone(),
        spec_hash: config_hash(&spec.to_canonical_json()),
        rows,
        cells,
        incomplete,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Creates `<out_dir>/<name>/<UTC timestamp>/`, suffixing the timestamp if
/// that directory already exists.
pub fn run_directory(out_dir: &Path, name: &str) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
    let base = out_dir.join(name);
    std::fs::create_dir_all(&base)?;
    let mut dir = base.join(&stamp);
    let mut n = 1;
    while dir.exists() {
        dir = base.join(format!("{stamp}-{n}"));
        n += 1;
    }
    std::fs::create_dir(&dir)?;
    Ok(dir)
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes `config.json`, `results.csv`, `cells.csv` and `summary.json`.
pub fn write_ablation(dir: &Path, spec: &ExperimentSpec, result: &AblationResult) -> Result<()> {
    write_json(&dir.join("config.json"), spec)?;
    write_rows(&dir.join("results.csv"), &result.rows)?;
    write_rows(&dir.join("cells.csv"), &result.cells)?;
    let failures: Vec<_> = result.cells.iter().filter(|c| c.error.is_some()).collect();
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({
            "experiment": result.experiment,
            "version": VERSION,
            "spec_hash": result.spec_hash,
            "rows": result.rows.len(),
            "cells": result.cells.len(),
            "failed_cells": failures.len(),
            "incomplete": result.incomplete,
            "failures": failures,
        }),
    )
}

/// MAE under training noise, relative to the noise-free row of the same
/// horizon.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub eta: f64,
    pub horizon: usize,
    pub mae: Option<f64>,
    pub degradation: Option<f64>,
}

/// Runs an `eta` sweep with paired seeds; the list must contain 0.
pub fn robustness_run(spec: &ExperimentSpec) -> Result<(AblationResult, Vec<RobustnessRow>)> {
    let spec = &ExperimentSpec {
        paired_seeds: true,
        ..spec.clone()
    };
    let Axis::Eta(etas) = &spec.axis else {
        return Err(Error::Config("robustness runs need an eta axis".into()));
    };
    if !etas.contains(&0.0) {
        return Err(Error::Config(
            "eta values must include 0 as the baseline".into(),
        ));
    }
    let result = run_ablation(spec)?;
    let table = robustness_table(etas, &result);
    Ok((result, table))
}

fn robustness_table(etas: &[f64], result: &AblationResult) -> Vec<RobustnessRow> {
    let mut table = Vec::new();
    let rows_per_value = result.rows.len() / etas.len().max(1);
    let baseline = etas.iter().position(|&e| e == 0.0).unwrap_or(0);
    for (vi, &eta) in etas.iter().enumerate() {
        for hi in 0..rows_per_value {
            let row = &result.rows[vi * rows_per_value + hi];
            let base = result.rows[baseline * rows_per_value + hi].mae_mean;
            let degradation = match (row.mae_mean, base) {
                _ if eta == 0.0 => row.mae_mean.map(|_| 0.0),
                (Some(m), Some(b)) if b > 0.0 => Some(m / b - 1.0),
                _ => None,
            };
            table.push(RobustnessRow {
                eta,
                horizon: row.horizon,
                mae: row.mae_mean,
                degradation,
            });
        }
    }
    table
}

pub fn write_robustness(dir: &Path, table: &[RobustnessRow]) -> Result<()> {
    write_rows(&dir.join("robustness.csv"), table)
}

/// Parameter counts of one FFN twin pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditRow {
    pub horizon: usize,
    pub params_with: usize,
    pub params_without: usize,
    pub ffn_count: usize,
    pub reduction_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamAudit {
    pub rows: Vec<AuditRow>,
    /// Reduction strictly decreases as the horizon grows.
    pub strictly_decreasing: bool,
}

/// Input of the `params` command: a base configuration and the horizons to
/// audit it at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSpec {
    pub model: ModelConfig,
    pub horizons: Vec<usize>,
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            horizons: vec![96, 192, 336, 720],
        }
    }
}

/// Audits pairs of configurations that differ only in their FFN switches.
pub fn param_audit(pairs: &[(ModelConfig, ModelConfig)]) -> Result<ParamAudit> {
    let mut rows = Vec::with_capacity(pairs.len());
    for (with, without) in pairs {
        if !with.is_ffn_twin_of(without) {
            return Err(Error::Usage(
                "audited configurations must differ only in their FFN switches".into(),
            ));
        }
        if ffn_param_count(without) != 0 || ffn_param_count(with) == 0 {
            return Err(Error::Usage(
                "the first configuration of a pair must use FFNs and the second must not".into(),
            ));
        }
        let pw = Forecaster::new(with.clone())?.count_parameters().total;
        let po = Forecaster::new(without.clone())?.count_parameters().total;
        let ffn = ffn_param_count(with);
        if pw != po + ffn {
            return Err(Error::Numeric(format!(
                "parameter counts {pw} and {po} differ by {} instead of {ffn}",
                pw as i64 - po as i64
            )));
        }
        rows.push(AuditRow {
            horizon: with.horizon,
            params_with: pw,
            params_without: po,
            ffn_count: ffn,
            reduction_pct: 100.0 * ffn as f64 / pw as f64,
        });
    }
    let mut sorted = rows.clone();
    sorted.sort_by_key(|r| r.horizon);
    let strictly_decreasing = sorted
        .windows(2)
        .all(|w| w[0].horizon < w[1].horizon && w[1].reduction_pct < w[0].reduction_pct);
    Ok(ParamAudit {
        rows,
        strictly_decreasing,
    })
}

/// FFN twins of `spec.model` at every horizon of `spec`.
pub fn audit_horizons(spec: &AuditSpec) -> Result<ParamAudit> {
    if spec.horizons.is_empty() {
        return Err(Error::Config("horizons must not be empty".into()));
    }
    let pairs: Vec<_> = spec
        .horizons
        .iter()
        .map(|&h| {
            let cfg = ModelConfig {
                horizon: h,
                ..spec.model.clone()
            };
            (cfg.with_ffn(true), cfg.with_ffn(false))
        })
        .collect();
    param_audit(&pairs)
}

pub fn audit_csv(audit: &ParamAudit) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &audit.rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is UTF-8"))
}
