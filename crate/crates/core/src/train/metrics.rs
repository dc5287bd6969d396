use serde::{Deserialize, Serialize};

use crate::data::{seasonal_period, WindowDataset};
use crate::error::{Error, Result};
use crate::model::{Forecaster, ForwardOptions};
use crate::tensor::{Tape, Tensor};

/// Forecast accuracy over every (window, step, channel).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub smape: f64,
    /// NaN when the training series has no seasonal variation to scale by.
    pub mase: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub owa: Option<f64>,
}

/// SMAPE and MASE of the Naive2 reference forecast used by OWA.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveReference {
    pub smape: f64,
    pub mase: f64,
}

/// Simple forecasts computed from the input window alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    /// Repeat the last observed value.
    RepeatLast,
    /// Repeat the last full season of the given period.
    SeasonalNaive(usize),
}

/// Mean absolute seasonal difference of a `[len, M]` segment, pooled over
/// channels.
pub fn seasonal_naive_scale(segment: &[f64], channels: usize, period: usize) -> Result<f64> {
    let len = segment.len() / channels.max(1);
    if period == 0 || len <= period {
        return Err(Error::InsufficientData(format!(
            "seasonal scale needs more than {period} timesteps, got {len}"
        )));
    }
    let n = (len - period) * channels;
    let total: f64 = (period * channels..segment.len())
        .map(|i| (segment[i] - segment[i - period * channels]).abs())
        .sum();
    Ok(total / n as f64)
}

/// Metrics of flat predictions against flat truth.
pub fn compute_metrics(
    pred: &[f64],
    truth: &[f64],
    mase_scale: f64,
    reference: Option<&NaiveReference>,
) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InsufficientData("no forecasts to evaluate".into()));
    }
    let n = pred.len() as f64;
    let (mut se, mut ae, mut sm) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        let e = p - t;
        se += e * e;
        ae += e.abs();
        let denom = p.abs() + t.abs();
        if denom > 0.0 {
            sm += e.abs() / denom;
        }
    }
    let mae = ae / n;
    let smape = 200.0 * sm / n;
    let mase = if mase_scale > 0.0 {
        mae / mase_scale
    } else {
        f64::NAN
    };
    let owa = reference.map(|r| (smape / r.smape + mase / r.mase) / 2.0);
    Ok(Metrics {
        mse: se / n,
        mae,
        smape,
        mase,
        owa,
    })
}

fn mase_scale(scale_source: &WindowDataset) -> Result<f64> {
    seasonal_naive_scale(
        scale_source.segment(),
        scale_source.channels,
        seasonal_period(&scale_source.frequency_label),
    )
}

fn all_targets(dataset: &WindowDataset) -> Vec<f64> {
    (0..dataset.len())
        .flat_map(|i| dataset.target(i).iter().copied())
        .collect()
}

/// Model forecasts for every window, flattened as `[window, T, M]`.
pub fn forecast_all(
    model: &Forecaster,
    dataset: &WindowDataset,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut out = Vec::with_capacity(dataset.len() * dataset.horizon * dataset.channels);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = dataset.batch(chunk)?;
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &x, ForwardOptions::default())?;
        out.extend_from_slice(tape.value(f.forecast).data());
    }
    Ok(out)
}

/// Evaluates `model` on `test`; MASE is scaled by the seasonal naive error
/// of `scale_source` (normally the training split).
pub fn evaluate(
    model: &Forecaster,
    test: &WindowDataset,
    scale_source: &WindowDataset,
    reference: Option<&NaiveReference>,
) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::InsufficientData("test split has no windows".into()));
    }
    let pred = forecast_all(model, test, 64)?;
    compute_metrics(
        &pred,
        &all_targets(test),
        mase_scale(scale_source)?,
        reference,
    )
}

/// Baseline forecasts for every window, flattened as `[window, T, M]`.
pub fn baseline_forecast(dataset: &WindowDataset, baseline: Baseline) -> Result<Vec<f64>> {
    let (l, t, m) = (dataset.input_length, dataset.horizon, dataset.channels);
    if let Baseline::SeasonalNaive(p) = baseline {
        if p == 0 || p > l {
            return Err(Error::Config(format!(
                "seasonal period {p} must be in 1..={l}"
            )));
        }
    }
    let mut out = Vec::with_capacity(dataset.len() * t * m);
    for i in 0..dataset.len() {
        let x = dataset.input(i);
        for step in 0..t {
            for c in 0..m {
                let row = match baseline {
                    Baseline::RepeatLast => l - 1,
                    Baseline::SeasonalNaive(p) => l - p + step % p,
                };
                out.push(x[row * m + c]);
            }
        }
    }
    Ok(out)
}

pub fn baseline_metrics(
    test: &WindowDataset,
    scale_source: &WindowDataset,
    baseline: Baseline,
    reference: Option<&NaiveReference>,
) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::InsufficientData("test split has no windows".into()));
    }
    let pred = baseline_forecast(test, baseline)?;
    compute_metrics(
        &pred,
        &all_targets(test),
        mase_scale(scale_source)?,
        reference,
    )
}

/// Naive2 reference: the seasonal naive forecast at the dataset's declared
/// period (repeat-last for undeclared frequencies).
pub fn naive2_reference(
    test: &WindowDataset,
    scale_source: &WindowDataset,
) -> Result<NaiveReference> {
    let period = seasonal_period(&test.frequency_label).min(test.input_length);
    let m = baseline_metrics(test, scale_source, Baseline::SeasonalNaive(period), None)?;
    Ok(NaiveReference {
        smape: m.smape,
        mase: m.mase,
    })
}

/// Forecast tensor `[windows, T, M]` from a flat buffer.
pub fn as_forecast_tensor(dataset: &WindowDataset, flat: Vec<f64>) -> Result<Tensor> {
    Tensor::new(vec![dataset.len(), dataset.horizon, dataset.channels], flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_examples() {
        let m = compute_metrics(&[3.0], &[1.0], 1.0, None).unwrap();
        assert_eq!((m.mse, m.mae, m.smape), (4.0, 2.0, 100.0));
        let m = compute_metrics(&[1.0, -2.0], &[1.0, -2.0], 1.0, None).unwrap();
        assert_eq!((m.mse, m.mae, m.smape), (0.0, 0.0, 0.0));
    }

    #[test]
    fn smape_scale_invariant() {
        let p = [1.0, 2.5, -3.0];
        let t = [1.5, 2.0, -1.0];
        let a = compute_metrics(&p, &t, 1.0, None).unwrap().smape;
        let p2: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        let t2: Vec<f64> = t.iter().map(|v| v * 2.0).collect();
        assert_abs_diff_eq!(
            a,
            compute_metrics(&p2, &t2, 1.0, None).unwrap().smape,
            epsilon = 1e-12
        );
    }

    #[test]
    fn owa_of_reference_is_one() {
        let m = compute_metrics(&[3.0, 1.0], &[1.0, 2.0], 0.5, None).unwrap();
        let r = NaiveReference {
            smape: m.smape,
            mase: m.mase,
        };
        let m = compute_metrics(&[3.0, 1.0], &[1.0, 2.0], 0.5, Some(&r)).unwrap();
        assert_abs_diff_eq!(m.owa.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn seasonal_scale() {
        // two channels, period 1
        let seg = [0.0, 10.0, 1.0, 10.0, 3.0, 10.0];
        assert_abs_diff_eq!(
            seasonal_naive_scale(&seg, 2, 1).unwrap(),
            0.75,
            epsilon = 1e-12
        );
        assert!(seasonal_naive_scale(&seg, 2, 3).is_err());
    }

    #[test]
    fn empty_and_mismatch() {
        assert!(matches!(
            compute_metrics(&[], &[], 1.0, None),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            compute_metrics(&[1.0], &[], 1.0, None),
            Err(Error::Shape(_))
        ));
    }
}
