//! Reversible instance normalization.
//!
//! Each `(window, channel)` pair is standardized with its own mean and
//! standard deviation, an affine map is applied, and the forecast is mapped
//! back with the input window's statistics. The statistics are treated as
//! constants on the tape; gradients flow through the affine parameters.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-window, per-channel statistics of one normalized batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RevinStats {
    pub batch: usize,
    pub channels: usize,
    /// `[batch × channels]`
    pub mean: Vec<f64>,
    /// `sqrt(var + eps)`, `[batch × channels]`
    pub std: Vec<f64>,
}

impl RevinStats {
    /// Population statistics over axis 1 of a `[batch, len, channels]` tensor.
    pub fn compute(x: &Tensor, eps: f64) -> Result<Self> {
        let &[b, l, m] = x.shape() else {
            return Err(Error::Shape(format!(
                "RevIN expects [batch, len, channels], got {:?}",
                x.shape()
            )));
        };
        if l < 2 {
            return Err(Error::Shape(format!(
                "RevIN needs windows of length >= 2, got {l}"
            )));
        }
        let d = x.data();
        let mut mean = vec![0.0; b * m];
        let mut std = vec![0.0; b * m];
        for i in 0..b {
            for c in 0..m {
                let at = |t: usize| d[(i * l + t) * m + c];
                let mu = (0..l).map(at).sum::<f64>() / l as f64;
                let var = (0..l).map(|t| (at(t) - mu).powi(2)).sum::<f64>() / l as f64;
                mean[i * m + c] = mu;
                std[i * m + c] = (var + eps).sqrt();
            }
        }
        Ok(Self {
            batch: b,
            channels: m,
            mean,
            std,
        })
    }

    /// Broadcasts a `[batch × channels]` statistic over `len` steps.
    fn expand(&self, stat: &[f64], len: usize) -> Tensor {
        let (b, m) = (self.batch, self.channels);
        let mut out = Vec::with_capacity(b * len * m);
        for i in 0..b {
            for _ in 0..len {
                out.extend_from_slice(&stat[i * m..(i + 1) * m]);
            }
        }
        Tensor::new(vec![b, len, m], out).expect("expanded statistics")
    }
}

/// Normalizes `x` (`[batch, L, M]`) and returns the statistics needed to
/// invert the map.
pub fn normalize_on(
    tape: &mut Tape,
    x: Var,
    gain: Var,
    bias: Var,
    eps: f64,
) -> Result<(Var, RevinStats)> {
    if eps <= 0.0 {
        return Err(Error::Config("RevIN eps must be > 0".into()));
    }
    let stats = RevinStats::compute(tape.value(x), eps)?;
    check_affine(tape, gain, bias, stats.channels)?;
    let len = tape.shape(x)[1];
    let mean = tape.constant(stats.expand(&stats.mean, len));
    let std = tape.constant(stats.expand(&stats.std, len));
    let centred = tape.sub(x, mean)?;
    let z = tape.div(centred, std)?;
    let scaled = tape.mul(z, gain)?;
    Ok((tape.add(scaled, bias)?, stats))
}

/// `((y − bias) / gain) · std + mean` with the statistics of the input
/// windows, for `y` of shape `[batch, T, M]`.
pub fn denormalize_on(
    tape: &mut Tape,
    y: Var,
    gain: Var,
    bias: Var,
    stats: &RevinStats,
) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    if shape.len() != 3 || shape[0] != stats.batch || shape[2] != stats.channels {
        return Err(Error::Shape(format!(
            "denormalize expects [{}, T, {}], got {shape:?}",
            stats.batch, stats.channels
        )));
    }
    check_affine(tape, gain, bias, stats.channels)?;
    if let Some(g) = tape.value(gain).data().iter().find(|g| g.abs() < 1e-12) {
        return Err(Error::Numeric(format!(
            "RevIN gain {g} is too close to zero to invert"
        )));
    }
    let mean = tape.constant(stats.expand(&stats.mean, shape[1]));
    let std = tape.constant(stats.expand(&stats.std, shape[1]));
    let shifted = tape.sub(y, bias)?;
    let unscaled = tape.div(shifted, gain)?;
    let spread = tape.mul(unscaled, std)?;
    tape.add(spread, mean)
}

fn check_affine(tape: &Tape, gain: Var, bias: Var, channels: usize) -> Result<()> {
    if tape.shape(gain) != [channels] || tape.shape(bias) != [channels] {
        return Err(Error::Shape(format!(
            "RevIN affine parameters must be [{channels}], got {:?}/{:?}",
            tape.shape(gain),
            tape.shape(bias)
        )));
    }
    Ok(())
}

/// Stand-alone RevIN layer holding its affine parameters and the statistics
/// of the most recent [`RevinState::normalize`] call.
#[derive(Clone, Debug)]
pub struct RevinState {
    pub affine_gain: Tensor,
    pub affine_bias: Tensor,
    pub eps: f64,
    cached: Option<RevinStats>,
}

impl RevinState {
    pub fn new(channels: usize) -> Self {
        Self {
            affine_gain: Tensor::ones(&[channels]),
            affine_bias: Tensor::zeros(&[channels]),
            eps: DEFAULT_EPS,
            cached: None,
        }
    }

    pub fn with_affine(gain: Tensor, bias: Tensor, eps: f64) -> Result<Self> {
        if gain.shape() != bias.shape() || gain.ndim() != 1 {
            return Err(Error::Shape(
                "gain and bias must be matching vectors".into(),
            ));
        }
        if eps <= 0.0 {
            return Err(Error::Config("RevIN eps must be > 0".into()));
        }
        Ok(Self {
            affine_gain: gain,
            affine_bias: bias,
            eps,
            cached: None,
        })
    }

    pub fn cached(&self) -> Option<&RevinStats> {
        self.cached.as_ref()
    }

    pub fn normalize(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let g = tape.constant(self.affine_gain.clone());
        let b = tape.constant(self.affine_bias.clone());
        let (z, stats) = normalize_on(&mut tape, xv, g, b, self.eps)?;
        self.cached = Some(stats);
        Ok(tape.value(z).clone())
    }

    pub fn denormalize(&self, y: &Tensor) -> Result<Tensor> {
        let stats = self
            .cached
            .as_ref()
            .ok_or_else(|| Error::Usage("denormalize called before normalize".into()))?;
        let mut tape = Tape::new();
        let yv = tape.constant(y.clone());
        let g = tape.constant(self.affine_gain.clone());
        let b = tape.constant(self.affine_bias.clone());
        let out = denormalize_on(&mut tape, yv, g, b, stats)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t3(b: usize, l: usize, m: usize, data: Vec<f64>) -> Tensor {
        Tensor::new(vec![b, l, m], data).unwrap()
    }

    #[test]
    fn constant_window_maps_to_zero() {
        let mut r = RevinState::new(1);
        let z = r.normalize(&t3(1, 4, 1, vec![7.0; 4])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_window() {
        let mut r = RevinState::new(1);
        let z = r.normalize(&t3(1, 2, 1, vec![1.0, 3.0])).unwrap();
        assert_abs_diff_eq!(z.data()[0], -1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(z.data()[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn affine_is_applied_after_standardization() {
        let x = t3(1, 3, 1, vec![0.5, 2.0, -1.0]);
        let mut plain = RevinState::new(1);
        let z = plain.normalize(&x).unwrap();
        let mut affine = RevinState::with_affine(
            Tensor::from_vec(vec![2.0]),
            Tensor::from_vec(vec![1.0]),
            DEFAULT_EPS,
        )
        .unwrap();
        let za = affine.normalize(&x).unwrap();
        for (a, b) in za.data().iter().zip(z.data()) {
            assert_abs_diff_eq!(*a, 2.0 * b + 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn bias_denormalizes_to_window_mean() {
        let mut r = RevinState::with_affine(
            Tensor::from_vec(vec![1.5, -0.5]),
            Tensor::from_vec(vec![0.3, 2.0]),
            DEFAULT_EPS,
        )
        .unwrap();
        let x = t3(1, 3, 2, vec![1.0, 10.0, 2.0, 20.0, 6.0, 30.0]);
        r.normalize(&x).unwrap();
        let y = t3(1, 2, 2, vec![0.3, 2.0, 0.3, 2.0]);
        let out = r.denormalize(&y).unwrap();
        assert_abs_diff_eq!(out.data()[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.data()[1], 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.data()[2], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn denormalize_error_paths() {
        let r = RevinState::new(1);
        assert!(matches!(
            r.denormalize(&t3(1, 2, 1, vec![0.0, 0.0])),
            Err(Error::Usage(_))
        ));

        let mut r = RevinState::with_affine(
            Tensor::from_vec(vec![0.0]),
            Tensor::from_vec(vec![0.0]),
            1e-5,
        )
        .unwrap();
        r.normalize(&t3(1, 2, 1, vec![1.0, 2.0])).unwrap();
        assert!(matches!(
            r.denormalize(&t3(1, 2, 1, vec![0.0, 0.0])),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn rejects_single_step_windows() {
        let mut r = RevinState::new(1);
        assert!(r.normalize(&t3(1, 1, 1, vec![1.0])).is_err());
    }
}
