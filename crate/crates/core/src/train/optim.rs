use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

/// Adam moments and bookkeeping for one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub best_val: f64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(params: &ParamStore, lr: f64, seed: u64) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
            betas: (0.9, 0.999),
            eps: 1e-8,
            best_val: f64::INFINITY,
            seed,
        }
    }
}

/// One bias-corrected Adam update. Parameters are untouched when any
/// gradient is non-finite.
pub fn adam_step(state: &mut TrainState, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, (g, p)) in grads.iter().zip(params.tensors()).enumerate() {
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "gradient of {} has shape {:?}, parameter {:?}",
                params.name(crate::model::ParamId(i)),
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter {}",
                params.name(crate::model::ParamId(i))
            )));
        }
    }
    state.step += 1;
    let (b1, b2) = state.betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= state.lr * (*m / c1) / ((*v / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(vec![v]));
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store(0.5);
        let mut st = TrainState::new(&p, 1e-3, 0);
        adam_step(&mut st, &mut p, &[Tensor::from_vec(vec![1.0])]).unwrap();
        assert_abs_diff_eq!(p.tensors()[0].data()[0], 0.5 - 1e-3, epsilon = 1e-9);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_and_zero_lr_are_identity() {
        let mut p = store(0.5);
        let mut st = TrainState::new(&p, 1e-3, 0);
        adam_step(&mut st, &mut p, &[Tensor::from_vec(vec![0.0])]).unwrap();
        assert_eq!(p.tensors()[0].data()[0], 0.5);
        let mut st = TrainState::new(&p, 0.0, 0);
        adam_step(&mut st, &mut p, &[Tensor::from_vec(vec![3.0])]).unwrap();
        assert_eq!(p.tensors()[0].data()[0], 0.5);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = store(0.5);
        let mut st = TrainState::new(&p, 1e-3, 0);
        let err = adam_step(&mut st, &mut p, &[Tensor::from_vec(vec![f64::NAN])]).unwrap_err();
        assert!(err.to_string().contains('w'));
        assert_eq!(p.tensors()[0].data()[0], 0.5);
    }
}
