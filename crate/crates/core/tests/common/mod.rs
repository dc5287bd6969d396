#![allow(dead_code)]

use sparse_vq::model::{Forecaster, ForwardOptions};
use sparse_vq::svq::Assignments;
use sparse_vq::tensor::{Tape, Tensor, Var};
use sparse_vq::train::{total_loss, LossConfig};

pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor so that two tiny numbers compare
/// as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Central finite-difference check of `f` against the tape gradient for
/// every element of every input. Returns the largest relative error.
pub fn fd_check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");
    let eval = |ins: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = ins.iter().map(|x| t.param(x.clone())).collect();
        let l = f(&mut t, &vs);
        t.value(l).item().unwrap()
    };
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let g = grads.get_or_zeros(vars[k], input.shape());
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= FD_STEP;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.data()[j], fd));
        }
    }
    worst
}

fn model_loss(
    model: &Forecaster,
    x: &Tensor,
    y: &Tensor,
    loss: &LossConfig,
    frozen: Option<(&[Tensor], Option<&Assignments>)>,
) -> (Tape, Var, Vec<Var>, Option<Assignments>) {
    let mut tape = Tape::new();
    if let Some((sg, _)) = frozen {
        tape.replay_stop_gradients(sg.to_vec());
    }
    let opts = ForwardOptions {
        replay: frozen.and_then(|r| r.1),
        ..Default::default()
    };
    let out = model.forward(&mut tape, x, opts).unwrap();
    let truth = tape.constant(y.clone());
    let l = total_loss(&mut tape, out.forecast, truth, out.commitment, loss).unwrap();
    let vars = out.params.vars().to_vec();
    (tape, l, vars, out.assignments)
}

/// Finite-difference check of every parameter gradient of the total loss.
/// Quantizer selections and stop-gradient values are frozen at the
/// unperturbed point, so the perturbed losses trace the same smooth branch
/// the tape differentiates. Returns (largest relative error, entries).
pub fn fd_check_model(
    model: &Forecaster,
    x: &Tensor,
    y: &Tensor,
    loss: &LossConfig,
) -> (f64, usize) {
    let (tape, l, vars, assignments) = model_loss(model, x, y, loss, None);
    let sg_log = tape.stop_gradient_log().to_vec();
    let grads = tape.backward(l).unwrap();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (i, &v) in vars.iter().enumerate() {
        let shape = model.params().tensors()[i].shape().to_vec();
        let g = grads.get_or_zeros(v, &shape);
        for j in 0..g.numel() {
            let orig = probe.params().tensors()[i].data()[j];
            let mut at = |delta: f64| {
                probe.params_mut().tensors_mut()[i].data_mut()[j] = orig + delta;
                let (t, l, _, _) =
                    model_loss(&probe, x, y, loss, Some((&sg_log, assignments.as_ref())));
                t.value(l).item().unwrap()
            };
            let fd = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
            probe.params_mut().tensors_mut()[i].data_mut()[j] = orig;
            worst = worst.max(rel_err(g.data()[j], fd));
            count += 1;
        }
    }
    (worst, count)
}
