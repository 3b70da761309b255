//! Central finite-difference oracle for the tape.
//!
//! Only the forward pass of the graph under test is evaluated here, so the
//! check stays independent of every adjoint rule it verifies.

use super::tape::{Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// (input, element) where the worst error occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Magnitude below which gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Compares the tape's adjoints of `inputs` against central differences.
///
/// `build` records the graph on a fresh tape given one trainable leaf per
/// input and returns the scalar output.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, build: F) -> GradCheck
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).expect("scalar output");

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut values: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[i].shape().to_vec());
        let analytic = grads.get(*var).unwrap_or(&zero);
        for e in 0..inputs[i].numel() {
            let orig = inputs[i].data()[e];
            values[i].data_mut()[e] = orig + step;
            let up = eval(&values);
            values[i].data_mut()[e] = orig - step;
            let down = eval(&values);
            values[i].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, e);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report
}
