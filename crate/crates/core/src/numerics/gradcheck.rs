use crate::error::Result;
use crate::scalar::Scalar;

use super::{Tape, Tensor, Var};

/// Magnitude below which gradient components are compared absolutely rather
/// than relatively. Central differences at eps=1e-5 carry ~1e-10 of roundoff.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, element index) of the worst component.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares tape gradients of the scalar `f(inputs)` against central finite
/// differences, element by element over every input.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0].as_f64())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out);

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, analytic: 0.0, numeric: 0.0, checked: 0 };
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for idx in 0..inputs[which].len() {
            let x0 = inputs[which].data()[idx];
            probe[which].data_mut()[idx] = x0 + T::of(eps);
            let up = eval(&probe)?;
            probe[which].data_mut()[idx] = x0 - T::of(eps);
            let down = eval(&probe)?;
            probe[which].data_mut()[idx] = x0;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[idx].as_f64();
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            let err = (a - numeric).abs() / denom;
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                if err >= report.max_rel_error {
                    report.worst = Some((which, idx));
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}
