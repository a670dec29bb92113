//! Central finite-difference gradient checking.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a gradient check over every input element.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over all inputs.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub n_checked: usize,
}

/// Compare the tape gradient of the scalar produced by `f` with central
/// differences of step `h` in every element of every input.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Shape {
            op: "gradcheck",
            lhs: tape.shape(out).to_vec(),
            rhs: vec![],
        });
    }
    let mut grads = tape.backward(out)?;

    let mut diff_sq = 0.0;
    let mut an_sq = 0.0;
    let mut num_sq = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut n = 0;
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.take_or_zeros(*v, inputs[k].shape());
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            diff_sq += (a - numeric).powi(2);
            an_sq += a * a;
            num_sq += numeric * numeric;
            max_abs = max_abs.max((a - numeric).abs());
            n += 1;
        }
    }
    let denom = an_sq.sqrt().max(num_sq.sqrt()).max(1e-12);
    Ok(GradCheck {
        rel_error: diff_sq.sqrt() / denom,
        max_abs_error: max_abs,
        n_checked: n,
    })
}
