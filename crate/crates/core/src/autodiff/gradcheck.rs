use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Central-difference step used by every check.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so gradients that are
/// exactly zero compare in absolute terms instead of dividing by zero.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max over all probed coordinates of `|a - n| / max(|a|, |n|, 1e-3)`.
    pub max_rel_err: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub tol: f64,
    pub passed: bool,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).data().iter().sum())
}

/// Compares reverse-mode gradients of a scalar function of one tensor with
/// central finite differences.
pub fn grad_check<F>(f: F, at: &Tensor, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(at), tol)
}

/// Multi-input variant: every input tensor is perturbed coordinate by
/// coordinate.
pub fn grad_check_many<F>(f: F, at: &[Tensor], tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let inputs: Vec<Tensor> = at.iter().map(|t| t.clone().with_grad()).collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    let loss = tape.sum(out);
    tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        tol,
        passed: true,
    };
    if !tape.value(loss).is_finite() {
        report.max_rel_err = f64::INFINITY;
        report.passed = false;
        return Ok(report);
    }

    let mut probe = inputs.clone();
    for (t, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match tape.grad(*var) {
            Some(g) => g.to_vec(),
            None => vec![0.0; inputs[t].len()],
        };
        for i in 0..inputs[t].len() {
            let x0 = inputs[t].data()[i];
            probe[t].data_mut()[i] = x0 + FD_STEP;
            let plus = eval(&f, &probe)?;
            probe[t].data_mut()[i] = x0 - FD_STEP;
            let minus = eval(&f, &probe)?;
            probe[t].data_mut()[i] = x0;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = if numeric.is_finite() && analytic[i].is_finite() {
                rel_err(analytic[i], numeric)
            } else {
                f64::INFINITY
            };
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((t, i));
                }
            }
        }
    }
    report.passed = report.max_rel_err <= tol;
    Ok(report)
}
