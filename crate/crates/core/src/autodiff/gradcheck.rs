use super::{AutodiffError, Tape, Tensor, Var};

/// Magnitude below which gradient entries are compared absolutely rather than relatively.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

/// Checks the tape gradient of the scalar function `f` at `point` against
/// central finite differences with step `eps`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let out = f(&mut tape, x)?;
    let analytic = tape.backward(out)?.wrt(x);
    let value = |p: &Tensor| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let x = tape.leaf(p.clone());
        let out = f(&mut tape, x)?;
        Ok(tape.value(out).item())
    };
    compare_gradients(&analytic, value, point, eps, tol)
}

/// Compares a supplied analytic gradient with central differences of `value`.
pub fn compare_gradients<F>(
    analytic: &Tensor,
    value: F,
    point: &Tensor,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&Tensor) -> Result<f64, AutodiffError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(AutodiffError::Shape { op: "grad_check (eps outside [1e-7, 1e-3])", shapes: vec![] });
    }
    if analytic.shape() != point.shape() {
        return Err(AutodiffError::Shape {
            op: "grad_check",
            shapes: vec![analytic.shape().to_vec(), point.shape().to_vec()],
        });
    }
    let mut report = GradCheckReport { max_rel_error: 0.0, index: 0, analytic: 0.0, numeric: 0.0, passed: true };
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = value(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = value(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if err > report.max_rel_error || i == 0 {
            report.max_rel_error = err;
            report.index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
