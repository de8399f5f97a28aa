//! Central-difference gradient oracle.

use super::tape::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Outcome of [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Analytic gradient per input, as computed by the tape.
    pub analytic: Vec<Matrix>,
    /// Central-difference estimate per input.
    pub numeric: Vec<Matrix>,
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` builds the computation on a fresh tape from leaves for `points` and
/// returns a `1×1` output. The error per coordinate is
/// `|analytic − numeric| / max(1, |analytic|)`; the maximum is reported.
pub fn grad_check<F>(f: F, points: &[Matrix], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::Oracle(format!("step {h} outside [1e-6, 1e-4]")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.scalar(out).is_finite() {
        return Err(Error::Oracle("non-finite function value".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Matrix> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();

    let eval = |pts: &[Matrix]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = pts.iter().map(|p| t.constant(p.clone())).collect();
        let o = f(&mut t, &vs)?;
        let v = t.scalar(o);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Oracle(
                "non-finite function value under perturbation".into(),
            ))
        }
    };

    let mut work: Vec<Matrix> = points.to_vec();
    let mut numeric = Vec::with_capacity(points.len());
    let mut max_rel_error: f64 = 0.0;
    for (pi, p) in points.iter().enumerate() {
        let mut num = Matrix::zeros(p.dim());
        for idx in 0..p.len() {
            let (r, c) = (idx / p.ncols(), idx % p.ncols());
            let orig = p[(r, c)];
            work[pi][(r, c)] = orig + h;
            let up = eval(&work)?;
            work[pi][(r, c)] = orig - h;
            let down = eval(&work)?;
            work[pi][(r, c)] = orig;
            let d = (up - down) / (2.0 * h);
            num[(r, c)] = d;
            let a = analytic[pi][(r, c)];
            if !a.is_finite() {
                return Err(Error::Oracle("non-finite analytic gradient".into()));
            }
            max_rel_error = max_rel_error.max((a - d).abs() / a.abs().max(1.0));
        }
        numeric.push(num);
    }
    Ok(GradCheckReport {
        max_rel_error,
        analytic,
        numeric,
    })
}
