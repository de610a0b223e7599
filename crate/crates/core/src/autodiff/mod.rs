//! Dense reverse-mode differentiation.
//!
//! Values live on a [`Tape`] that borrows a [`ParameterSet`]; every operation
//! records enough to propagate gradients back to the parameters.

mod matrix;
mod params;
mod tape;

pub use matrix::{gemm, Matrix};
pub use params::{Gradients, ParamId, ParameterSet};
pub use tape::{softplus, Adjacency, Tape, Var};

use rand::seq::index::sample;

use crate::error::{domain, Result};
use crate::rng::stream;

/// Denominator floor of the relative error, so that two gradients that
/// are both essentially zero compare as equal.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDifferenceReport {
    pub max_relative_error: f64,
    pub probes: usize,
    /// Parameter name, offset, reverse-mode and central-difference values of
    /// the worst probe.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares reverse-mode gradients of `loss` with central differences at
/// randomly chosen scalar parameters, stepping `1e-4 * max(1, |w|)`.
pub fn finite_difference_check<F>(params: &ParameterSet, probes: usize, seed: u64, loss: F) -> Result<FiniteDifferenceReport>
where
    F: Fn(&Tape) -> Result<Var>,
{
    let evaluate = |p: &ParameterSet| -> Result<f64> {
        let tape = Tape::frozen(p);
        let v = loss(&tape)?;
        let value = tape.scalar(v);
        if !value.is_finite() {
            return domain("loss is not finite");
        }
        Ok(value)
    };
    let grads = {
        let tape = Tape::new(params);
        let v = loss(&tape)?;
        if !tape.scalar(v).is_finite() {
            return domain("loss is not finite");
        }
        tape.backward(v)
    };
    let total = params.scalar_count();
    let chosen = sample(&mut stream(seed, &[]), total, probes.min(total)).into_vec();
    let mut work = params.clone();
    let mut report = FiniteDifferenceReport {
        max_relative_error: 0.0,
        probes: chosen.len(),
        worst: None,
    };
    for flat in chosen {
        let (id, offset) = params.locate(flat).expect("index within parameter count");
        let w = params.value(id).data()[offset];
        let h = 1e-4 * w.abs().max(1.0);
        work.value_mut(id).data_mut()[offset] = w + h;
        let plus = evaluate(&work)?;
        work.value_mut(id).data_mut()[offset] = w - h;
        let minus = evaluate(&work)?;
        work.value_mut(id).data_mut()[offset] = w;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads.get(id).data()[offset];
        let err = relative_error(analytic, numeric);
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((params.name(id).to_string(), offset, analytic, numeric));
        }
    }
    Ok(report)
}
