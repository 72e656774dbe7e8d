//! Finite-difference gradient checking.
//!
//! The tape's analytic gradients and a central-difference estimate are
//! two independent routes to the same number; agreement within a small
//! relative error is the strongest low-cost evidence that a backward
//! rule is right. The check is O(elements x forward cost), so callers
//! probe small shapes.

use crate::error::{Error, Result};
use crate::tape::{Tape, Vid};
use crate::tensor::Tensor4;

/// Default pass threshold for the relative error. Central differences
/// with step ~1e-5 on f64 leave a couple of orders of magnitude head
/// room below this for genuinely correct gradients.
pub const DEFAULT_GRAD_TOL: f64 = 1e-4;

/// Default central-difference step.
pub const DEFAULT_GRAD_STEP: f64 = 1e-5;

/// Relative-error floor: errors are measured against
/// `max(|analytic|, |numeric|, EPS)` so near-zero gradients do not
/// produce spurious huge ratios.
pub const GRAD_EPS: f64 = 1e-8;

/// Worst relative error observed for one named parameter tensor.
#[derive(Clone, Debug)]
pub struct GradEntry {
    pub name: String,
    pub max_rel_err: f64,
}

/// Outcome of a [`grad_check`] run.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
    pub threshold: f64,
}

impl GradReport {
    /// True when every parameter's worst relative error is below the
    /// threshold.
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err < self.threshold)
    }

    /// Entry with the largest relative error, if any parameters were
    /// checked.
    pub fn worst(&self) -> Option<&GradEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Compare the tape's gradients against central finite differences.
///
/// `build` reconstructs the computation from scratch on a fresh tape:
/// it receives one id per entry of `params` (same order) and returns
/// the scalar loss id. It must be deterministic; the checker evaluates
/// it twice up front and errors out if the two losses differ bitwise
/// (e.g. dropout with a varying seed).
///
/// For every element of every parameter, the numeric estimate is
/// `(f(x + step) - f(x - step)) / (2 step)` and the reported error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(
    mut build: F,
    params: &[(&str, Tensor4)],
    step: f64,
    threshold: f64,
) -> Result<GradReport>
where
    F: FnMut(&mut Tape, &[Vid]) -> Result<Vid>,
{
    if !(1e-6..=1e-4).contains(&step) {
        return Err(Error::InvalidStep { step });
    }

    let tensors: Vec<Tensor4> = params.iter().map(|(_, t)| t.clone()).collect();

    // Analytic pass.
    let analytic: Vec<Tensor4> = {
        let mut tape = Tape::new();
        let ids: Vec<Vid> = tensors.iter().map(|t| tape.input(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        tape.backward(loss)?;
        ids.iter()
            .zip(&tensors)
            .map(|(id, t)| tape.grad(*id).cloned().unwrap_or_else(|| {
                Tensor4::zeros(t.shape()).expect("shape already validated")
            }))
            .collect()
    };

    let mut eval = |tensors: &[Tensor4]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<Vid> = tensors.iter().map(|t| tape.input(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        let shape = tape.value(loss).shape();
        if shape != [1, 1, 1, 1] {
            return Err(Error::NotScalarLoss { shape });
        }
        Ok(tape.value(loss).data()[0])
    };

    let first = eval(&tensors)?;
    let second = eval(&tensors)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministicForward);
    }

    // Numeric pass, one element at a time.
    let mut probe = tensors.clone();
    let mut entries = Vec::with_capacity(params.len());
    for (p, (name, _)) in params.iter().enumerate() {
        let mut max_rel_err: f64 = 0.0;
        for i in 0..probe[p].len() {
            let original = probe[p].data()[i];
            probe[p].data_mut()[i] = original + step;
            let up = eval(&probe)?;
            probe[p].data_mut()[i] = original - step;
            let down = eval(&probe)?;
            probe[p].data_mut()[i] = original;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic[p].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_EPS);
            if rel > max_rel_err {
                max_rel_err = rel;
            }
        }
        entries.push(GradEntry { name: (*name).to_string(), max_rel_err });
    }

    Ok(GradReport { entries, threshold })
}
