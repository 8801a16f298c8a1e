use serde::Serialize;

use super::{AdError, Tape, Tensor, Var};

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    /// Largest relative error over differentiable coordinates.
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    /// Coordinates compared (kinks excluded).
    pub checked: usize,
    /// `(input, flat index)` pairs where the one-sided differences disagree,
    /// i.e. the perturbation crosses a relu kink, a max tie or a change of
    /// top-k selection.
    pub nondifferentiable: Vec<(usize, usize)>,
    /// `(input, flat index)` pairs where a function value or gradient was
    /// not finite.
    pub non_finite: Vec<(usize, usize)>,
}

/// `|a − b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// One-sided slopes disagreeing by more than this (relative) mark a kink.
const KINK_TOLERANCE: f64 = 1e-2;

/// Checks the reverse-mode gradient of `f` at `inputs` against central
/// differences with step `h`, perturbing every coordinate of every input.
///
/// `f` is re-run on a fresh tape for each evaluation and must return a
/// scalar.
pub fn finite_difference_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<FdReport, AdError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AdError>,
{
    let eval = |xs: &[Tensor]| -> Result<f64, AdError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out)
            .item()
            .ok_or(AdError::NonScalarRoot(tape.shape(out)))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;
    let f0 = tape.value(root).item().unwrap_or(f64::NAN);

    let mut report = FdReport {
        max_rel_error: 0.0,
        mean_rel_error: 0.0,
        checked: 0,
        nondifferentiable: Vec::new(),
        non_finite: Vec::new(),
    };
    let mut total = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[which].rows(), inputs[which].cols());
        let g_ad = grads.get(*var).unwrap_or(&zeros).clone();
        for k in 0..inputs[which].len() {
            let x0 = inputs[which].data()[k];
            work[which].data_mut()[k] = x0 + h;
            let fp = eval(&work)?;
            work[which].data_mut()[k] = x0 - h;
            let fm = eval(&work)?;
            work[which].data_mut()[k] = x0;

            let ad = g_ad.data()[k];
            if !(fp.is_finite() && fm.is_finite() && f0.is_finite() && ad.is_finite()) {
                report.non_finite.push((which, k));
                continue;
            }
            let right = (fp - f0) / h;
            let left = (f0 - fm) / h;
            if relative_error(right, left) > KINK_TOLERANCE {
                report.nondifferentiable.push((which, k));
                continue;
            }
            let fd = (fp - fm) / (2.0 * h);
            let err = relative_error(ad, fd);
            report.max_rel_error = report.max_rel_error.max(err);
            total += err;
            report.checked += 1;
        }
    }
    if report.checked > 0 {
        report.mean_rel_error = total / report.checked as f64;
    }
    Ok(report)
}
