//! Central-difference gradient checking.

use rand::seq::index::sample;
use serde::Serialize;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Magnitude below which errors are measured absolutely.
    pub floor: f64,
    /// Entries sampled per parameter tensor; `None` checks every entry.
    pub max_entries: Option<usize>,
    /// Scale applied to the sigmoid backward rule (negative-control hook).
    pub corrupt_sigmoid: Option<f64>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_entries: None,
            corrupt_sigmoid: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh tape and one parameter leaf per entry of `params`
/// (in order) and must return a scalar.
pub fn gradcheck<F>(
    f: F,
    params: &[(String, Tensor<f64>)],
    opts: &GradcheckOptions,
    rng: &mut Rng,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[(String, Tensor<f64>)]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|(_, t)| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    if let Some(k) = opts.corrupt_sigmoid {
        tape.corrupt_sigmoid_backward(k);
    }
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = params
        .iter()
        .zip(&vars)
        .map(|((_, t), &v)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();
    drop(tape);

    let mut working = params.to_vec();
    let mut checks = Vec::with_capacity(params.len());
    for (pi, (name, value)) in params.iter().enumerate() {
        let n = value.len();
        let entries: Vec<usize> = match opts.max_entries {
            Some(m) if m < n => {
                let mut idx = sample(rng, n, m).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        };
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for &e in &entries {
            let orig = value.data()[e];
            working[pi].1.data_mut()[e] = orig + opts.step;
            let plus = eval(&working)?;
            working[pi].1.data_mut()[e] = orig - opts.step;
            let minus = eval(&working)?;
            working[pi].1.data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            if !numeric.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite difference quotient for {name}[{e}]"
                )));
            }
            let a = analytic[pi].data()[e];
            max_abs = max_abs.max((a - numeric).abs());
            max_rel = max_rel.max(relative_error(a, numeric, opts.floor));
        }
        checks.push(ParamCheck {
            name: name.clone(),
            entries_checked: entries.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    let max_rel_error = checks.iter().fold(0.0f64, |m, c| m.max(c.max_rel_error));
    Ok(GradcheckReport {
        step: opts.step,
        tolerance: opts.tolerance,
        passed: max_rel_error < opts.tolerance,
        max_rel_error,
        params: checks,
    })
}
