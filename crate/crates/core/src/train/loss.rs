use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    #[default]
    Huber,
    Logcosh,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "huber" => Ok(LossKind::Huber),
            "logcosh" => Ok(LossKind::Logcosh),
            other => Err(Error::Config(format!(
                "unknown loss {other:?} (expected mse, huber or logcosh)"
            ))),
        }
    }
}

/// Linear branch of the Huber loss beyond `|e| > delta`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HuberForm {
    /// `delta * (|e| - delta / 2)`, continuous at the seam.
    #[default]
    Standard,
    /// `delta * |e| - delta / 2`, continuous only when `delta = 1`.
    Offset,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub delta: f64,
    pub huber_form: HuberForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Huber,
            delta: 0.1,
            huber_form: HuberForm::Standard,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == LossKind::Huber && !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!(
                "huber delta must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Contract(format!(
            "{} targets but {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Contract("loss of an empty batch".into()));
    }
    Ok(())
}

/// Mean squared error.
pub fn mse_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

fn huber_term(e: f64, delta: f64, form: HuberForm) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        match form {
            HuberForm::Standard => delta * (a - 0.5 * delta),
            HuberForm::Offset => delta * a - 0.5 * delta,
        }
    }
}

/// Mean Huber penalty over the errors.
pub fn huber_loss(y: &[f64], y_hat: &[f64], delta: f64, form: HuberForm) -> Result<f64> {
    check_lengths(y, y_hat)?;
    Ok(y.iter()
        .zip(y_hat)
        .map(|(a, b)| huber_term(a - b, delta, form))
        .sum::<f64>()
        / y.len() as f64)
}

/// `log cosh(e) = |e| + log(1 + exp(-2|e|)) - log 2`, finite for any `e`.
pub fn log_cosh(e: f64) -> f64 {
    let a = e.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Sum of `log cosh` of the errors.
pub fn logcosh_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| log_cosh(a - b)).sum())
}

impl LossConfig {
    pub fn value(&self, y: &[f64], y_hat: &[f64]) -> Result<f64> {
        match self.kind {
            LossKind::Mse => mse_loss(y, y_hat),
            LossKind::Huber => huber_loss(y, y_hat, self.delta, self.huber_form),
            LossKind::Logcosh => logcosh_loss(y, y_hat),
        }
    }

    /// Loss and its gradient with respect to the predictions.
    pub fn value_and_grad(&self, y: &[f64], y_hat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let value = self.value(y, y_hat)?;
        let n = y.len() as f64;
        let grad = y
            .iter()
            .zip(y_hat)
            .map(|(&t, &p)| {
                let r = p - t;
                match self.kind {
                    LossKind::Mse => 2.0 * r / n,
                    LossKind::Huber => {
                        if r.abs() <= self.delta {
                            r / n
                        } else {
                            self.delta * r.signum() / n
                        }
                    }
                    LossKind::Logcosh => r.tanh(),
                }
            })
            .collect();
        Ok((value, grad))
    }

    /// Records the loss of `pred` (shape `[B]`) against `targets` on the tape.
    pub fn on_tape<T: Scalar>(&self, tape: &mut Tape<T>, pred: Var, targets: &[f64]) -> Result<Var> {
        let y_hat: Vec<f64> = tape.value(pred).data().iter().map(|v| v.as_f64()).collect();
        let (value, grad) = self.value_and_grad(targets, &y_hat)?;
        tape.scalar_fn(pred, T::lit(value), grad.into_iter().map(T::lit).collect())
    }
}
