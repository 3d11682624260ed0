use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regression metrics between targets and predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean absolute deviation `(1/n) Σ |y - ŷ|`.
    pub mad: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Mean absolute percentage error; absent when a target is zero.
    pub mape: Option<f64>,
}

fn check(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(Error::Metric(format!(
            "need equal non-empty inputs, got {} targets and {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(())
}

/// `100/n Σ |(y - ŷ) / y|`. Fails listing every index with `y = 0`.
pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    let zeros: Vec<usize> = y
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 0.0)
        .map(|(i, _)| i)
        .collect();
    if !zeros.is_empty() {
        return Err(Error::Metric(format!(
            "MAPE undefined: zero targets at indices {zeros:?}"
        )));
    }
    Ok(100.0 * y.iter().zip(y_hat).map(|(a, b)| ((a - b) / a).abs()).sum::<f64>() / y.len() as f64)
}

/// All metrics; MAPE is required, so zero targets are an error.
pub fn compute_metrics(y: &[f64], y_hat: &[f64]) -> Result<Metrics> {
    let m = mape(y, y_hat)?;
    Ok(Metrics {
        mape: Some(m),
        ..compute_metrics_lenient(y, y_hat)?
    })
}

/// All metrics; MAPE is left out when any target is zero.
pub fn compute_metrics_lenient(y: &[f64], y_hat: &[f64]) -> Result<Metrics> {
    check(y, y_hat)?;
    let n = y.len() as f64;
    let mad = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let mse = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    Ok(Metrics {
        mad,
        mse,
        rmse: mse.sqrt(),
        mape: mape(y, y_hat).ok(),
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `median(|e - median(e)|)` of the errors `e = y - ŷ`.
pub fn median_absolute_deviation(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat)?;
    let mut e: Vec<f64> = y.iter().zip(y_hat).map(|(a, b)| a - b).collect();
    let m = median(&mut e);
    let mut dev: Vec<f64> = e.iter().map(|v| (v - m).abs()).collect();
    Ok(median(&mut dev))
}

/// Per-field mean of several metric sets. MAPE is averaged only when every
/// run has it.
pub fn average_metrics(runs: &[Metrics]) -> Option<Metrics> {
    if runs.is_empty() {
        return None;
    }
    let n = runs.len() as f64;
    let mean = |f: fn(&Metrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let mape = runs
        .iter()
        .map(|m| m.mape)
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / n);
    Some(Metrics {
        mad: mean(|m| m.mad),
        mse: mean(|m| m.mse),
        rmse: mean(|m| m.rmse),
        mape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let m = compute_metrics(&[2.0], &[1.0]).unwrap();
        assert_eq!(
            m,
            Metrics {
                mad: 1.0,
                mse: 1.0,
                rmse: 1.0,
                mape: Some(50.0)
            }
        );
        let z = compute_metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((z.mad, z.mse, z.rmse, z.mape), (0.0, 0.0, 0.0, Some(0.0)));
    }

    #[test]
    fn zero_targets_listed() {
        let err = compute_metrics(&[0.0, 1.0, 0.0], &[1.0, 1.0, 1.0])
            .unwrap_err()
            .to_string();
        assert!(err.contains("[0, 2]"), "{err}");
        assert_eq!(compute_metrics_lenient(&[0.0, 1.0], &[1.0, 1.0]).unwrap().mape, None);
    }

    #[test]
    fn median_deviation() {
        // errors 1, 2, 3, 10: median 2.5, deviations 1.5, 0.5, 0.5, 7.5
        let v = median_absolute_deviation(&[1.0, 2.0, 3.0, 10.0], &[0.0; 4]).unwrap();
        assert_eq!(v, 1.0);
    }
}
