//! Regression metrics: RMSE, MAE, Pearson and concordance correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `pcc` and `ccc` are `None` when the ground truth is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    pub pcc: Option<f64>,
    pub ccc: Option<f64>,
    pub n: usize,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance of `x` and covariance with `y`.
fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let n = x.len() as f64;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cxy += (a - mx) * (b - my);
    }
    (mx, my, vx / n, vy / n, cxy / n)
}

pub fn compute_metrics(predictions: &[f64], ground_truth: &[f64]) -> Result<MetricsReport> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::domain(format!(
            "{} predictions for {} labels",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let n = predictions.len();
    if n < 2 {
        return Err(Error::domain(format!("metrics need at least 2 predictions, got {n}")));
    }
    if predictions.iter().chain(ground_truth).any(|v| !v.is_finite()) {
        return Err(Error::domain("metrics inputs must be finite"));
    }
    let nf = n as f64;
    let sq: f64 = predictions.iter().zip(ground_truth).map(|(p, g)| (p - g).powi(2)).sum();
    let abs: f64 = predictions.iter().zip(ground_truth).map(|(p, g)| (p - g).abs()).sum();
    let (mp, mg, vp, vg, cov) = moments(predictions, ground_truth);
    let (pcc, ccc) = if vg > 0.0 {
        let pcc = if vp > 0.0 { cov / (vp.sqrt() * vg.sqrt()) } else { 0.0 };
        let ccc = 2.0 * cov / (vp + vg + (mp - mg).powi(2));
        (Some(pcc.clamp(-1.0, 1.0)), Some(ccc))
    } else {
        (None, None)
    };
    Ok(MetricsReport {
        rmse: (sq / nf).sqrt(),
        mae: abs / nf,
        pcc,
        ccc,
        n,
    })
}
