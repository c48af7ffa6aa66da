//! Error metrics for operator estimates and predictions, plus box-plot
//! summaries of Monte-Carlo samples.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default column-norm floor for [`avg_pred_rel_error`].
pub const DEFAULT_FLOOR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixNorm {
    /// Largest singular value.
    #[default]
    Spectral,
    Frobenius,
}

impl MatrixNorm {
    pub fn of(&self, m: &DMatrix<f64>) -> f64 {
        match self {
            MatrixNorm::Spectral => linalg::spectral_norm(m),
            MatrixNorm::Frobenius => m.norm(),
        }
    }
}

/// `||K - Kt|| / ||K||`.
pub fn rel_matrix_error(k: &DMatrix<f64>, kt: &DMatrix<f64>, norm: MatrixNorm) -> Result<f64> {
    if k.shape() != kt.shape() {
        return Err(Error::Shape(format!(
            "reference is {:?}, estimate is {:?}",
            k.shape(),
            kt.shape()
        )));
    }
    let denom = norm.of(k);
    if denom == 0.0 {
        return Err(Error::UndefinedReference);
    }
    Ok(norm.of(&(k - kt)) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionError {
    /// Mean over the retained columns of `||pred_t - truth_t|| / ||truth_t||`.
    pub mean: f64,
    /// Columns left out because `||truth_t|| < floor_tol`.
    pub skipped: usize,
}

pub fn avg_pred_rel_error(truth: &DMatrix<f64>, pred: &DMatrix<f64>, floor_tol: f64) -> Result<PredictionError> {
    if truth.shape() != pred.shape() {
        return Err(Error::Shape(format!(
            "truth is {:?}, prediction is {:?}",
            truth.shape(),
            pred.shape()
        )));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (t, p) in truth.column_iter().zip(pred.column_iter()) {
        let denom = t.norm();
        if !(denom >= floor_tol) {
            continue;
        }
        sum += (p - t).norm() / denom;
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedReference);
    }
    Ok(PredictionError {
        mean: sum / used as f64,
        skipped: truth.ncols() - used,
    })
}

/// One Monte-Carlo cell of a word-length sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub bits: u32,
    pub trial: usize,
    /// `None` when the sweep skips the full operator.
    pub full_matrix_rel_err: Option<f64>,
    pub reduced_matrix_rel_err: f64,
    pub avg_pred_rel_err: f64,
}

/// Tukey box-plot statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Most extreme samples inside `[q1 - 1.5 IQR, q3 + 1.5 IQR]`.
    pub whisker_low: f64,
    pub whisker_high: f64,
    /// Samples outside the fences, ascending.
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data at position `p (n - 1)`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn summarize(samples: &[f64]) -> Result<BoxStats> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    // summed in sorted order so the result does not depend on input order
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let inside = || sorted.iter().copied().filter(|&x| x >= lo_fence && x <= hi_fence);
    let whisker_low = inside().next().unwrap_or(q1);
    let whisker_high = inside().next_back().unwrap_or(q3);
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&x| x < lo_fence || x > hi_fence)
        .collect();
    Ok(BoxStats {
        count: sorted.len(),
        mean,
        median,
        q1,
        q3,
        whisker_low,
        whisker_high,
        outliers,
    })
}
