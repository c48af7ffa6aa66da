//! Observable construction: Hankel delay embedding and the global affine map
//! that places data inside the quantizer range.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stacks `m` consecutive columns of an `n x L` trajectory into each column
/// of an `(n m) x (L - m + 1)` matrix.
pub fn hankel_embed(trajectory: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
    }
    let (n, len) = trajectory.shape();
    if len < m {
        return Err(Error::InsufficientData(format!(
            "trajectory of length {len} is shorter than embedding dimension {m}"
        )));
    }
    let cols = len - m + 1;
    let mut out = DMatrix::zeros(n * m, cols);
    for t in 0..cols {
        for d in 0..m {
            out.view_mut((d * n, t), (n, 1))
                .copy_from(&trajectory.column(t + d));
        }
    }
    Ok(out)
}

/// `x -> (x + shift) / scale`, one map for every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub shift: f64,
    pub scale: f64,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap { shift: 0.0, scale: 1.0 };

    pub fn new(shift: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && shift.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "affine map needs finite shift and positive scale, got s = {shift}, c = {scale}"
            )));
        }
        Ok(Self { shift, scale })
    }

    pub fn apply_scalar(&self, x: f64) -> f64 {
        (x + self.shift) / self.scale
    }

    pub fn inverse_scalar(&self, y: f64) -> f64 {
        self.scale * y - self.shift
    }

    pub fn apply(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        data.map(|x| self.apply_scalar(x))
    }

    pub fn inverse(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        data.map(|y| self.inverse_scalar(y))
    }
}

/// Fits the global map sending `[min(data), max(data)]` onto
/// `[u_min + margin, u_max - margin]`. Constant data goes to the midpoint
/// with unit scale.
pub fn fit_affine(data: &DMatrix<f64>, u_min: f64, u_max: f64, margin: f64) -> Result<AffineMap> {
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::InvalidArgument(format!("margin must be >= 0, got {margin}")));
    }
    let lo_target = u_min + margin;
    let hi_target = u_max - margin;
    if !(lo_target < hi_target) {
        return Err(Error::InvalidArgument(format!(
            "empty target interval [{lo_target}, {hi_target}]"
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateData("calibration data contains non-finite values".into()));
    }
    let lo = data.min();
    let hi = data.max();
    if lo == hi {
        return AffineMap::new(0.5 * (lo_target + hi_target) - lo, 1.0);
    }
    let scale = (hi - lo) / (hi_target - lo_target);
    AffineMap::new(lo_target * scale - lo, scale)
}
