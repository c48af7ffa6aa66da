//! SVD-based dynamic mode decomposition, its ridge-regularized closed form
//! and the negative-regularizer recovery of the unquantized estimate.
//!
//! All operator estimates fit `Phi' ~ A Phi` for a pair of `N x T` snapshot
//! matrices. Norms on operators are Frobenius unless stated otherwise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ThinSvd, C64};

/// Eigenvector matrices with a larger 2-norm condition number than this are
/// reported as ill-conditioned.
pub const EIGENBASIS_CONDITION_LIMIT: f64 = 1e12;

/// Relative slack on the recovery guard `lambda_min / T > eps^2 / 12`.
pub const RECOVERY_GUARD_SLACK: f64 = 1e-6;

/// Time-shifted snapshot matrices `Phi` and `Phi'`, both `N x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPair {
    phi: DMatrix<f64>,
    phi_prime: DMatrix<f64>,
}

impl SnapshotPair {
    pub fn new(phi: DMatrix<f64>, phi_prime: DMatrix<f64>) -> Result<Self> {
        if phi.shape() != phi_prime.shape() {
            return Err(Error::Shape(format!(
                "Phi is {:?} but Phi' is {:?}",
                phi.shape(),
                phi_prime.shape()
            )));
        }
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::InsufficientData("snapshot matrices are empty".into()));
        }
        if phi.iter().chain(phi_prime.iter()).any(|x| !x.is_finite()) {
            return Err(Error::DegenerateData("snapshot matrices contain non-finite values".into()));
        }
        Ok(Self { phi, phi_prime })
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn phi_prime(&self) -> &DMatrix<f64> {
        &self.phi_prime
    }

    /// `N`, the number of observables.
    pub fn observables(&self) -> usize {
        self.phi.nrows()
    }

    /// `T`, the number of snapshot pairs.
    pub fn snapshots(&self) -> usize {
        self.phi.ncols()
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.phi, self.phi_prime)
    }
}

/// Splits an `N x (T+1)` trajectory into `Phi = [x_0 .. x_{T-1}]` and
/// `Phi' = [x_1 .. x_T]`.
pub fn build_snapshots(trajectory: &DMatrix<f64>) -> Result<SnapshotPair> {
    let cols = trajectory.ncols();
    if cols < 2 {
        return Err(Error::InsufficientData(format!(
            "trajectory needs at least 2 columns, got {cols}"
        )));
    }
    let phi = trajectory.columns(0, cols - 1).into_owned();
    let phi_prime = trajectory.columns(1, cols - 1).into_owned();
    SnapshotPair::new(phi, phi_prime)
}

/// How many singular values a reduced model keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RankRule {
    Fixed(usize),
    /// Smallest `r` whose leading `sigma^2` carry at least this fraction of
    /// the total.
    Energy(f64),
    /// Keep `sigma > cutoff * sigma_max`.
    Tolerance(f64),
}

impl Default for RankRule {
    fn default() -> Self {
        RankRule::Energy(0.9999)
    }
}

impl RankRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RankRule::Fixed(0) => Err(Error::InvalidArgument("fixed rank must be >= 1".into())),
            RankRule::Energy(t) | RankRule::Tolerance(t) if !(t > 0.0 && t < 1.0) => Err(
                Error::InvalidArgument(format!("rank threshold must be in (0, 1), got {t}")),
            ),
            _ => Ok(()),
        }
    }

    /// Resolves the rule against descending singular values of an
    /// `rows x cols` matrix.
    pub fn select(&self, singular_values: &DVector<f64>, rows: usize, cols: usize) -> Result<usize> {
        self.validate()?;
        let s = singular_values.as_slice();
        let smax = s.first().copied().unwrap_or(0.0);
        if smax <= 0.0 {
            return Err(Error::DegenerateData("all singular values are zero".into()));
        }
        let r = match *self {
            RankRule::Fixed(r) => {
                let max = rows.min(cols);
                if r > max {
                    return Err(Error::RankTooLarge { requested: r, max });
                }
                if s[r - 1] <= 0.0 {
                    return Err(Error::DegenerateData(format!(
                        "rank {r} requested but sigma_{r} is zero"
                    )));
                }
                r
            }
            RankRule::Energy(tau) => {
                let total: f64 = s.iter().map(|x| x * x).sum();
                let mut acc = 0.0;
                let mut r = s.len();
                for (i, x) in s.iter().enumerate() {
                    acc += x * x;
                    if acc >= tau * total {
                        r = i + 1;
                        break;
                    }
                }
                r
            }
            RankRule::Tolerance(c) => s.iter().take_while(|&&x| x > c * smax).count().max(1),
        };
        Ok(r)
    }
}

/// Full-dimensional operator `K = Phi' Phi^+`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullDmd {
    pub k: DMatrix<f64>,
    /// Relative singular-value cutoff used for the pseudo-inverse.
    pub pinv_tolerance: f64,
    /// Number of singular values kept.
    pub rank: usize,
}

/// Minimum-norm least-squares operator via the SVD of `Phi`. `tol` is the
/// relative singular-value cutoff; `None` means `max(N, T) * eps`.
pub fn dmd_full(pair: &SnapshotPair, tol: Option<f64>) -> Result<FullDmd> {
    let svd = linalg::thin_svd(pair.phi());
    dmd_full_with_svd(pair, &svd, tol)
}

/// [`dmd_full`] reusing a precomputed SVD of `Phi`.
pub fn dmd_full_with_svd(pair: &SnapshotPair, svd: &ThinSvd, tol: Option<f64>) -> Result<FullDmd> {
    let tol = tol.unwrap_or_else(|| linalg::default_pinv_tolerance(pair.observables(), pair.snapshots()));
    if !(0.0..1.0).contains(&tol) {
        return Err(Error::InvalidArgument(format!("pinv tolerance must be in [0, 1), got {tol}")));
    }
    if svd.sigma_max() <= 0.0 {
        return Err(Error::DegenerateData("Phi is identically zero".into()));
    }
    let rank = svd.rank_above(tol);
    let mut b = pair.phi_prime() * svd.v.columns(0, rank);
    for j in 0..rank {
        b.column_mut(j).scale_mut(1.0 / svd.singular_values[j]);
    }
    let k = b * svd.u.columns(0, rank).transpose();
    Ok(FullDmd {
        k,
        pinv_tolerance: tol,
        rank,
    })
}

/// Rank-`r` projected operator with its modal decomposition.
#[derive(Debug, Clone)]
pub struct ReducedDmd {
    pub rank: usize,
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
    /// `U_r^T Phi' V_r Sigma_r^{-1}`.
    pub k_r: DMatrix<f64>,
    /// Descending magnitude, ties by ascending phase.
    pub eigenvalues: Vec<C64>,
    /// `W`, unit-norm columns matching `eigenvalues`.
    pub eigenvectors: DMatrix<C64>,
    /// `Upsilon = Phi' V_r Sigma_r^{-1} W`.
    pub modes: DMatrix<C64>,
    pub eigenbasis_condition: f64,
}

impl ReducedDmd {
    pub fn ill_conditioned_eigenbasis(&self) -> bool {
        !(self.eigenbasis_condition <= EIGENBASIS_CONDITION_LIMIT)
    }
}

pub fn dmd_reduced(pair: &SnapshotPair, rule: RankRule) -> Result<ReducedDmd> {
    let svd = linalg::thin_svd(pair.phi());
    let r = rule.select(&svd.singular_values, pair.observables(), pair.snapshots())?;
    dmd_reduced_with_svd(pair, &svd, r)
}

/// Reduced model of fixed rank `r` from a precomputed SVD of `Phi`.
pub fn dmd_reduced_with_svd(pair: &SnapshotPair, svd: &ThinSvd, r: usize) -> Result<ReducedDmd> {
    let max = pair.observables().min(pair.snapshots());
    if r == 0 {
        return Err(Error::InvalidArgument("reduced rank must be >= 1".into()));
    }
    if r > max {
        return Err(Error::RankTooLarge { requested: r, max });
    }
    if svd.singular_values[r - 1] <= 0.0 {
        return Err(Error::DegenerateData(format!("sigma_{r} of Phi is zero")));
    }
    let u = svd.u.columns(0, r).into_owned();
    let v = svd.v.columns(0, r).into_owned();
    let sigma = svd.singular_values.rows(0, r).into_owned();

    // Phi' V_r Sigma_r^{-1}
    let mut lifted = pair.phi_prime() * &v;
    for j in 0..r {
        lifted.column_mut(j).scale_mut(1.0 / sigma[j]);
    }
    let k_r = u.transpose() * &lifted;
    let eig = linalg::eig(&k_r);
    let modes = lifted.map(|x| C64::new(x, 0.0)) * &eig.vectors;
    Ok(ReducedDmd {
        rank: r,
        u,
        sigma,
        v,
        k_r,
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        modes,
        eigenbasis_condition: eig.condition,
    })
}

fn check_x0(n: usize, x0: &DVector<f64>) -> Result<()> {
    if x0.len() != n {
        return Err(Error::Shape(format!(
            "initial state has {} entries, model expects {n}",
            x0.len()
        )));
    }
    Ok(())
}

/// Columns `K^t x0` for `t = 0..=horizon`, by repeated multiplication.
pub fn predict_full(model: &FullDmd, x0: &DVector<f64>, horizon: usize) -> Result<DMatrix<f64>> {
    check_x0(model.k.nrows(), x0)?;
    let mut out = DMatrix::zeros(x0.len(), horizon + 1);
    out.set_column(0, x0);
    let mut x = x0.clone();
    for t in 1..=horizon {
        x = &model.k * x;
        out.set_column(t, &x);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ReducedPrediction {
    /// Real part of `Upsilon Lambda^t Upsilon^+ x0`, one column per step.
    pub states: DMatrix<f64>,
    /// Largest imaginary magnitude discarded when taking the real part.
    pub max_imaginary_residue: f64,
    /// Rank kept by the pseudo-inverse of `Upsilon`.
    pub modes_rank: usize,
}

impl ReducedPrediction {
    /// Set when `Upsilon` lost column rank under the pseudo-inverse cutoff.
    pub fn modes_rank_deficient(&self, rank: usize) -> bool {
        self.modes_rank < rank
    }
}

/// Modal rollout `x_t = Re(Upsilon Lambda^t Upsilon^+ x0)` for `t = 0..=horizon`.
pub fn predict_reduced(model: &ReducedDmd, x0: &DVector<f64>, horizon: usize) -> Result<ReducedPrediction> {
    let n = model.modes.nrows();
    let r = model.rank;
    check_x0(n, x0)?;
    let tol = linalg::default_pinv_tolerance(n, r);
    let (pinv, modes_rank) = linalg::pinv_complex(&model.modes, tol);
    let x0c: DVector<C64> = x0.map(|x| C64::new(x, 0.0));
    let mut coeffs: DVector<C64> = pinv * x0c;

    let mut states = DMatrix::zeros(n, horizon + 1);
    let mut residue = 0.0f64;
    for t in 0..=horizon {
        if t > 0 {
            for (c, lam) in coeffs.iter_mut().zip(&model.eigenvalues) {
                *c *= lam;
            }
        }
        let z = &model.modes * &coeffs;
        for i in 0..n {
            states[(i, t)] = z[i].re;
            residue = residue.max(z[i].im.abs());
        }
    }
    Ok(ReducedPrediction {
        states,
        max_imaginary_residue: residue,
        modes_rank,
    })
}

/// `Phi Phi^T` and `Phi' Phi^T`.
fn gram_terms(pair: &SnapshotPair) -> (DMatrix<f64>, DMatrix<f64>) {
    let phi_t = pair.phi().transpose();
    (pair.phi() * &phi_t, pair.phi_prime() * &phi_t)
}

fn ridge_solve(gram: &DMatrix<f64>, cross: &DMatrix<f64>, shift: f64) -> Option<DMatrix<f64>> {
    let mut m = gram.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    // A M = C with M symmetric  <=>  M A^T = C^T
    let rhs = cross.transpose();
    let at = match m.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => m.lu().solve(&rhs)?,
    };
    Some(at.transpose())
}

/// Closed-form minimizer of `(1/T)||Phi' - A Phi||_F^2 + gamma ||A||_F^2`,
/// i.e. `Phi' Phi^T (Phi Phi^T + T gamma I)^{-1}`.
///
/// Negative `gamma` is accepted while the objective stays strictly convex,
/// `lambda_min(Phi Phi^T) + T gamma > 0`.
pub fn ridge_dmd(pair: &SnapshotPair, gamma: f64) -> Result<DMatrix<f64>> {
    if !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be finite, got {gamma}")));
    }
    let (gram, cross) = gram_terms(pair);
    ridge_from_gram(&gram, &cross, pair.snapshots(), gamma)
}

fn ridge_from_gram(gram: &DMatrix<f64>, cross: &DMatrix<f64>, t: usize, gamma: f64) -> Result<DMatrix<f64>> {
    let tf = t as f64;
    if gamma <= 0.0 {
        let lambda_min = linalg::symmetric_min_eigenvalue(gram);
        if !(lambda_min + tf * gamma > 0.0) {
            if gamma == 0.0 {
                return Err(Error::DegenerateData(
                    "Phi lacks full row rank; gamma = 0 needs the pseudo-inverse route".into(),
                ));
            }
            return Err(Error::NonConvex {
                gamma,
                critical: lambda_min / tf,
            });
        }
    }
    ridge_solve(gram, cross, tf * gamma)
        .ok_or_else(|| Error::DegenerateData("regularized Gram matrix is singular".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub k: DMatrix<f64>,
    /// Regularizer actually applied.
    pub gamma: f64,
    /// True when the nominal `-eps^2/12` violated the convexity guard and
    /// the fallback `-lambda_min / (2T)` was used instead.
    pub guarded: bool,
    /// `lambda_min(Phi~ Phi~^T) / T`.
    pub lambda_min_over_t: f64,
}

/// Undoes the implicit ridge penalty of dithered data by solving the
/// regularized problem with `gamma = -eps^2 / 12`.
///
/// When `lambda_min / T` does not exceed `eps^2 / 12` (with a `1e-6`
/// relative margin) the objective would be non-convex; the estimate then
/// falls back to `gamma = -lambda_min / (2T)` and is flagged as guarded.
pub fn recover_regularized(quantized: &SnapshotPair, epsilon: f64) -> Result<Recovery> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let t = quantized.snapshots();
    let (gram, cross) = gram_terms(quantized);
    let lambda_min_over_t = linalg::symmetric_min_eigenvalue(&gram) / t as f64;
    let nominal = epsilon * epsilon / 12.0;
    let (gamma, guarded) = if lambda_min_over_t > nominal * (1.0 + RECOVERY_GUARD_SLACK) {
        (-nominal, false)
    } else if lambda_min_over_t > 0.0 {
        (-0.5 * lambda_min_over_t, true)
    } else {
        return Err(Error::DegenerateData(format!(
            "lambda_min(Phi Phi^T) / T = {lambda_min_over_t:e}; no convex negative regularizer exists"
        )));
    };
    let k = ridge_solve(&gram, &cross, t as f64 * gamma)
        .ok_or_else(|| Error::DegenerateData("regularized Gram matrix is singular".into()))?;
    Ok(Recovery {
        k,
        gamma,
        guarded,
        lambda_min_over_t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveDecomposition {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Compares the quantized least-squares objective of `A` with its
/// large-sample expansion:
///
/// `lhs = (1/T)||Phi~' - A Phi~||^2`,
/// `rhs = (1/T)||Phi' - A Phi||^2 + N eps^2/12 + (eps^2/12)||A||^2`.
pub fn objective_decomposition_check(
    pair: &SnapshotPair,
    quantized: &SnapshotPair,
    a: &DMatrix<f64>,
    epsilon: f64,
) -> Result<ObjectiveDecomposition> {
    if pair.phi().shape() != quantized.phi().shape() {
        return Err(Error::Shape(format!(
            "unquantized pair is {:?}, quantized pair is {:?}",
            pair.phi().shape(),
            quantized.phi().shape()
        )));
    }
    let n = pair.observables();
    if a.shape() != (n, n) {
        return Err(Error::Shape(format!("A is {:?}, expected {n}x{n}", a.shape())));
    }
    let t = pair.snapshots() as f64;
    let residual = |p: &SnapshotPair| (p.phi_prime() - a * p.phi()).norm_squared() / t;
    let noise = epsilon * epsilon / 12.0;
    let lhs = residual(quantized);
    let rhs = residual(pair) + n as f64 * noise + noise * a.norm_squared();
    Ok(ObjectiveDecomposition {
        lhs,
        rhs,
        gap: lhs - rhs,
    })
}
