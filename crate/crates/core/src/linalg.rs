//! Dense linear-algebra helpers on top of `nalgebra`.
//!
//! Everything the estimators need beyond what `nalgebra` offers directly:
//! a thin SVD with a deterministic sign convention, relative-cutoff
//! pseudo-inverses (real and complex), and an eigendecomposition for real
//! non-symmetric matrices with a fixed eigenvalue ordering.

use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;

/// Default relative cutoff for singular values: `max(rows, cols) * eps`.
pub fn default_pinv_tolerance(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Thin SVD `M = U diag(s) V^T` with `s` sorted descending.
///
/// Within each column of `U` the entry of largest magnitude is positive
/// (ties go to the lowest row index); the matching column of `V` is flipped
/// along with it.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    /// Number of singular values strictly above `rtol * s_max`.
    pub fn rank_above(&self, rtol: f64) -> usize {
        let Some(&smax) = self.singular_values.as_slice().first() else {
            return 0;
        };
        if smax <= 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .take_while(|&&s| s > rtol * smax)
            .count()
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.as_slice().first().copied().unwrap_or(0.0)
    }
}

/// Computes a thin SVD, first reducing strongly rectangular inputs with a QR
/// factorization so the bidiagonalization runs on a square core.
pub fn thin_svd(m: &DMatrix<f64>) -> ThinSvd {
    let (rows, cols) = m.shape();
    let (u, s, v) = if cols > 2 * rows {
        // M^T = Q R  =>  M = R^T Q^T,  R^T = U S W^T  =>  V = Q W
        let qr = m.transpose().qr();
        let (q, r) = (qr.q(), qr.r());
        let svd = r.transpose().svd(true, true);
        let w = svd.v_t.expect("v requested").transpose();
        (svd.u.expect("u requested"), svd.singular_values, q * w)
    } else if rows > 2 * cols {
        let qr = m.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        let svd = r.svd(true, true);
        let u = q * svd.u.expect("u requested");
        (u, svd.singular_values, svd.v_t.expect("v requested").transpose())
    } else {
        let svd = m.clone().svd(true, true);
        (
            svd.u.expect("u requested"),
            svd.singular_values,
            svd.v_t.expect("v requested").transpose(),
        )
    };
    let mut out = ThinSvd {
        u,
        singular_values: s,
        v,
    };
    sort_descending(&mut out);
    apply_sign_convention(&mut out);
    out
}

fn sort_descending(svd: &mut ThinSvd) {
    let s = svd.singular_values.as_slice();
    if s.windows(2).all(|w| w[0] >= w[1]) {
        return;
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u = DMatrix::from_fn(svd.u.nrows(), order.len(), |i, j| svd.u[(i, order[j])]);
    let v = DMatrix::from_fn(svd.v.nrows(), order.len(), |i, j| svd.v[(i, order[j])]);
    let s = DVector::from_iterator(order.len(), order.iter().map(|&k| s[k]));
    *svd = ThinSvd {
        u,
        singular_values: s,
        v,
    };
}

fn apply_sign_convention(svd: &mut ThinSvd) {
    for j in 0..svd.u.ncols() {
        let col = svd.u.column(j);
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if !col.is_empty() && col[best] < 0.0 {
            svd.u.column_mut(j).neg_mut();
            svd.v.column_mut(j).neg_mut();
        }
    }
}

/// Singular values only, descending.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DVector::zeros(0);
    }
    if cols > 2 * rows {
        m.transpose().qr().r().singular_values()
    } else if rows > 2 * cols {
        m.clone().qr().r().singular_values()
    } else {
        m.singular_values()
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().copied().fold(0.0, f64::max)
}

/// Moore-Penrose pseudo-inverse keeping singular values above `rtol * s_max`.
pub fn pinv(m: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, usize) {
    let svd = thin_svd(m);
    let k = svd.rank_above(rtol);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for j in 0..k {
        let scale = 1.0 / svd.singular_values[j];
        let vj = svd.v.column(j) * scale;
        out.ger(1.0, &vj, &svd.u.column(j), 1.0);
    }
    (out, k)
}

/// Complex pseudo-inverse with a relative singular-value cutoff. Returns the
/// pseudo-inverse, the retained rank and the number of columns of `m`.
pub fn pinv_complex(m: &DMatrix<C64>, rtol: f64) -> (DMatrix<C64>, usize) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(cols, rows), 0);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v requested");
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let mut out = DMatrix::<C64>::zeros(cols, rows);
    let mut rank = 0;
    for j in 0..s.len() {
        if smax <= 0.0 || s[j] <= rtol * smax {
            continue;
        }
        rank += 1;
        let inv = 1.0 / s[j];
        // out += v_j (1/s_j) u_j^H ; v_j = conj(row j of V^H)
        for c in 0..rows {
            let uc = u[(c, j)].conj() * inv;
            for r in 0..cols {
                out[(r, c)] += v_t[(j, r)].conj() * uc;
            }
        }
    }
    (out, rank)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn symmetric_min_eigenvalue(g: &DMatrix<f64>) -> f64 {
    g.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Eigendecomposition `K W = W diag(values)` of a real square matrix.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<C64>,
    /// Unit-norm eigenvectors as columns, in the order of `values`.
    pub vectors: DMatrix<C64>,
    /// 2-norm condition number of `vectors`.
    pub condition: f64,
}

/// Orders eigenvalues by descending magnitude, breaking (near-)ties by
/// ascending phase so conjugate pairs sit next to each other, `-theta` first.
pub fn sort_eigenvalues(values: &mut [C64]) {
    values.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let mut start = 0;
    while start < values.len() {
        let lead = values[start].norm();
        let tol = 1e-10 * lead.max(f64::MIN_POSITIVE);
        let mut end = start + 1;
        while end < values.len() && (lead - values[end].norm()).abs() <= tol {
            end += 1;
        }
        values[start..end].sort_by(|a, b| a.arg().total_cmp(&b.arg()));
        start = end;
    }
}

/// Eigendecomposition of a real non-symmetric matrix.
///
/// Eigenvalues come from the real Schur form. Eigenvectors are the right
/// singular vectors of `K - lambda I` belonging to its smallest singular
/// values; a cluster of `k` numerically equal eigenvalues takes the `k`
/// smallest, which yields an independent basis when the eigenvalue is
/// semisimple and an ill-conditioned one when it is defective.
pub fn eig(k: &DMatrix<f64>) -> Eigen {
    let n = k.nrows();
    assert_eq!(n, k.ncols(), "eig needs a square matrix");
    if n == 0 {
        return Eigen {
            values: Vec::new(),
            vectors: DMatrix::zeros(0, 0),
            condition: 1.0,
        };
    }
    let mut values: Vec<C64> = k.complex_eigenvalues().iter().copied().collect();
    sort_eigenvalues(&mut values);

    let scale = k.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1e-300);
    let kc: DMatrix<C64> = k.map(|x| C64::new(x, 0.0));
    let mut vectors = DMatrix::<C64>::zeros(n, n);
    let mut assigned = vec![false; n];
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let cluster: Vec<usize> = (i..n)
            .filter(|&j| !assigned[j] && (values[j] - values[i]).norm() <= 1e-9 * scale)
            .collect();
        let centre = cluster.iter().map(|&j| values[j]).sum::<C64>() / cluster.len() as f64;
        let mut shifted = kc.clone();
        for d in 0..n {
            shifted[(d, d)] -= centre;
        }
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("v requested");
        let null_tol = 1e-8 * scale;
        let mut last_row = n - 1;
        for (slot, &j) in cluster.iter().enumerate() {
            // smallest singular values sit at the end; a defective cluster
            // has fewer null directions than members, and the missing ones
            // repeat the last null vector so the basis comes out singular
            let mut row = n - 1 - slot;
            if slot > 0 && svd.singular_values[row] > null_tol {
                row = last_row;
            }
            last_row = row;
            let mut vec: DVector<C64> = DVector::from_fn(n, |r, _| v_t[(row, r)].conj());
            normalize_phase(&mut vec);
            vectors.set_column(j, &vec);
            assigned[j] = true;
        }
    }
    let sv = vectors.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    Eigen {
        values,
        vectors,
        condition,
    }
}

/// Unit 2-norm, with the largest-magnitude entry (lowest index on ties)
/// rotated onto the positive real axis.
fn normalize_phase(v: &mut DVector<C64>) {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].norm() > v[best].norm() * (1.0 + 1e-12) {
            best = i;
        }
    }
    let phase = v[best] / v[best].norm();
    let factor = phase.conj() / norm;
    for z in v.iter_mut() {
        *z *= factor;
    }
}

pub fn frobenius_norm(m: &DMatrix<f64>) -> f64 {
    m.norm()
}
