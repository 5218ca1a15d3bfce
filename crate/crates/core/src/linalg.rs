//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Rank decisions everywhere in the crate go through [`numerical_rank`]: a
//! singular value counts when it exceeds `max(rows, cols) * sigma_max * 1e-12`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMat = DMatrix<Complex64>;

/// Relative factor of the numerical-rank threshold.
pub const RANK_RTOL: f64 = 1e-12;

/// Entries smaller than this are skipped when normalizing vector signs.
const SIGN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RankInfo {
    pub rank: usize,
    /// Singular values, descending.
    pub singular_values: Vec<f64>,
    pub threshold: f64,
}

impl RankInfo {
    /// Ratio of the largest to the smallest singular value counted toward rank.
    pub fn condition(&self) -> f64 {
        if self.rank == 0 {
            return f64::INFINITY;
        }
        self.singular_values[0] / self.singular_values[self.rank - 1]
    }

    /// True when the smallest counted singular value sits within six orders of
    /// magnitude of the threshold, i.e. the rank decision is fragile.
    pub fn near_deficient(&self) -> bool {
        self.rank > 0 && self.singular_values[self.rank - 1] < self.threshold * 1e6
    }
}

fn rank_from_sigma(mut sigma: Vec<f64>, rows: usize, cols: usize) -> RankInfo {
    sigma.sort_by(|a, b| b.total_cmp(a));
    let smax = sigma.first().copied().unwrap_or(0.0);
    let threshold = rows.max(cols) as f64 * smax * RANK_RTOL;
    let rank = if smax == 0.0 {
        0
    } else {
        sigma.iter().filter(|&&s| s > threshold).count()
    };
    RankInfo {
        rank,
        singular_values: sigma,
        threshold,
    }
}

pub fn numerical_rank(m: &Mat) -> RankInfo {
    if m.nrows() == 0 || m.ncols() == 0 {
        return rank_from_sigma(Vec::new(), m.nrows(), m.ncols());
    }
    let sigma = m.clone().singular_values();
    rank_from_sigma(sigma.iter().copied().collect(), m.nrows(), m.ncols())
}

pub fn numerical_rank_complex(m: &CMat) -> RankInfo {
    if m.nrows() == 0 || m.ncols() == 0 {
        return rank_from_sigma(Vec::new(), m.nrows(), m.ncols());
    }
    let sigma = m.clone().singular_values();
    rank_from_sigma(sigma.iter().copied().collect(), m.nrows(), m.ncols())
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Mat, rtol: f64) -> bool {
    m.is_square() && max_abs(&(m - m.transpose())) <= rtol * (1.0 + max_abs(m))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue_sym(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Checks that `m` is symmetric positive semidefinite within a scale-relative
/// tolerance.
pub fn check_psd(m: &Mat, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !is_symmetric(m, 1e-9) {
        return Err(Error::NotPsd {
            what: format!("{what} (asymmetric)"),
            min_eigenvalue: f64::NAN,
        });
    }
    let lmin = min_eigenvalue_sym(m);
    if lmin < -1e-12 * (1.0 + max_abs(m)) {
        return Err(Error::NotPsd {
            what: what.to_string(),
            min_eigenvalue: lmin,
        });
    }
    Ok(())
}

/// Ratio of extreme singular values (infinite for rank-deficient input).
pub fn condition_number(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Solves `s * x = b` for symmetric positive definite `s` by Cholesky.
pub fn spd_solve(s: &Mat, b: &Mat, what: &str) -> Result<Mat> {
    let chol = Cholesky::new(symmetrize(s)).ok_or_else(|| Error::Singular {
        what: what.to_string(),
        condition: condition_number(s),
    })?;
    Ok(chol.solve(b))
}

/// Solves a general square system by LU.
pub fn lu_solve(a: &Mat, b: &Mat, what: &str) -> Result<Mat> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "{what}: {}x{} vs rhs {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let rank = numerical_rank(a);
    if rank.rank < a.nrows() {
        return Err(Error::Singular {
            what: what.to_string(),
            condition: rank.condition().max(condition_number(a)),
        });
    }
    a.clone().lu().solve(b).ok_or_else(|| Error::Singular {
        what: what.to_string(),
        condition: condition_number(a),
    })
}

pub fn lu_inverse(a: &Mat, what: &str) -> Result<Mat> {
    lu_solve(a, &Mat::identity(a.nrows(), a.nrows()), what)
}

/// Factor `L` with `L * L^T = m` for a symmetric PSD `m` (rank revealing:
/// negative rounding eigenvalues are clipped to zero).
pub fn psd_factor(m: &Mat) -> Mat {
    let n = m.nrows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut l = eig.eigenvectors.clone();
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    l
}

/// Symmetric square root of a symmetric positive definite matrix, and its inverse.
pub fn sqrtm_spd(m: &Mat, what: &str) -> Result<(Mat, Mat)> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if lmin.is_nan() || lmin <= 0.0 {
        return Err(Error::Singular {
            what: what.to_string(),
            condition: if lmin <= 0.0 { f64::INFINITY } else { lmax / lmin },
        });
    }
    let v = &eig.eigenvectors;
    let mut half = Mat::zeros(n, n);
    let mut inv_half = Mat::zeros(n, n);
    for j in 0..n {
        let s = eig.eigenvalues[j].sqrt();
        let vj = v.column(j);
        half += (vj * vj.transpose()) * s;
        inv_half += (vj * vj.transpose()) / s;
    }
    Ok((symmetrize(&half), symmetrize(&inv_half)))
}

/// Eigenvalues of a real square matrix, sorted by descending modulus (ties by
/// real then imaginary part).
pub fn eigenvalues(m: &Mat) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(a.re.total_cmp(&b.re))
            .then(a.im.total_cmp(&b.im))
    });
    ev
}

pub fn spectral_radius(m: &Mat) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Makes the first entry with magnitude above `1e-12` of every column positive.
pub fn normalize_column_signs(m: &mut Mat) {
    for mut col in m.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|v| v.abs() > SIGN_EPS) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Orthonormal basis of the orthogonal complement of the column space of `u`
/// (which must have orthonormal columns), as a `dim x (dim - u.ncols())` matrix.
///
/// Built by pivoted Gram-Schmidt on the coordinate axes, so a complement that
/// is spanned by axes comes out as exactly those axes.
pub fn orthonormal_complement(u: &Mat, dim: usize) -> Mat {
    let r = u.ncols();
    if r >= dim {
        return Mat::zeros(dim, 0);
    }
    let mut basis = u.clone();
    let mut out = Mat::zeros(dim, dim - r);
    let mut used = vec![false; dim];
    for k in 0..dim - r {
        let mut best: Option<(usize, Vector, f64)> = None;
        for i in (0..dim).filter(|&i| !used[i]) {
            let mut e = Vector::zeros(dim);
            e[i] = 1.0;
            // Two passes keep the residual orthogonal to working precision.
            for _ in 0..2 {
                let proj = &basis * (basis.transpose() * &e);
                e -= proj;
            }
            let norm = e.norm();
            if best.as_ref().is_none_or(|b| norm > b.2 + 1e-12) {
                best = Some((i, e, norm));
            }
        }
        let (i, e, norm) = best.expect("complement dimension is positive");
        used[i] = true;
        let col = e / norm;
        out.set_column(k, &col);
        basis = hstack(&basis, &Mat::from_column_slice(dim, 1, col.as_slice()));
    }
    normalize_column_signs(&mut out);
    out
}

/// Rank-revealing split of a `p x m` matrix `M = U_r S_r V_r^T`, with full
/// orthonormal complements of both singular subspaces.
#[derive(Debug, Clone)]
pub struct SvdSplit {
    pub rank: RankInfo,
    /// Leading singular values (length `rank`).
    pub sigma: Vector,
    /// `p x r` left singular vectors, sign-normalized.
    pub u_r: Mat,
    /// `p x (p - r)` orthonormal complement of `u_r`.
    pub u_c: Mat,
    /// `m x r` right singular vectors consistent with `u_r`.
    pub v_r: Mat,
    /// `m x (m - r)` orthonormal complement of `v_r`.
    pub v_c: Mat,
}

pub fn svd_split(m: &Mat) -> SvdSplit {
    let (p, q) = m.shape();
    let rank = numerical_rank(m);
    let r = rank.rank;
    let mut u_r = Mat::zeros(p, r);
    let mut sigma = Vector::zeros(r);
    if r > 0 {
        let svd = m.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        for (k, &j) in order.iter().take(r).enumerate() {
            u_r.set_column(k, &u.column(j));
            sigma[k] = svd.singular_values[j];
        }
        normalize_column_signs(&mut u_r);
    }
    let mut v_r = Mat::zeros(q, r);
    for k in 0..r {
        let col = m.transpose() * u_r.column(k) / sigma[k];
        v_r.set_column(k, &col);
    }
    let u_c = orthonormal_complement(&u_r, p);
    let v_c = orthonormal_complement(&v_r, q);
    SvdSplit {
        rank,
        sigma,
        u_r,
        u_c,
        v_r,
        v_c,
    }
}

/// Stacks two matrices with equal column counts.
pub fn vstack(top: &Mat, bottom: &Mat) -> Mat {
    assert_eq!(top.ncols(), bottom.ncols());
    let mut out = Mat::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

pub fn hstack(left: &Mat, right: &Mat) -> Mat {
    assert_eq!(left.nrows(), right.nrows());
    let mut out = Mat::zeros(left.nrows(), left.ncols() + right.ncols());
    out.columns_mut(0, left.ncols()).copy_from(left);
    out.columns_mut(left.ncols(), right.ncols()).copy_from(right);
    out
}
