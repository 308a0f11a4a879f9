//! Dense complex linear algebra used by the precoders, combiners and rate
//! formulas.
//!
//! Everything is built on `nalgebra` dynamic matrices over `Complex64`. The
//! wrappers here add the two things the simulator needs beyond the raw
//! decompositions: a deterministic phase convention on singular vectors and
//! Hermitian positive-definite helpers (solve, log-determinant).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[inline]
pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Thin SVD `A = U diag(sigma) V^H` with `r = min(m, n)` singular triplets,
/// singular values sorted nonincreasing.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: CMat,
    pub sigma: Vec<f64>,
    pub v: CMat,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> CMat {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.adjoint()
    }
}

/// Phase convention: rotate each right singular vector so that its
/// largest-magnitude entry is real and positive. The matching left vector is
/// rotated by the same phase, leaving `u v^H` unchanged.
fn fix_phases(u: Option<&mut CMat>, v: &mut CMat) {
    let mut phases = Vec::with_capacity(v.ncols());
    for mut col in v.column_iter_mut() {
        let mut best = 0usize;
        let mut best_mag = -1.0f64;
        for (i, z) in col.iter().enumerate() {
            let m = z.norm_sqr();
            if m > best_mag {
                best_mag = m;
                best = i;
            }
        }
        let pivot = col[best];
        let phase = if pivot.norm() > 0.0 {
            pivot.conj() / pivot.norm()
        } else {
            ONE
        };
        for z in col.iter_mut() {
            *z *= phase;
        }
        // Exact zero imaginary part on the pivot keeps the convention bitwise.
        col[best] = c(col[best].re);
        phases.push(phase);
    }
    if let Some(u) = u {
        for (j, phase) in phases.into_iter().enumerate() {
            if j < u.ncols() {
                for z in u.column_mut(j).iter_mut() {
                    *z *= phase;
                }
            }
        }
    }
}

fn raw_svd(a: &CMat) -> Result<(CMat, Vec<f64>, CMat)> {
    let svd = a
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::numerical("SVD did not converge"))?;
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested V^H").adjoint();
    Ok((u, svd.singular_values.iter().copied().collect(), v))
}

pub fn svd_thin(a: &CMat) -> Result<ThinSvd> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::dim("SVD of an empty matrix"));
    }
    let (mut u, sigma, mut v) = raw_svd(a)?;
    fix_phases(Some(&mut u), &mut v);
    Ok(ThinSvd { u, sigma, v })
}

/// Singular values (zero-padded to length `n`) and a full `n x n` unitary
/// matrix of right singular vectors of the `m x n` matrix `a`.
///
/// Wide matrices are padded with zero rows to square before decomposing, so
/// the trailing columns of `V` span the null space of `a`.
pub fn svd_full_right(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::dim("SVD of an empty matrix"));
    }
    let padded;
    let target = if m < n {
        let mut p = CMat::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        padded = p;
        &padded
    } else {
        a
    };
    let (_, mut sigma, mut v) = raw_svd(target)?;
    // Padding rows contribute nothing; clamp their singular values to exact 0.
    for s in sigma.iter_mut().skip(m.min(n)) {
        *s = 0.0;
    }
    sigma.resize(n, 0.0);
    fix_phases(None, &mut v);
    Ok((sigma, v))
}

/// Cholesky factor of a Hermitian positive-definite matrix. The complex
/// factorization happily takes square roots of negative pivots, so the pivots
/// are checked here.
pub fn hpd_cholesky(a: &CMat) -> Result<nalgebra::Cholesky<Complex64, nalgebra::Dyn>> {
    let not_pd = || Error::numerical("matrix is not Hermitian positive definite");
    let chol = a.clone().cholesky().ok_or_else(not_pd)?;
    let l = chol.l_dirty();
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        if !(d.re > 0.0) || d.im.abs() > 1e-12 * d.re || !d.re.is_finite() {
            return Err(not_pd());
        }
    }
    Ok(chol)
}

/// Solves `A x = b` for Hermitian positive-definite `A`.
pub fn hpd_solve(a: &CMat, b: &CVec) -> Result<CVec> {
    Ok(hpd_cholesky(a)?.solve(b))
}

/// `log2 det(A)` for Hermitian positive-definite `A`, via Cholesky.
pub fn log2_det_hpd(a: &CMat) -> Result<f64> {
    let chol = hpd_cholesky(a)?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        acc += l[(i, i)].re.log2();
    }
    Ok(2.0 * acc)
}

/// Upper bound on the 2-norm condition number of a Hermitian PD matrix whose
/// smallest eigenvalue is known to be at least `floor`.
pub fn condition_bound(a: &CMat, floor: f64) -> f64 {
    let tr: f64 = (0..a.nrows()).map(|i| a[(i, i)].re).sum();
    tr / floor
}

/// `x^H A x`, real part (exact for Hermitian `A`).
pub fn quad_form(a: &CMat, x: &CVec) -> f64 {
    x.dotc(&(a * x)).re
}

/// `sum_j weights[j] * r_j r_j^H + diag_load * I` over the columns `r_j`.
pub fn weighted_gram(columns: &CMat, weights: &[f64], diag_load: f64) -> CMat {
    let n = columns.nrows();
    let mut out = CMat::identity(n, n) * c(diag_load);
    for (j, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let col = columns.column(j);
        for q in 0..n {
            let cq = col[q].conj() * *w;
            for p in 0..n {
                out[(p, q)] += col[p] * cq;
            }
        }
    }
    out
}
