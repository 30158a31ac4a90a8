//! Dense complex linear-algebra primitives with explicit tolerance policies.
//!
//! Everything downstream (boundary data, transfer spaces, Weyl discs,
//! spectral averaging) reduces to four primitives on small dense matrices:
//! resolvents of Hermitian blocks, minimum-norm right inverses, orthonormal
//! kernel bases and inverse Hermitian square roots. All rank and
//! invertibility decisions go through a [`TolerancePolicy`] so that the
//! exact-arithmetic statements ("full rank", "not invertible") become
//! reproducible threshold tests.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Thresholds governing rank decisions, suitability checks and eigenvalue
/// exclusion. All fields are strictly positive and `rank_rel_tol < 1`.
#[derive(Debug, Clone, Copy)]
pub struct TolerancePolicy {
    /// Relative singular-value cutoff for numerical rank: sigma > tol * sigma_max.
    pub rank_rel_tol: f64,
    /// Condition-number ceiling above which a composition pair is unsuitable.
    pub suitability_cond_max: f64,
    /// Relative exclusion radius around eigenvalues of truncated blocks.
    pub eig_exclusion_tol: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self {
            rank_rel_tol: 1e-12,
            suitability_cond_max: 1e12,
            eig_exclusion_tol: 1e-10,
        }
    }
}

impl TolerancePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.rank_rel_tol > 0.0 && self.rank_rel_tol < 1.0) {
            return Err(Error::InvalidInput(format!(
                "rank_rel_tol must be in (0, 1), got {}",
                self.rank_rel_tol
            )));
        }
        if !(self.suitability_cond_max > 0.0) {
            return Err(Error::InvalidInput("suitability_cond_max must be positive".into()));
        }
        if !(self.eig_exclusion_tol > 0.0) {
            return Err(Error::InvalidInput("eig_exclusion_tol must be positive".into()));
        }
        Ok(())
    }
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| c64(x, 0.0))
}

/// Hermitian part (M + M*)/2.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Imaginary part (M - M*)/(2i) in the C*-algebra sense; Hermitian by construction.
pub fn imag_part(m: &CMatrix) -> CMatrix {
    let d = m - m.adjoint();
    d.map(|x| c64(x.im * 0.5, -x.re * 0.5))
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = 1.0 + m.norm();
    (m - m.adjoint()).norm() <= tol * scale
}

/// Eigenvalues of a Hermitian matrix (unsorted), via the symmetric eigensolver.
pub fn hermitian_eigenvalues(m: &CMatrix) -> DVector<f64> {
    nalgebra::SymmetricEigen::new(m.clone()).eigenvalues
}

pub fn min_eig_hermitian(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Two-sided condition number sigma_max / sigma_min of a square matrix;
/// infinite when the smallest singular value underflows to zero.
pub fn cond_number(m: &CMatrix) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Numerical rank of a singular-value list under a relative cutoff.
pub fn numerical_rank(singular_values: &[f64], rel_tol: f64) -> usize {
    let smax = singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Pivoted linear solve (A) X = B, column-wise; `None` when A is exactly singular.
pub fn lu_solve(a: &CMatrix, b: &CMatrix) -> Option<CMatrix> {
    a.clone().lu().solve(b)
}

/// Resolvent (H - z)^{-1} of a Hermitian matrix, computed by a pivoted solve.
///
/// For real z the distance from z to the spectrum of H must exceed
/// `eig_exclusion_tol * (1 + ||H||)`; otherwise the parameter is reported as
/// singular and the caller decides between a pseudo-resolvent
/// ([`pseudo_resolvent`]) and a perturbed parameter.
pub fn hermitian_resolvent(h: &CMatrix, z: C64, tol: &TolerancePolicy) -> Result<CMatrix> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "resolvent of a {}x{} matrix",
            h.nrows(),
            h.ncols()
        )));
    }
    if !is_hermitian(h, 1e-12) {
        return Err(Error::InvalidInput("matrix is not Hermitian".into()));
    }
    let n = h.nrows();
    if z.im == 0.0 {
        let eigs = hermitian_eigenvalues(h);
        let scale = 1.0 + eigs.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
        let dist = eigs.iter().fold(f64::INFINITY, |a, &e| a.min((e - z.re).abs()));
        if dist <= tol.eig_exclusion_tol * scale {
            return Err(Error::SingularSpectralParameter { z });
        }
    }
    let mut shifted = h.clone();
    for i in 0..n {
        shifted[(i, i)] -= z;
    }
    lu_solve(&shifted, &CMatrix::identity(n, n)).ok_or(Error::SingularSpectralParameter { z })
}

/// Pseudo-resolvent of a Hermitian matrix at a real parameter: eigenspaces
/// within the exclusion radius of `lambda` are dropped and the inverse is
/// taken on the complement. Valid only when every column of `channels` is
/// orthogonal (to tolerance) to the dropped eigenspaces; otherwise the
/// analytic extension does not exist and the parameter is singular.
pub fn pseudo_resolvent(
    h: &CMatrix,
    lambda: f64,
    channels: &CMatrix,
    tol: &TolerancePolicy,
) -> Result<CMatrix> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch("pseudo-resolvent of a non-square matrix".into()));
    }
    if channels.nrows() != h.nrows() {
        return Err(Error::DimensionMismatch(
            "channel rows do not match the operator dimension".into(),
        ));
    }
    let se = nalgebra::SymmetricEigen::new(h.clone());
    let n = h.nrows();
    let scale = 1.0 + se.eigenvalues.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    let radius = tol.eig_exclusion_tol * scale;
    let mut result = CMatrix::zeros(n, n);
    for i in 0..n {
        let e = se.eigenvalues[i];
        let q = se.eigenvectors.column(i);
        if (e - lambda).abs() <= radius {
            // dropped eigenspace: admissible only if the channels never see it
            for j in 0..channels.ncols() {
                let cj = channels.column(j);
                let overlap = q.dotc(&cj).norm();
                let cn = cj.norm();
                if overlap > tol.eig_exclusion_tol * (1.0 + cn) {
                    return Err(Error::SingularSpectralParameter { z: c64(lambda, 0.0) });
                }
            }
        } else {
            let w = c64(1.0 / (e - lambda), 0.0);
            // result += w * q q*
            for r in 0..n {
                for c in 0..n {
                    result[(r, c)] += w * q[r] * q[c].conj();
                }
            }
        }
    }
    Ok(result)
}

/// Minimum-Frobenius-norm right inverse B0 = beta* (beta beta*)^{-1} of a
/// full-row-rank q x r matrix, via the singular value decomposition.
pub fn right_inverse_base(beta: &CMatrix, tol: &TolerancePolicy) -> Result<CMatrix> {
    let (q, r) = (beta.nrows(), beta.ncols());
    if q > r {
        return Err(Error::DimensionMismatch(format!(
            "right inverse requires q <= r, got {q}x{r}"
        )));
    }
    let svd = beta.clone().svd(true, true);
    let rank = numerical_rank(svd.singular_values.as_slice(), tol.rank_rel_tol);
    if rank < q {
        return Err(Error::RankDeficient { rank, expected: q });
    }
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    // B0 = V S^{-1} U*
    let mut s_inv = CMatrix::zeros(q, q);
    for i in 0..q {
        s_inv[(i, i)] = c64(1.0 / svd.singular_values[i], 0.0);
    }
    Ok(v_t.adjoint() * s_inv * u.adjoint())
}

/// Orthonormal basis of the orthogonal complement of the span of the rows
/// of `row_basis` (rows assumed orthonormal), built by projecting the
/// coordinate vectors and orthonormalizing with column pivoting (two
/// projection passes). Returns an r x (r - rows) matrix.
fn row_space_complement(row_basis: &CMatrix) -> Result<CMatrix> {
    let r = row_basis.ncols();
    let dim = r - row_basis.nrows();
    let mut basis = CMatrix::zeros(r, dim);
    if dim == 0 {
        return Ok(basis);
    }
    let project = |x: &CVector| -> CVector {
        let coeff = row_basis * x;
        x - row_basis.adjoint() * coeff
    };
    let mut candidates: Vec<CVector> = (0..r)
        .map(|j| {
            let mut e = CVector::zeros(r);
            e[j] = c64(1.0, 0.0);
            project(&e)
        })
        .collect();
    for k in 0..dim {
        let (best, best_norm) = candidates
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((0, 0.0), |acc, it| if it.1 > acc.1 { it } else { acc });
        if best_norm < 1e-8 {
            return Err(Error::RankDeficient {
                rank: row_basis.nrows(),
                expected: row_basis.nrows(),
            });
        }
        // re-project before normalizing so the stored vector is orthogonal
        // to the row space at working precision
        let v = project(&candidates[best]);
        let v = v.scale(1.0 / v.norm());
        basis.set_column(k, &v);
        for cand in candidates.iter_mut() {
            let coeff = v.dotc(cand);
            *cand -= v.scale(1.0) * coeff;
        }
    }
    Ok(basis)
}

/// Orthonormal basis of ker(M) for any matrix, with an absolute cutoff on
/// the singular values deciding which directions count as range.
pub fn null_space_basis(m: &CMatrix, abs_tol: f64) -> Result<CMatrix> {
    let cols = m.ncols();
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sv = svd.singular_values.as_slice();
    let mut keep_rows: Vec<usize> = (0..v_t.nrows())
        .filter(|&k| k < sv.len() && sv[k] > abs_tol)
        .collect();
    keep_rows.sort_unstable();
    let mut row_basis = CMatrix::zeros(keep_rows.len(), cols);
    for (out, &k) in keep_rows.iter().enumerate() {
        row_basis.row_mut(out).copy_from(&v_t.row(k));
    }
    row_space_complement(&row_basis)
}

/// Orthonormal basis of ker(beta) for a full-row-rank q x r matrix, as the
/// columns of an r x (r - q) matrix.
pub fn kernel_basis(beta: &CMatrix, tol: &TolerancePolicy) -> Result<CMatrix> {
    let (q, r) = (beta.nrows(), beta.ncols());
    let svd = beta.clone().svd(false, true);
    let rank = numerical_rank(svd.singular_values.as_slice(), tol.rank_rel_tol);
    if rank < q.min(r) {
        return Err(Error::RankDeficient { rank, expected: q.min(r) });
    }
    row_space_complement(svd.v_t.as_ref().expect("svd with v_t"))
}

/// Inverse Hermitian square root I^{-1/2} of a positive definite matrix.
pub fn sqrt_inv_pd(i: &CMatrix) -> Result<CMatrix> {
    if !i.is_square() {
        return Err(Error::DimensionMismatch("sqrt_inv_pd of a non-square matrix".into()));
    }
    let se = nalgebra::SymmetricEigen::new(i.clone());
    let min_eig = se.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_eig > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eig });
    }
    let n = i.nrows();
    let mut d = CMatrix::zeros(n, n);
    for k in 0..n {
        d[(k, k)] = c64(1.0 / se.eigenvalues[k].sqrt(), 0.0);
    }
    let root = &se.eigenvectors * d * se.eigenvectors.adjoint();
    Ok(hermitian_part(&root))
}
