//! Deterministic dense linear-algebra primitives: null-space bases,
//! PSD factorizations, spectral operations, and matrix norms.
//!
//! All operations are pure functions of their inputs and return bit-identical
//! results for identical inputs within one build. Basis-producing operations
//! fix the inherent unitary ambiguity deterministically: null-space bases by
//! symmetric orthonormalization of projected coordinate columns, and
//! eigenvector outputs by a phase convention (first significant component
//! real and positive).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix used throughout the crate.
pub type CMat = DMatrix<Complex64>;
/// Dense complex vector.
pub type CVec = DVector<Complex64>;

/// Relative tolerance for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Eigenvalues below `-PSD_TOL * lambda_max` mark a matrix as indefinite;
/// anything above is repaired by clamping.
pub const PSD_TOL: f64 = 1e-9;

/// Returns an error if any entry is NaN or infinite.
pub fn ensure_finite(a: &CMat, context: &'static str) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalFailure(context))
    }
}

/// Hermitian positive semi-definite matrix.
///
/// Construction symmetrizes the input and clamps any eigenvalue below
/// `-PSD_TOL * lambda_max` to zero (solvers produce slightly indefinite
/// iterates); the stored matrix is always Hermitian and numerically PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    mat: CMat,
}

impl PsdMatrix {
    /// Builds a PSD matrix from a (nearly) Hermitian input.
    pub fn new(a: CMat) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionError {
                context: "PsdMatrix::new",
                details: format!("expected square matrix, got {}x{}", a.nrows(), a.ncols()),
            });
        }
        ensure_finite(&a, "PsdMatrix::new")?;
        let herm = hermitian_part(&a);
        if herm.nrows() == 0 {
            return Ok(Self { mat: herm });
        }
        let eig = herm.clone().symmetric_eigen();
        let lam_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let lam_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if lam_min >= -PSD_TOL * lam_max.max(1e-300) {
            return Ok(Self { mat: herm });
        }
        // Repair: clamp negative eigenvalues to zero.
        let mut vals = eig.eigenvalues.clone();
        for v in vals.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let d = CMat::from_diagonal(&vals.map(|v| Complex64::new(v, 0.0)));
        let repaired = &eig.eigenvectors * d * eig.eigenvectors.adjoint();
        Ok(Self {
            mat: hermitian_part(&repaired),
        })
    }

    /// PSD zero matrix of dimension `n`.
    pub fn zeros(n: usize) -> Self {
        Self {
            mat: CMat::zeros(n, n),
        }
    }

    /// Scaled identity `c * I_n`; `c` must be nonnegative.
    pub fn scaled_identity(n: usize, c: f64) -> Self {
        assert!(c >= 0.0, "scaled_identity requires c >= 0");
        Self {
            mat: CMat::identity(n, n) * Complex64::new(c, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn into_matrix(self) -> CMat {
        self.mat
    }

    /// Real part of the trace (the trace of a Hermitian matrix is real).
    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Largest singular value; 0 for an empty matrix.
pub fn spectral_norm(a: &CMat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max)
}

/// Ratio of smallest to largest singular value (1.0 for an empty matrix).
fn row_rank_ratio(a: &CMat) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smax == 0.0 {
        0.0
    } else {
        smin / smax
    }
}

/// Checks the full-row-rank precondition shared by several operations.
pub fn check_full_row_rank(a: &CMat, context: &'static str) -> Result<()> {
    if a.nrows() > a.ncols() {
        return Err(Error::DimensionError {
            context,
            details: format!("more rows ({}) than columns ({})", a.nrows(), a.ncols()),
        });
    }
    let ratio = row_rank_ratio(a);
    if ratio <= RANK_TOL {
        return Err(Error::RankDeficient { context, ratio });
    }
    Ok(())
}

/// Normalizes the phase of `v` so that its first significant component
/// (modulus above `1e-8 * max |v_i|`) is real and positive.
fn phase_normalize(v: &mut CVec) {
    let maxabs = v.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
    if maxabs == 0.0 {
        return;
    }
    let tol = 1e-8 * maxabs;
    if let Some(z) = v.iter().find(|z| z.norm() > tol) {
        let phase = z.conj() / z.norm();
        for x in v.iter_mut() {
            *x *= phase;
        }
    }
}

/// Modified Gram-Schmidt with one full reorthogonalization pass.
///
/// Orthonormalizes `cols` against `fixed` and against previously accepted
/// columns; columns whose residual norm falls below `drop_tol` times their
/// original norm (or an absolute floor) are skipped. Returns at most
/// `max_cols` vectors.
fn mgs_collect(fixed: &[CVec], cols: Vec<CVec>, drop_tol: f64, max_cols: usize) -> Vec<CVec> {
    let mut basis: Vec<CVec> = Vec::with_capacity(max_cols);
    for col in cols {
        if basis.len() == max_cols {
            break;
        }
        let orig_norm = col.norm();
        if orig_norm <= 1e-300 {
            continue;
        }
        let mut v = col;
        // Two MGS passes ("twice is enough") for near-machine orthogonality.
        for _ in 0..2 {
            for q in fixed.iter().chain(basis.iter()) {
                let c = q.dotc(&v);
                v -= q * c;
            }
        }
        let res_norm = v.norm();
        if res_norm <= drop_tol * orig_norm {
            continue;
        }
        v /= Complex64::new(res_norm, 0.0);
        phase_normalize(&mut v);
        basis.push(v);
    }
    basis
}

/// Orthonormal basis of the null space of a full-row-rank matrix.
///
/// For `A` of size `m x n` (`m <= n`), returns an `n x (n - m)` matrix with
/// orthonormal columns spanning `null(A)`. An empty `A` (`m = 0`) returns
/// the identity.
///
/// Construction: orthonormalize the rows into `Q1` (modified Gram-Schmidt
/// with reorthogonalization), project the standard basis onto the
/// complement, select the first `n - m` coordinate columns that survive a
/// Gram-Schmidt dependence test, and symmetrically orthonormalize the
/// selected projected columns (`B (B^H B)^{-1/2}`). The symmetric
/// (Lowdin) step makes the output unique without any sign convention and
/// keeps the basis of a perturbed matrix aligned with the unperturbed one
/// to first order, which the null-space perturbation bounds require of the
/// deployed convention; a sequential Gram-Schmidt basis rotates inside the
/// subspace at first order and can exceed those bounds.
pub fn null_space_basis(a: &CMat) -> Result<CMat> {
    let (m, n) = (a.nrows(), a.ncols());
    if m > n {
        return Err(Error::DimensionError {
            context: "null_space_basis",
            details: format!("m = {m} > n = {n}"),
        });
    }
    if m == 0 {
        return Ok(CMat::identity(n, n));
    }
    ensure_finite(a, "null_space_basis")?;
    check_full_row_rank(a, "null_space_basis")?;

    // Row-space basis from the columns of A^H.
    let ah = a.adjoint();
    let row_cols: Vec<CVec> = (0..m).map(|j| ah.column(j).into_owned()).collect();
    let q1 = mgs_collect(&[], row_cols, 1e-12, m);
    if q1.len() != m {
        return Err(Error::NumericalFailure("null_space_basis: row-space basis"));
    }

    // Projected coordinate columns, natural order.
    let dim = n - m;
    let mut proj_cols = Vec::with_capacity(n);
    for i in 0..n {
        let mut e = CVec::zeros(n);
        e[i] = Complex64::new(1.0, 0.0);
        for q in &q1 {
            let c = q.dotc(&e);
            e -= q * c;
        }
        proj_cols.push(e);
    }

    // Greedy selection of independent columns (indices only).
    let mut selected: Vec<usize> = Vec::with_capacity(dim);
    let mut gs: Vec<CVec> = Vec::with_capacity(dim);
    for (i, col) in proj_cols.iter().enumerate() {
        if selected.len() == dim {
            break;
        }
        let orig_norm = col.norm();
        if orig_norm <= 1e-300 {
            continue;
        }
        let mut v = col.clone();
        for _ in 0..2 {
            for q in &gs {
                let c = q.dotc(&v);
                v -= q * c;
            }
        }
        let res = v.norm();
        if res <= 1e-8 * orig_norm {
            continue;
        }
        v /= Complex64::new(res, 0.0);
        gs.push(v);
        selected.push(i);
    }
    if selected.len() != dim {
        return Err(Error::NumericalFailure("null_space_basis: complement basis"));
    }

    // Symmetric orthonormalization of the selected projected columns.
    let b = CMat::from_columns(&selected.iter().map(|&i| proj_cols[i].clone()).collect::<Vec<_>>());
    let gram = b.adjoint() * &b;
    let (vals, vecs) = hermitian_eigen_desc(&gram);
    if vals.iter().any(|&v| v <= 1e-24) {
        return Err(Error::NumericalFailure("null_space_basis: gram conditioning"));
    }
    let inv_sqrt_diag = CMat::from_diagonal(&CVec::from_iterator(
        dim,
        vals.iter().map(|&v| Complex64::new(1.0 / v.sqrt(), 0.0)),
    ));
    let inv_sqrt = &vecs * inv_sqrt_diag * vecs.adjoint();
    Ok(b * inv_sqrt)
}

/// Hermitian eigendecomposition with eigenvalues sorted descending and
/// phase-normalized eigenvectors. Ties keep the eigensolver's ordering.
pub fn hermitian_eigen_desc(x: &CMat) -> (Vec<f64>, CMat) {
    let n = x.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = hermitian_part(x).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        phase_normalize(&mut v);
        vecs.set_column(c, &v);
    }
    (vals, vecs)
}

/// Rectangular factor `F` (size `n x r`) with `F F^H` equal to the best
/// rank-`r` PSD approximation of `X` (truncated eigendecomposition with
/// descending eigenvalues; negative eigenvalues clamped to zero).
pub fn psd_sqrt_factor(x: &PsdMatrix, rank: usize) -> Result<CMat> {
    let n = x.dim();
    if rank > n {
        return Err(Error::DimensionError {
            context: "psd_sqrt_factor",
            details: format!("rank {rank} > dimension {n}"),
        });
    }
    let (vals, vecs) = hermitian_eigen_desc(x.matrix());
    let mut f = CMat::zeros(n, rank);
    for j in 0..rank {
        let lam = vals[j].max(0.0);
        let col = vecs.column(j) * Complex64::new(lam.sqrt(), 0.0);
        f.set_column(j, &col);
    }
    Ok(f)
}

/// Eigenvectors of the `r` largest eigenvalues, as orthonormal columns.
///
/// A numerically zero input returns zero columns (the convention used by the
/// rank-feasible reformulation: eigenvectors of a zero matrix are zero
/// vectors, so zero covariances stay zero after reduction).
pub fn top_eigvecs(x: &PsdMatrix, r: usize) -> Result<CMat> {
    let n = x.dim();
    if r > n {
        return Err(Error::DimensionError {
            context: "top_eigvecs",
            details: format!("r {r} > dimension {n}"),
        });
    }
    let (vals, vecs) = hermitian_eigen_desc(x.matrix());
    let lam_max = vals.first().copied().unwrap_or(0.0);
    if lam_max <= 1e-14 * x.trace().max(1.0) {
        return Ok(CMat::zeros(n, r));
    }
    Ok(vecs.columns(0, r).into_owned())
}

/// Moore-Penrose pseudo-inverse of a full-row-rank matrix,
/// `A^+ = A^H (A A^H)^{-1}`.
pub fn pseudo_inverse(a: &CMat) -> Result<CMat> {
    ensure_finite(a, "pseudo_inverse")?;
    check_full_row_rank(a, "pseudo_inverse")?;
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let mut sinv = CMat::zeros(svd.singular_values.len(), svd.singular_values.len());
    for (i, s) in svd.singular_values.iter().enumerate() {
        sinv[(i, i)] = Complex64::new(1.0 / s, 0.0);
    }
    Ok(vt.adjoint() * sinv * u.adjoint())
}

/// Solves `A X = B` for Hermitian positive definite `A` via Cholesky,
/// retrying once with a trace-relative jitter.
pub fn hpd_solve(a: &CMat, b: &CMat, context: &'static str) -> Result<CMat> {
    let herm = hermitian_part(a);
    if let Some(chol) = herm.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let jitter = 1e-12 * herm.trace().re.abs().max(1e-300);
    let n = herm.nrows();
    let jittered = herm + CMat::identity(n, n) * Complex64::new(jitter, 0.0);
    match jittered.cholesky() {
        Some(chol) => Ok(chol.solve(b)),
        None => Err(Error::NumericalFailure(context)),
    }
}

/// `log2 det(A)` for Hermitian positive definite `A` via Cholesky, with the
/// same jitter policy as [`hpd_solve`].
pub fn log2_det_hpd(a: &CMat, context: &'static str) -> Result<f64> {
    let herm = hermitian_part(a);
    let chol = match herm.clone().cholesky() {
        Some(c) => c,
        None => {
            let jitter = 1e-12 * herm.trace().re.abs().max(1e-300);
            let n = herm.nrows();
            (herm + CMat::identity(n, n) * Complex64::new(jitter, 0.0))
                .cholesky()
                .ok_or(Error::NumericalFailure(context))?
        }
    };
    let mut acc = 0.0;
    for i in 0..chol.l_dirty().nrows() {
        acc += chol.l_dirty()[(i, i)].re.ln();
    }
    Ok(2.0 * acc / std::f64::consts::LN_2)
}

/// Largest principal angle (radians) between the column spans of two
/// matrices with orthonormal columns, computed through its sine
/// `||(I - B B^H) A||` (accurate near zero, unlike the arccosine form).
pub fn subspace_angle(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.ncols(), b.ncols(), "subspace dimensions differ");
    if a.ncols() == 0 {
        return 0.0;
    }
    let residual = a - b * (b.adjoint() * a);
    spectral_norm(&residual).min(1.0).asin()
}

/// Real part of `tr(A B)`.
pub fn trace_product_re(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let p = a[(i, j)] * b[(j, i)];
            acc += p.re;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn random_cmat(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CMat {
        CMat::from_fn(m, n, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im) * Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)
        })
    }

    /// SVD-based null-space oracle, independent of the Gram-Schmidt path.
    fn svd_null_oracle(a: &CMat) -> CMat {
        let (m, n) = (a.nrows(), a.ncols());
        let svd = a.clone().svd(false, true);
        // Right singular vectors for the zero singular values are not
        // returned by the thin SVD, so build the complement of the row space.
        let vt = svd.v_t.unwrap();
        let v = vt.adjoint(); // n x m, spans the row space
        let mut cols = Vec::new();
        for i in 0..n {
            let mut e = CVec::zeros(n);
            e[i] = Complex64::new(1.0, 0.0);
            for j in 0..m {
                let q = v.column(j);
                let c = q.dotc(&e);
                e -= q.into_owned() * c;
            }
            for q in &cols {
                let q: &CVec = q;
                let c = q.dotc(&e);
                e -= q * c;
            }
            if e.norm() > 1e-8 {
                e /= Complex64::new(e.norm(), 0.0);
                cols.push(e);
            }
        }
        assert_eq!(cols.len(), n - m);
        CMat::from_columns(&cols)
    }

    fn power_iteration_norm(a: &CMat) -> f64 {
        let ata = a.adjoint() * a;
        let n = ata.nrows();
        let mut v = CVec::from_element(n, Complex64::new(1.0, 0.1));
        v /= Complex64::new(v.norm(), 0.0);
        let mut lam = 0.0;
        for _ in 0..2000 {
            let w = &ata * &v;
            lam = w.norm();
            if lam == 0.0 {
                return 0.0;
            }
            v = w / Complex64::new(lam, 0.0);
        }
        lam.sqrt()
    }

    #[test]
    fn null_space_of_empty_matrix_is_identity() {
        let a = CMat::zeros(0, 4);
        let psi = null_space_basis(&a).unwrap();
        assert_eq!(psi, CMat::identity(4, 4));
    }

    #[test]
    fn null_space_coordinate_case() {
        // A = [1 0 0 0] -> basis spanning e2, e3, e4.
        let mut a = CMat::zeros(1, 4);
        a[(0, 0)] = Complex64::new(1.0, 0.0);
        let psi = null_space_basis(&a).unwrap();
        assert_eq!(psi.shape(), (4, 3));
        assert!(spectral_norm(&(&a * &psi)) <= 1e-12);
        for j in 0..3 {
            // Each basis vector has zero first component.
            assert!(psi[(0, j)].norm() <= 1e-12);
        }
    }

    #[test]
    fn null_space_matches_svd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a = random_cmat(&mut rng, 2, 4);
            let psi = null_space_basis(&a).unwrap();
            let gram = psi.adjoint() * &psi;
            assert!(spectral_norm(&(gram - CMat::identity(2, 2))) <= 1e-10);
            assert!(spectral_norm(&(&a * &psi)) <= 1e-9 * spectral_norm(&a).max(1.0));
            let oracle = svd_null_oracle(&a);
            assert!(subspace_angle(&psi, &oracle) <= 1e-8);
        }
    }

    #[test]
    fn null_space_rejects_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let row = random_cmat(&mut rng, 1, 5);
        let mut a = CMat::zeros(2, 5);
        a.row_mut(0).copy_from(&row.row(0));
        a.row_mut(1).copy_from(&(row.row(0) * Complex64::new(2.0, 0.0)));
        assert!(matches!(
            null_space_basis(&a),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn null_space_rejects_wide_rows() {
        let a = CMat::identity(3, 2);
        assert!(matches!(
            null_space_basis(&a),
            Err(Error::DimensionError { .. })
        ));
    }

    #[test]
    fn null_space_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_cmat(&mut rng, 3, 6);
        let p1 = null_space_basis(&a).unwrap();
        let p2 = null_space_basis(&a).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn projection_identity_matches_pseudo_inverse() {
        // I - Psi Psi^H = A^+ A for full-row-rank A.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let a = random_cmat(&mut rng, 3, 7);
            let psi = null_space_basis(&a).unwrap();
            let pinv = pseudo_inverse(&a).unwrap();
            let lhs = CMat::identity(7, 7) - &psi * psi.adjoint();
            let rhs = &pinv * &a;
            assert!(spectral_norm(&(lhs - rhs)) <= 1e-8);
        }
    }

    #[test]
    fn psd_sqrt_scaled_identity() {
        let x = PsdMatrix::scaled_identity(2, 4.0);
        let f = psd_sqrt_factor(&x, 2).unwrap();
        let recon = &f * f.adjoint();
        assert!(spectral_norm(&(recon - x.matrix())) <= 1e-12);
    }

    #[test]
    fn psd_sqrt_zero_matrix() {
        let x = PsdMatrix::zeros(3);
        let f = psd_sqrt_factor(&x, 2).unwrap();
        assert_eq!(f.shape(), (3, 2));
        assert!(spectral_norm(&f) == 0.0);
    }

    #[test]
    fn psd_sqrt_recovers_gram_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let g = random_cmat(&mut rng, 4, 2);
            let x = PsdMatrix::new(&g * g.adjoint()).unwrap();
            let f = psd_sqrt_factor(&x, 2).unwrap();
            let err = spectral_norm(&(&f * f.adjoint() - x.matrix()));
            assert!(err <= 1e-9 * spectral_norm(x.matrix()));
        }
    }

    #[test]
    fn psd_sqrt_rank_too_large() {
        let x = PsdMatrix::zeros(2);
        assert!(matches!(
            psd_sqrt_factor(&x, 3),
            Err(Error::DimensionError { .. })
        ));
    }

    #[test]
    fn top_eigvecs_diagonal_case() {
        let mut m = CMat::zeros(2, 2);
        m[(0, 0)] = Complex64::new(3.0, 0.0);
        m[(1, 1)] = Complex64::new(1.0, 0.0);
        let u = top_eigvecs(&PsdMatrix::new(m).unwrap(), 1).unwrap();
        assert!((u[(0, 0)].re - 1.0).abs() <= 1e-12);
        assert!(u[(0, 0)].im.abs() <= 1e-12);
        assert!(u[(1, 0)].norm() <= 1e-12);
    }

    #[test]
    fn top_eigvecs_zero_matrix_convention() {
        let u = top_eigvecs(&PsdMatrix::zeros(3), 2).unwrap();
        assert_eq!(u, CMat::zeros(3, 2));
    }

    #[test]
    fn top_eigvecs_recovers_constructed_eigenspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            // Random unitary from the QR of a Ginibre matrix.
            let g = random_cmat(&mut rng, 3, 3);
            let qr = g.qr();
            let q = qr.q();
            let d = CMat::from_diagonal(&CVec::from_vec(vec![
                Complex64::new(5.0, 0.0),
                Complex64::new(2.0, 0.0),
                Complex64::new(0.0, 0.0),
            ]));
            let x = PsdMatrix::new(&q * d * q.adjoint()).unwrap();
            let u = top_eigvecs(&x, 2).unwrap();
            let expected = q.columns(0, 2).into_owned();
            assert!(subspace_angle(&u, &expected) <= 1e-8);
        }
    }

    #[test]
    fn pseudo_inverse_scaled_identity() {
        let a = CMat::identity(3, 3) * Complex64::new(2.0, 0.0);
        let p = pseudo_inverse(&a).unwrap();
        assert!(spectral_norm(&(p - CMat::identity(3, 3) * Complex64::new(0.5, 0.0))) <= 1e-12);
    }

    #[test]
    fn pseudo_inverse_rejects_rank_deficient() {
        let mut a = CMat::zeros(2, 2);
        a[(0, 0)] = Complex64::new(1.0, 0.0);
        assert!(matches!(
            pseudo_inverse(&a),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn pseudo_inverse_moore_penrose_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_cmat(&mut rng, 2, 5);
        let p = pseudo_inverse(&a).unwrap();
        let apa = &a * &p * &a;
        let pap = &p * &a * &p;
        let ap = &a * &p;
        let pa = &p * &a;
        assert!(spectral_norm(&(apa - &a)) <= 1e-9 * spectral_norm(&a).max(1.0));
        assert!(spectral_norm(&(pap - &p)) <= 1e-9 * spectral_norm(&p).max(1.0));
        assert!(spectral_norm(&(ap.adjoint() - &ap)) <= 1e-9);
        assert!(spectral_norm(&(pa.adjoint() - &pa)) <= 1e-9);
        // Full-row-rank case: A A^+ = I.
        assert!(spectral_norm(&(ap - CMat::identity(2, 2))) <= 1e-9);
    }

    #[test]
    fn spectral_norm_cases() {
        assert_eq!(spectral_norm(&CMat::zeros(0, 3)), 0.0);
        assert!((spectral_norm(&CMat::identity(3, 3)) - 1.0).abs() <= 1e-12);
        let mut d = CMat::zeros(2, 2);
        d[(0, 0)] = Complex64::new(2.0, 0.0);
        d[(1, 1)] = Complex64::new(-3.0, 0.0);
        assert!((spectral_norm(&d) - 3.0).abs() <= 1e-12);
    }

    #[test]
    fn spectral_norm_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let a = random_cmat(&mut rng, 3, 5);
            let s = spectral_norm(&a);
            let p = power_iteration_norm(&a);
            assert!((s - p).abs() <= 1e-8 * s.max(1.0));
        }
    }

    #[test]
    fn psd_repair_clamps_indefinite_input() {
        let mut m = CMat::identity(2, 2);
        m[(1, 1)] = Complex64::new(-0.5, 0.0);
        let x = PsdMatrix::new(m).unwrap();
        let (vals, _) = hermitian_eigen_desc(x.matrix());
        assert!(vals.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn psd_new_rejects_non_finite() {
        let mut m = CMat::identity(2, 2);
        m[(0, 1)] = Complex64::new(f64::NAN, 0.0);
        assert!(PsdMatrix::new(m).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn null_space_invariants(seed in 0u64..1000, m in 1usize..4, extra in 1usize..5) {
                let n = m + extra;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_cmat(&mut rng, m, n);
                let psi = null_space_basis(&a).unwrap();
                let gram = psi.adjoint() * &psi;
                prop_assert!(spectral_norm(&(gram - CMat::identity(n - m, n - m))) <= 1e-10);
                prop_assert!(spectral_norm(&(&a * &psi)) <= 1e-9 * spectral_norm(&a).max(1.0));
            }

            #[test]
            fn sqrt_factor_roundtrip(seed in 0u64..1000, n in 2usize..6, r in 1usize..3) {
                let r = r.min(n);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = random_cmat(&mut rng, n, r);
                let x = PsdMatrix::new(&g * g.adjoint()).unwrap();
                let f = psd_sqrt_factor(&x, r).unwrap();
                let err = spectral_norm(&(&f * f.adjoint() - x.matrix()));
                prop_assert!(err <= 1e-9 * spectral_norm(x.matrix()).max(1e-12));
            }
        }
    }
}
