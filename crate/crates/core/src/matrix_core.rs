//! Complex Hermitian linear-algebra kernels and the statistical utilities the
//! precoders and closed-form rate expressions are built on.
//!
//! All operations are pure functions of their inputs and safe to call from any
//! number of threads. Decomposition outputs are deterministic for a fixed
//! input: eigenvalues are sorted in decreasing order, near-degenerate pairs are
//! ordered by the real part of the first nonzero eigenvector entry, and each
//! eigenvector's global phase is fixed so its largest-magnitude entry is real
//! and positive.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Relative tolerance for the Hermitian symmetry check.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// A singular/eigenvalue counts as zero when below this fraction of the
/// largest one. Finite-size covariance synthesis leaves tiny trailing
/// eigenvalues where the asymptotic argument promises exact rank deficiency.
pub const RANK_TOL: f64 = 1e-9;
/// Eigenvalues in `[-PSD_TOL * lambda_max, 0)` are clamped to zero; anything
/// lower rejects the matrix as non-PSD.
pub const PSD_TOL: f64 = 1e-10;

/// A validated `dim x dim` complex Hermitian matrix.
///
/// Construction checks conjugate symmetry against [`HERMITIAN_TOL`] (relative
/// to the largest entry magnitude) and then symmetrizes, so stored entries
/// satisfy the invariant exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    entries: CMat,
}

impl HermitianMatrix {
    /// Validates Hermitian symmetry and wraps the matrix.
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        let asym = (&m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        let tolerance = HERMITIAN_TOL * scale.max(1.0);
        if asym > 2.0 * tolerance {
            return Err(Error::NotHermitian { max_asymmetry: asym, tolerance });
        }
        let entries = (&m + m.adjoint()).scale(0.5);
        Ok(Self { entries })
    }

    /// Zero matrix of the given dimension.
    pub fn zeros(dim: usize) -> Self {
        Self { entries: CMat::zeros(dim, dim) }
    }

    /// Identity matrix of the given dimension.
    pub fn identity(dim: usize) -> Self {
        Self { entries: CMat::identity(dim, dim) }
    }

    /// Real diagonal matrix.
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let d = DVector::from_iterator(diag.len(), diag.iter().map(|&x| C64::new(x, 0.0)));
        Self { entries: CMat::from_diagonal(&d) }
    }

    /// Builds `F F^H`, which is Hermitian PSD by construction.
    pub fn from_factor(factor: &CMat) -> Self {
        let m = factor * factor.adjoint();
        // symmetrize away rounding noise from the product
        let entries = (&m + m.adjoint()).scale(0.5);
        Self { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.entries
    }

    pub fn into_matrix(self) -> CMat {
        self.entries
    }

    /// Real trace (the imaginary part is zero by symmetry).
    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|z| z.re).sum()
    }

    /// Sum of two Hermitian matrices of equal dimension.
    pub fn add(&self, other: &HermitianMatrix) -> Result<HermitianMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "cannot add Hermitian matrices of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(HermitianMatrix { entries: &self.entries + &other.entries })
    }

    /// Eigendecomposition; see [`hermitian_eig`].
    pub fn eig(&self) -> EigenDecomposition {
        eig_sorted(&self.entries)
    }
}

/// Eigendecomposition of a Hermitian matrix with values sorted in decreasing
/// order and columns of `vectors` aligned with `values`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `U diag(lambda) U^H`.
    pub fn reconstruct(&self) -> CMat {
        let d = DVector::from_iterator(self.values.len(), self.values.iter().map(|&v| C64::new(v, 0.0)));
        &self.vectors * CMat::from_diagonal(&d) * self.vectors.adjoint()
    }

    /// Number of eigenvalues above `tol * |lambda|_max`.
    pub fn rank(&self, tol: f64) -> usize {
        let scale = self.values.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        if scale == 0.0 {
            return 0;
        }
        self.values.iter().filter(|v| v.abs() > tol * scale).count()
    }

    /// Largest eigenvalue.
    pub fn lambda_max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// Eigenvector of the largest eigenvalue.
    pub fn u_max(&self) -> CVec {
        CVec::from(self.vectors.column(0))
    }

    /// Columns spanning the numerical range (first `rank` eigenvectors).
    pub fn range_basis(&self, tol: f64) -> CMat {
        let r = self.rank(tol);
        self.vectors.columns(0, r).into_owned()
    }

    /// Columns spanning the numerical null space (trailing eigenvectors).
    pub fn null_basis(&self, tol: f64) -> CMat {
        let r = self.rank(tol);
        self.vectors.columns(r, self.dim() - r).into_owned()
    }
}

/// Rotates a vector's global phase so its largest-magnitude entry is real
/// positive. Leaves (near-)zero vectors untouched.
pub(crate) fn fix_phase(col: &mut CVec) {
    let mut best = 0usize;
    let mut best_mag = 0.0f64;
    for (i, z) in col.iter().enumerate() {
        let m = z.norm();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    if best_mag > 0.0 {
        let phase = col[best] / C64::new(best_mag, 0.0);
        let rot = phase.conj();
        for z in col.iter_mut() {
            *z *= rot;
        }
    }
}

fn first_nonzero_real(col: &CVec) -> f64 {
    let scale = col.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    let thresh = HERMITIAN_TOL * scale.max(1.0);
    col.iter().find(|z| z.norm() > thresh).map(|z| z.re).unwrap_or(0.0)
}

fn eig_sorted(m: &CMat) -> EigenDecomposition {
    let dim = m.nrows();
    if dim == 0 {
        return EigenDecomposition { values: Vec::new(), vectors: CMat::zeros(0, 0) };
    }
    let se = m.clone().symmetric_eigen();
    let mut cols: Vec<(f64, CVec)> = (0..dim)
        .map(|i| {
            let mut c = CVec::from(se.eigenvectors.column(i));
            fix_phase(&mut c);
            (se.eigenvalues[i], c)
        })
        .collect();
    cols.sort_by(|a, b| b.0.total_cmp(&a.0));
    // within near-degenerate runs, order by the real part of the first
    // nonzero eigenvector entry so the output is reproducible
    let scale = cols.iter().map(|(v, _)| v.abs()).fold(0.0f64, f64::max);
    let tie = HERMITIAN_TOL * scale.max(1.0);
    let mut start = 0;
    while start < dim {
        let mut end = start + 1;
        while end < dim && (cols[start].0 - cols[end].0).abs() <= tie {
            end += 1;
        }
        if end - start > 1 {
            cols[start..end].sort_by(|a, b| first_nonzero_real(&a.1).total_cmp(&first_nonzero_real(&b.1)));
        }
        start = end;
    }
    let values = cols.iter().map(|(v, _)| *v).collect();
    let vectors = CMat::from_columns(&cols.into_iter().map(|(_, c)| c).collect::<Vec<_>>());
    EigenDecomposition { values, vectors }
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Rejects inputs whose asymmetry exceeds [`HERMITIAN_TOL`], reporting the
/// maximum asymmetry found.
pub fn hermitian_eig(m: &CMat) -> Result<EigenDecomposition> {
    Ok(HermitianMatrix::new(m.clone())?.eig())
}

/// Pseudo inverse of a tall full-column-rank matrix: `G (G^H G)^{-1}`.
///
/// The result `P` satisfies `G^H P = I`. Rank-deficient inputs (smallest to
/// largest singular value ratio below [`RANK_TOL`]) are rejected.
pub fn pseudo_inverse(g: &CMat) -> Result<CMat> {
    let (m, k) = (g.nrows(), g.ncols());
    if m < k {
        return Err(Error::DimensionMismatch(format!(
            "pseudo inverse expects a tall matrix, got {m}x{k}"
        )));
    }
    if k == 0 {
        return Ok(CMat::zeros(m, 0));
    }
    let gram = HermitianMatrix::from_factor(&g.adjoint().into_owned());
    let eig = gram.eig();
    let s_max = eig.lambda_max().max(0.0).sqrt();
    let s_min = eig.values.last().copied().unwrap_or(0.0).max(0.0).sqrt();
    if s_max == 0.0 || s_min / s_max < RANK_TOL {
        return Err(Error::RankDeficient {
            ratio: if s_max == 0.0 { 0.0 } else { s_min / s_max },
            threshold: RANK_TOL,
        });
    }
    let inv_d = DVector::from_iterator(k, eig.values.iter().map(|&v| C64::new(1.0 / v, 0.0)));
    let gram_inv = &eig.vectors * CMat::from_diagonal(&inv_d) * eig.vectors.adjoint();
    Ok(g * gram_inv)
}

/// Hermitian PSD square root: `S` with `S S = A`.
///
/// Eigenvalues in `[-PSD_TOL * lambda_max, 0)` are clamped to zero; anything
/// below rejects the matrix as non-PSD.
pub fn psd_sqrt(a: &HermitianMatrix) -> Result<HermitianMatrix> {
    let eig = a.eig();
    let lambda_max = eig.lambda_max().max(0.0);
    let floor = -PSD_TOL * lambda_max.max(1.0);
    if let Some(&min) = eig.values.last() {
        if min < floor {
            return Err(Error::NotPsd { eigenvalue: min, tolerance: -floor });
        }
    }
    let sq = DVector::from_iterator(
        eig.values.len(),
        eig.values.iter().map(|&v| C64::new(v.max(0.0).sqrt(), 0.0)),
    );
    let m = &eig.vectors * CMat::from_diagonal(&sq) * eig.vectors.adjoint();
    Ok(HermitianMatrix { entries: (&m + m.adjoint()).scale(0.5) })
}

/// Which fourth-moment identity to use for `E{tr(ZA) tr(ZB)}`, `Z = h h^H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuadFormConvention {
    /// `tr(A)tr(B) + tr(AB) - tr(D(A)D(B))`, with `D(.)` the diagonal part.
    #[default]
    DiagonalCorrected,
    /// `tr(A)tr(B) + tr(AB)`, the circularly-symmetric Gaussian moment.
    Circular,
}

/// `E{tr(ZA) tr(ZB)}` for `Z = h h^H`, `h ~ CN(0, I)`, in the
/// diagonal-corrected form `tr(A)tr(B) + tr(AB) - tr(D(A)D(B))`.
pub fn quad_form_expectation_f(a: &CMat, b: &CMat) -> Result<C64> {
    quad_form_expectation(a, b, QuadFormConvention::DiagonalCorrected)
}

/// Same expectation under an explicit convention; see [`QuadFormConvention`].
pub fn quad_form_expectation(a: &CMat, b: &CMat, convention: QuadFormConvention) -> Result<C64> {
    let dim = a.nrows();
    if a.ncols() != dim || b.nrows() != dim || b.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "quad form expects equal square matrices, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let tr_a: C64 = a.diagonal().iter().sum();
    let tr_b: C64 = b.diagonal().iter().sum();
    // tr(AB) without forming the product
    let mut tr_ab = C64::new(0.0, 0.0);
    for i in 0..dim {
        for j in 0..dim {
            tr_ab += a[(i, j)] * b[(j, i)];
        }
    }
    let mut out = tr_a * tr_b + tr_ab;
    if convention == QuadFormConvention::DiagonalCorrected {
        let diag: C64 = (0..dim).map(|i| a[(i, i)] * b[(i, i)]).sum();
        out -= diag;
    }
    Ok(out)
}

/// Second-order approximation for the mean of a ratio `V1/V2`:
/// `E1/E2 - cov12/E2^2 + var2 * E1/E2^3`.
pub fn mean_ratio_approx(e1: f64, e2: f64, cov12: f64, var2: f64) -> Result<f64> {
    if e2 == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(e1 / e2 - cov12 / (e2 * e2) + var2 * e1 / (e2 * e2 * e2))
}

/// Best rank-`d` approximation in Frobenius norm (truncated eigendecomposition
/// of a PSD matrix).
pub fn low_rank_approx(a: &HermitianMatrix, d: usize) -> Result<HermitianMatrix> {
    let dim = a.dim();
    if d == 0 || d > dim {
        return Err(Error::InvalidArgument(format!(
            "target rank {d} out of range 1..={dim}"
        )));
    }
    let eig = a.eig();
    let kept = DVector::from_iterator(
        dim,
        eig.values.iter().enumerate().map(|(i, &v)| {
            if i < d {
                C64::new(v.max(0.0), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }),
    );
    let m = &eig.vectors * CMat::from_diagonal(&kept) * eig.vectors.adjoint();
    Ok(HermitianMatrix { entries: (&m + m.adjoint()).scale(0.5) })
}

/// Orthonormalizes `extra`'s columns against the (already orthonormal) columns
/// of `base` and against each other, returning the accepted columns. Columns
/// whose residual drops below `tol` times their original norm are dropped.
///
/// Two Gram-Schmidt passes keep the result orthonormal to machine precision.
pub fn orthonormalize_against(base: &CMat, extra: &CMat, tol: f64) -> CMat {
    let m = extra.nrows();
    let mut accepted: Vec<CVec> = Vec::with_capacity(extra.ncols());
    for j in 0..extra.ncols() {
        let mut v = CVec::from(extra.column(j));
        let orig = v.norm();
        if orig == 0.0 {
            continue;
        }
        for _ in 0..2 {
            if base.ncols() > 0 {
                let coeffs = base.adjoint() * &v;
                v -= base * coeffs;
            }
            for q in &accepted {
                let c = q.dotc(&v);
                v.axpy(-c, q, C64::new(1.0, 0.0));
            }
        }
        let n = v.norm();
        if n > tol * orig {
            v /= C64::new(n, 0.0);
            accepted.push(v);
        }
    }
    if accepted.is_empty() {
        CMat::zeros(m, 0)
    } else {
        CMat::from_columns(&accepted)
    }
}
