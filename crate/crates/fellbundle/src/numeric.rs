//! Dense complex linear algebra for small matrices.
//!
//! Everything downstream works with fibres that are complex matrices of
//! single-digit dimension, so the kernel favours exactness and auditability
//! over scale: row-major dense storage, a cyclic Jacobi eigensolver for
//! Hermitian matrices, and spectral calculus through a fixed catalog of
//! named scalar functions.

use num_complex::Complex64;
use std::fmt;
use thiserror::Error;

/// Numeric comparison thresholds used across the library.
///
/// `absolute` guards checks of the form `|x - y| <= absolute * scale`,
/// `relative` scales with the magnitude of the operands, and
/// `invertibility_threshold` is the singular-value cutoff below which a
/// matrix direction is treated as degenerate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub absolute: f64,
    pub relative: f64,
    pub invertibility_threshold: f64,
}

impl Tolerance {
    pub fn new(absolute: f64, relative: f64, invertibility_threshold: f64) -> Self {
        assert!(
            invertibility_threshold > 0.0,
            "invertibility threshold must be positive, got {invertibility_threshold}"
        );
        Self {
            absolute,
            relative,
            invertibility_threshold,
        }
    }

    /// Allowed deviation for a quantity that should vanish, at a given scale.
    pub fn allowance(&self, scale: f64) -> f64 {
        self.absolute + self.relative * scale
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            absolute: 1e-9,
            relative: 1e-9,
            invertibility_threshold: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("matrix is not Hermitian: asymmetry {asymmetry:.3e} exceeds allowance {allowed:.3e}")]
    NotHermitian { asymmetry: f64, allowed: f64 },
    #[error("dimension mismatch: {left_rows}x{left_cols} against {right_rows}x{right_cols}")]
    DimensionMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
}

/// Dense complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Complex64::new(1.0, 0.0));
        }
        m
    }

    /// `z` times the identity.
    pub fn scalar(n: usize, z: Complex64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, z);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        assert!(
            rows.iter().all(|r| r.len() == ncols),
            "ragged rows in matrix literal"
        );
        let data = rows.iter().flatten().copied().collect();
        Self {
            rows: nrows,
            cols: ncols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn diag(entries: &[Complex64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &z) in entries.iter().enumerate() {
            m.set(i, i, z);
        }
        m
    }

    pub fn real_diag(entries: &[f64]) -> Self {
        let complex: Vec<Complex64> = entries.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::diag(&complex)
    }

    /// Assemble a matrix from a grid of blocks; `block(i, j)` must have shape
    /// `row_dims[i] x col_dims[j]`.
    pub fn from_blocks(
        row_dims: &[usize],
        col_dims: &[usize],
        mut block: impl FnMut(usize, usize) -> ComplexMatrix,
    ) -> Self {
        let total_rows: usize = row_dims.iter().sum();
        let total_cols: usize = col_dims.iter().sum();
        let mut m = Self::zeros(total_rows, total_cols);
        let mut row_off = 0;
        for (bi, &rd) in row_dims.iter().enumerate() {
            let mut col_off = 0;
            for (bj, &cd) in col_dims.iter().enumerate() {
                let b = block(bi, bj);
                assert_eq!(
                    (b.rows, b.cols),
                    (rd, cd),
                    "block ({bi}, {bj}) has shape {}x{}, expected {rd}x{cd}",
                    b.rows,
                    b.cols
                );
                for i in 0..rd {
                    for j in 0..cd {
                        m.set(row_off + i, col_off + j, b.get(i, j));
                    }
                }
                col_off += cd;
            }
            row_off += rd;
        }
        m
    }

    /// Direct sum along the diagonal.
    pub fn block_diag(blocks: &[ComplexMatrix]) -> Self {
        let row_dims: Vec<usize> = blocks.iter().map(ComplexMatrix::rows).collect();
        let col_dims: Vec<usize> = blocks.iter().map(ComplexMatrix::cols).collect();
        Self::from_blocks(&row_dims, &col_dims, |i, j| {
            if i == j {
                blocks[i].clone()
            } else {
                ComplexMatrix::zeros(row_dims[i], col_dims[j])
            }
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, z: Complex64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = z;
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn validate_finite(&self) -> Result<(), NumericError> {
        for i in 0..self.rows {
            for j in 0..self.cols {
                let z = self.get(i, j);
                if !z.re.is_finite() || !z.im.is_finite() {
                    return Err(NumericError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "shape mismatch in add"
        );
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "shape mismatch in sub"
        );
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, z: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * z).collect(),
        }
    }

    pub fn neg(&self) -> Self {
        self.scale(Complex64::new(-1.0, 0.0))
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "inner dimension mismatch in mul: {}x{} times {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut m = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.get(i, k);
                if aik == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    let cur = m.get(i, j);
                    m.set(i, j, cur + aik * other.get(k, j));
                }
            }
        }
        m
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m.set(j, i, self.get(i, j).conj());
            }
        }
        m
    }

    pub fn trace(&self) -> Complex64 {
        assert!(self.is_square(), "trace of a non-square matrix");
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "shape mismatch in max_abs_diff"
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (self.rows, self.cols) == (other.rows, other.cols) && self.max_abs_diff(other) <= tol
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.max_abs() <= tol
    }

    /// Frobenius norm of `self - self*`; zero exactly when Hermitian.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        self.sub(&self.adjoint()).frobenius_norm()
    }

    /// `(self + self*) / 2`, the nearest Hermitian matrix.
    pub fn hermitian_part(&self) -> Self {
        assert!(self.is_square(), "hermitian part of a non-square matrix");
        self.add(&self.adjoint()).scale(Complex64::new(0.5, 0.0))
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self.get(i, j);
                write!(f, "{:+.4}{:+.4}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Eigendecomposition of a Hermitian matrix: `m = V diag(eigenvalues) V*`
/// with real eigenvalues in ascending order and unitary `V` whose columns
/// are the eigenvectors.
#[derive(Debug, Clone)]
pub struct HermitianSpectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: ComplexMatrix,
}

impl HermitianSpectrum {
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// Rebuild `V diag(f(eigenvalue)) V*`.
    pub fn recompose(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let v = &self.eigenvectors;
        let d = ComplexMatrix::real_diag(
            &self
                .eigenvalues
                .iter()
                .map(|&x| f(x))
                .collect::<Vec<f64>>(),
        );
        v.mul(&d).mul(&v.adjoint())
    }
}

/// Named scalar functions admitted under the spectral calculus.
///
/// Keeping the catalog closed (rather than accepting closures) makes every
/// matrix function that appears in witnesses and reports printable and
/// reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralFn {
    /// `x`.
    Identity,
    /// `sqrt(max(x, 0))`.
    Sqrt,
    /// `1/x` where `sqrt(x) > threshold`, else `0`; the scalar rule behind
    /// the thresholded pseudoinverse when applied to `m* m`.
    ThresholdReciprocal { threshold: f64 },
    /// `max(2x - 1, 0)`: vanishes on the lower half of a `[0, 1]` spectrum.
    RampAboveHalf,
    /// `min(slope * x, 1/x)` with `0` at `0`: a reciprocal capped linearly
    /// near the origin.
    CappedReciprocal { slope: f64 },
    /// `min(slope * x, 1/sqrt(x))` with `0` at `0`.
    InverseSqrtCapped { slope: f64 },
    /// `min(slope * x, 1)` clamped below at `0`: an approximate-unit ramp.
    UnitRamp { slope: f64 },
    /// `clamp(2^level * x - 1, 0, 1)`: a sharp shelf switching on near
    /// `2^(-level)`.
    Shelf { level: u32 },
}

impl SpectralFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SpectralFn::Identity => x,
            SpectralFn::Sqrt => x.max(0.0).sqrt(),
            SpectralFn::ThresholdReciprocal { threshold } => {
                if x > 0.0 && x.sqrt() > threshold {
                    1.0 / x
                } else {
                    0.0
                }
            }
            SpectralFn::RampAboveHalf => (2.0 * x - 1.0).max(0.0),
            SpectralFn::CappedReciprocal { slope } => {
                if x <= 0.0 {
                    0.0
                } else {
                    (slope * x).min(1.0 / x)
                }
            }
            SpectralFn::InverseSqrtCapped { slope } => {
                if x <= 0.0 {
                    0.0
                } else {
                    (slope * x).min(1.0 / x.sqrt())
                }
            }
            SpectralFn::UnitRamp { slope } => (slope * x).min(1.0).max(0.0),
            SpectralFn::Shelf { level } => {
                let scale = (2.0f64).powi(level as i32);
                (scale * x - 1.0).clamp(0.0, 1.0)
            }
        }
    }
}

impl fmt::Display for SpectralFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SpectralFn::Identity => write!(f, "identity"),
            SpectralFn::Sqrt => write!(f, "sqrt"),
            SpectralFn::ThresholdReciprocal { threshold } => {
                write!(f, "reciprocal above {threshold:.1e}")
            }
            SpectralFn::RampAboveHalf => write!(f, "ramp above 1/2"),
            SpectralFn::CappedReciprocal { slope } => {
                write!(f, "reciprocal capped by {slope}x")
            }
            SpectralFn::InverseSqrtCapped { slope } => {
                write!(f, "inverse sqrt capped by {slope}x")
            }
            SpectralFn::UnitRamp { slope } => write!(f, "unit ramp of slope {slope}"),
            SpectralFn::Shelf { level } => write!(f, "shelf at 2^-{level}"),
        }
    }
}

const JACOBI_SWEEP_LIMIT: usize = 60;
const JACOBI_OFF_TARGET: f64 = 1e-12;

/// Operator norm (largest singular value). Zero for empty shapes.
pub fn op_norm(m: &ComplexMatrix) -> f64 {
    if m.rows() == 0 || m.cols() == 0 {
        return 0.0;
    }
    // Diagonalize the smaller of m* m and m m*.
    let gram = if m.cols() <= m.rows() {
        m.adjoint().mul(m)
    } else {
        m.mul(&m.adjoint())
    };
    let spectrum = jacobi_eigen(&gram);
    spectrum.max_eigenvalue().max(0.0).sqrt()
}

/// Singular values in ascending order.
pub fn singular_values(m: &ComplexMatrix) -> Vec<f64> {
    if m.rows() == 0 || m.cols() == 0 {
        return Vec::new();
    }
    let gram = if m.cols() <= m.rows() {
        m.adjoint().mul(m)
    } else {
        m.mul(&m.adjoint())
    };
    jacobi_eigen(&gram)
        .eigenvalues
        .into_iter()
        .map(|x| x.max(0.0).sqrt())
        .collect()
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Rejects inputs whose asymmetry `|m - m*|` exceeds the tolerance allowance
/// at the scale of `m`; the computation itself runs on the Hermitian part.
pub fn herm_eig(m: &ComplexMatrix, tol: &Tolerance) -> Result<HermitianSpectrum, NumericError> {
    require_hermitian(m, tol)?;
    Ok(jacobi_eigen(&m.hermitian_part()))
}

fn require_hermitian(m: &ComplexMatrix, tol: &Tolerance) -> Result<(), NumericError> {
    let asymmetry = m.hermitian_defect();
    let allowed = tol.allowance(m.frobenius_norm());
    if asymmetry > allowed {
        return Err(NumericError::NotHermitian { asymmetry, allowed });
    }
    Ok(())
}

/// Core Jacobi loop; assumes `m` is square and Hermitian.
fn jacobi_eigen(m: &ComplexMatrix) -> HermitianSpectrum {
    let n = m.rows();
    debug_assert!(m.is_square());
    let mut a = m.clone();
    let mut v = ComplexMatrix::identity(n);
    if n <= 1 {
        let eigenvalues = (0..n).map(|i| a.get(i, i).re).collect();
        return HermitianSpectrum {
            eigenvalues,
            eigenvectors: v,
        };
    }

    let scale = m.frobenius_norm();
    let target = JACOBI_OFF_TARGET * scale;
    // Entries individually below this cannot push the off-diagonal mass
    // above the target, so rotations may skip them.
    let skip = if n > 0 { target / n as f64 } else { 0.0 };

    for sweep in 0..=JACOBI_SWEEP_LIMIT {
        let mut off_sq = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off_sq += 2.0 * a.get(i, j).norm_sqr();
            }
        }
        if off_sq.sqrt() <= target || scale == 0.0 {
            break;
        }
        assert!(
            sweep < JACOBI_SWEEP_LIMIT,
            "Jacobi failed to converge in {JACOBI_SWEEP_LIMIT} sweeps \
             (n = {n}, residual = {:.3e}, target = {:.3e})",
            off_sq.sqrt(),
            target
        );

        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                let abs = apq.norm();
                if abs <= skip {
                    continue;
                }
                let phase = apq / abs;
                let app = a.get(p, p).re;
                let aqq = a.get(q, q).re;
                let tau = (aqq - app) / (2.0 * abs);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // Absorb the phase into the rotation: columns first, then rows.
                for i in 0..n {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q) * phase.conj();
                    a.set(i, p, aip.scale(c) - aiq.scale(s));
                    a.set(i, q, aip.scale(s) + aiq.scale(c));
                }
                for j in 0..n {
                    let apj = a.get(p, j);
                    let aqj = a.get(q, j) * phase;
                    a.set(p, j, apj.scale(c) - aqj.scale(s));
                    a.set(q, j, apj.scale(s) + aqj.scale(c));
                }
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q) * phase.conj();
                    v.set(i, p, vip.scale(c) - viq.scale(s));
                    v.set(i, q, vip.scale(s) + viq.scale(c));
                }

                // The rotation zeroes this pair exactly in theory; make it so.
                a.set(p, q, Complex64::new(0.0, 0.0));
                a.set(q, p, Complex64::new(0.0, 0.0));
                a.set(p, p, Complex64::new(a.get(p, p).re, 0.0));
                a.set(q, q, Complex64::new(a.get(q, q).re, 0.0));
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).re.partial_cmp(&a.get(j, j).re).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.get(i, i).re).collect();
    let eigenvectors = ComplexMatrix::from_fn(n, n, |i, j| v.get(i, order[j]));
    HermitianSpectrum {
        eigenvalues,
        eigenvectors,
    }
}

/// Apply a scalar function to a Hermitian matrix through its spectrum:
/// `V diag(f(eigenvalues)) V*`.
pub fn apply_spectral(
    f: SpectralFn,
    m: &ComplexMatrix,
    tol: &Tolerance,
) -> Result<ComplexMatrix, NumericError> {
    let spectrum = herm_eig(m, tol)?;
    // Recomposition is Hermitian up to rounding; symmetrize to keep the
    // invariant exact for downstream checks.
    Ok(spectrum.recompose(|x| f.eval(x)).hermitian_part())
}

/// Whether `x <= y` in the positive-semidefinite order, i.e. `y - x` has no
/// eigenvalue below the tolerance floor.
pub fn psd_leq(x: &ComplexMatrix, y: &ComplexMatrix, tol: &Tolerance) -> Result<bool, NumericError> {
    if (x.rows(), x.cols()) != (y.rows(), y.cols()) || !x.is_square() {
        return Err(NumericError::DimensionMismatch {
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: y.rows(),
            right_cols: y.cols(),
        });
    }
    require_hermitian(x, tol)?;
    require_hermitian(y, tol)?;
    let d = y.sub(x).hermitian_part();
    let spectrum = jacobi_eigen(&d);
    let scale = spectrum
        .max_eigenvalue()
        .abs()
        .max(spectrum.min_eigenvalue().abs());
    Ok(spectrum.min_eigenvalue() >= -tol.absolute * (1.0 + scale))
}

/// Moore-Penrose pseudoinverse with singular values at or below the
/// invertibility threshold treated as zero.
/// Relative eigenvalue floor guarding the reciprocal against eigensolver
/// noise: on a rank-deficient Gram matrix the numerically-zero eigenvalues
/// land at float-noise scale relative to the largest one, far above the
/// square of any absolute singular-value threshold, and inverting them
/// destroys the result.
const PINV_EIGEN_FLOOR: f64 = 1e-12;

pub fn pinv_threshold(m: &ComplexMatrix, tol: &Tolerance) -> ComplexMatrix {
    if m.rows() == 0 || m.cols() == 0 {
        return ComplexMatrix::zeros(m.cols(), m.rows());
    }
    // Diagonalize the smaller of m* m and m m*.
    let wide = m.cols() > m.rows();
    let gram = if wide {
        m.mul(&m.adjoint())
    } else {
        m.adjoint().mul(m)
    };
    let spectrum = jacobi_eigen(&gram.hermitian_part());
    let floor = spectrum.max_eigenvalue().max(0.0) * PINV_EIGEN_FLOOR;
    let threshold = tol.invertibility_threshold;
    let inv_gram = spectrum.recompose(|x| {
        if x > floor && x > 0.0 && x.sqrt() > threshold {
            1.0 / x
        } else {
            0.0
        }
    });
    if wide {
        m.adjoint().mul(&inv_gram)
    } else {
        inv_gram.mul(&m.adjoint())
    }
}

/// Square with all singular values above the invertibility threshold.
pub fn is_invertible(m: &ComplexMatrix, tol: &Tolerance) -> bool {
    if !m.is_square() {
        return false;
    }
    if m.rows() == 0 {
        return true;
    }
    singular_values(m)
        .first()
        .is_some_and(|&s| s > tol.invertibility_threshold)
}

/// A linear subspace of ℂⁿ presented by a spanning family, with membership
/// decided by orthogonal-projection residual.
///
/// Spanning vectors are orthonormalized on construction (zero vectors
/// dropped) so the rank decision and the projector are insensitive to the
/// scale and the multiplicity of the inputs.
#[derive(Debug, Clone)]
pub struct Subspace {
    ambient_dim: usize,
    projector: ComplexMatrix,
    dim: usize,
}

impl Subspace {
    pub fn span(ambient_dim: usize, vectors: &[Vec<Complex64>], tol: &Tolerance) -> Self {
        let mut basis: Vec<Vec<Complex64>> = Vec::new();
        for v in vectors {
            assert_eq!(v.len(), ambient_dim, "spanning vector of wrong length");
            let norm = vec_norm(v);
            if norm == 0.0 {
                continue;
            }
            let mut r: Vec<Complex64> = v.iter().map(|z| z / norm).collect();
            // Two projection passes keep the residual orthogonal to working
            // precision even when the vector is nearly dependent.
            for _ in 0..2 {
                for q in &basis {
                    let overlap: Complex64 =
                        q.iter().zip(&r).map(|(qi, ri)| qi.conj() * ri).sum();
                    for (ri, qi) in r.iter_mut().zip(q) {
                        *ri -= overlap * qi;
                    }
                }
            }
            let residual = vec_norm(&r);
            if residual > tol.invertibility_threshold {
                basis.push(r.iter().map(|z| z / residual).collect());
            }
        }
        let dim = basis.len();
        let projector = ComplexMatrix::from_fn(ambient_dim, ambient_dim, |i, j| {
            basis.iter().map(|q| q[i] * q[j].conj()).sum()
        });
        Self {
            ambient_dim,
            projector,
            dim,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn projector(&self) -> &ComplexMatrix {
        &self.projector
    }

    /// Orthogonal projection of `v` onto the span.
    pub fn project(&self, v: &[Complex64]) -> Vec<Complex64> {
        let x = column_vector(v);
        let p = self.projector.mul(&x);
        (0..self.ambient_dim).map(|i| p.get(i, 0)).collect()
    }

    /// Euclidean distance from `v` to the span.
    pub fn residual(&self, v: &[Complex64]) -> f64 {
        assert_eq!(v.len(), self.ambient_dim, "vector of wrong length");
        let x = column_vector(v);
        x.sub(&self.projector.mul(&x)).frobenius_norm()
    }

    /// Membership within the tolerance allowance at the scale of `v`.
    pub fn contains(&self, v: &[Complex64], tol: &Tolerance) -> bool {
        self.residual(v) <= tol.allowance(vec_norm(v))
    }

    /// Whether every vector of `other` lies in this span (within tolerance).
    pub fn contains_subspace(&self, other: &Subspace, tol: &Tolerance) -> bool {
        assert_eq!(self.ambient_dim, other.ambient_dim, "ambient space mismatch");
        // Column j of the projector is the projection of the j-th coordinate
        // vector, so running over them covers a spanning family of `other`.
        for j in 0..other.ambient_dim {
            let col: Vec<Complex64> = (0..other.ambient_dim)
                .map(|i| other.projector.get(i, j))
                .collect();
            if !self.contains(&col, tol) {
                return false;
            }
        }
        true
    }
}

/// Basis of the solution space `{c : op·c ∈ target}`, i.e. the kernel of
/// `op` composed with the quotient by `target`.
///
/// The returned vectors are orthonormal columns of coefficient space.
pub fn kernel_into(
    op: &ComplexMatrix,
    target: &Subspace,
    tol: &Tolerance,
) -> Vec<Vec<Complex64>> {
    assert_eq!(
        op.rows(),
        target.ambient_dim(),
        "operator range does not match the target's ambient space"
    );
    if op.cols() == 0 {
        return Vec::new();
    }
    let complement = ComplexMatrix::identity(op.rows()).sub(target.projector());
    let k = complement.mul(op);
    let gram = k.adjoint().mul(&k);
    let spectrum = jacobi_eigen(&gram.hermitian_part());
    let largest = spectrum.max_eigenvalue().max(0.0).sqrt();
    let cutoff = tol.invertibility_threshold * largest.max(1.0);
    let mut basis = Vec::new();
    for (idx, &lambda) in spectrum.eigenvalues.iter().enumerate() {
        if lambda.max(0.0).sqrt() <= cutoff {
            basis.push(
                (0..op.cols())
                    .map(|i| spectrum.eigenvectors.get(i, idx))
                    .collect(),
            );
        }
    }
    basis
}

fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn column_vector(v: &[Complex64]) -> ComplexMatrix {
    ComplexMatrix::from_fn(v.len(), 1, |i, _| v[i])
}
