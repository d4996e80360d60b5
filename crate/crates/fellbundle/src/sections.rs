//! Sections of a Fell bundle and their *-algebra.
//!
//! A section assigns to every arrow a fibre element, stored densely. With
//! the twisted convolution and involution this is the section algebra; at
//! finite scale the arbitrary, continuous, compactly supported and reduced
//! section spaces all coincide with it as sets, so one type carries the
//! whole theory and only the norms distinguish completions.
//!
//! Three norms are computed exactly: the sup norm over fibres, the Hilbert
//! module norm `‖a‖₂ = max_x √‖(a*a)(x)‖`, and the reduced norm `‖a‖_b`
//! realized as the operator norm of the left regular representation, built
//! per unit from the block matrix acting on the arrows sourced there.

use crate::bundle::{same_bundle, FellBundle};
use crate::groupoid::is_slice;
use crate::numeric::{herm_eig, op_norm, pinv_threshold, psd_leq, ComplexMatrix, SpectralFn, Tolerance};
use crate::rng::SeededRng;
use crate::structured::{Structured, StructuredError};
use num_complex::Complex64;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SectionError {
    #[error("sections live over different bundles")]
    BundleMismatch,
    #[error("bundle fails validation: {reason}")]
    InvalidBundle { reason: String },
}

/// A dense fibre-valued map over the arrows of a bundle.
#[derive(Clone)]
pub struct Section {
    bundle: Arc<FellBundle>,
    values: Vec<ComplexMatrix>,
}

impl Section {
    pub fn zero(bundle: &Arc<FellBundle>) -> Self {
        let values = bundle
            .base()
            .elements()
            .map(|gamma| bundle.zero_fiber(gamma))
            .collect();
        Self {
            bundle: Arc::clone(bundle),
            values,
        }
    }

    /// The multiplicative unit: fibre identities over units, zero elsewhere.
    pub fn identity(bundle: &Arc<FellBundle>) -> Self {
        let mut out = Self::zero(bundle);
        for &u in bundle.base().units() {
            out.values[u] = bundle.unit_fiber_identity(u);
        }
        out
    }

    pub fn from_values(bundle: &Arc<FellBundle>, values: Vec<ComplexMatrix>) -> Self {
        assert_eq!(values.len(), bundle.base().len(), "one value per arrow");
        for (gamma, v) in values.iter().enumerate() {
            assert_eq!(
                (v.rows(), v.cols()),
                bundle.fiber_shape(gamma),
                "value at arrow {gamma} has the wrong shape"
            );
        }
        Self {
            bundle: Arc::clone(bundle),
            values,
        }
    }

    /// Zero everywhere except one arrow.
    pub fn delta(bundle: &Arc<FellBundle>, gamma: usize, value: ComplexMatrix) -> Self {
        let mut out = Self::zero(bundle);
        assert_eq!(
            (value.rows(), value.cols()),
            bundle.fiber_shape(gamma),
            "value at arrow {gamma} has the wrong shape"
        );
        out.values[gamma] = value;
        out
    }

    /// The matrix-unit section `E_ij` at one arrow.
    pub fn basis_delta(bundle: &Arc<FellBundle>, gamma: usize, i: usize, j: usize) -> Self {
        let (rows, cols) = bundle.fiber_shape(gamma);
        let mut m = ComplexMatrix::zeros(rows, cols);
        m.set(i, j, Complex64::new(1.0, 0.0));
        Self::delta(bundle, gamma, m)
    }

    pub fn random(bundle: &Arc<FellBundle>, rng: &mut SeededRng, scale: f64) -> Self {
        let values = bundle
            .base()
            .elements()
            .map(|gamma| bundle.random_fiber(gamma, rng, scale))
            .collect();
        Self {
            bundle: Arc::clone(bundle),
            values,
        }
    }

    pub fn bundle(&self) -> &Arc<FellBundle> {
        &self.bundle
    }

    pub fn value(&self, gamma: usize) -> &ComplexMatrix {
        &self.values[gamma]
    }

    pub fn with_value(mut self, gamma: usize, value: ComplexMatrix) -> Self {
        assert_eq!(
            (value.rows(), value.cols()),
            self.bundle.fiber_shape(gamma),
            "value at arrow {gamma} has the wrong shape"
        );
        self.values[gamma] = value;
        self
    }

    fn assert_same_bundle(&self, other: &Section) {
        assert!(
            same_bundle(&self.bundle, &other.bundle),
            "sections live over different bundles"
        );
    }

    pub fn add(&self, other: &Section) -> Section {
        self.assert_same_bundle(other);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.add(b))
            .collect();
        Section {
            bundle: Arc::clone(&self.bundle),
            values,
        }
    }

    pub fn sub(&self, other: &Section) -> Section {
        self.assert_same_bundle(other);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.sub(b))
            .collect();
        Section {
            bundle: Arc::clone(&self.bundle),
            values,
        }
    }

    pub fn scale(&self, z: Complex64) -> Section {
        Section {
            bundle: Arc::clone(&self.bundle),
            values: self.values.iter().map(|v| v.scale(z)).collect(),
        }
    }

    /// Twisted convolution. Panics on a bundle mismatch; [`convolve`] is the
    /// checked front door.
    pub fn mul(&self, other: &Section) -> Section {
        self.assert_same_bundle(other);
        let g = self.bundle.base();
        let mut out = Section::zero(&self.bundle);
        for gamma in g.elements() {
            let mut acc = self.bundle.zero_fiber(gamma);
            // Factorizations γ = αβ, one per arrow β sourced at s(γ).
            for &beta in g.star(g.source(gamma)) {
                let alpha = g
                    .product(gamma, g.inverse(beta))
                    .expect("β⁻¹ composes with γ by construction");
                let term = self.bundle.fiber_product(
                    alpha,
                    beta,
                    &self.values[alpha],
                    &other.values[beta],
                );
                acc = acc.add(&term);
            }
            out.values[gamma] = acc;
        }
        out
    }

    /// The adjoint section `a*(γ) = (a(γ⁻¹))*`, with the involution of the
    /// bundle applied fibrewise.
    pub fn star(&self) -> Section {
        let g = self.bundle.base();
        let values = g
            .elements()
            .map(|gamma| {
                let inv = g.inverse(gamma);
                self.bundle.fiber_star(inv, &self.values[inv])
            })
            .collect();
        Section {
            bundle: Arc::clone(&self.bundle),
            values,
        }
    }

    /// Zero out everything outside the subset.
    pub fn restrict(&self, subset: &[usize]) -> Section {
        let mut keep = vec![false; self.values.len()];
        for &gamma in subset {
            keep[gamma] = true;
        }
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(gamma, v)| {
                if keep[gamma] {
                    v.clone()
                } else {
                    self.bundle.zero_fiber(gamma)
                }
            })
            .collect();
        Section {
            bundle: Arc::clone(&self.bundle),
            values,
        }
    }

    /// The canonical expectation: restriction to the unit space.
    pub fn expectation(&self) -> Section {
        self.restrict(self.bundle.base().units())
    }

    /// Arrows whose value is larger than the invertibility threshold.
    pub fn support(&self, tol: &Tolerance) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| op_norm(v) > tol.invertibility_threshold)
            .map(|(gamma, _)| gamma)
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(ComplexMatrix::max_abs).fold(0.0, f64::max)
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.max_abs() <= tol
    }

    pub fn approx_eq(&self, other: &Section, tol: f64) -> bool {
        same_bundle(&self.bundle, &other.bundle) && self.sub(other).max_abs() <= tol
    }

    /// Largest fibre operator norm.
    pub fn norm_inf(&self) -> f64 {
        self.values.iter().map(op_norm).fold(0.0, f64::max)
    }

    /// Hilbert module norm `max_x √‖(a*a)(x)‖`.
    pub fn norm_2(&self) -> f64 {
        let gram = self.star().mul(self);
        self.bundle
            .base()
            .units()
            .iter()
            .map(|&u| op_norm(gram.value(u)).max(0.0).sqrt())
            .fold(0.0, f64::max)
    }

    /// The left regular representation at one unit: the block matrix acting
    /// on the arrows sourced there, with block `(γ, β)` equal to
    /// `σ(γβ⁻¹, β) a(γβ⁻¹)`.
    pub fn left_regular_block(&self, unit: usize) -> ComplexMatrix {
        let g = self.bundle.base();
        debug_assert!(g.is_unit(unit));
        let arrows = g.star(unit);
        let dims: Vec<usize> = arrows
            .iter()
            .map(|&beta| self.bundle.fiber_shape(beta).0)
            .collect();
        ComplexMatrix::from_blocks(&dims, &dims, |bi, bj| {
            let gamma = arrows[bi];
            let beta = arrows[bj];
            let alpha = g
                .product(gamma, g.inverse(beta))
                .expect("arrows sourced at the same unit divide");
            self.values[alpha].scale(self.bundle.twist().get(alpha, beta))
        })
    }

    /// The full left regular representation: the direct sum of the per-unit
    /// blocks. A faithful *-homomorphism, so positivity and the reduced norm
    /// can be read off it.
    pub fn regular_repr(&self) -> ComplexMatrix {
        let blocks: Vec<ComplexMatrix> = self
            .bundle
            .base()
            .units()
            .iter()
            .map(|&u| self.left_regular_block(u))
            .collect();
        ComplexMatrix::block_diag(&blocks)
    }

    /// Reduced norm: the operator norm of the left regular representation.
    pub fn norm_b(&self) -> f64 {
        self.bundle
            .base()
            .units()
            .iter()
            .map(|&u| op_norm(&self.left_regular_block(u)))
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let support: Vec<usize> = self
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.max_abs() > 1e-12)
            .map(|(gamma, _)| gamma)
            .collect();
        write!(f, "Section {{ support: {support:?} }}")
    }
}

/// Checked convolution.
pub fn convolve(a: &Section, b: &Section) -> Result<Section, SectionError> {
    if !same_bundle(a.bundle(), b.bundle()) {
        return Err(SectionError::BundleMismatch);
    }
    Ok(a.mul(b))
}

/// The module inner product `⟨a, b⟩ = Φ(a* b)`, a section supported on the
/// units with PSD diagonal when `a = b`.
pub fn inner_product(a: &Section, b: &Section) -> Result<Section, SectionError> {
    if !same_bundle(a.bundle(), b.bundle()) {
        return Err(SectionError::BundleMismatch);
    }
    Ok(a.star().mul(b).expectation())
}

/// Whether the thresholded support is a slice of the base groupoid.
pub fn is_slice_supported(a: &Section, tol: &Tolerance) -> bool {
    is_slice(a.bundle().base(), &a.support(tol))
}

/// Split a section into slice-supported summands: arrows of the support are
/// greedily packed into slices, and the section restricted to each. The
/// parts sum back to the section exactly.
pub fn slice_decomposition(a: &Section, tol: &Tolerance) -> Vec<Section> {
    let g = a.bundle().base();
    let mut slices: Vec<(Vec<usize>, Vec<bool>, Vec<bool>)> = Vec::new();
    for gamma in a.support(tol) {
        let s = g.source(gamma);
        let r = g.range(gamma);
        let found = slices
            .iter_mut()
            .find(|(_, sources, ranges)| !sources[s] && !ranges[r]);
        match found {
            Some((members, sources, ranges)) => {
                members.push(gamma);
                sources[s] = true;
                ranges[r] = true;
            }
            None => {
                let mut sources = vec![false; g.len()];
                let mut ranges = vec![false; g.len()];
                sources[s] = true;
                ranges[r] = true;
                slices.push((vec![gamma], sources, ranges));
            }
        }
    }
    slices
        .into_iter()
        .map(|(members, _, _)| a.restrict(&members))
        .collect()
}

/// Fibrewise Cauchy–Schwarz for the twisted product: for every arrow,
/// `(fg)(γ)* (fg)(γ) ≤ ‖(fg)(γ)‖ · √(‖(ff*)(r(γ))‖ · (g*g)(s(γ)))`.
pub fn fiberwise_cauchy_schwarz(
    f: &Section,
    g: &Section,
    tol: &Tolerance,
) -> Result<bool, SectionError> {
    if !same_bundle(f.bundle(), g.bundle()) {
        return Err(SectionError::BundleMismatch);
    }
    let base = f.bundle().base();
    let fg = f.mul(g);
    let ff = f.mul(&f.star());
    let gg = g.star().mul(g);
    for gamma in base.elements() {
        let v = fg.value(gamma);
        let lhs = v.adjoint().mul(v);
        let bound = op_norm(ff.value(base.range(gamma)));
        let inner = gg.value(base.source(gamma)).scale(Complex64::new(bound, 0.0));
        let root = crate::numeric::apply_spectral(SpectralFn::Sqrt, &inner.hermitian_part(), tol)
            .expect("scaled PSD fibre is hermitian");
        let rhs = root.scale(Complex64::new(op_norm(v), 0.0));
        if !psd_leq(&lhs, &rhs, tol).expect("both sides are hermitian of equal size") {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Upper bound on the pattern count of an extracted structured view.
pub const MAX_SLICE_PATTERNS: usize = 4096;

/// The canonical structured C*-algebra carried by a bundle's section
/// algebra: the sections under `‖·‖_b`, S the slice-supported sections
/// presented as spans over the maximal slices, Z the unit-supported
/// sections with scalar-multiple-of-identity values, and Φ the restriction
/// to the unit space.
pub struct StructuredView {
    bundle: Arc<FellBundle>,
    /// Arrow sets of the pattern subspaces, one per maximal slice.
    pattern_arrows: Vec<Vec<usize>>,
}

impl StructuredView {
    pub fn bundle(&self) -> &Arc<FellBundle> {
        &self.bundle
    }

    pub fn pattern_arrows(&self) -> &[Vec<usize>] {
        &self.pattern_arrows
    }

    /// Replace the pattern arrow sets. Meant for negative controls: a set
    /// that is not a slice produces a view the axiom checks must reject.
    pub fn with_pattern_arrows(mut self, pattern_arrows: Vec<Vec<usize>>) -> Self {
        self.pattern_arrows = pattern_arrows;
        self
    }
}

/// Build the canonical structured view of a valid bundle.
pub fn extract_structured(
    fb: &Arc<FellBundle>,
    tol: &Tolerance,
) -> Result<StructuredView, SectionError> {
    let violations = crate::bundle::validate_fell_bundle(fb, tol);
    if let Some(first) = violations.first() {
        return Err(SectionError::InvalidBundle {
            reason: format!("{first:?} ({} violations in total)", violations.len()),
        });
    }
    let pattern_arrows = crate::groupoid::maximal_slices(fb.base(), MAX_SLICE_PATTERNS)
        .map_err(|e| SectionError::InvalidBundle {
            reason: e.to_string(),
        })?;
    Ok(StructuredView {
        bundle: Arc::clone(fb),
        pattern_arrows,
    })
}

impl Structured for StructuredView {
    type Elem = Section;

    fn dim(&self) -> usize {
        self.bundle
            .base()
            .elements()
            .map(|gamma| {
                let (r, c) = self.bundle.fiber_shape(gamma);
                r * c
            })
            .sum()
    }

    fn basis(&self) -> Vec<Section> {
        let mut out = Vec::with_capacity(self.dim());
        for gamma in self.bundle.base().elements() {
            let (rows, cols) = self.bundle.fiber_shape(gamma);
            for i in 0..rows {
                for j in 0..cols {
                    out.push(Section::basis_delta(&self.bundle, gamma, i, j));
                }
            }
        }
        out
    }

    fn pattern_bases(&self) -> Vec<Vec<Section>> {
        self.pattern_arrows
            .iter()
            .map(|arrows| {
                let mut pattern = Vec::new();
                for &gamma in arrows {
                    let (rows, cols) = self.bundle.fiber_shape(gamma);
                    for i in 0..rows {
                        for j in 0..cols {
                            pattern.push(Section::basis_delta(&self.bundle, gamma, i, j));
                        }
                    }
                }
                pattern
            })
            .collect()
    }

    fn z_basis(&self) -> Vec<Section> {
        self.bundle
            .base()
            .units()
            .iter()
            .map(|&u| Section::delta(&self.bundle, u, self.bundle.unit_fiber_identity(u)))
            .collect()
    }

    fn phi(&self, a: &Section) -> Section {
        a.expectation()
    }

    fn add(&self, a: &Section, b: &Section) -> Section {
        a.add(b)
    }

    fn scale(&self, z: Complex64, a: &Section) -> Section {
        a.scale(z)
    }

    fn mul(&self, a: &Section, b: &Section) -> Section {
        a.mul(b)
    }

    fn star(&self, a: &Section) -> Section {
        a.star()
    }

    fn norm(&self, a: &Section) -> f64 {
        a.norm_b()
    }

    fn represent(&self, a: &Section) -> ComplexMatrix {
        a.regular_repr()
    }

    fn vectorize(&self, a: &Section) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.dim());
        for gamma in self.bundle.base().elements() {
            let v = a.value(gamma);
            for i in 0..v.rows() {
                for j in 0..v.cols() {
                    out.push(v.get(i, j));
                }
            }
        }
        out
    }

    fn zero(&self) -> Section {
        Section::zero(&self.bundle)
    }

    fn one(&self) -> Section {
        Section::identity(&self.bundle)
    }

    /// Functional calculus fibre by fibre over the unit space; sections with
    /// support off the units have no commutative spectral theory here.
    fn spectral(
        &self,
        f: SpectralFn,
        a: &Section,
        tol: &Tolerance,
    ) -> Result<Section, StructuredError> {
        let g = self.bundle.base();
        let stray: Vec<usize> = a
            .support(tol)
            .into_iter()
            .filter(|&gamma| !g.is_unit(gamma))
            .collect();
        if !stray.is_empty() {
            return Err(StructuredError::SpectralUndefined {
                reason: format!("support reaches outside the unit space at arrows {stray:?}"),
            });
        }
        let mut out = Section::zero(&self.bundle);
        for &u in g.units() {
            out = out.with_value(u, crate::numeric::apply_spectral(f, a.value(u), tol)?);
        }
        Ok(out)
    }

    fn owns(&self, a: &Section) -> bool {
        same_bundle(&self.bundle, &a.bundle)
    }

    /// Domination of sections is geometric: `a < b` exactly when `b` takes
    /// invertible values over the support of `a`.
    fn support_verdict(&self, a: &Section, b: &Section, tol: &Tolerance) -> Option<bool> {
        if !is_slice_supported(a, tol) || !is_slice_supported(b, tol) {
            return None;
        }
        Some(
            a.support(tol)
                .iter()
                .all(|&gamma| fiber_invertible(b.value(gamma), tol)),
        )
    }

    /// The canonical witness for `a < b`: over each support arrow γ of `a`,
    /// place the twist-corrected inverse of `b(γ)` on the reverse arrow γ⁻¹.
    fn local_inverse(&self, a: &Section, b: &Section, tol: &Tolerance) -> Option<Section> {
        let g = self.bundle.base();
        let mut s = Section::zero(&self.bundle);
        for gamma in a.support(tol) {
            let v = b.value(gamma);
            if !fiber_invertible(v, tol) {
                return None;
            }
            let delta = g.inverse(gamma);
            let twist = self.bundle.twist().get(delta, gamma);
            if twist.norm() <= tol.invertibility_threshold {
                return None;
            }
            let correction = Complex64::new(1.0, 0.0) / twist;
            s = s.with_value(delta, pinv_threshold(v, tol).scale(correction));
        }
        Some(s)
    }

    /// Compatibility of sections is geometric: for dominated slice-supported
    /// sections, `a ∼ b` exactly when the union of the two supports is again
    /// a slice.
    fn joint_pattern_verdict(&self, a: &Section, b: &Section, tol: &Tolerance) -> Option<bool> {
        if !is_slice_supported(a, tol) || !is_slice_supported(b, tol) {
            return None;
        }
        let squares_over = |supp: &[usize]| {
            supp.iter().all(|&gamma| {
                let (rows, cols) = self.bundle.fiber_shape(gamma);
                rows == cols
            })
        };
        let supp_a = a.support(tol);
        let supp_b = b.support(tol);
        if !squares_over(&supp_a) || !squares_over(&supp_b) {
            return None;
        }
        let mut union = supp_a;
        for gamma in supp_b {
            if !union.contains(&gamma) {
                union.push(gamma);
            }
        }
        union.sort_unstable();
        Some(is_slice(self.bundle.base(), &union))
    }

    /// Compatibility witness from the support geometry: the star of the
    /// identity-valued indicator of `supp(a)`.
    fn joint_pattern_witness(&self, a: &Section, _b: &Section, tol: &Tolerance) -> Option<Section> {
        let mut t = Section::zero(&self.bundle);
        for gamma in a.support(tol) {
            let (rows, cols) = self.bundle.fiber_shape(gamma);
            if rows != cols {
                return None;
            }
            t = t.with_value(gamma, ComplexMatrix::identity(rows));
        }
        Some(t.star())
    }
}

/// Square with every singular value above the invertibility threshold.
pub(crate) fn fiber_invertible(m: &ComplexMatrix, tol: &Tolerance) -> bool {
    if m.rows() != m.cols() || m.rows() == 0 {
        return false;
    }
    let gram = m.adjoint().mul(m);
    match herm_eig(&gram, tol) {
        Ok(spectrum) => spectrum.min_eigenvalue().max(0.0).sqrt() > tol.invertibility_threshold,
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{generate_bundle, DimProfile, TwistFamily};
    use crate::groupoid::{cyclic_group_table, product_group_table, GroupoidFamily};
    use crate::numeric::Subspace;
    use crate::structured::{property_report, validate_axioms};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn r(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn line_pair2() -> Arc<FellBundle> {
        generate_bundle(
            &GroupoidFamily::Pair { points: 2 },
            &DimProfile::Constant(1),
            &TwistFamily::Trivial,
            0,
        )
        .unwrap()
    }

    fn scalar_delta(fb: &Arc<FellBundle>, gamma: usize, z: Complex64) -> Section {
        Section::delta(fb, gamma, ComplexMatrix::diag(&[z]))
    }

    #[test]
    fn convolution_matches_matrix_units() {
        // Arrows of the pair groupoid on {0, 1}: id(i, j) = 2i + j.
        let fb = line_pair2();
        let e01 = scalar_delta(&fb, 1, r(1.0));
        let e10 = scalar_delta(&fb, 2, r(1.0));
        let product = e01.mul(&e10);
        assert!(product.approx_eq(&scalar_delta(&fb, 0, r(1.0)), 1e-12));
        // And the reverse order lands on the other unit.
        assert!(e10.mul(&e01).approx_eq(&scalar_delta(&fb, 3, r(1.0)), 1e-12));
    }

    #[test]
    fn convolution_on_cyclic_group() {
        let fb = generate_bundle(
            &GroupoidFamily::Group {
                table: cyclic_group_table(2),
            },
            &DimProfile::Constant(1),
            &TwistFamily::Trivial,
            0,
        )
        .unwrap();
        let d1 = scalar_delta(&fb, 1, r(1.0));
        assert!(d1.mul(&d1).approx_eq(&scalar_delta(&fb, 0, r(1.0)), 1e-12));
    }

    #[test]
    fn convolution_picks_up_the_twist() {
        let fb = generate_bundle(
            &GroupoidFamily::Group {
                table: product_group_table(&cyclic_group_table(2), &cyclic_group_table(2)),
            },
            &DimProfile::Constant(1),
            &TwistFamily::KleinBicharacter,
            0,
        )
        .unwrap();
        // Element (a, b) has id 2a + b; σ((0,1), (1,0)) = −1.
        let d01 = scalar_delta(&fb, 1, r(1.0));
        let d10 = scalar_delta(&fb, 2, r(1.0));
        let expected = scalar_delta(&fb, 3, r(-1.0));
        assert!(d01.mul(&d10).approx_eq(&expected, 1e-12));
    }

    #[test]
    fn involution_pinned() {
        let fb = line_pair2();
        let a = scalar_delta(&fb, 1, c(0.0, 2.0));
        let star = a.star();
        assert!(star.approx_eq(&scalar_delta(&fb, 2, c(0.0, -2.0)), 1e-12));
        // A hermitian diagonal section is fixed.
        let h = scalar_delta(&fb, 0, r(1.5)).add(&scalar_delta(&fb, 3, r(-0.5)));
        assert!(h.star().approx_eq(&h, 1e-12));
    }

    #[test]
    fn involution_is_antimultiplicative_on_random_pairs() {
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 3 },
            &DimProfile::Constant(2),
            &TwistFamily::RandomCoboundary,
            3,
        )
        .unwrap();
        let mut rng = SeededRng::new(31);
        for _ in 0..8 {
            let a = Section::random(&fb, &mut rng, 1.0);
            let b = Section::random(&fb, &mut rng, 1.0);
            let lhs = a.mul(&b).star();
            let rhs = b.star().mul(&a.star());
            assert!(lhs.sub(&rhs).max_abs() <= 1e-12 * (1.0 + lhs.max_abs()));
            assert!(a.star().star().approx_eq(&a, 1e-12));
        }
    }

    #[test]
    fn expectation_pinned() {
        let fb = line_pair2();
        let ones = Section::from_values(
            &fb,
            (0..4).map(|_| ComplexMatrix::diag(&[r(1.0)])).collect(),
        );
        let phi = ones.expectation();
        let expected = scalar_delta(&fb, 0, r(1.0)).add(&scalar_delta(&fb, 3, r(1.0)));
        assert!(phi.approx_eq(&expected, 1e-12));
        assert!(ones.restrict(&[]).is_zero(0.0));
        // Idempotence on a random section.
        let mut rng = SeededRng::new(5);
        let a = Section::random(&fb, &mut rng, 1.0);
        assert!(a.expectation().expectation().approx_eq(&a.expectation(), 1e-12));
    }

    #[test]
    fn norms_of_the_all_ones_section() {
        let fb = line_pair2();
        let ones = Section::from_values(
            &fb,
            (0..4).map(|_| ComplexMatrix::diag(&[r(1.0)])).collect(),
        );
        assert!((ones.norm_inf() - 1.0).abs() < 1e-12);
        assert!((ones.norm_2() - 2.0f64.sqrt()).abs() < 1e-12);
        assert!((ones.norm_b() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn norms_coincide_on_slice_supported() {
        let fb = line_pair2();
        let a = scalar_delta(&fb, 0, r(3.0)).add(&scalar_delta(&fb, 3, c(0.0, 4.0)));
        assert!(is_slice_supported(&a, &Tolerance::default()));
        assert!((a.norm_inf() - 4.0).abs() < 1e-12);
        assert!((a.norm_2() - 4.0).abs() < 1e-12);
        assert!((a.norm_b() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_section_norms() {
        let fb = line_pair2();
        let z = Section::zero(&fb);
        assert_eq!(z.norm_inf(), 0.0);
        assert_eq!(z.norm_2(), 0.0);
        assert_eq!(z.norm_b(), 0.0);
    }

    #[test]
    fn identity_section_is_the_unit() {
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 2 },
            &DimProfile::Constant(2),
            &TwistFamily::RandomCoboundary,
            11,
        )
        .unwrap();
        let one = Section::identity(&fb);
        let mut rng = SeededRng::new(12);
        let a = Section::random(&fb, &mut rng, 1.0);
        assert!(one.mul(&a).approx_eq(&a, 1e-12));
        assert!(a.mul(&one).approx_eq(&a, 1e-12));
        assert!((one.norm_b() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inner_product_pinned() {
        let fb = line_pair2();
        let e01 = scalar_delta(&fb, 1, r(1.0));
        let ip = inner_product(&e01, &e01).unwrap();
        assert!(ip.approx_eq(&scalar_delta(&fb, 3, r(1.0)), 1e-12));
        // Matrix-unit sections over different arrows are orthogonal.
        let e10 = scalar_delta(&fb, 2, r(1.0));
        assert!(inner_product(&e01, &e10).unwrap().is_zero(1e-12));
    }

    #[test]
    fn inner_product_diagonal_is_psd() {
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 2 },
            &DimProfile::Constant(2),
            &TwistFamily::RandomCoboundary,
            21,
        )
        .unwrap();
        let tol = Tolerance::default();
        let mut rng = SeededRng::new(22);
        for _ in 0..6 {
            let a = Section::random(&fb, &mut rng, 1.0);
            let gram = inner_product(&a, &a).unwrap();
            for &u in fb.base().units() {
                let zero = ComplexMatrix::zeros(gram.value(u).rows(), gram.value(u).cols());
                assert!(psd_leq(&zero, gram.value(u), &tol).unwrap());
            }
            // ‖a‖₂² = ‖⟨a,a⟩‖∞.
            assert!((a.norm_2().powi(2) - gram.norm_inf()).abs() < 1e-9 * (1.0 + a.norm_2().powi(2)));
        }
    }

    #[test]
    fn cauchy_schwarz_fibrewise() {
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 3 },
            &DimProfile::Constant(2),
            &TwistFamily::RandomCoboundary,
            41,
        )
        .unwrap();
        let tol = Tolerance::default();
        let mut rng = SeededRng::new(42);
        for _ in 0..6 {
            let f = Section::random(&fb, &mut rng, 1.0);
            let g = Section::random(&fb, &mut rng, 1.0);
            assert!(fiberwise_cauchy_schwarz(&f, &g, &tol).unwrap());
        }
    }

    #[test]
    fn slice_support_examples() {
        let fb = line_pair2();
        let tol = Tolerance::default();
        let diag = scalar_delta(&fb, 0, r(1.0)).add(&scalar_delta(&fb, 3, r(2.0)));
        assert!(is_slice_supported(&diag, &tol));
        let ones = Section::from_values(
            &fb,
            (0..4).map(|_| ComplexMatrix::diag(&[r(1.0)])).collect(),
        );
        assert!(!is_slice_supported(&ones, &tol));
        assert!(is_slice_supported(&Section::zero(&fb), &tol));
    }

    #[test]
    fn slice_decomposition_reassembles() {
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 3 },
            &DimProfile::Constant(2),
            &TwistFamily::RandomCoboundary,
            51,
        )
        .unwrap();
        let tol = Tolerance::default();
        let mut rng = SeededRng::new(52);
        for _ in 0..4 {
            let a = Section::random(&fb, &mut rng, 1.0);
            let parts = slice_decomposition(&a, &tol);
            assert!(!parts.is_empty());
            let mut sum = Section::zero(&fb);
            for p in &parts {
                assert!(is_slice_supported(p, &tol));
                sum = sum.add(p);
            }
            assert!(sum.approx_eq(&a, 1e-12));
        }
    }

    #[test]
    fn norm_chain_and_cstar_identity() {
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 3 },
            &DimProfile::Constant(2),
            &TwistFamily::RandomCoboundary,
            61,
        )
        .unwrap();
        let mut rng = SeededRng::new(62);
        for _ in 0..6 {
            let a = Section::random(&fb, &mut rng, 1.0);
            let (ninf, n2, nb) = (a.norm_inf(), a.norm_2(), a.norm_b());
            assert!(ninf <= n2 + 1e-9 * (1.0 + n2));
            assert!(n2 <= nb + 1e-9 * (1.0 + nb));
            // C* identity for the reduced norm.
            let gram = a.star().mul(&a);
            assert!((gram.norm_b() - nb * nb).abs() <= 1e-8 * (1.0 + nb * nb));
            // Submultiplicativity.
            let b = Section::random(&fb, &mut rng, 1.0);
            assert!(a.mul(&b).norm_b() <= nb * b.norm_b() + 1e-9 * (1.0 + nb * b.norm_b()));
            // ‖a‖₂ against the expectation of the gram section.
            let viaphi = gram
                .expectation()
                .norm_inf()
                .max(0.0)
                .sqrt();
            assert!((viaphi - n2).abs() <= 1e-9 * (1.0 + n2));
        }
    }

    #[test]
    fn expectation_is_contractive_and_equivariant() {
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 2 },
            &DimProfile::Constant(2),
            &TwistFamily::RandomCoboundary,
            71,
        )
        .unwrap();
        let mut rng = SeededRng::new(72);
        for _ in 0..6 {
            let a = Section::random(&fb, &mut rng, 1.0);
            let b = Section::random(&fb, &mut rng, 1.0);
            let phi_a = a.expectation();
            assert!(phi_a.norm_inf() <= a.norm_inf() + 1e-12);
            assert!(phi_a.norm_2() <= a.norm_2() + 1e-9);
            assert!(phi_a.norm_b() <= a.norm_b() + 1e-9);
            // Conditional-expectation identities.
            let lhs = phi_a.mul(&b).expectation();
            let mid = phi_a.mul(&b.expectation());
            let rhs = a.mul(&b.expectation()).expectation();
            assert!(lhs.approx_eq(&mid, 1e-10));
            assert!(rhs.approx_eq(&mid, 1e-10));
        }
    }

    #[test]
    fn regular_repr_is_a_star_homomorphism() {
        let fb = generate_bundle(
            &GroupoidFamily::GroupBundle {
                fibres: 2,
                table: cyclic_group_table(2),
            },
            &DimProfile::Constant(2),
            &TwistFamily::RandomCoboundary,
            81,
        )
        .unwrap();
        let mut rng = SeededRng::new(82);
        for _ in 0..5 {
            let a = Section::random(&fb, &mut rng, 1.0);
            let b = Section::random(&fb, &mut rng, 1.0);
            let la = a.regular_repr();
            let lb = b.regular_repr();
            assert!(a.mul(&b).regular_repr().approx_eq(&la.mul(&lb), 1e-10));
            assert!(a.star().regular_repr().approx_eq(&la.adjoint(), 1e-12));
            assert!(a.add(&b).regular_repr().approx_eq(&la.add(&lb), 1e-12));
        }
    }

    #[test]
    fn mismatched_bundles_are_rejected() {
        let fb1 = line_pair2();
        let fb2 = generate_bundle(
            &GroupoidFamily::Pair { points: 2 },
            &DimProfile::Constant(2),
            &TwistFamily::Trivial,
            0,
        )
        .unwrap();
        let a = Section::zero(&fb1);
        let b = Section::zero(&fb2);
        assert!(matches!(convolve(&a, &b), Err(SectionError::BundleMismatch)));
        assert!(matches!(
            inner_product(&a, &b),
            Err(SectionError::BundleMismatch)
        ));
    }

    #[test]
    fn convolution_is_associative_and_bilinear() {
        let fb = generate_bundle(
            &GroupoidFamily::Group {
                table: cyclic_group_table(3),
            },
            &DimProfile::Constant(2),
            &TwistFamily::RandomCoboundary,
            91,
        )
        .unwrap();
        let mut rng = SeededRng::new(92);
        for _ in 0..5 {
            let a = Section::random(&fb, &mut rng, 1.0);
            let b = Section::random(&fb, &mut rng, 1.0);
            let cc = Section::random(&fb, &mut rng, 1.0);
            let left = a.mul(&b).mul(&cc);
            let right = a.mul(&b.mul(&cc));
            assert!(left.approx_eq(&right, 1e-10));
            let z = c(0.7, -0.3);
            let lhs = a.add(&b.scale(z)).mul(&cc);
            let rhs = a.mul(&cc).add(&b.mul(&cc).scale(z));
            assert!(lhs.approx_eq(&rhs, 1e-10));
        }
    }

    fn span_of<T: Structured>(sa: &T, elems: &[T::Elem], tol: &Tolerance) -> Subspace {
        let vecs: Vec<Vec<Complex64>> = elems.iter().map(|e| sa.vectorize(e)).collect();
        Subspace::span(sa.dim(), &vecs, tol)
    }

    #[test]
    fn view_of_pair2_matches_the_matrix_picture() {
        let tol = Tolerance::default();
        let view = extract_structured(&line_pair2(), &tol).unwrap();
        assert_eq!(view.dim(), 4);
        assert_eq!(view.pattern_arrows(), &[vec![0, 3], vec![1, 2]]);
        assert_eq!(view.z_basis().len(), 2);
        let report = validate_axioms(&view, &tol);
        assert!(report.passed(), "failed: {:?}", report.failures());
    }

    #[test]
    fn view_with_larger_fibres_separates_z_from_the_expectation_image() {
        let tol = Tolerance::default();
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 2 },
            &DimProfile::Constant(2),
            &TwistFamily::Trivial,
            0,
        )
        .unwrap();
        let view = extract_structured(&fb, &tol).unwrap();
        let report = validate_axioms(&view, &tol);
        assert!(report.passed(), "failed: {:?}", report.failures());
        let z_span = span_of(&view, &view.z_basis(), &tol);
        let phi_a: Vec<Section> = view.basis().iter().map(|e| view.phi(e)).collect();
        let phi_a_span = span_of(&view, &phi_a, &tol);
        assert_eq!(z_span.dim(), 2);
        assert_eq!(phi_a_span.dim(), 8);
        assert!(phi_a_span.contains_subspace(&z_span, &tol));
        assert!(!z_span.contains_subspace(&phi_a_span, &tol));
    }

    #[test]
    fn group_view_expectation_image_collapses_to_z() {
        let tol = Tolerance::default();
        let fb = generate_bundle(
            &GroupoidFamily::Group {
                table: cyclic_group_table(2),
            },
            &DimProfile::Constant(1),
            &TwistFamily::Trivial,
            0,
        )
        .unwrap();
        let view = extract_structured(&fb, &tol).unwrap();
        // Singleton patterns, one per group element.
        assert_eq!(view.pattern_arrows().len(), 2);
        let z_span = span_of(&view, &view.z_basis(), &tol);
        let phi_a: Vec<Section> = view.basis().iter().map(|e| view.phi(e)).collect();
        let phi_a_span = span_of(&view, &phi_a, &tol);
        assert_eq!(z_span.dim(), 1);
        assert_eq!(phi_a_span.dim(), 1);
        assert!(z_span.contains_subspace(&phi_a_span, &tol));
    }

    #[test]
    fn bundle_views_are_well_structured() {
        let tol = Tolerance::default();
        let views = [
            extract_structured(&line_pair2(), &tol).unwrap(),
            extract_structured(
                &generate_bundle(
                    &GroupoidFamily::Group {
                        table: product_group_table(&cyclic_group_table(2), &cyclic_group_table(2)),
                    },
                    &DimProfile::Constant(1),
                    &TwistFamily::KleinBicharacter,
                    0,
                )
                .unwrap(),
                &tol,
            )
            .unwrap(),
        ];
        for view in &views {
            assert!(validate_axioms(view, &tol).passed());
            let report = property_report(view, &tol, 64, 0x5ec);
            for (name, outcome) in report.entries() {
                assert!(
                    outcome.holds,
                    "{name} failed: {:?}",
                    outcome.counterexample
                );
                assert!(outcome.is_conclusive(), "{name} was vacuous");
            }
            assert!(report.well_structured());
        }
    }

    #[test]
    fn non_slice_pattern_is_rejected_by_the_star_axiom() {
        let tol = Tolerance::default();
        // Arrows 1 = (0,1) and 3 = (1,1) share the source 1, so {1, 3} is
        // not a slice; its stars {2, 3} fit no single listed pattern.
        let view = extract_structured(&line_pair2(), &tol)
            .unwrap()
            .with_pattern_arrows(vec![vec![0, 3], vec![1, 2], vec![1, 3]]);
        let report = validate_axioms(&view, &tol);
        assert!(!report.passed());
        assert!(report.failures().contains(&"S closed under star"));
        assert!(report.s_closed_under_star.counterexample.is_some());
    }

    #[test]
    fn spectral_calculus_lives_on_the_unit_space() {
        let tol = Tolerance::default();
        let fb = line_pair2();
        let view = extract_structured(&fb, &tol).unwrap();
        let a = Section::zero(&fb)
            .with_value(0, ComplexMatrix::diag(&[r(4.0)]))
            .with_value(3, ComplexMatrix::diag(&[r(9.0)]));
        let root = view.spectral(SpectralFn::Sqrt, &a, &tol).unwrap();
        assert!(root.value(0).approx_eq(&ComplexMatrix::diag(&[r(2.0)]), 1e-9));
        assert!(root.value(3).approx_eq(&ComplexMatrix::diag(&[r(3.0)]), 1e-9));
        let off = scalar_delta(&fb, 1, r(1.0));
        match view.spectral(SpectralFn::Sqrt, &off, &tol) {
            Err(StructuredError::SpectralUndefined { reason }) => {
                assert!(reason.contains("[1]"), "unexpected reason: {reason}");
            }
            other => panic!("expected SpectralUndefined, got {other:?}"),
        }
    }

    #[test]
    fn view_vectorization_matches_the_basis_order() {
        let tol = Tolerance::default();
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 2 },
            &DimProfile::Constant(2),
            &TwistFamily::Trivial,
            0,
        )
        .unwrap();
        let view = extract_structured(&fb, &tol).unwrap();
        let basis = view.basis();
        assert_eq!(basis.len(), view.dim());
        for (k, e) in basis.iter().enumerate() {
            let v = view.vectorize(e);
            for (i, z) in v.iter().enumerate() {
                let expected = if i == k { 1.0 } else { 0.0 };
                assert!((z - Complex64::new(expected, 0.0)).norm() < 1e-12);
            }
        }
    }
}
