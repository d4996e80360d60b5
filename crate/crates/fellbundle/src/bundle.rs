//! Fell bundles over finite groupoids.
//!
//! A bundle assigns to each arrow γ the space of complex `d(r(γ)) × d(s(γ))`
//! matrices, where `d` is a positive dimension per unit. Fibres are never
//! stored — the bundle is just the base groupoid, the dimension profile and
//! a unit-modulus twist — so the product and involution below *define* the
//! bundle and the validator checks the algebra axioms structurally on
//! matrix-unit bases.

use crate::groupoid::{
    cyclic_group_table, generate, product_group_table, validate_cocycle, CocycleViolation,
    FiniteGroupoid, GroupoidError, GroupoidFamily, TwoCocycle,
};
use crate::numeric::{
    apply_spectral, herm_eig, op_norm, ComplexMatrix, SpectralFn, Tolerance,
};
use crate::rng::SeededRng;
use num_complex::Complex64;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BundleError {
    #[error("invalid bundle parameters: {reason}")]
    InvalidParams { reason: String },
    #[error("fiber element is not positive semidefinite: hermitian defect {hermitian_defect:.3e}, minimum eigenvalue {min_eigenvalue:.3e}")]
    NotPsd {
        hermitian_defect: f64,
        min_eigenvalue: f64,
    },
    #[error(transparent)]
    Groupoid(#[from] GroupoidError),
}

/// A Fell bundle at finite scale: matrix fibres over a finite groupoid,
/// twisted by a two-cocycle.
#[derive(Clone, PartialEq)]
pub struct FellBundle {
    base: Arc<FiniteGroupoid>,
    /// Fibre dimension per unit, indexed by unit position.
    dims: Vec<usize>,
    twist: TwoCocycle,
}

impl FellBundle {
    pub fn new(
        base: Arc<FiniteGroupoid>,
        dims: Vec<usize>,
        twist: TwoCocycle,
    ) -> Result<Self, BundleError> {
        if dims.len() != base.unit_count() {
            return Err(BundleError::InvalidParams {
                reason: format!(
                    "dimension profile has {} entries for {} units",
                    dims.len(),
                    base.unit_count()
                ),
            });
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(BundleError::InvalidParams {
                reason: format!("unit {} has zero fibre dimension", base.units()[pos]),
            });
        }
        if twist.values().len() != base.len() * base.len() {
            return Err(BundleError::InvalidParams {
                reason: "twist table does not match the groupoid".into(),
            });
        }
        Ok(Self { base, dims, twist })
    }

    pub fn base(&self) -> &Arc<FiniteGroupoid> {
        &self.base
    }

    pub fn twist(&self) -> &TwoCocycle {
        &self.twist
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Fibre dimension over a unit element.
    pub fn dim_at_unit(&self, unit: usize) -> usize {
        let pos = self
            .base
            .unit_position(unit)
            .expect("dimension requested at a non-unit element");
        self.dims[pos]
    }

    /// `(d(r(γ)), d(s(γ)))`.
    pub fn fiber_shape(&self, gamma: usize) -> (usize, usize) {
        (
            self.dim_at_unit(self.base.range(gamma)),
            self.dim_at_unit(self.base.source(gamma)),
        )
    }

    pub fn zero_fiber(&self, gamma: usize) -> ComplexMatrix {
        let (rows, cols) = self.fiber_shape(gamma);
        ComplexMatrix::zeros(rows, cols)
    }

    /// Identity element of a unit fibre.
    pub fn unit_fiber_identity(&self, unit: usize) -> ComplexMatrix {
        ComplexMatrix::identity(self.dim_at_unit(unit))
    }

    /// Twisted fibre product `B_a × B_b → B_{ab}`.
    pub fn fiber_product(
        &self,
        a: usize,
        b: usize,
        x: &ComplexMatrix,
        y: &ComplexMatrix,
    ) -> ComplexMatrix {
        debug_assert!(self.base.composable(a, b), "fibres do not compose");
        debug_assert_eq!((x.rows(), x.cols()), self.fiber_shape(a));
        debug_assert_eq!((y.rows(), y.cols()), self.fiber_shape(b));
        x.mul(y).scale(self.twist.get(a, b))
    }

    /// Involution `B_γ → B_{γ⁻¹}`: the twist-corrected conjugate transpose.
    pub fn fiber_star(&self, gamma: usize, x: &ComplexMatrix) -> ComplexMatrix {
        debug_assert_eq!((x.rows(), x.cols()), self.fiber_shape(gamma));
        let correction = self.twist.get(gamma, self.base.inverse(gamma)).conj();
        x.adjoint().scale(correction)
    }

    /// Whether every fibre is square — equivalently, whether every fibre
    /// contains an invertible element.
    pub fn all_fibers_square(&self) -> bool {
        self.base.elements().all(|gamma| {
            let (rows, cols) = self.fiber_shape(gamma);
            rows == cols
        })
    }

    pub fn random_fiber(&self, gamma: usize, rng: &mut SeededRng, scale: f64) -> ComplexMatrix {
        let (rows, cols) = self.fiber_shape(gamma);
        rng.matrix(rows, cols, scale)
    }

    /// Random invertible fibre element; `None` when the fibre is not square.
    pub fn random_invertible_fiber(
        &self,
        gamma: usize,
        rng: &mut SeededRng,
    ) -> Option<ComplexMatrix> {
        let (rows, cols) = self.fiber_shape(gamma);
        (rows == cols).then(|| rng.invertible_matrix(rows, 1.0))
    }
}

impl fmt::Debug for FellBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "FellBundle {{ base: {:?}, dims: {:?} }}",
            self.base, self.dims
        )
    }
}

/// Pointer-or-structural equality for shared bundles.
pub fn same_bundle(a: &Arc<FellBundle>, b: &Arc<FellBundle>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// One broken bundle axiom with its witnesses.
#[derive(Debug, Clone, PartialEq)]
pub enum BundleViolation {
    /// The twist itself is not a normalized cocycle.
    TwistInvalid(CocycleViolation),
    /// Twisted associativity fails on a composable arrow triple.
    AssociativityFails { a: usize, b: usize, c: usize },
    /// `(xy)* = y*x*` fails over a composable pair.
    InvolutionNotAntimultiplicative { left: usize, right: usize },
    /// `x** = x` fails over an arrow.
    InvolutionNotInvolutive { element: usize },
    /// `|x*| = |x|` fails over an arrow.
    InvolutionNotIsometric { element: usize },
    /// `|x*x| = |x|^2` fails over an arrow.
    CStarIdentityFails { element: usize },
    /// `|xy| <= |x||y|` fails over a composable pair.
    NotSubmultiplicative { left: usize, right: usize },
    /// No positive square root of `x*x` within tolerance.
    SquareRootFails { element: usize },
}

impl fmt::Display for BundleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BundleViolation::TwistInvalid(v) => write!(f, "twist: {v}"),
            BundleViolation::AssociativityFails { a, b, c } => {
                write!(f, "twisted product not associative on ({a}, {b}, {c})")
            }
            BundleViolation::InvolutionNotAntimultiplicative { left, right } => {
                write!(f, "(xy)* != y*x* over ({left}, {right})")
            }
            BundleViolation::InvolutionNotInvolutive { element } => {
                write!(f, "x** != x over {element}")
            }
            BundleViolation::InvolutionNotIsometric { element } => {
                write!(f, "|x*| != |x| over {element}")
            }
            BundleViolation::CStarIdentityFails { element } => {
                write!(f, "|x*x| != |x|^2 over {element}")
            }
            BundleViolation::NotSubmultiplicative { left, right } => {
                write!(f, "|xy| > |x||y| over ({left}, {right})")
            }
            BundleViolation::SquareRootFails { element } => {
                write!(f, "x*x has no positive square root over {element}")
            }
        }
    }
}

fn matrix_unit(rows: usize, cols: usize, i: usize, j: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(rows, cols);
    m.set(i, j, Complex64::new(1.0, 0.0));
    m
}

fn basis(rows: usize, cols: usize) -> Vec<ComplexMatrix> {
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(matrix_unit(rows, cols, i, j));
        }
    }
    out
}

const VALIDATION_SAMPLE_SEED: u64 = 0xf311;

/// Check the bundle axioms: the cocycle conditions on the twist, then the
/// structural identities (associativity, involution laws) exhaustively on
/// matrix-unit bases, then the norm axioms on a deterministic random sample.
pub fn validate_fell_bundle(fb: &FellBundle, tol: &Tolerance) -> Vec<BundleViolation> {
    let mut out = Vec::new();
    let g = fb.base();

    for v in validate_cocycle(g, fb.twist()) {
        out.push(BundleViolation::TwistInvalid(v));
    }

    // Twisted associativity on every composable triple, all basis elements.
    'triples: for (a, b) in g.composable_pairs() {
        let ab = g.product(a, b).unwrap();
        for &c in g.costar(g.source(b)) {
            let bc = g.product(b, c).unwrap();
            let (ra, ca) = fb.fiber_shape(a);
            let (rb, cb) = fb.fiber_shape(b);
            let (rc, cc) = fb.fiber_shape(c);
            for x in basis(ra, ca) {
                for y in basis(rb, cb) {
                    for z in basis(rc, cc) {
                        let left = fb.fiber_product(ab, c, &fb.fiber_product(a, b, &x, &y), &z);
                        let right = fb.fiber_product(a, bc, &x, &fb.fiber_product(b, c, &y, &z));
                        if left.max_abs_diff(&right) > tol.allowance(1.0) {
                            out.push(BundleViolation::AssociativityFails { a, b, c });
                            continue 'triples;
                        }
                    }
                }
            }
        }
    }

    // (xy)* = y*x* on basis elements of every composable pair.
    'pairs: for (a, b) in g.composable_pairs() {
        let ab = g.product(a, b).unwrap();
        let (ra, ca) = fb.fiber_shape(a);
        let (rb, cb) = fb.fiber_shape(b);
        for x in basis(ra, ca) {
            for y in basis(rb, cb) {
                let left = fb.fiber_star(ab, &fb.fiber_product(a, b, &x, &y));
                let right = fb.fiber_product(
                    g.inverse(b),
                    g.inverse(a),
                    &fb.fiber_star(b, &y),
                    &fb.fiber_star(a, &x),
                );
                if left.max_abs_diff(&right) > tol.allowance(1.0) {
                    out.push(BundleViolation::InvolutionNotAntimultiplicative { left: a, right: b });
                    continue 'pairs;
                }
            }
        }
    }

    // x** = x on basis elements of every fibre.
    'arrows: for gamma in g.elements() {
        let (rows, cols) = fb.fiber_shape(gamma);
        for x in basis(rows, cols) {
            let back = fb.fiber_star(g.inverse(gamma), &fb.fiber_star(gamma, &x));
            if back.max_abs_diff(&x) > tol.allowance(1.0) {
                out.push(BundleViolation::InvolutionNotInvolutive { element: gamma });
                continue 'arrows;
            }
        }
    }

    // Norm axioms on a deterministic sample.
    let mut rng = SeededRng::new(VALIDATION_SAMPLE_SEED);
    for gamma in g.elements() {
        let x = fb.random_fiber(gamma, &mut rng, 1.0);
        let norm = op_norm(&x);
        let star = fb.fiber_star(gamma, &x);
        if (op_norm(&star) - norm).abs() > tol.allowance(norm) {
            out.push(BundleViolation::InvolutionNotIsometric { element: gamma });
        }
        let gram = fb.fiber_product(g.inverse(gamma), gamma, &star, &x);
        if (op_norm(&gram) - norm * norm).abs() > tol.allowance(norm * norm) {
            out.push(BundleViolation::CStarIdentityFails { element: gamma });
        }
        match fiber_sqrt(fb, g.source(gamma), &gram.hermitian_part(), tol) {
            Ok(root) => {
                let squared = root.mul(&root);
                if squared.max_abs_diff(&gram) > tol.allowance(norm * norm) {
                    out.push(BundleViolation::SquareRootFails { element: gamma });
                }
            }
            Err(_) => out.push(BundleViolation::SquareRootFails { element: gamma }),
        }
    }
    for (a, b) in g.composable_pairs() {
        let x = fb.random_fiber(a, &mut rng, 1.0);
        let y = fb.random_fiber(b, &mut rng, 1.0);
        let bound = op_norm(&x) * op_norm(&y);
        if op_norm(&fb.fiber_product(a, b, &x, &y)) > bound + tol.allowance(bound) {
            out.push(BundleViolation::NotSubmultiplicative { left: a, right: b });
        }
    }
    out
}

/// How close the bundle is to the reconstruction-friendly classes:
/// `categorical` (unit fibres carry identities), `corical` (every fibre has
/// an invertible element) and `saturated` (fibre products span the target
/// fibre).
#[derive(Debug, Clone, PartialEq)]
pub struct CoricalityReport {
    pub is_categorical: bool,
    pub is_corical: bool,
    pub is_saturated: bool,
    /// Arrows whose fibre is not square.
    pub non_corical_arrows: Vec<usize>,
    /// Composable pairs whose products do not span the target fibre.
    pub unsaturated_pairs: Vec<(usize, usize)>,
}

pub fn coricality(fb: &FellBundle, tol: &Tolerance) -> CoricalityReport {
    let g = fb.base();

    // Each unit fibre is a square matrix algebra with its identity, so the
    // categorical condition reduces to a tautology at this scale; keep the
    // scan so a future fibre representation cannot silently regress it.
    let is_categorical = g.units().iter().all(|&u| {
        let id = fb.unit_fiber_identity(u);
        id.rows() == fb.dim_at_unit(u) && id.cols() == fb.dim_at_unit(u)
    });

    let non_corical_arrows: Vec<usize> = g
        .elements()
        .filter(|&gamma| {
            let (rows, cols) = fb.fiber_shape(gamma);
            rows != cols
        })
        .collect();

    let mut unsaturated_pairs = Vec::new();
    for (a, b) in g.composable_pairs() {
        let ab = g.product(a, b).unwrap();
        let (rows, cols) = fb.fiber_shape(ab);
        let (ra, ca) = fb.fiber_shape(a);
        let (rb, cb) = fb.fiber_shape(b);
        // Stack every vectorized basis product as a row and compare the rank
        // with the full fibre dimension.
        let mut products = Vec::new();
        for x in basis(ra, ca) {
            for y in basis(rb, cb) {
                products.push(fb.fiber_product(a, b, &x, &y));
            }
        }
        let stacked = ComplexMatrix::from_fn(products.len(), rows * cols, |i, j| {
            products[i].get(j / cols, j % cols)
        });
        let rank = crate::numeric::singular_values(&stacked)
            .into_iter()
            .filter(|&s| s > tol.invertibility_threshold)
            .count();
        if rank != rows * cols {
            unsaturated_pairs.push((a, b));
        }
    }

    CoricalityReport {
        is_categorical,
        is_corical: non_corical_arrows.is_empty(),
        is_saturated: unsaturated_pairs.is_empty(),
        non_corical_arrows,
        unsaturated_pairs,
    }
}

/// Positive square root of a PSD element of a unit fibre.
pub fn fiber_sqrt(
    fb: &FellBundle,
    unit: usize,
    x: &ComplexMatrix,
    tol: &Tolerance,
) -> Result<ComplexMatrix, BundleError> {
    assert!(fb.base().is_unit(unit), "square roots live in unit fibres");
    let d = fb.dim_at_unit(unit);
    assert_eq!((x.rows(), x.cols()), (d, d), "element has wrong shape");

    let defect = x.hermitian_defect();
    let scale = x.frobenius_norm();
    if defect > tol.allowance(scale) {
        return Err(BundleError::NotPsd {
            hermitian_defect: defect,
            min_eigenvalue: f64::NAN,
        });
    }
    let spectrum = herm_eig(&x.hermitian_part(), tol).expect("hermitian part is hermitian");
    let min = spectrum.min_eigenvalue();
    if min < -tol.allowance(op_norm(x)) {
        return Err(BundleError::NotPsd {
            hermitian_defect: defect,
            min_eigenvalue: min,
        });
    }
    Ok(apply_spectral(SpectralFn::Sqrt, &x.hermitian_part(), tol)
        .expect("hermitian part is hermitian"))
}

/// Dimension profiles for generated bundles.
#[derive(Debug, Clone, PartialEq)]
pub enum DimProfile {
    Constant(usize),
    /// One dimension per unit, in unit order.
    PerUnit(Vec<usize>),
}

/// Twist families for generated bundles.
#[derive(Debug, Clone, PartialEq)]
pub enum TwistFamily {
    Trivial,
    /// Coboundary of random unit-modulus arrow weights (cohomologically
    /// trivial, numerically nontrivial).
    RandomCoboundary,
    /// The sign bicharacter on the product of two order-2 cyclic groups.
    KleinBicharacter,
    /// `exp(2πi a b / n)` on the cyclic group of order `n`.
    CyclicBicharacter,
}

/// Build a validated bundle over a generated groupoid. Deterministic in all
/// arguments.
pub fn generate_bundle(
    family: &GroupoidFamily,
    dims: &DimProfile,
    twist: &TwistFamily,
    seed: u64,
) -> Result<Arc<FellBundle>, BundleError> {
    let base = Arc::new(generate(family)?);
    let dim_vec = match dims {
        DimProfile::Constant(d) => vec![*d; base.unit_count()],
        DimProfile::PerUnit(v) => v.clone(),
    };
    let twist_table = match twist {
        TwistFamily::Trivial => TwoCocycle::trivial(&base),
        TwistFamily::RandomCoboundary => {
            TwoCocycle::random_coboundary(&base, &mut SeededRng::new(seed))
        }
        TwistFamily::KleinBicharacter => klein_bicharacter(&base)?,
        TwistFamily::CyclicBicharacter => cyclic_bicharacter(&base)?,
    };
    let fb = FellBundle::new(base, dim_vec, twist_table)?;
    let report = validate_fell_bundle(&fb, &Tolerance::default());
    debug_assert!(report.is_empty(), "generated bundle failed validation: {report:?}");
    Ok(Arc::new(fb))
}

fn klein_bicharacter(g: &FiniteGroupoid) -> Result<TwoCocycle, BundleError> {
    let expected = generate(&GroupoidFamily::Group {
        table: product_group_table(&cyclic_group_table(2), &cyclic_group_table(2)),
    })
    .expect("the product of two cyclic groups is a group");
    if *g != expected {
        return Err(BundleError::InvalidParams {
            reason: "the sign bicharacter needs the product of two order-2 cyclic groups".into(),
        });
    }
    // Element (a, b) has id 2a + b; the sign pairs the second coordinate on
    // the left with the first on the right.
    let mut sigma = TwoCocycle::trivial(g);
    for x in g.elements() {
        for y in g.elements() {
            if (x % 2) * (y / 2) == 1 {
                sigma.set(x, y, Complex64::new(-1.0, 0.0));
            }
        }
    }
    Ok(sigma)
}

fn cyclic_bicharacter(g: &FiniteGroupoid) -> Result<TwoCocycle, BundleError> {
    let n = g.len();
    let cyclic = generate(&GroupoidFamily::Group {
        table: cyclic_group_table(n),
    })
    .expect("cyclic tables are groups");
    if *g != cyclic {
        return Err(BundleError::InvalidParams {
            reason: "the cyclic bicharacter needs a cyclic group in standard labeling".into(),
        });
    }
    let mut sigma = TwoCocycle::trivial(g);
    for a in 0..n {
        for b in 0..n {
            let angle = std::f64::consts::TAU * (a * b) as f64 / n as f64;
            sigma.set(a, b, Complex64::new(angle.cos(), angle.sin()));
        }
    }
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_bundle_pair2() -> Arc<FellBundle> {
        generate_bundle(
            &GroupoidFamily::Pair { points: 2 },
            &DimProfile::Constant(1),
            &TwistFamily::Trivial,
            0,
        )
        .unwrap()
    }

    #[test]
    fn trivial_line_bundle_validates() {
        let fb = line_bundle_pair2();
        assert!(validate_fell_bundle(&fb, &Tolerance::default()).is_empty());
    }

    #[test]
    fn rank_two_bundle_validates() {
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 2 },
            &DimProfile::Constant(2),
            &TwistFamily::Trivial,
            0,
        )
        .unwrap();
        assert!(validate_fell_bundle(&fb, &Tolerance::default()).is_empty());
        for gamma in fb.base().elements() {
            assert_eq!(fb.fiber_shape(gamma), (2, 2));
        }
    }

    #[test]
    fn broken_twist_is_reported_with_triple() {
        let base = Arc::new(
            generate(&GroupoidFamily::Group {
                table: product_group_table(&cyclic_group_table(2), &cyclic_group_table(2)),
            })
            .unwrap(),
        );
        let mut sigma = TwoCocycle::trivial(&base);
        sigma.set(1, 2, Complex64::new(-1.0, 0.0));
        let fb = FellBundle::new(Arc::clone(&base), vec![1], sigma).unwrap();
        let report = validate_fell_bundle(&fb, &Tolerance::default());
        assert!(report
            .iter()
            .any(|v| matches!(v, BundleViolation::TwistInvalid(CocycleViolation::IdentityFails { .. }))));
        assert!(report
            .iter()
            .any(|v| matches!(v, BundleViolation::AssociativityFails { .. })));
    }

    #[test]
    fn coricality_line_bundle() {
        let fb = line_bundle_pair2();
        let report = coricality(&fb, &Tolerance::default());
        assert!(report.is_categorical);
        assert!(report.is_corical);
        assert!(report.is_saturated);
    }

    #[test]
    fn mixed_dims_saturated_but_not_corical() {
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 2 },
            &DimProfile::PerUnit(vec![1, 2]),
            &TwistFamily::Trivial,
            0,
        )
        .unwrap();
        let report = coricality(&fb, &Tolerance::default());
        assert!(report.is_saturated);
        assert!(!report.is_corical);
        // Exactly the two off-diagonal arrows have non-square fibres.
        assert_eq!(report.non_corical_arrows.len(), 2);
        assert!(validate_fell_bundle(&fb, &Tolerance::default()).is_empty());
    }

    #[test]
    fn group_line_bundle_is_corical() {
        let fb = generate_bundle(
            &GroupoidFamily::Group {
                table: cyclic_group_table(2),
            },
            &DimProfile::Constant(1),
            &TwistFamily::Trivial,
            0,
        )
        .unwrap();
        let report = coricality(&fb, &Tolerance::default());
        assert!(report.is_corical);
    }

    #[test]
    fn corical_implies_categorical_and_saturated() {
        let tol = Tolerance::default();
        let instances = [
            generate_bundle(
                &GroupoidFamily::Pair { points: 3 },
                &DimProfile::Constant(2),
                &TwistFamily::RandomCoboundary,
                5,
            )
            .unwrap(),
            generate_bundle(
                &GroupoidFamily::Group {
                    table: product_group_table(&cyclic_group_table(2), &cyclic_group_table(2)),
                },
                &DimProfile::Constant(1),
                &TwistFamily::KleinBicharacter,
                0,
            )
            .unwrap(),
            generate_bundle(
                &GroupoidFamily::GroupBundle {
                    fibres: 2,
                    table: cyclic_group_table(3),
                },
                &DimProfile::Constant(2),
                &TwistFamily::RandomCoboundary,
                9,
            )
            .unwrap(),
        ];
        for fb in &instances {
            let report = coricality(fb, &tol);
            assert!(report.is_corical);
            assert!(report.is_categorical);
            assert!(report.is_saturated);
            assert!(validate_fell_bundle(fb, &tol).is_empty());
        }
    }

    #[test]
    fn fiber_sqrt_pinned() {
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 2 },
            &DimProfile::Constant(2),
            &TwistFamily::Trivial,
            0,
        )
        .unwrap();
        let tol = Tolerance::default();
        let unit = fb.base().units()[0];
        let m = ComplexMatrix::real_diag(&[4.0, 1.0]);
        let root = fiber_sqrt(&fb, unit, &m, &tol).unwrap();
        assert!(root.approx_eq(&ComplexMatrix::real_diag(&[2.0, 1.0]), 1e-9));

        let zero = ComplexMatrix::zeros(2, 2);
        assert!(fiber_sqrt(&fb, unit, &zero, &tol).unwrap().is_zero(1e-12));

        let negative = ComplexMatrix::real_diag(&[-1.0, 1.0]);
        assert!(matches!(
            fiber_sqrt(&fb, unit, &negative, &tol),
            Err(BundleError::NotPsd { .. })
        ));
    }

    #[test]
    fn fiber_sqrt_random_roundtrip() {
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 2 },
            &DimProfile::Constant(3),
            &TwistFamily::Trivial,
            0,
        )
        .unwrap();
        let tol = Tolerance::default();
        let unit = fb.base().units()[0];
        let mut rng = SeededRng::new(23);
        for _ in 0..8 {
            let m = rng.matrix(3, 3, 1.0);
            let psd = m.adjoint().mul(&m);
            let root = fiber_sqrt(&fb, unit, &psd, &tol).unwrap();
            assert!(root.mul(&root).approx_eq(&psd, 1e-9 * (1.0 + op_norm(&psd))));
        }
    }

    #[test]
    fn involution_isometric_on_twisted_bundles() {
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 3 },
            &DimProfile::Constant(2),
            &TwistFamily::RandomCoboundary,
            77,
        )
        .unwrap();
        let mut rng = SeededRng::new(78);
        for gamma in fb.base().elements() {
            for _ in 0..4 {
                let x = fb.random_fiber(gamma, &mut rng, 2.0);
                let star = fb.fiber_star(gamma, &x);
                assert!((op_norm(&star) - op_norm(&x)).abs() < 1e-9 * (1.0 + op_norm(&x)));
            }
        }
    }

    #[test]
    fn bicharacter_twists_generate() {
        let klein = generate_bundle(
            &GroupoidFamily::Group {
                table: product_group_table(&cyclic_group_table(2), &cyclic_group_table(2)),
            },
            &DimProfile::Constant(1),
            &TwistFamily::KleinBicharacter,
            0,
        )
        .unwrap();
        assert!(validate_fell_bundle(&klein, &Tolerance::default()).is_empty());

        let cyclic = generate_bundle(
            &GroupoidFamily::Group {
                table: cyclic_group_table(4),
            },
            &DimProfile::Constant(1),
            &TwistFamily::CyclicBicharacter,
            0,
        )
        .unwrap();
        assert!(validate_fell_bundle(&cyclic, &Tolerance::default()).is_empty());

        // The sign bicharacter refuses other groups.
        let err = generate_bundle(
            &GroupoidFamily::Group {
                table: cyclic_group_table(4),
            },
            &DimProfile::Constant(1),
            &TwistFamily::KleinBicharacter,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, BundleError::InvalidParams { .. }));
    }

    #[test]
    fn zero_dimension_rejected() {
        let base = Arc::new(generate(&GroupoidFamily::Pair { points: 2 }).unwrap());
        let twist = TwoCocycle::trivial(&base);
        let err = FellBundle::new(base, vec![1, 0], twist).unwrap_err();
        assert!(matches!(err, BundleError::InvalidParams { .. }));
    }
}
