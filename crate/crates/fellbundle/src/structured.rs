//! Structured C*-algebras at finite scale.
//!
//! A structured C*-algebra is a quadruple (A, S, Z, Φ): a finite-dimensional
//! C*-algebra `A`, a closed *-subsemigroup `S = ℂS` given as a finite union
//! of linear pattern subspaces, a commutative C*-subalgebra `Z` spanned by
//! mutually orthogonal projections, and a conditional expectation `Φ`.  The
//! [`Structured`] trait is the common interface: it is implemented both by
//! [`MatrixStructured`] (an abstract block-diagonal matrix algebra) and by
//! the section algebra of a Fell bundle, so every axiom and property checker
//! in this module runs unchanged on both.
//!
//! Membership in `S`, `Z`, `Φ[S]`, and `Φ[A]` is decided by projection
//! residual against the relevant span.  Checks that are multilinear in basis
//! elements run exhaustively over the pattern bases; the rest are sampled
//! with a seeded generator, and every [`CheckOutcome`] records which mode
//! produced it together with how often the check's antecedent was actually
//! exercised.

use num_complex::Complex64;
use thiserror::Error;

use crate::numeric::{
    herm_eig, kernel_into, psd_leq, ComplexMatrix, NumericError, SpectralFn, Subspace, Tolerance,
};
use crate::rng::SeededRng;

/// Default sample count for the randomized property checks.
pub const DEFAULT_SAMPLES: usize = 256;

#[derive(Debug, Error)]
pub enum StructuredError {
    #[error("invalid structured data: {reason}")]
    InvalidData { reason: String },
    #[error("spectral calculus undefined here: {reason}")]
    SpectralUndefined { reason: String },
    #[error("precondition violated: {}", violations.join("; "))]
    PreconditionViolated { violations: Vec<String> },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// The interface every structured C*-algebra model provides.
///
/// `Elem` is the element representation (block tuples for matrix models,
/// sections for bundle views).  `vectorize` fixes a linear identification of
/// the algebra with ℂⁿ used for all span/membership computations, and
/// `represent` gives a faithful *-representation used for order (PSD)
/// comparisons.
pub trait Structured {
    type Elem: Clone;

    /// Linear dimension of the algebra.
    fn dim(&self) -> usize;
    /// A linear basis of the algebra, in the coordinate order of `vectorize`.
    fn basis(&self) -> Vec<Self::Elem>;
    /// Bases of the pattern subspaces whose union is `S`.
    fn pattern_bases(&self) -> Vec<Vec<Self::Elem>>;
    /// A spanning family of `Z` (mutually orthogonal projections).
    fn z_basis(&self) -> Vec<Self::Elem>;
    /// The conditional expectation.
    fn phi(&self, a: &Self::Elem) -> Self::Elem;

    fn add(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    fn scale(&self, z: Complex64, a: &Self::Elem) -> Self::Elem;
    fn mul(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    fn star(&self, a: &Self::Elem) -> Self::Elem;
    /// The C*-norm of the element.
    fn norm(&self, a: &Self::Elem) -> f64;
    /// A faithful *-representation as a single matrix.
    fn represent(&self, a: &Self::Elem) -> ComplexMatrix;
    /// Coordinates in the fixed identification with ℂⁿ.
    fn vectorize(&self, a: &Self::Elem) -> Vec<Complex64>;
    fn zero(&self) -> Self::Elem;
    fn one(&self) -> Self::Elem;
    /// Functional calculus on a Hermitian element, where the model admits it.
    fn spectral(
        &self,
        f: SpectralFn,
        a: &Self::Elem,
        tol: &Tolerance,
    ) -> Result<Self::Elem, StructuredError>;

    fn sub(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem {
        self.add(a, &self.scale(Complex64::new(-1.0, 0.0), b))
    }

    fn combine(&self, coefficients: &[Complex64], elems: &[Self::Elem]) -> Self::Elem {
        assert_eq!(coefficients.len(), elems.len(), "coefficient count mismatch");
        let mut acc = self.zero();
        for (c, e) in coefficients.iter().zip(elems) {
            acc = self.add(&acc, &self.scale(*c, e));
        }
        acc
    }

    /// Whether the element belongs to this algebra instance.  Models whose
    /// elements carry their own context (sections carry a bundle) override
    /// this to reject foreign elements.
    fn owns(&self, _a: &Self::Elem) -> bool {
        true
    }

    /// Geometric verdict for "`b` is locally invertible over the support of
    /// `a`" — equivalent to `a < b` where the model has such a criterion.
    /// `None` when it offers no shortcut; the domination engine then decides
    /// numerically (and cross-checks against this verdict when present).
    fn support_verdict(
        &self,
        _a: &Self::Elem,
        _b: &Self::Elem,
        _tol: &Tolerance,
    ) -> Option<bool> {
        None
    }

    /// Closed-form domination witness — a local inverse of `b` over the
    /// support of `a` — when the model can construct one directly.
    fn local_inverse(
        &self,
        _a: &Self::Elem,
        _b: &Self::Elem,
        _tol: &Tolerance,
    ) -> Option<Self::Elem> {
        None
    }

    /// Geometric verdict for compatibility: do the supports of `a` and `b`
    /// jointly fit a single pattern?  `None` when the model has no such
    /// criterion or the inputs fall outside its hypotheses.
    fn joint_pattern_verdict(
        &self,
        _a: &Self::Elem,
        _b: &Self::Elem,
        _tol: &Tolerance,
    ) -> Option<bool> {
        None
    }

    /// Closed-form compatibility witness candidate, when the model can build
    /// one from the supports directly.
    fn joint_pattern_witness(
        &self,
        _a: &Self::Elem,
        _b: &Self::Elem,
        _tol: &Tolerance,
    ) -> Option<Self::Elem> {
        None
    }
}

/// A random element of the algebra: a random combination of the basis.
pub fn random_element<T: Structured>(sa: &T, rng: &mut SeededRng) -> T::Elem {
    let basis = sa.basis();
    let coeffs: Vec<Complex64> = basis.iter().map(|_| rng.complex(1.0)).collect();
    sa.combine(&coeffs, &basis)
}

/// A random element of `S`: a random combination within one random pattern.
/// Returns the pattern index alongside the element.
pub fn random_pattern_element<T: Structured>(
    sa: &T,
    rng: &mut SeededRng,
) -> (usize, T::Elem) {
    let patterns = sa.pattern_bases();
    assert!(!patterns.is_empty(), "no S patterns to sample from");
    let p = rng.index(patterns.len());
    let coeffs: Vec<Complex64> = patterns[p].iter().map(|_| rng.complex(1.0)).collect();
    (p, sa.combine(&coeffs, &patterns[p]))
}

/// How a check arrived at its verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckMode {
    /// Every configuration the condition quantifies over was enumerated
    /// through pattern bases.
    ExhaustiveBasis,
    /// Seeded random sampling.
    Sampled { samples: usize, seed: u64 },
}

/// Verdict of a single axiom or property check.
///
/// `antecedent_hits` counts how many examined configurations actually
/// satisfied the check's hypothesis; a verdict with zero hits is vacuous and
/// [`CheckOutcome::is_conclusive`] reports that.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub holds: bool,
    pub residual: f64,
    pub antecedent_hits: usize,
    pub mode: CheckMode,
    pub counterexample: Option<String>,
}

impl CheckOutcome {
    fn new(mode: CheckMode) -> Self {
        Self {
            holds: true,
            residual: 0.0,
            antecedent_hits: 0,
            mode,
            counterexample: None,
        }
    }

    fn hit(&mut self) {
        self.antecedent_hits += 1;
    }

    /// Record one observed deviation against its allowance.
    fn observe(&mut self, residual: f64, allowed: f64, label: impl FnOnce() -> String) {
        self.residual = self.residual.max(residual);
        if residual > allowed && self.holds {
            self.holds = false;
            self.counterexample = Some(label());
        }
    }

    pub fn is_conclusive(&self) -> bool {
        self.antecedent_hits > 0
    }
}

/// Which central part a bistability/productivity check targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CentralPart {
    Z,
    PhiS,
}

impl std::fmt::Display for CentralPart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CentralPart::Z => write!(f, "Z"),
            CentralPart::PhiS => write!(f, "Φ[S]"),
        }
    }
}

/// Precomputed linear scaffolding for one instance: element bases together
/// with the spans membership tests project against.
pub(crate) struct Context<'a, T: Structured> {
    pub(crate) sa: &'a T,
    pub(crate) dim: usize,
    pub(crate) basis: Vec<T::Elem>,
    pub(crate) patterns: Vec<Vec<T::Elem>>,
    pub(crate) z: Vec<T::Elem>,
    pub(crate) pattern_spans: Vec<Subspace>,
    pub(crate) z_span: Subspace,
    pub(crate) phi_s_span: Subspace,
    pub(crate) phi_a_span: Subspace,
}

impl<'a, T: Structured> Context<'a, T> {
    pub(crate) fn new(sa: &'a T, tol: &Tolerance) -> Self {
        let dim = sa.dim();
        let basis = sa.basis();
        let patterns = sa.pattern_bases();
        let z = sa.z_basis();
        let pattern_spans: Vec<Subspace> = patterns
            .iter()
            .map(|p| {
                let vecs: Vec<Vec<Complex64>> = p.iter().map(|e| sa.vectorize(e)).collect();
                Subspace::span(dim, &vecs, tol)
            })
            .collect();
        let z_vecs: Vec<Vec<Complex64>> = z.iter().map(|e| sa.vectorize(e)).collect();
        let z_span = Subspace::span(dim, &z_vecs, tol);
        let phi_s_vecs: Vec<Vec<Complex64>> = patterns
            .iter()
            .flatten()
            .map(|e| sa.vectorize(&sa.phi(e)))
            .collect();
        let phi_s_span = Subspace::span(dim, &phi_s_vecs, tol);
        let phi_a_vecs: Vec<Vec<Complex64>> =
            basis.iter().map(|e| sa.vectorize(&sa.phi(e))).collect();
        let phi_a_span = Subspace::span(dim, &phi_a_vecs, tol);
        Self {
            sa,
            dim,
            basis,
            patterns,
            z,
            pattern_spans,
            z_span,
            phi_s_span,
            phi_a_span,
        }
    }

    fn part_span(&self, part: CentralPart) -> &Subspace {
        match part {
            CentralPart::Z => &self.z_span,
            CentralPart::PhiS => &self.phi_s_span,
        }
    }

    /// Distance from the element to `S` (the union of the patterns).
    pub(crate) fn s_residual(&self, a: &T::Elem) -> f64 {
        let v = self.sa.vectorize(a);
        self.pattern_spans
            .iter()
            .map(|p| p.residual(&v))
            .fold(f64::INFINITY, f64::min)
    }

    /// Draw `(a, b)` with `a` in pattern `p`, `b` in pattern `q`, and `a·b`
    /// inside `target` — the hypothesis of the bistable/binormal checks.
    ///
    /// `b` is drawn at random and `a` is then sampled from the solution
    /// space of the linear membership constraint; `None` when that space is
    /// trivial for the drawn `b`.
    fn constrained_pair(
        &self,
        p: usize,
        q: usize,
        target: &Subspace,
        rng: &mut SeededRng,
        tol: &Tolerance,
    ) -> Option<(T::Elem, T::Elem)> {
        let coeffs: Vec<Complex64> = self.patterns[q].iter().map(|_| rng.complex(1.0)).collect();
        let b = self.sa.combine(&coeffs, &self.patterns[q]);
        let columns: Vec<Vec<Complex64>> = self.patterns[p]
            .iter()
            .map(|e| self.sa.vectorize(&self.sa.mul(e, &b)))
            .collect();
        let op = ComplexMatrix::from_fn(self.dim, columns.len(), |i, j| columns[j][i]);
        let kernel = kernel_into(&op, target, tol);
        if kernel.is_empty() {
            return None;
        }
        let mix: Vec<Complex64> = kernel.iter().map(|_| rng.complex(1.0)).collect();
        let mut coefficients = vec![Complex64::new(0.0, 0.0); self.patterns[p].len()];
        for (m, k) in mix.iter().zip(&kernel) {
            for (c, v) in coefficients.iter_mut().zip(k) {
                *c += m * v;
            }
        }
        let a = self.sa.combine(&coefficients, &self.patterns[p]);
        if self.sa.norm(&a) <= tol.absolute {
            return None;
        }
        Some((a, b))
    }
}

/// Axiom-by-axiom validation report for a structured C*-algebra.
#[derive(Debug, Clone)]
pub struct AxiomReport {
    pub phi_idempotent: CheckOutcome,
    pub phi_contractive: CheckOutcome,
    pub phi_positive: CheckOutcome,
    pub s_closed_under_star: CheckOutcome,
    pub s_closed_under_product: CheckOutcome,
    pub z_inside_s: CheckOutcome,
    pub z_central: CheckOutcome,
    pub s_positives_in_phi_s: CheckOutcome,
    pub phi_s_inside_s: CheckOutcome,
    pub phi_s_ideal: CheckOutcome,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    /// Names of the axiom components that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (name, outcome) in self.entries() {
            if !outcome.holds {
                out.push(name);
            }
        }
        out
    }

    pub fn entries(&self) -> Vec<(&'static str, &CheckOutcome)> {
        vec![
            ("phi idempotent", &self.phi_idempotent),
            ("phi contractive", &self.phi_contractive),
            ("phi positive", &self.phi_positive),
            ("S closed under star", &self.s_closed_under_star),
            ("S closed under product", &self.s_closed_under_product),
            ("Z inside S", &self.z_inside_s),
            ("Z central in phi[A]", &self.z_central),
            ("S positives inside phi[S]", &self.s_positives_in_phi_s),
            ("phi[S] inside S", &self.phi_s_inside_s),
            ("phi[S] ideal of phi[A]", &self.phi_s_ideal),
        ]
    }
}

const AXIOM_SAMPLE_SEED: u64 = 0x5ca1;
const AXIOM_SAMPLES: usize = 128;

/// Validate the four structured-algebra axioms.
///
/// Linear and bilinear conditions are checked exhaustively on bases; the
/// contractivity, positivity, and positive-cone conditions are sampled with
/// a fixed seed.
pub fn validate_axioms<T: Structured>(sa: &T, tol: &Tolerance) -> AxiomReport {
    let ctx = Context::new(sa, tol);
    AxiomReport {
        phi_idempotent: axiom_phi_idempotent(&ctx, tol),
        phi_contractive: axiom_phi_contractive(&ctx, tol),
        phi_positive: axiom_phi_positive(&ctx, tol),
        s_closed_under_star: axiom_s_star(&ctx, tol),
        s_closed_under_product: axiom_s_product(&ctx, tol),
        z_inside_s: axiom_z_inside_s(&ctx, tol),
        z_central: axiom_z_central(&ctx, tol),
        s_positives_in_phi_s: axiom_s_positives(&ctx, tol),
        phi_s_inside_s: axiom_phi_s_inside_s(&ctx, tol),
        phi_s_ideal: axiom_phi_s_ideal(&ctx, tol),
    }
}

fn axiom_phi_idempotent<T: Structured>(ctx: &Context<T>, tol: &Tolerance) -> CheckOutcome {
    let mut out = CheckOutcome::new(CheckMode::ExhaustiveBasis);
    for (i, e) in ctx.basis.iter().enumerate() {
        out.hit();
        let once = ctx.sa.phi(e);
        let twice = ctx.sa.phi(&once);
        let dev = ctx.sa.norm(&ctx.sa.sub(&twice, &once));
        out.observe(dev, tol.allowance(ctx.sa.norm(&once)), || {
            format!("phi(phi(e)) != phi(e) on basis element {i}")
        });
    }
    out
}

fn axiom_phi_contractive<T: Structured>(ctx: &Context<T>, tol: &Tolerance) -> CheckOutcome {
    let mut rng = SeededRng::new(AXIOM_SAMPLE_SEED);
    let mut out = CheckOutcome::new(CheckMode::Sampled {
        samples: AXIOM_SAMPLES,
        seed: AXIOM_SAMPLE_SEED,
    });
    for k in 0..AXIOM_SAMPLES {
        let a = random_element(ctx.sa, &mut rng);
        out.hit();
        let excess = ctx.sa.norm(&ctx.sa.phi(&a)) - ctx.sa.norm(&a);
        out.observe(excess.max(0.0), tol.allowance(ctx.sa.norm(&a)), || {
            format!("|phi(a)| > |a| on sample {k}")
        });
    }
    out
}

fn axiom_phi_positive<T: Structured>(ctx: &Context<T>, tol: &Tolerance) -> CheckOutcome {
    let mut rng = SeededRng::new(AXIOM_SAMPLE_SEED ^ 0xb0b);
    let mut out = CheckOutcome::new(CheckMode::Sampled {
        samples: AXIOM_SAMPLES,
        seed: AXIOM_SAMPLE_SEED ^ 0xb0b,
    });
    for k in 0..AXIOM_SAMPLES {
        let b = random_element(ctx.sa, &mut rng);
        let x = ctx.sa.mul(&ctx.sa.star(&b), &b);
        out.hit();
        let image = ctx.sa.represent(&ctx.sa.phi(&x));
        let allowed = tol.allowance(ctx.sa.norm(&x));
        let defect = image.hermitian_defect();
        // Positivity includes preserving Hermiticity; a skew part is already
        // a failure even before looking at the spectrum.
        let spectrum = herm_eig(&image.hermitian_part(), tol)
            .expect("hermitian part is exactly hermitian");
        let dip = (-spectrum.min_eigenvalue()).max(0.0);
        out.observe(defect.max(dip), allowed, || {
            format!("phi(b*b) not positive on sample {k}")
        });
    }
    out
}

/// A subspace is inside a finite union of subspaces exactly when it is
/// inside a single member, so closure checks look for one pattern absorbing
/// the whole image family.
fn best_pattern_cover<T: Structured>(
    ctx: &Context<T>,
    images: &[Vec<Complex64>],
) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (r, span) in ctx.pattern_spans.iter().enumerate() {
        let worst = images
            .iter()
            .map(|v| span.residual(v))
            .fold(0.0f64, f64::max);
        if worst < best.1 {
            best = (r, worst);
        }
    }
    best
}

fn axiom_s_star<T: Structured>(ctx: &Context<T>, tol: &Tolerance) -> CheckOutcome {
    let mut out = CheckOutcome::new(CheckMode::ExhaustiveBasis);
    for (p, pattern) in ctx.patterns.iter().enumerate() {
        out.hit();
        let images: Vec<Vec<Complex64>> = pattern
            .iter()
            .map(|e| ctx.sa.vectorize(&ctx.sa.star(e)))
            .collect();
        let (_, worst) = best_pattern_cover(ctx, &images);
        let scale = images.iter().map(|v| vec_norm(v)).fold(0.0f64, f64::max);
        out.observe(worst, tol.allowance(scale), || {
            format!("stars of pattern {p} fit no single pattern")
        });
    }
    out
}

fn axiom_s_product<T: Structured>(ctx: &Context<T>, tol: &Tolerance) -> CheckOutcome {
    let mut out = CheckOutcome::new(CheckMode::ExhaustiveBasis);
    for (p, left) in ctx.patterns.iter().enumerate() {
        for (q, right) in ctx.patterns.iter().enumerate() {
            out.hit();
            let images: Vec<Vec<Complex64>> = left
                .iter()
                .flat_map(|a| {
                    right
                        .iter()
                        .map(|b| ctx.sa.vectorize(&ctx.sa.mul(a, b)))
                        .collect::<Vec<_>>()
                })
                .collect();
            let (_, worst) = best_pattern_cover(ctx, &images);
            let scale = images.iter().map(|v| vec_norm(v)).fold(0.0f64, f64::max);
            out.observe(worst, tol.allowance(scale), || {
                format!("products of patterns {p}×{q} fit no single pattern")
            });
        }
    }
    out
}

fn axiom_z_inside_s<T: Structured>(ctx: &Context<T>, tol: &Tolerance) -> CheckOutcome {
    let mut out = CheckOutcome::new(CheckMode::ExhaustiveBasis);
    out.hit();
    let images: Vec<Vec<Complex64>> = ctx.z.iter().map(|z| ctx.sa.vectorize(z)).collect();
    if images.is_empty() {
        return out;
    }
    let (_, worst) = best_pattern_cover(ctx, &images);
    let scale = images.iter().map(|v| vec_norm(v)).fold(0.0f64, f64::max);
    out.observe(worst, tol.allowance(scale), || {
        "Z fits no single S pattern".to_string()
    });
    out
}

fn axiom_z_central<T: Structured>(ctx: &Context<T>, tol: &Tolerance) -> CheckOutcome {
    let mut out = CheckOutcome::new(CheckMode::ExhaustiveBasis);
    for (i, z) in ctx.z.iter().enumerate() {
        // Z must itself land in phi[A] before commuting inside it.
        out.hit();
        let v = ctx.sa.vectorize(z);
        out.observe(
            ctx.phi_a_span.residual(&v),
            tol.allowance(vec_norm(&v)),
            || format!("z[{i}] lies outside phi[A]"),
        );
        for (j, e) in ctx.basis.iter().enumerate() {
            let d = ctx.sa.phi(e);
            out.hit();
            let comm = ctx.sa.sub(&ctx.sa.mul(z, &d), &ctx.sa.mul(&d, z));
            let scale = ctx.sa.norm(z) * ctx.sa.norm(&d);
            out.observe(ctx.sa.norm(&comm), tol.allowance(scale), || {
                format!("z[{i}] fails to commute with phi(e[{j}])")
            });
        }
    }
    out
}

fn axiom_s_positives<T: Structured>(ctx: &Context<T>, tol: &Tolerance) -> CheckOutcome {
    let seed = AXIOM_SAMPLE_SEED ^ 0xc0de;
    let mut rng = SeededRng::new(seed);
    let mut out = CheckOutcome::new(CheckMode::Sampled {
        samples: AXIOM_SAMPLES,
        seed,
    });
    // Exhaustive first pass over *-squares of pattern basis elements, then
    // sampled *-squares and two-term sums of squares from single patterns:
    // these are exactly the positives of S reachable at finite scale.
    let mut positives: Vec<(String, T::Elem)> = Vec::new();
    for (p, pattern) in ctx.patterns.iter().enumerate() {
        for (i, b) in pattern.iter().enumerate() {
            positives.push((
                format!("b*b for basis {i} of pattern {p}"),
                ctx.sa.mul(&ctx.sa.star(b), b),
            ));
        }
    }
    for k in 0..AXIOM_SAMPLES {
        let (p, t) = random_pattern_element(ctx.sa, &mut rng);
        let square = ctx.sa.mul(&ctx.sa.star(&t), &t);
        let x = if rng.bool() {
            let coeffs: Vec<Complex64> =
                ctx.patterns[p].iter().map(|_| rng.complex(1.0)).collect();
            let u = ctx.sa.combine(&coeffs, &ctx.patterns[p]);
            ctx.sa.add(&square, &ctx.sa.mul(&ctx.sa.star(&u), &u))
        } else {
            square
        };
        positives.push((format!("sampled *-square {k} from pattern {p}"), x));
    }
    for (label, x) in positives {
        out.hit();
        let v = ctx.sa.vectorize(&x);
        out.observe(
            ctx.phi_s_span.residual(&v),
            tol.allowance(vec_norm(&v)),
            || format!("positive element escapes phi[S]: {label}"),
        );
    }
    out
}

fn axiom_phi_s_inside_s<T: Structured>(ctx: &Context<T>, tol: &Tolerance) -> CheckOutcome {
    let mut out = CheckOutcome::new(CheckMode::ExhaustiveBasis);
    // phi[S] is a union of the subspaces phi[pattern]; each must fit inside
    // a single pattern, and for phi[S] to be the C*-algebra the axioms treat
    // it as, one pattern image must absorb all the others.
    let mut all_images: Vec<Vec<Complex64>> = Vec::new();
    for (p, pattern) in ctx.patterns.iter().enumerate() {
        out.hit();
        let images: Vec<Vec<Complex64>> = pattern
            .iter()
            .map(|e| ctx.sa.vectorize(&ctx.sa.phi(e)))
            .collect();
        let (_, worst) = best_pattern_cover(ctx, &images);
        let scale = images
            .iter()
            .map(|v| vec_norm(v))
            .fold(0.0f64, f64::max)
            .max(1.0);
        out.observe(worst, tol.allowance(scale), || {
            format!("phi of pattern {p} fits no single pattern")
        });
        all_images.extend(images);
    }
    // One pattern's image must span all of phi[S].
    out.hit();
    let mut best = f64::INFINITY;
    for pattern in &ctx.patterns {
        let images: Vec<Vec<Complex64>> = pattern
            .iter()
            .map(|e| ctx.sa.vectorize(&ctx.sa.phi(e)))
            .collect();
        let span = Subspace::span(ctx.dim, &images, tol);
        let worst = all_images
            .iter()
            .map(|v| span.residual(v))
            .fold(0.0f64, f64::max);
        best = best.min(worst);
    }
    let scale = all_images
        .iter()
        .map(|v| vec_norm(v))
        .fold(0.0f64, f64::max)
        .max(1.0);
    out.observe(best, tol.allowance(scale), || {
        "phi[S] is not a single linear subspace".to_string()
    });
    out
}

fn axiom_phi_s_ideal<T: Structured>(ctx: &Context<T>, tol: &Tolerance) -> CheckOutcome {
    let mut out = CheckOutcome::new(CheckMode::ExhaustiveBasis);
    for (j, e) in ctx.basis.iter().enumerate() {
        let d = ctx.sa.phi(e);
        for (p, pattern) in ctx.patterns.iter().enumerate() {
            for (i, s) in pattern.iter().enumerate() {
                let f = ctx.sa.phi(s);
                for (side, x) in [("left", ctx.sa.mul(&d, &f)), ("right", ctx.sa.mul(&f, &d))] {
                    out.hit();
                    let v = ctx.sa.vectorize(&x);
                    out.observe(
                        ctx.phi_s_span.residual(&v),
                        tol.allowance(vec_norm(&v)),
                        || {
                            format!(
                            "{side} product phi(e[{j}])·phi(s) escapes phi[S] (pattern {p}, basis {i})"
                        )
                        },
                    );
                }
            }
        }
    }
    out
}

/// Flags for the interrelated expectation/centre properties of an instance.
#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub diagonal_phi_s: CheckOutcome,
    pub normal: CheckOutcome,
    pub shiftable: CheckOutcome,
    pub bistable_z: CheckOutcome,
    pub bistable_phi: CheckOutcome,
    pub binormal_z: CheckOutcome,
    pub productive_z: CheckOutcome,
    pub productive_phi: CheckOutcome,
}

impl PropertyReport {
    /// Normal expectation, bistable expectation, binormal and bistable
    /// centre: the combination the ultrafilter machinery requires.
    pub fn well_structured(&self) -> bool {
        self.normal.holds
            && self.bistable_phi.holds
            && self.binormal_z.holds
            && self.bistable_z.holds
    }

    pub fn entries(&self) -> Vec<(&'static str, &CheckOutcome)> {
        vec![
            ("diagonal phi[S]", &self.diagonal_phi_s),
            ("normal", &self.normal),
            ("shiftable", &self.shiftable),
            ("bistable Z", &self.bistable_z),
            ("bistable phi", &self.bistable_phi),
            ("binormal Z", &self.binormal_z),
            ("productive Z", &self.productive_z),
            ("productive phi", &self.productive_phi),
        ]
    }
}

/// Run every property checker with shared sampling parameters.
pub fn property_report<T: Structured>(
    sa: &T,
    tol: &Tolerance,
    samples: usize,
    seed: u64,
) -> PropertyReport {
    PropertyReport {
        diagonal_phi_s: check_diagonal(sa, tol, samples, seed ^ 0x01),
        normal: check_normal(sa, tol, samples, seed ^ 0x02),
        shiftable: check_shiftable(sa, tol, samples, seed ^ 0x03),
        bistable_z: check_bistable(sa, CentralPart::Z, tol, samples, seed ^ 0x04),
        bistable_phi: check_bistable(sa, CentralPart::PhiS, tol, samples, seed ^ 0x05),
        binormal_z: check_binormal(sa, tol, samples, seed ^ 0x06),
        productive_z: check_productive(sa, CentralPart::Z, tol),
        productive_phi: check_productive(sa, CentralPart::PhiS, tol),
    }
}

/// Is `phi(s* a s) = s* phi(a) s` for `a` in the algebra and `s` in `S`?
pub fn check_normal<T: Structured>(
    sa: &T,
    tol: &Tolerance,
    samples: usize,
    seed: u64,
) -> CheckOutcome {
    let mut rng = SeededRng::new(seed);
    let mut out = CheckOutcome::new(CheckMode::Sampled { samples, seed });
    for k in 0..samples {
        let a = random_element(sa, &mut rng);
        let (p, s) = random_pattern_element(sa, &mut rng);
        out.hit();
        let s_star = sa.star(&s);
        let lhs = sa.phi(&sa.mul(&s_star, &sa.mul(&a, &s)));
        let rhs = sa.mul(&s_star, &sa.mul(&sa.phi(&a), &s));
        let scale = sa.norm(&s) * sa.norm(&s) * sa.norm(&a);
        out.observe(sa.norm(&sa.sub(&lhs, &rhs)), tol.allowance(scale), || {
            format!("sample {k}: phi(s*as) != s*phi(a)s for s from pattern {p}")
        });
    }
    out
}

/// Is `phi(s a) s = s phi(a s)` for `a` in the algebra and `s` in `S`?
pub fn check_shiftable<T: Structured>(
    sa: &T,
    tol: &Tolerance,
    samples: usize,
    seed: u64,
) -> CheckOutcome {
    let mut rng = SeededRng::new(seed);
    let mut out = CheckOutcome::new(CheckMode::Sampled { samples, seed });
    for k in 0..samples {
        let a = random_element(sa, &mut rng);
        let (p, s) = random_pattern_element(sa, &mut rng);
        out.hit();
        let lhs = sa.mul(&sa.phi(&sa.mul(&s, &a)), &s);
        let rhs = sa.mul(&s, &sa.phi(&sa.mul(&a, &s)));
        let scale = sa.norm(&s) * sa.norm(&s) * sa.norm(&a);
        out.observe(sa.norm(&sa.sub(&lhs, &rhs)), tol.allowance(scale), || {
            format!("sample {k}: phi(sa)s != s phi(as) for s from pattern {p}")
        });
    }
    out
}

/// Does `a·b ∈ B` force `phi(a)·b` and `a·phi(b)` into `B`, for `a, b ∈ S`?
///
/// Basis pairs whose product lands in `B` are checked exhaustively; further
/// hypothesis instances are manufactured by solving the linear membership
/// constraint for random pattern elements.  For `B = Φ[S]` the sharper
/// equational form `phi(a)b = phi(a)phi(b) = a phi(b)` is enforced.
pub fn check_bistable<T: Structured>(
    sa: &T,
    part: CentralPart,
    tol: &Tolerance,
    samples: usize,
    seed: u64,
) -> CheckOutcome {
    let ctx = Context::new(sa, tol);
    let target = ctx.part_span(part);
    let mut out = CheckOutcome::new(CheckMode::Sampled { samples, seed });
    let consequent = |out: &mut CheckOutcome, a: &T::Elem, b: &T::Elem, label: &str| {
        let left = sa.mul(&sa.phi(a), b);
        let right = sa.mul(a, &sa.phi(b));
        let scale = sa.norm(a) * sa.norm(b);
        for (side, x) in [("phi(a)b", &left), ("a phi(b)", &right)] {
            let v = sa.vectorize(x);
            out.observe(target.residual(&v), tol.allowance(vec_norm(&v).max(scale)), || {
                format!("{label}: {side} escapes {part}")
            });
        }
        if part == CentralPart::PhiS {
            let both = sa.mul(&sa.phi(a), &sa.phi(b));
            let dev = sa
                .norm(&sa.sub(&left, &both))
                .max(sa.norm(&sa.sub(&right, &both)));
            out.observe(dev, tol.allowance(scale), || {
                format!("{label}: phi(a)b, a phi(b), phi(a)phi(b) disagree")
            });
        }
    };
    // Exhaustive pass over basis pairs whose product already lies in B.
    for (p, left) in ctx.patterns.iter().enumerate() {
        for (q, right) in ctx.patterns.iter().enumerate() {
            for (i, a) in left.iter().enumerate() {
                for (j, b) in right.iter().enumerate() {
                    let prod = sa.mul(a, b);
                    let v = sa.vectorize(&prod);
                    if target.residual(&v) <= tol.allowance(vec_norm(&v)) {
                        out.hit();
                        consequent(
                            &mut out,
                            a,
                            b,
                            &format!("basis pair ({p}:{i})×({q}:{j})"),
                        );
                    }
                }
            }
        }
    }
    // Sampled pass with engineered hypothesis instances.
    if ctx.patterns.is_empty() {
        return out;
    }
    let mut rng = SeededRng::new(seed);
    for k in 0..samples {
        let p = rng.index(ctx.patterns.len());
        let q = rng.index(ctx.patterns.len());
        if let Some((a, b)) = ctx.constrained_pair(p, q, target, &mut rng, tol) {
            let prod = sa.mul(&a, &b);
            let v = sa.vectorize(&prod);
            if target.residual(&v) <= tol.allowance(vec_norm(&v).max(1.0)) {
                out.hit();
                consequent(&mut out, &a, &b, &format!("sampled pair {k} ({p}×{q})"));
            }
        }
    }
    out
}

/// The positive-unit-ball variant: hypothesis `a·b ∈ Z¹₊`, conclusion
/// `phi(a)·b, a·phi(b) ∈ Z¹₊`.  Verdicts from this and from
/// [`check_bistable`] with [`CentralPart::Z`] must agree on conclusive runs.
pub fn check_bistable_positive_ball<T: Structured>(
    sa: &T,
    tol: &Tolerance,
    samples: usize,
    seed: u64,
) -> CheckOutcome {
    let ctx = Context::new(sa, tol);
    let target = &ctx.z_span;
    let mut out = CheckOutcome::new(CheckMode::Sampled { samples, seed });
    if ctx.patterns.is_empty() {
        return out;
    }
    let mut rng = SeededRng::new(seed);
    let in_positive_ball = |x: &T::Elem| -> (f64, f64) {
        // Distance to Z together with the worst of the spectral violations
        // (Hermitian defect, negative dip, and excess over norm one).
        let v = sa.vectorize(x);
        let image = sa.represent(x);
        let spectrum =
            herm_eig(&image.hermitian_part(), tol).expect("hermitian by construction");
        let dip = (-spectrum.min_eigenvalue()).max(0.0);
        let excess = (spectrum.max_eigenvalue() - 1.0).max(0.0);
        (
            target.residual(&v),
            dip.max(excess).max(image.hermitian_defect()),
        )
    };
    for k in 0..samples {
        let p = rng.index(ctx.patterns.len());
        let q = rng.index(ctx.patterns.len());
        let Some((a, b)) = ctx.constrained_pair(p, q, target, &mut rng, tol) else {
            continue;
        };
        // a·b lands in Z; multiplying b by its star pushes the product into
        // the positive part, and rescaling puts it in the unit ball.
        let z = sa.mul(&a, &b);
        let b = sa.mul(&b, &sa.star(&z));
        let prod = sa.mul(&a, &b);
        let n = sa.norm(&prod);
        if n <= tol.absolute {
            continue;
        }
        let lambda = Complex64::new(1.0 / n.sqrt(), 0.0);
        let a = sa.scale(lambda, &a);
        let b = sa.scale(lambda, &b);
        let prod = sa.mul(&a, &b);
        let (zres, spectral) = in_positive_ball(&prod);
        if zres > tol.allowance(1.0) || spectral > tol.allowance(1.0) {
            continue;
        }
        out.hit();
        for (side, x) in [
            ("phi(a)b", sa.mul(&sa.phi(&a), &b)),
            ("a phi(b)", sa.mul(&a, &sa.phi(&b))),
        ] {
            let (zres, spectral) = in_positive_ball(&x);
            out.observe(zres.max(spectral), tol.allowance(1.0), || {
                format!("sampled pair {k}: {side} escapes the positive unit ball of Z")
            });
        }
    }
    out
}

/// Does `a·b ∈ Z` force `a·Z·b ⊆ Z`, for `a, b ∈ S`?
pub fn check_binormal<T: Structured>(
    sa: &T,
    tol: &Tolerance,
    samples: usize,
    seed: u64,
) -> CheckOutcome {
    let ctx = Context::new(sa, tol);
    let target = &ctx.z_span;
    let mut out = CheckOutcome::new(CheckMode::Sampled { samples, seed });
    let consequent = |out: &mut CheckOutcome, a: &T::Elem, b: &T::Elem, label: &str| {
        for (i, z) in ctx.z.iter().enumerate() {
            let x = sa.mul(a, &sa.mul(z, b));
            let v = sa.vectorize(&x);
            let scale = vec_norm(&v).max(sa.norm(a) * sa.norm(z) * sa.norm(b));
            out.observe(target.residual(&v), tol.allowance(scale), || {
                format!("{label}: a·z[{i}]·b escapes Z")
            });
        }
    };
    for (p, left) in ctx.patterns.iter().enumerate() {
        for (q, right) in ctx.patterns.iter().enumerate() {
            for (i, a) in left.iter().enumerate() {
                for (j, b) in right.iter().enumerate() {
                    let prod = sa.mul(a, b);
                    let v = sa.vectorize(&prod);
                    if target.residual(&v) <= tol.allowance(vec_norm(&v)) {
                        out.hit();
                        consequent(&mut out, a, b, &format!("basis pair ({p}:{i})×({q}:{j})"));
                    }
                }
            }
        }
    }
    if ctx.patterns.is_empty() {
        return out;
    }
    let mut rng = SeededRng::new(seed);
    for k in 0..samples {
        let p = rng.index(ctx.patterns.len());
        let q = rng.index(ctx.patterns.len());
        if let Some((a, b)) = ctx.constrained_pair(p, q, target, &mut rng, tol) {
            let prod = sa.mul(&a, &b);
            let v = sa.vectorize(&prod);
            if target.residual(&v) <= tol.allowance(vec_norm(&v).max(1.0)) {
                out.hit();
                consequent(&mut out, &a, &b, &format!("sampled pair {k} ({p}×{q})"));
            }
        }
    }
    out
}

/// Is `phi(a) ∈ a·P ∩ P·a` for every pattern basis element `a`?
///
/// At finite scale the closures in the defining condition are the subspaces
/// themselves, so the check is a pair of least-squares residuals per basis
/// element.
pub fn check_productive<T: Structured>(
    sa: &T,
    part: CentralPart,
    tol: &Tolerance,
) -> CheckOutcome {
    let ctx = Context::new(sa, tol);
    let family: Vec<T::Elem> = match part {
        CentralPart::Z => ctx.z.clone(),
        CentralPart::PhiS => ctx
            .patterns
            .iter()
            .flatten()
            .map(|s| sa.phi(s))
            .collect(),
    };
    let mut out = CheckOutcome::new(CheckMode::ExhaustiveBasis);
    for (p, pattern) in ctx.patterns.iter().enumerate() {
        for (i, a) in pattern.iter().enumerate() {
            out.hit();
            let image = sa.vectorize(&sa.phi(a));
            let scale = vec_norm(&image).max(1.0);
            let right: Vec<Vec<Complex64>> = family
                .iter()
                .map(|x| sa.vectorize(&sa.mul(a, x)))
                .collect();
            let left: Vec<Vec<Complex64>> = family
                .iter()
                .map(|x| sa.vectorize(&sa.mul(x, a)))
                .collect();
            let right_span = Subspace::span(ctx.dim, &right, tol);
            let left_span = Subspace::span(ctx.dim, &left, tol);
            let dev = right_span.residual(&image).max(left_span.residual(&image));
            out.observe(dev, tol.allowance(scale), || {
                format!("phi(a) escapes a·{part} ∩ {part}·a for basis {i} of pattern {p}")
            });
        }
    }
    out
}

/// Is `phi[S]` diagonal: do `a·d, d, d·b ∈ phi[S]` force `a·d·b ∈ phi[S]`?
///
/// Hypothesis triples are manufactured by drawing `d` from `phi[S]` and
/// sampling `a`, `b` from the solution spaces of the two linear membership
/// constraints.
pub fn check_diagonal<T: Structured>(
    sa: &T,
    tol: &Tolerance,
    samples: usize,
    seed: u64,
) -> CheckOutcome {
    let ctx = Context::new(sa, tol);
    let target = &ctx.phi_s_span;
    let mut out = CheckOutcome::new(CheckMode::Sampled { samples, seed });
    let mut rng = SeededRng::new(seed);
    // A spanning family of phi[S] to draw d from.
    let d_family: Vec<T::Elem> = ctx
        .patterns
        .iter()
        .flatten()
        .map(|s| sa.phi(s))
        .collect();
    if d_family.is_empty() {
        return out;
    }
    for k in 0..samples {
        let coeffs: Vec<Complex64> = d_family.iter().map(|_| rng.complex(1.0)).collect();
        let d = sa.combine(&coeffs, &d_family);
        // a with a·d ∈ phi[S]: solve on the full algebra.
        let right_cols: Vec<Vec<Complex64>> = ctx
            .basis
            .iter()
            .map(|e| sa.vectorize(&sa.mul(e, &d)))
            .collect();
        let op_right = ComplexMatrix::from_fn(ctx.dim, right_cols.len(), |i, j| right_cols[j][i]);
        let left_cols: Vec<Vec<Complex64>> = ctx
            .basis
            .iter()
            .map(|e| sa.vectorize(&sa.mul(&d, e)))
            .collect();
        let op_left = ComplexMatrix::from_fn(ctx.dim, left_cols.len(), |i, j| left_cols[j][i]);
        let a_kernel = kernel_into(&op_right, target, tol);
        let b_kernel = kernel_into(&op_left, target, tol);
        if a_kernel.is_empty() || b_kernel.is_empty() {
            continue;
        }
        let pick = |kernel: &[Vec<Complex64>], rng: &mut SeededRng| {
            let mix: Vec<Complex64> = kernel.iter().map(|_| rng.complex(1.0)).collect();
            let mut coords = vec![Complex64::new(0.0, 0.0); ctx.dim];
            for (m, v) in mix.iter().zip(kernel) {
                for (c, x) in coords.iter_mut().zip(v) {
                    *c += m * x;
                }
            }
            coords
        };
        let a = sa.combine(&pick(&a_kernel, &mut rng), &ctx.basis);
        let b = sa.combine(&pick(&b_kernel, &mut rng), &ctx.basis);
        // Confirm the hypothesis numerically before counting the instance.
        let ad = sa.vectorize(&sa.mul(&a, &d));
        let db = sa.vectorize(&sa.mul(&d, &b));
        let hypothesis_ok = target.residual(&ad) <= tol.allowance(vec_norm(&ad).max(1.0))
            && target.residual(&db) <= tol.allowance(vec_norm(&db).max(1.0));
        if !hypothesis_ok {
            continue;
        }
        out.hit();
        let adb = sa.mul(&a, &sa.mul(&d, &b));
        let v = sa.vectorize(&adb);
        out.observe(
            target.residual(&v),
            tol.allowance(vec_norm(&v).max(1.0)),
            || format!("sampled triple {k}: a·d·b escapes phi[S]"),
        );
    }
    out
}

/// Kadison's inequality `phi(a*)·phi(a) ≤ phi(a*·a)` for one element.
pub fn kadison<T: Structured>(
    sa: &T,
    a: &T::Elem,
    tol: &Tolerance,
) -> Result<bool, StructuredError> {
    let lhs = sa.mul(&sa.phi(&sa.star(a)), &sa.phi(a));
    let rhs = sa.phi(&sa.mul(&sa.star(a), a));
    Ok(psd_leq(&sa.represent(&lhs), &sa.represent(&rhs), tol)?)
}

/// The n-fold Kadison inequality
/// `Σ_k phi(a*·u_k*)·phi(u_k·a) ≤ phi(a*·a)`.
///
/// Requires every `u_k` in the unit ball and `phi(u_j·u_k*) = 0` for
/// `j ≠ k`; offending entries are listed in the error.
pub fn n_kadison<T: Structured>(
    sa: &T,
    a: &T::Elem,
    us: &[T::Elem],
    tol: &Tolerance,
) -> Result<bool, StructuredError> {
    let mut violations = Vec::new();
    for (k, u) in us.iter().enumerate() {
        let n = sa.norm(u);
        if n > 1.0 + tol.allowance(1.0) {
            violations.push(format!("|u[{k}]| = {n:.6} exceeds the unit ball"));
        }
    }
    for (j, uj) in us.iter().enumerate() {
        for (k, uk) in us.iter().enumerate() {
            if j == k {
                continue;
            }
            let cross = sa.phi(&sa.mul(uj, &sa.star(uk)));
            let n = sa.norm(&cross);
            if n > tol.allowance(sa.norm(uj) * sa.norm(uk)) {
                violations.push(format!("phi(u[{j}]·u[{k}]*) has norm {n:.3e}, not zero"));
            }
        }
    }
    if !violations.is_empty() {
        return Err(StructuredError::PreconditionViolated { violations });
    }
    let a_star = sa.star(a);
    let mut sum = sa.zero();
    for u in us {
        let term = sa.mul(
            &sa.phi(&sa.mul(&a_star, &sa.star(u))),
            &sa.phi(&sa.mul(u, a)),
        );
        sum = sa.add(&sum, &term);
    }
    let rhs = sa.phi(&sa.mul(&a_star, a));
    Ok(psd_leq(&sa.represent(&sum), &sa.represent(&rhs), tol)?)
}

/// Evidence for the cone coincidence `phi[S]₊ = S₊ = S ∩ A₊`, gathered from
/// seeded *-squares on both sides.
pub fn check_positive_cones<T: Structured>(
    sa: &T,
    tol: &Tolerance,
    samples: usize,
    seed: u64,
) -> CheckOutcome {
    let ctx = Context::new(sa, tol);
    let mut rng = SeededRng::new(seed);
    let mut out = CheckOutcome::new(CheckMode::Sampled { samples, seed });
    let d_family: Vec<T::Elem> = ctx
        .patterns
        .iter()
        .flatten()
        .map(|s| sa.phi(s))
        .collect();
    for k in 0..samples {
        // Positives of S land in phi[S].
        let (p, t) = random_pattern_element(sa, &mut rng);
        let x = sa.mul(&sa.star(&t), &t);
        let v = sa.vectorize(&x);
        out.hit();
        out.observe(
            ctx.phi_s_span.residual(&v),
            tol.allowance(vec_norm(&v).max(1.0)),
            || format!("sample {k}: t*t from pattern {p} escapes phi[S]"),
        );
        // Positives of phi[S] land back in S.
        if !d_family.is_empty() {
            let coeffs: Vec<Complex64> = d_family.iter().map(|_| rng.complex(1.0)).collect();
            let d = sa.combine(&coeffs, &d_family);
            let y = sa.mul(&sa.star(&d), &d);
            let w = sa.vectorize(&y);
            out.hit();
            out.observe(
                ctx.s_residual(&y),
                tol.allowance(vec_norm(&w).max(1.0)),
                || format!("sample {k}: d*d from phi[S] escapes S"),
            );
        }
    }
    out
}

/// Is the expectation faithful: does `phi(a*·a) = 0` force `a = 0`?
///
/// Checked over the full basis together with seeded random elements by
/// comparing the two sides of the implication quantitatively: a nonzero `a`
/// with a vanishing `phi(a*a)` is a counterexample.
pub fn check_faithful<T: Structured>(
    sa: &T,
    tol: &Tolerance,
    samples: usize,
    seed: u64,
) -> CheckOutcome {
    let mut out = CheckOutcome::new(CheckMode::Sampled { samples, seed });
    let mut rng = SeededRng::new(seed);
    let mut candidates: Vec<(String, T::Elem)> = sa
        .basis()
        .into_iter()
        .enumerate()
        .map(|(i, e)| (format!("basis element {i}"), e))
        .collect();
    for k in 0..samples {
        candidates.push((format!("sample {k}"), random_element(sa, &mut rng)));
    }
    for (label, a) in candidates {
        let image = sa.phi(&sa.mul(&sa.star(&a), &a));
        let elem_norm = sa.norm(&a);
        if sa.norm(&image) <= tol.allowance(elem_norm * elem_norm) {
            out.hit();
            out.observe(elem_norm, tol.allowance(1.0), || {
                format!("{label}: phi(a*a) = 0 but |a| = {elem_norm:.3e}")
            });
        }
    }
    out
}

fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// An abstract structured C*-algebra: a block-diagonal matrix *-algebra with
/// pattern subspaces, a projection-spanned centre, and an expectation given
/// by its images on the standard matrix-unit basis.
#[derive(Debug, Clone)]
pub struct MatrixStructured {
    blocks: Vec<usize>,
    patterns: Vec<Vec<BlockElement>>,
    z: Vec<BlockElement>,
    phi_images: Vec<BlockElement>,
}

/// One element of a block-diagonal algebra: one matrix per block.
pub type BlockElement = Vec<ComplexMatrix>;

impl MatrixStructured {
    pub fn new(
        blocks: Vec<usize>,
        patterns: Vec<Vec<BlockElement>>,
        z: Vec<BlockElement>,
        phi_images: Vec<BlockElement>,
    ) -> Result<Self, StructuredError> {
        if blocks.is_empty() || blocks.iter().any(|&n| n == 0) {
            return Err(StructuredError::InvalidData {
                reason: "block sizes must be nonempty and positive".into(),
            });
        }
        let dim: usize = blocks.iter().map(|n| n * n).sum();
        if phi_images.len() != dim {
            return Err(StructuredError::InvalidData {
                reason: format!(
                    "expectation needs one image per basis element: got {} for dimension {dim}",
                    phi_images.len()
                ),
            });
        }
        let shape_ok = |e: &BlockElement| {
            e.len() == blocks.len()
                && e.iter()
                    .zip(&blocks)
                    .all(|(m, &n)| m.rows() == n && m.cols() == n)
        };
        for (p, pattern) in patterns.iter().enumerate() {
            if pattern.iter().any(|e| !shape_ok(e)) {
                return Err(StructuredError::InvalidData {
                    reason: format!("pattern {p} contains an element of the wrong block shape"),
                });
            }
        }
        if z.iter().any(|e| !shape_ok(e)) {
            return Err(StructuredError::InvalidData {
                reason: "a Z element has the wrong block shape".into(),
            });
        }
        if phi_images.iter().any(|e| !shape_ok(e)) {
            return Err(StructuredError::InvalidData {
                reason: "an expectation image has the wrong block shape".into(),
            });
        }
        Ok(Self {
            blocks,
            patterns,
            z,
            phi_images,
        })
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    /// Replace the expectation; used to build deliberately corrupted
    /// fixtures for the negative property tests.
    pub fn with_phi_images(mut self, phi_images: Vec<BlockElement>) -> Self {
        assert_eq!(
            phi_images.len(),
            Structured::dim(&self),
            "expectation image count mismatch"
        );
        self.phi_images = phi_images;
        self
    }

    /// Replace the pattern family.
    pub fn with_patterns(mut self, patterns: Vec<Vec<BlockElement>>) -> Self {
        self.patterns = patterns;
        self
    }

    /// The Cartan pair (Mₙ, Dₙ): one n×n block, patterns spanned by the
    /// permutation supports (the normalizers of the diagonal), centre the
    /// diagonal projections, expectation the diagonal mask.
    ///
    /// The pattern count is n!, so this is meant for small n.
    pub fn cartan(n: usize) -> Self {
        assert!(n >= 1, "cartan pair needs a positive size");
        let unit = |i: usize, j: usize| -> BlockElement {
            let mut m = ComplexMatrix::zeros(n, n);
            m.set(i, j, Complex64::new(1.0, 0.0));
            vec![m]
        };
        let patterns: Vec<Vec<BlockElement>> = permutations(n)
            .into_iter()
            .map(|perm| (0..n).map(|j| unit(perm[j], j)).collect())
            .collect();
        let z: Vec<BlockElement> = (0..n).map(|i| unit(i, i)).collect();
        let mut phi_images = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                phi_images.push(if i == j {
                    unit(i, i)
                } else {
                    vec![ComplexMatrix::zeros(n, n)]
                });
            }
        }
        Self::new(vec![n], patterns, z, phi_images).expect("cartan data is well formed")
    }

    /// Two scalar blocks with the expectation projecting onto the first and
    /// the second block structurally invisible: passes every axiom but the
    /// expectation is not faithful.
    pub fn unfaithful_pair() -> Self {
        let e0: BlockElement = vec![
            ComplexMatrix::identity(1),
            ComplexMatrix::zeros(1, 1),
        ];
        let zero: BlockElement = vec![ComplexMatrix::zeros(1, 1), ComplexMatrix::zeros(1, 1)];
        Self::new(
            vec![1, 1],
            vec![vec![e0.clone()]],
            vec![e0.clone()],
            vec![e0, zero],
        )
        .expect("fixture data is well formed")
    }
}

/// All permutations of {0, …, n−1} in lexicographic generation order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn rec(n: usize, current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if current.len() == n {
            out.push(current.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                current.push(i);
                rec(n, current, used, out);
                current.pop();
                used[i] = false;
            }
        }
    }
    rec(n, &mut current, &mut used, &mut out);
    out
}

impl Structured for MatrixStructured {
    type Elem = BlockElement;

    fn dim(&self) -> usize {
        self.blocks.iter().map(|n| n * n).sum()
    }

    fn basis(&self) -> Vec<BlockElement> {
        let mut out = Vec::with_capacity(self.dim());
        for (b, &n) in self.blocks.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    let mut elem: BlockElement = self
                        .blocks
                        .iter()
                        .map(|&m| ComplexMatrix::zeros(m, m))
                        .collect();
                    elem[b].set(i, j, Complex64::new(1.0, 0.0));
                    out.push(elem);
                }
            }
        }
        out
    }

    fn pattern_bases(&self) -> Vec<Vec<BlockElement>> {
        self.patterns.clone()
    }

    fn z_basis(&self) -> Vec<BlockElement> {
        self.z.clone()
    }

    fn phi(&self, a: &BlockElement) -> BlockElement {
        let coords = self.vectorize(a);
        let mut acc: BlockElement = self
            .blocks
            .iter()
            .map(|&m| ComplexMatrix::zeros(m, m))
            .collect();
        for (c, image) in coords.iter().zip(&self.phi_images) {
            if c.norm_sqr() == 0.0 {
                continue;
            }
            for (a_blk, i_blk) in acc.iter_mut().zip(image) {
                *a_blk = a_blk.add(&i_blk.scale(*c));
            }
        }
        acc
    }

    fn add(&self, a: &BlockElement, b: &BlockElement) -> BlockElement {
        a.iter().zip(b).map(|(x, y)| x.add(y)).collect()
    }

    fn scale(&self, z: Complex64, a: &BlockElement) -> BlockElement {
        a.iter().map(|x| x.scale(z)).collect()
    }

    fn mul(&self, a: &BlockElement, b: &BlockElement) -> BlockElement {
        a.iter().zip(b).map(|(x, y)| x.mul(y)).collect()
    }

    fn star(&self, a: &BlockElement) -> BlockElement {
        a.iter().map(ComplexMatrix::adjoint).collect()
    }

    fn norm(&self, a: &BlockElement) -> f64 {
        a.iter()
            .map(crate::numeric::op_norm)
            .fold(0.0f64, f64::max)
    }

    fn represent(&self, a: &BlockElement) -> ComplexMatrix {
        ComplexMatrix::block_diag(a)
    }

    fn vectorize(&self, a: &BlockElement) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.dim());
        for m in a {
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    out.push(m.get(i, j));
                }
            }
        }
        out
    }

    fn zero(&self) -> BlockElement {
        self.blocks
            .iter()
            .map(|&n| ComplexMatrix::zeros(n, n))
            .collect()
    }

    fn one(&self) -> BlockElement {
        self.blocks
            .iter()
            .map(|&n| ComplexMatrix::identity(n))
            .collect()
    }

    fn spectral(
        &self,
        f: SpectralFn,
        a: &BlockElement,
        tol: &Tolerance,
    ) -> Result<BlockElement, StructuredError> {
        a.iter()
            .map(|m| crate::numeric::apply_spectral(f, m, tol).map_err(StructuredError::from))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn unit2(i: usize, j: usize) -> BlockElement {
        let mut m = ComplexMatrix::zeros(2, 2);
        m.set(i, j, Complex64::new(1.0, 0.0));
        vec![m]
    }

    #[test]
    fn cartan_axioms_pass() {
        for n in [2, 3] {
            let sa = MatrixStructured::cartan(n);
            let report = validate_axioms(&sa, &tol());
            assert!(
                report.passed(),
                "cartan({n}) failed: {:?}",
                report.failures()
            );
        }
    }

    #[test]
    fn unfaithful_pair_axioms_pass_but_phi_not_faithful() {
        let sa = MatrixStructured::unfaithful_pair();
        let report = validate_axioms(&sa, &tol());
        assert!(report.passed(), "failed: {:?}", report.failures());
        let faithful = check_faithful(&sa, &tol(), 16, 7);
        assert!(faithful.is_conclusive());
        assert!(!faithful.holds);
        assert!(faithful.counterexample.is_some());
    }

    #[test]
    fn cartan_is_faithful() {
        let outcome = check_faithful(&MatrixStructured::cartan(2), &tol(), 32, 7);
        assert!(outcome.holds);
    }

    #[test]
    fn dropping_z_from_s_fails_exactly_the_inclusion_axiom() {
        // Patterns reduced to the span of E00 leave Z = D2 outside S while
        // every other axiom still holds.
        let sa = MatrixStructured::cartan(2).with_patterns(vec![vec![unit2(0, 0)]]);
        let report = validate_axioms(&sa, &tol());
        assert_eq!(report.failures(), vec!["Z inside S"]);
    }

    #[test]
    fn cartan_properties_all_hold() {
        let sa = MatrixStructured::cartan(2);
        let report = property_report(&sa, &tol(), 64, 0x11);
        for (name, outcome) in report.entries() {
            assert!(outcome.holds, "{name} failed: {:?}", outcome.counterexample);
            assert!(outcome.is_conclusive(), "{name} was vacuous");
        }
        assert!(report.well_structured());
    }

    #[test]
    fn normal_matches_shiftable_on_fixtures() {
        let fixtures = vec![
            MatrixStructured::cartan(2),
            MatrixStructured::cartan(3),
            MatrixStructured::unfaithful_pair(),
        ];
        for sa in &fixtures {
            let n = check_normal(sa, &tol(), 64, 3);
            let s = check_shiftable(sa, &tol(), 64, 3);
            assert_eq!(n.holds, s.holds);
        }
    }

    #[test]
    fn corrupted_expectation_fails_normality_with_counterexample() {
        // Projection onto span{E00, E01}: idempotent but not an expectation.
        let zero = vec![ComplexMatrix::zeros(2, 2)];
        let sa = MatrixStructured::cartan(2).with_phi_images(vec![
            unit2(0, 0),
            unit2(0, 1),
            zero.clone(),
            zero,
        ]);
        let outcome = check_normal(&sa, &tol(), 64, 5);
        assert!(!outcome.holds);
        assert!(outcome.counterexample.is_some());
        let shiftable = check_shiftable(&sa, &tol(), 64, 5);
        assert_eq!(outcome.holds, shiftable.holds);
    }

    #[test]
    fn bistable_ball_agrees_with_bistable_z() {
        let sa = MatrixStructured::cartan(2);
        let plain = check_bistable(&sa, CentralPart::Z, &tol(), 64, 9);
        let ball = check_bistable_positive_ball(&sa, &tol(), 256, 9);
        assert!(plain.is_conclusive());
        assert!(ball.is_conclusive(), "no positive-ball hypotheses found");
        assert_eq!(plain.holds, ball.holds);
    }

    #[test]
    fn productive_implies_bistable() {
        let fixtures = vec![
            MatrixStructured::cartan(2),
            MatrixStructured::cartan(3),
            MatrixStructured::unfaithful_pair(),
        ];
        for sa in &fixtures {
            let productive = check_productive(sa, CentralPart::Z, &tol());
            if productive.holds {
                assert!(check_bistable(sa, CentralPart::Z, &tol(), 64, 2).holds);
                assert!(check_bistable(sa, CentralPart::PhiS, &tol(), 64, 2).holds);
            }
        }
    }

    #[test]
    fn positive_cones_coincide_on_cartan() {
        let outcome = check_positive_cones(&MatrixStructured::cartan(2), &tol(), 64, 4);
        assert!(outcome.holds, "{:?}", outcome.counterexample);
        assert!(outcome.is_conclusive());
    }

    #[test]
    fn kadison_on_the_all_ones_matrix() {
        let sa = MatrixStructured::cartan(2);
        let ones = vec![ComplexMatrix::from_fn(2, 2, |_, _| Complex64::new(1.0, 0.0))];
        assert!(kadison(&sa, &ones, &tol()).unwrap());
        assert!(kadison(&sa, &sa.zero(), &tol()).unwrap());
    }

    #[test]
    fn n_kadison_with_orthogonal_shifts() {
        let sa = MatrixStructured::cartan(2);
        let ones = vec![ComplexMatrix::from_fn(2, 2, |_, _| Complex64::new(1.0, 0.0))];
        let us = vec![unit2(0, 1), unit2(1, 0)];
        assert!(n_kadison(&sa, &ones, &us, &tol()).unwrap());
    }

    #[test]
    fn n_kadison_rejects_overlapping_shifts() {
        let sa = MatrixStructured::cartan(2);
        let ones = vec![ComplexMatrix::from_fn(2, 2, |_, _| Complex64::new(1.0, 0.0))];
        let us = vec![unit2(0, 1), unit2(0, 1)];
        let err = n_kadison(&sa, &ones, &us, &tol()).unwrap_err();
        match err {
            StructuredError::PreconditionViolated { violations } => {
                assert!(violations.iter().any(|v| v.contains("phi(u[0]·u[1]*)")));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn n_kadison_rejects_oversized_shifts() {
        let sa = MatrixStructured::cartan(2);
        let a = vec![ComplexMatrix::identity(2)];
        let us = vec![unit2(0, 1).iter().map(|m| m.scale(Complex64::new(3.0, 0.0))).collect()];
        let err = n_kadison(&sa, &a, &us, &tol()).unwrap_err();
        assert!(matches!(err, StructuredError::PreconditionViolated { .. }));
    }

    #[test]
    fn diagonal_check_finds_hypotheses_on_cartan() {
        let outcome = check_diagonal(&MatrixStructured::cartan(2), &tol(), 64, 21);
        assert!(outcome.is_conclusive());
        assert!(outcome.holds, "{:?}", outcome.counterexample);
    }

    #[test]
    fn spectral_calculus_acts_blockwise() {
        let sa = MatrixStructured::cartan(2);
        let diag = vec![ComplexMatrix::real_diag(&[4.0, 9.0])];
        let root = sa.spectral(SpectralFn::Sqrt, &diag, &tol()).unwrap();
        assert!(root[0].approx_eq(&ComplexMatrix::real_diag(&[2.0, 3.0]), 1e-9));
    }

    #[test]
    fn random_pattern_elements_stay_in_their_pattern() {
        let sa = MatrixStructured::cartan(3);
        let mut rng = SeededRng::new(42);
        let tol = tol();
        let ctx_patterns = sa.pattern_bases();
        for _ in 0..16 {
            let (p, elem) = random_pattern_element(&sa, &mut rng);
            let vecs: Vec<Vec<Complex64>> = ctx_patterns[p]
                .iter()
                .map(|e| sa.vectorize(e))
                .collect();
            let span = Subspace::span(sa.dim(), &vecs, &tol);
            assert!(span.contains(&sa.vectorize(&elem), &tol));
        }
    }
}
