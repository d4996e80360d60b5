//! Morphisms between bundles and between their section algebras, the maps
//! they induce in each direction, and the finite-scale checks that the two
//! directions invert one another.
//!
//! A bundle morphism consists of a base map — a star-bijective functor from a
//! subgroupoid of the target's base back into the source's base — plus a
//! linear map of each pulled-back fibre into the target fibre sitting over
//! the same arrow.  Such a morphism induces a map of section algebras
//! (pull back, then push through the fibre maps), and a structure-preserving
//! algebra map conversely induces a backward map of ultrafilters together
//! with fibrewise maps of the quotients.  [`verify_adjunction`] measures, on
//! concrete instances, how exactly these two constructions undo each other.

use std::sync::Arc;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use thiserror::Error;

use crate::bundle::{coricality, same_bundle, BundleError, FellBundle};
use crate::domination::Domination;
use crate::groupoid::{
    is_star_bijective, restrict, same_groupoid, FiniteGroupoid, GroupoidError, GroupoidFunctor,
    TwoCocycle,
};
use crate::numeric::{kernel_into, ComplexMatrix, Subspace, Tolerance};
use crate::rng::SeededRng;
use crate::sections::{extract_structured, Section, SectionError, StructuredView};
use crate::structured::{random_element, Structured};
use crate::weyl::{indicator_test_set, WeylEngine, WeylError};

/// Largest residual [`verify_adjunction`] accepts before declaring a check
/// failed.
pub const ADJUNCTION_RESIDUAL_BOUND: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum FunctorError {
    #[error("base map is not star-bijective: {context}")]
    NotStarBijective { context: String },
    #[error("morphism data is inconsistent: {reason}")]
    InvalidMorphism { reason: String },
    #[error("morphisms do not compose: {context}")]
    NotComposable { context: String },
    #[error("fibre maps do not preserve the identity over unit arrow {unit}")]
    NotUnital { unit: usize },
    #[error("bundle is not corical over arrows {arrows:?}")]
    NotCorical { arrows: Vec<usize> },
    #[error("algebra is not well structured: {reason}")]
    NotWellStructured { reason: String },
    #[error("no ultrafilter of the target pulls back into the source: {context}")]
    EmptyDomain { context: String },
    #[error(transparent)]
    Groupoid(#[from] GroupoidError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Section(#[from] SectionError),
    #[error(transparent)]
    Weyl(#[from] WeylError),
}

/// Row-major coordinates of a fibre value.
fn fiber_to_vec(m: &ComplexMatrix) -> Vec<Complex64> {
    let mut v = Vec::with_capacity(m.rows() * m.cols());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            v.push(m.get(i, j));
        }
    }
    v
}

fn fiber_from_vec(v: &[Complex64], rows: usize, cols: usize) -> ComplexMatrix {
    assert_eq!(v.len(), rows * cols, "coordinate vector has wrong length");
    ComplexMatrix::from_fn(rows, cols, |i, j| v[i * cols + j])
}

fn apply_matrix(map: &ComplexMatrix, v: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(map.cols(), v.len(), "coefficient vector has wrong length");
    (0..map.rows())
        .map(|i| (0..v.len()).map(|j| map.get(i, j) * v[j]).sum())
        .collect()
}

/// Run a fibre map (a matrix on row-major coordinates) on a fibre value.
fn apply_fiber_map(
    map: &ComplexMatrix,
    x: &ComplexMatrix,
    rows: usize,
    cols: usize,
) -> ComplexMatrix {
    fiber_from_vec(&apply_matrix(map, &fiber_to_vec(x)), rows, cols)
}

fn basis_matrix(rows: usize, cols: usize, i: usize, j: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(rows, cols);
    m.set(i, j, Complex64::new(1.0, 0.0));
    m
}

/// A partial map of groupoid bases: a functor from a subgroupoid of
/// `ambient` into `codomain` that restricts to a bijection on every star.
/// This is exactly the base-level shape a bundle morphism may sit over.
#[derive(Clone)]
pub struct BaseMap {
    ambient: Arc<FiniteGroupoid>,
    codomain: Arc<FiniteGroupoid>,
    /// Arrows of `ambient` forming the domain, ascending.
    domain: Vec<usize>,
    /// Image in `codomain` of each domain arrow, aligned with `domain`.
    image: Vec<usize>,
    /// The domain re-indexed as a groupoid of its own (arrow `k` is
    /// `domain[k]`).
    local: Arc<FiniteGroupoid>,
    functor: GroupoidFunctor,
}

impl BaseMap {
    /// Validates that `domain` is a subgroupoid of `ambient`, that
    /// `domain[k] -> image[k]` defines a functor into `codomain`, and that
    /// the functor maps every star bijectively onto its image star.
    pub fn new(
        ambient: Arc<FiniteGroupoid>,
        codomain: Arc<FiniteGroupoid>,
        domain: Vec<usize>,
        image: Vec<usize>,
    ) -> Result<Self, FunctorError> {
        if domain.len() != image.len() {
            return Err(FunctorError::InvalidMorphism {
                reason: format!(
                    "domain lists {} arrows but {} images",
                    domain.len(),
                    image.len()
                ),
            });
        }
        let mut pairs: Vec<(usize, usize)> = domain.into_iter().zip(image).collect();
        pairs.sort_unstable();
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(FunctorError::InvalidMorphism {
                reason: "the domain lists an arrow twice".into(),
            });
        }
        if let Some(&(gamma, _)) = pairs.iter().find(|&&(gamma, _)| gamma >= ambient.len()) {
            return Err(FunctorError::InvalidMorphism {
                reason: format!("domain arrow {gamma} is outside the ambient groupoid"),
            });
        }
        if let Some(&(_, img)) = pairs.iter().find(|&&(_, img)| img >= codomain.len()) {
            return Err(FunctorError::InvalidMorphism {
                reason: format!("image arrow {img} is outside the codomain"),
            });
        }
        let domain: Vec<usize> = pairs.iter().map(|&(d, _)| d).collect();
        let image: Vec<usize> = pairs.iter().map(|&(_, i)| i).collect();
        let (local, _inclusion) = restrict(&ambient, &domain)?;
        let functor =
            GroupoidFunctor::new(Arc::clone(&local), Arc::clone(&codomain), image.clone());
        functor.validate()?;
        if !is_star_bijective(&functor)? {
            return Err(FunctorError::NotStarBijective {
                context: "a star of the domain does not map bijectively onto its image star"
                    .into(),
            });
        }
        Ok(Self {
            ambient,
            codomain,
            domain,
            image,
            local,
            functor,
        })
    }

    /// The identity map of a groupoid onto itself.
    pub fn identity(g: &Arc<FiniteGroupoid>) -> Result<Self, FunctorError> {
        Self::new(
            Arc::clone(g),
            Arc::clone(g),
            (0..g.len()).collect(),
            (0..g.len()).collect(),
        )
    }

    pub fn ambient(&self) -> &Arc<FiniteGroupoid> {
        &self.ambient
    }

    pub fn codomain(&self) -> &Arc<FiniteGroupoid> {
        &self.codomain
    }

    pub fn domain(&self) -> &[usize] {
        &self.domain
    }

    pub fn image(&self) -> &[usize] {
        &self.image
    }

    pub fn local(&self) -> &Arc<FiniteGroupoid> {
        &self.local
    }

    pub fn functor(&self) -> &GroupoidFunctor {
        &self.functor
    }

    /// Position of an ambient arrow inside the domain, if it belongs to it.
    pub fn position(&self, gamma: usize) -> Option<usize> {
        self.domain.binary_search(&gamma).ok()
    }

    /// Image of an ambient arrow, when it lies in the domain.
    pub fn apply(&self, gamma: usize) -> Option<usize> {
        self.position(gamma).map(|k| self.image[k])
    }
}

/// The bundle induced on a base map's domain: the fibre over each domain
/// arrow is copied from the source fibre at its image, and the twist is
/// pulled back along the map.  Arrows are re-indexed by their position in
/// the domain.
pub fn pullback_bundle(
    rho: &Arc<FellBundle>,
    base: &BaseMap,
) -> Result<Arc<FellBundle>, FunctorError> {
    if !same_groupoid(base.codomain(), rho.base()) {
        return Err(FunctorError::InvalidMorphism {
            reason: "the base map does not land in the bundle's base groupoid".into(),
        });
    }
    let local = base.local();
    let dims: Vec<usize> = local
        .units()
        .iter()
        .map(|&u| rho.dim_at_unit(base.image()[u]))
        .collect();
    let mut twist = TwoCocycle::trivial(local);
    for (a, b) in local.composable_pairs() {
        twist.set(a, b, rho.twist().get(base.image()[a], base.image()[b]));
    }
    Ok(Arc::new(FellBundle::new(
        Arc::clone(local),
        dims,
        twist,
    )?))
}

/// A morphism of bundles: a base map from a subgroupoid of the target's base
/// into the source's base, plus one linear fibre map per domain arrow
/// sending the pulled-back fibre (the source fibre at the arrow's image)
/// into the target fibre.
///
/// Construction checks only shapes and the base-map axioms; the algebraic
/// identities of the fibre maps are measured by [`FellMorphism::validate`].
#[derive(Clone)]
pub struct FellMorphism {
    source: Arc<FellBundle>,
    target: Arc<FellBundle>,
    base: BaseMap,
    /// `beta[k]` maps row-major coordinates of the source fibre at
    /// `image[k]` to those of the target fibre at `domain[k]`.
    beta: Vec<ComplexMatrix>,
    pullback: Arc<FellBundle>,
}

impl FellMorphism {
    pub fn new(
        source: Arc<FellBundle>,
        target: Arc<FellBundle>,
        base: BaseMap,
        beta: Vec<ComplexMatrix>,
    ) -> Result<Self, FunctorError> {
        if !same_groupoid(base.ambient(), target.base()) {
            return Err(FunctorError::InvalidMorphism {
                reason: "the base map does not start from the target's base groupoid".into(),
            });
        }
        if !same_groupoid(base.codomain(), source.base()) {
            return Err(FunctorError::InvalidMorphism {
                reason: "the base map does not land in the source's base groupoid".into(),
            });
        }
        if beta.len() != base.domain().len() {
            return Err(FunctorError::InvalidMorphism {
                reason: format!(
                    "{} fibre maps supplied for {} domain arrows",
                    beta.len(),
                    base.domain().len()
                ),
            });
        }
        for (k, b) in beta.iter().enumerate() {
            let (tr, tc) = target.fiber_shape(base.domain()[k]);
            let (sr, sc) = source.fiber_shape(base.image()[k]);
            if b.rows() != tr * tc || b.cols() != sr * sc {
                return Err(FunctorError::InvalidMorphism {
                    reason: format!(
                        "fibre map over arrow {} is {}x{}, expected {}x{}",
                        base.domain()[k],
                        b.rows(),
                        b.cols(),
                        tr * tc,
                        sr * sc
                    ),
                });
            }
        }
        let pullback = pullback_bundle(&source, &base)?;
        Ok(Self {
            source,
            target,
            base,
            beta,
            pullback,
        })
    }

    /// The identity morphism of a bundle.
    pub fn identity(fb: &Arc<FellBundle>) -> Result<Self, FunctorError> {
        let base = BaseMap::identity(fb.base())?;
        let beta = (0..fb.base().len())
            .map(|gamma| {
                let (r, c) = fb.fiber_shape(gamma);
                ComplexMatrix::identity(r * c)
            })
            .collect();
        Self::new(Arc::clone(fb), Arc::clone(fb), base, beta)
    }

    pub fn source(&self) -> &Arc<FellBundle> {
        &self.source
    }

    pub fn target(&self) -> &Arc<FellBundle> {
        &self.target
    }

    pub fn base(&self) -> &BaseMap {
        &self.base
    }

    pub fn beta(&self) -> &[ComplexMatrix] {
        &self.beta
    }

    /// The pullback of the source bundle along the base map, which the fibre
    /// maps start from.
    pub fn pullback(&self) -> &Arc<FellBundle> {
        &self.pullback
    }

    pub fn domain(&self) -> &[usize] {
        self.base.domain()
    }

    pub fn image(&self) -> &[usize] {
        self.base.image()
    }

    /// Check the fibre-map identities on fibre bases: stars are intertwined
    /// and pulled-back products (source values multiplied under the source
    /// twist) land on target products.  Bases suffice — both sides of each
    /// identity are linear or antilinear in each argument.
    pub fn validate(&self, tol: &Tolerance) -> Result<(), FunctorError> {
        let local = self.base.local();
        for k in 0..local.len() {
            let gamma_t = self.base.domain()[k];
            let gamma_s = self.base.image()[k];
            let kinv = local.inverse(k);
            let (sr, sc) = self.source.fiber_shape(gamma_s);
            let (tr, tc) = self.target.fiber_shape(gamma_t);
            let (ir, ic) = self.target.fiber_shape(self.base.domain()[kinv]);
            for e in 0..sr * sc {
                let x = basis_matrix(sr, sc, e / sc, e % sc);
                let lhs = apply_fiber_map(
                    &self.beta[kinv],
                    &self.source.fiber_star(gamma_s, &x),
                    ir,
                    ic,
                );
                let rhs = self
                    .target
                    .fiber_star(gamma_t, &apply_fiber_map(&self.beta[k], &x, tr, tc));
                let residual = lhs.max_abs_diff(&rhs);
                if residual > tol.allowance(1.0 + lhs.max_abs().max(rhs.max_abs())) {
                    return Err(FunctorError::InvalidMorphism {
                        reason: format!(
                            "fibre map over arrow {gamma_t} breaks the star identity \
                             (residual {residual:.3e})"
                        ),
                    });
                }
            }
        }
        for (k, l) in local.composable_pairs() {
            let kl = local.product(k, l).expect("composable pair has a product");
            let (ar, ac) = self.source.fiber_shape(self.base.image()[k]);
            let (br, bc) = self.source.fiber_shape(self.base.image()[l]);
            let (kr, kc) = self.target.fiber_shape(self.base.domain()[k]);
            let (lr, lc) = self.target.fiber_shape(self.base.domain()[l]);
            let (tr, tc) = self.target.fiber_shape(self.base.domain()[kl]);
            for e in 0..ar * ac {
                let x = basis_matrix(ar, ac, e / ac, e % ac);
                let bx = apply_fiber_map(&self.beta[k], &x, kr, kc);
                for f in 0..br * bc {
                    let y = basis_matrix(br, bc, f / bc, f % bc);
                    let pulled = self.source.fiber_product(
                        self.base.image()[k],
                        self.base.image()[l],
                        &x,
                        &y,
                    );
                    let lhs = apply_fiber_map(&self.beta[kl], &pulled, tr, tc);
                    let rhs = self.target.fiber_product(
                        self.base.domain()[k],
                        self.base.domain()[l],
                        &bx,
                        &apply_fiber_map(&self.beta[l], &y, lr, lc),
                    );
                    let residual = lhs.max_abs_diff(&rhs);
                    if residual > tol.allowance(1.0 + lhs.max_abs().max(rhs.max_abs())) {
                        return Err(FunctorError::InvalidMorphism {
                            reason: format!(
                                "fibre maps over arrows ({}, {}) break the product identity \
                                 (residual {residual:.3e})",
                                self.base.domain()[k],
                                self.base.domain()[l]
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Arrow of the first domain unit whose fibre identity is not preserved,
    /// if any.
    pub fn first_non_unital(&self, tol: &Tolerance) -> Option<usize> {
        for &u in self.base.local().units() {
            let gamma_t = self.base.domain()[u];
            let gamma_s = self.base.image()[u];
            let (tr, tc) = self.target.fiber_shape(gamma_t);
            let image = apply_fiber_map(
                &self.beta[u],
                &self.source.unit_fiber_identity(gamma_s),
                tr,
                tc,
            );
            if image.max_abs_diff(&self.target.unit_fiber_identity(gamma_t)) > tol.allowance(1.0)
            {
                return Some(gamma_t);
            }
        }
        None
    }

    pub fn is_unital(&self, tol: &Tolerance) -> bool {
        self.first_non_unital(tol).is_none()
    }

    /// Restrict a section of the source bundle along the base map: the
    /// pulled-back section takes at the domain arrow `k` the source value at
    /// `image[k]`.
    pub fn pull_section(&self, a: &Section) -> Result<Section, FunctorError> {
        if !same_bundle(a.bundle(), &self.source) {
            return Err(FunctorError::InvalidMorphism {
                reason: "the section does not live on the source bundle".into(),
            });
        }
        let mut out = Section::zero(&self.pullback);
        for k in 0..self.base.domain().len() {
            out = out.with_value(k, a.value(self.base.image()[k]).clone());
        }
        Ok(out)
    }

    /// Push a section of the pullback into the target through the fibre
    /// maps; arrows outside the domain carry the zero fibre.
    pub fn push_section(&self, a: &Section) -> Result<Section, FunctorError> {
        if !same_bundle(a.bundle(), &self.pullback) {
            return Err(FunctorError::InvalidMorphism {
                reason: "the section does not live on the pulled-back bundle".into(),
            });
        }
        let mut out = Section::zero(&self.target);
        for k in 0..self.base.domain().len() {
            let gamma_t = self.base.domain()[k];
            let (tr, tc) = self.target.fiber_shape(gamma_t);
            out = out.with_value(gamma_t, apply_fiber_map(&self.beta[k], a.value(k), tr, tc));
        }
        Ok(out)
    }

    /// The induced map on sections of the endpoint bundles: pull back along
    /// the base map, then push through the fibre maps.
    pub fn map_section(&self, a: &Section) -> Result<Section, FunctorError> {
        let pulled = self.pull_section(a)?;
        self.push_section(&pulled)
    }
}

/// Composite of two bundle morphisms.  An arrow of `later`'s target flows
/// first through `later`'s base map and then through `earlier`'s, and the
/// fibre maps compose the other way around.
pub fn compose_fell(
    later: &FellMorphism,
    earlier: &FellMorphism,
) -> Result<FellMorphism, FunctorError> {
    if !same_bundle(&earlier.target, &later.source) {
        return Err(FunctorError::NotComposable {
            context: "the earlier morphism's target is not the later morphism's source".into(),
        });
    }
    let mut domain = Vec::new();
    let mut image = Vec::new();
    let mut beta = Vec::new();
    for k in 0..later.base.domain().len() {
        let mid = later.base.image()[k];
        if let Some(pos) = earlier.base.position(mid) {
            domain.push(later.base.domain()[k]);
            image.push(earlier.base.image()[pos]);
            beta.push(later.beta[k].mul(&earlier.beta[pos]));
        }
    }
    let base = BaseMap::new(
        Arc::clone(later.base.ambient()),
        Arc::clone(earlier.base.codomain()),
        domain,
        image,
    )?;
    FellMorphism::new(
        Arc::clone(&earlier.source),
        Arc::clone(&later.target),
        base,
        beta,
    )
}

/// Two disjoint copies of a bundle, together with the inclusion of the first
/// copy and the fold mapping both copies back down.  These two morphisms,
/// with the identity, exercise every branch of the induced maps: the fold is
/// total, the inclusion leaves the whole second copy outside its domain.
pub fn doubled_bundle(
    fb: &Arc<FellBundle>,
) -> Result<(Arc<FellBundle>, FellMorphism, FellMorphism), FunctorError> {
    let g = fb.base();
    let n = g.len();
    let mut units: Vec<usize> = g.units().to_vec();
    units.extend(g.units().iter().map(|&u| u + n));
    let mut source = Vec::with_capacity(2 * n);
    let mut range = Vec::with_capacity(2 * n);
    let mut inverse = Vec::with_capacity(2 * n);
    for offset in [0, n] {
        for gamma in 0..n {
            source.push(g.source(gamma) + offset);
            range.push(g.range(gamma) + offset);
            inverse.push(g.inverse(gamma) + offset);
        }
    }
    let mut product = Vec::with_capacity(4 * n * n);
    for a in 0..2 * n {
        for b in 0..2 * n {
            product.push(match (a < n, b < n) {
                (true, true) => g.product(a, b),
                (false, false) => g.product(a - n, b - n).map(|c| c + n),
                _ => None,
            });
        }
    }
    let dg = Arc::new(FiniteGroupoid::from_parts(
        units, source, range, inverse, product,
    ));
    let mut dims = fb.dims().to_vec();
    dims.extend_from_slice(fb.dims());
    let mut twist = TwoCocycle::trivial(&dg);
    for (a, b) in g.composable_pairs() {
        let z = fb.twist().get(a, b);
        twist.set(a, b, z);
        twist.set(a + n, b + n, z);
    }
    let double = Arc::new(FellBundle::new(Arc::clone(&dg), dims, twist)?);

    let fiber_identity = |gamma: usize| {
        let (r, c) = fb.fiber_shape(gamma);
        ComplexMatrix::identity(r * c)
    };
    let inc_base = BaseMap::new(
        Arc::clone(&dg),
        Arc::clone(g),
        (0..n).collect(),
        (0..n).collect(),
    )?;
    let inclusion = FellMorphism::new(
        Arc::clone(fb),
        Arc::clone(&double),
        inc_base,
        (0..n).map(fiber_identity).collect(),
    )?;
    let fold_base = BaseMap::new(
        Arc::clone(&dg),
        Arc::clone(g),
        (0..2 * n).collect(),
        (0..2 * n).map(|gamma| gamma % n).collect(),
    )?;
    let fold = FellMorphism::new(
        Arc::clone(fb),
        Arc::clone(&double),
        fold_base,
        (0..2 * n).map(|gamma| fiber_identity(gamma % n)).collect(),
    )?;
    Ok((double, inclusion, fold))
}

/// The morphism collapsing a double back onto the original bundle by
/// restricting to the first copy.
pub fn first_copy_projection(
    fb: &Arc<FellBundle>,
    double: &Arc<FellBundle>,
) -> Result<FellMorphism, FunctorError> {
    let n = fb.base().len();
    let base = BaseMap::new(
        Arc::clone(fb.base()),
        Arc::clone(double.base()),
        (0..n).collect(),
        (0..n).collect(),
    )?;
    let beta = (0..n)
        .map(|gamma| {
            let (r, c) = fb.fiber_shape(gamma);
            ComplexMatrix::identity(r * c)
        })
        .collect();
    FellMorphism::new(Arc::clone(double), Arc::clone(fb), base, beta)
}

/// A linear map between structured algebras, stored as a matrix on the fixed
/// coordinates.  Whether it is actually a structure-preserving
/// *-homomorphism is measured by [`StructuredMorphism::report`]; nothing is
/// inferred silently.
pub struct StructuredMorphism<'a, S: Structured, T: Structured> {
    source: &'a S,
    target: &'a T,
    source_basis: Vec<S::Elem>,
    target_basis: Vec<T::Elem>,
    matrix: ComplexMatrix,
}

/// Worst residuals of the identities a structured morphism must satisfy.
#[derive(Debug, Clone)]
pub struct MorphismReport {
    /// `pi(ab) - pi(a)pi(b)` over basis pairs.
    pub multiplicative: f64,
    /// `pi(a*) - pi(a)*` over the basis.
    pub star: f64,
    /// Distance from images of pattern elements (and random combinations
    /// within each pattern) to the target's normalizer set.
    pub s_preserved: f64,
    /// Residual of images of the central projections against the target's
    /// centre span.
    pub z_preserved: f64,
    /// Mismatch between conditioning then mapping and mapping then
    /// conditioning, over the basis.
    pub phi_intertwined: f64,
    /// Largest element norm encountered while measuring.
    pub scale: f64,
}

impl MorphismReport {
    pub fn residual(&self) -> f64 {
        self.multiplicative
            .max(self.star)
            .max(self.s_preserved)
            .max(self.z_preserved)
            .max(self.phi_intertwined)
    }

    pub fn valid(&self, tol: &Tolerance) -> bool {
        self.residual() <= tol.allowance(self.scale * self.scale.max(1.0))
    }
}

impl<'a, S: Structured, T: Structured> StructuredMorphism<'a, S, T> {
    pub fn new(source: &'a S, target: &'a T, matrix: ComplexMatrix) -> Result<Self, FunctorError> {
        if matrix.rows() != target.dim() || matrix.cols() != source.dim() {
            return Err(FunctorError::InvalidMorphism {
                reason: format!(
                    "map matrix is {}x{} between algebras of dimensions {} and {}",
                    matrix.rows(),
                    matrix.cols(),
                    target.dim(),
                    source.dim()
                ),
            });
        }
        Ok(Self {
            source,
            target,
            source_basis: source.basis(),
            target_basis: target.basis(),
            matrix,
        })
    }

    pub fn source(&self) -> &'a S {
        self.source
    }

    pub fn target(&self) -> &'a T {
        self.target
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn apply(&self, a: &S::Elem) -> T::Elem {
        let w = apply_matrix(&self.matrix, &self.source.vectorize(a));
        self.target.combine(&w, &self.target_basis)
    }

    /// Measure the homomorphism and structure-preservation identities.
    /// Products, stars, the expectation and the centre are (anti)linear in
    /// their arguments, so basis residuals bound the general case; pattern
    /// membership is not linear and is additionally probed on random
    /// combinations within each pattern.
    pub fn report(&self, tol: &Tolerance) -> MorphismReport {
        let images: Vec<T::Elem> = self.source_basis.iter().map(|e| self.apply(e)).collect();
        let mut scale = 1.0f64;
        for (e, pe) in self.source_basis.iter().zip(&images) {
            scale = scale.max(self.source.norm(e)).max(self.target.norm(pe));
        }
        let mut multiplicative = 0.0f64;
        let mut star = 0.0f64;
        let mut phi = 0.0f64;
        for (i, e) in self.source_basis.iter().enumerate() {
            let lhs = self.apply(&self.source.star(e));
            let rhs = self.target.star(&images[i]);
            star = star.max(self.target.norm(&self.target.sub(&lhs, &rhs)));
            let lhs = self.apply(&self.source.phi(e));
            let rhs = self.target.phi(&images[i]);
            phi = phi.max(self.target.norm(&self.target.sub(&lhs, &rhs)));
            for (j, f) in self.source_basis.iter().enumerate() {
                let lhs = self.apply(&self.source.mul(e, f));
                let rhs = self.target.mul(&images[i], &images[j]);
                multiplicative =
                    multiplicative.max(self.target.norm(&self.target.sub(&lhs, &rhs)));
            }
        }
        let dom = Domination::new(self.target, tol);
        let mut s_preserved = 0.0f64;
        let mut rng = SeededRng::new(0x5f3d);
        for pattern in self.source.pattern_bases() {
            for p in &pattern {
                s_preserved = s_preserved.max(dom.s_distance(&self.apply(p)));
            }
            if pattern.len() > 1 {
                for _ in 0..2 {
                    let coeffs: Vec<Complex64> =
                        (0..pattern.len()).map(|_| rng.complex(1.0)).collect();
                    let combo = self.source.combine(&coeffs, &pattern);
                    s_preserved = s_preserved.max(dom.s_distance(&self.apply(&combo)));
                }
            }
        }
        let zvecs: Vec<Vec<Complex64>> = self
            .target
            .z_basis()
            .iter()
            .map(|z| self.target.vectorize(z))
            .collect();
        let zspan = Subspace::span(self.target.dim(), &zvecs, tol);
        let mut z_preserved = 0.0f64;
        for z in self.source.z_basis() {
            z_preserved = z_preserved.max(zspan.residual(&self.target.vectorize(&self.apply(&z))));
        }
        MorphismReport {
            multiplicative,
            star,
            s_preserved,
            z_preserved,
            phi_intertwined: phi,
            scale,
        }
    }
}

impl<'a, S: Structured> StructuredMorphism<'a, S, S> {
    /// The identity map of an algebra.
    pub fn identity_map(sa: &'a S) -> Self {
        Self {
            source: sa,
            target: sa,
            source_basis: sa.basis(),
            target_basis: sa.basis(),
            matrix: ComplexMatrix::identity(sa.dim()),
        }
    }
}

/// Composite of two algebra maps.  The earlier map's target must be the very
/// same algebra instance the later map starts from.
pub fn compose_structured<'a, R, S, T>(
    later: &StructuredMorphism<'a, S, T>,
    earlier: &StructuredMorphism<'a, R, S>,
) -> Result<StructuredMorphism<'a, R, T>, FunctorError>
where
    R: Structured,
    S: Structured,
    T: Structured,
{
    if !std::ptr::eq(later.source, earlier.target) {
        return Err(FunctorError::NotComposable {
            context: "the earlier map's target is not the later map's source".into(),
        });
    }
    StructuredMorphism::new(
        earlier.source,
        later.target,
        later.matrix.mul(&earlier.matrix),
    )
}

/// The algebra map a bundle morphism induces between the section algebras of
/// its endpoints: pull back along the base map, push through the fibre maps.
///
/// Requires corical endpoint bundles and a morphism whose fibre maps pass
/// [`FellMorphism::validate`] and preserve unit fibre identities; the
/// returned map has itself passed the structured-morphism checks.
pub fn ab_functor<'a>(
    m: &FellMorphism,
    source_view: &'a StructuredView,
    target_view: &'a StructuredView,
    tol: &Tolerance,
) -> Result<StructuredMorphism<'a, StructuredView, StructuredView>, FunctorError> {
    if !same_bundle(source_view.bundle(), m.source())
        || !same_bundle(target_view.bundle(), m.target())
    {
        return Err(FunctorError::InvalidMorphism {
            reason: "the views do not sit over the morphism's endpoint bundles".into(),
        });
    }
    for fb in [m.source(), m.target()] {
        let rep = coricality(fb, tol);
        if !rep.is_corical {
            return Err(FunctorError::NotCorical {
                arrows: rep.non_corical_arrows,
            });
        }
    }
    m.validate(tol)?;
    if let Some(unit) = m.first_non_unital(tol) {
        return Err(FunctorError::NotUnital { unit });
    }
    let basis = source_view.basis();
    let mut matrix = ComplexMatrix::zeros(target_view.dim(), basis.len());
    for (j, e) in basis.iter().enumerate() {
        let v = target_view.vectorize(&m.map_section(e)?);
        for (i, z) in v.iter().enumerate() {
            matrix.set(i, j, *z);
        }
    }
    let pi = StructuredMorphism::new(source_view, target_view, matrix)?;
    let report = pi.report(tol);
    if !report.valid(tol) {
        return Err(FunctorError::InvalidMorphism {
            reason: format!(
                "the induced algebra map fails the structure checks (worst residual {:.3e})",
                report.residual()
            ),
        });
    }
    Ok(pi)
}

/// The backward data a structured morphism induces between the ultrafilter
/// reconstructions of its endpoint algebras: a partial map of target filters
/// to source filters (preimage, then upward closure), with the checks that
/// it is an étale base map and that the quotient maps over it contract.
#[derive(Debug, Clone)]
pub struct WeylMorphism {
    /// For each target ultrafilter: the source ultrafilter its preimage
    /// generates, or `None` when the preimage is empty.
    pub under: Vec<Option<usize>>,
    /// Target filters whose preimage closure was proper but matched no
    /// enumerated maximal filter; they are excluded from the domain rather
    /// than silently promoted.
    pub unresolved: Vec<usize>,
    /// Whether the backward map is a star-bijective functor between the
    /// reconstructed filter groupoids.
    pub star_bijective: bool,
    /// Unit filters pair with unit filters and the mapped generators stay
    /// invertible in their fibres.
    pub unital: bool,
    /// Worst excess of a mapped element's target seminorm over the source
    /// seminorm at the pulled-back filter.
    pub contraction_excess: f64,
    /// Worst target seminorm of a mapped element at a filter outside the
    /// backward map's domain (predicted to vanish).
    pub outside_seminorm: f64,
}

/// Compute the backward filter map of `pi` between two ultrafilter engines
/// over its endpoint algebras.
///
/// A target filter pulls back to the set of test elements whose images it
/// contains; the upward closure of that set either matches an enumerated
/// maximal filter or the target filter is left outside the domain.
pub fn sp_functor<S: Structured, T: Structured>(
    pi: &StructuredMorphism<'_, S, T>,
    source_engine: &WeylEngine<'_, S>,
    target_engine: &WeylEngine<'_, T>,
    tol: &Tolerance,
) -> Result<WeylMorphism, FunctorError> {
    if !std::ptr::eq(pi.source(), source_engine.algebra())
        || !std::ptr::eq(pi.target(), target_engine.algebra())
    {
        return Err(FunctorError::InvalidMorphism {
            reason: "the engines do not quotient the morphism's endpoint algebras".into(),
        });
    }
    if !source_engine.is_well_structured() {
        return Err(FunctorError::NotWellStructured {
            reason: source_engine.gate_reason().to_string(),
        });
    }
    if !target_engine.is_well_structured() {
        return Err(FunctorError::NotWellStructured {
            reason: target_engine.gate_reason().to_string(),
        });
    }
    let sn = source_engine.test_set().len();
    let images: Vec<T::Elem> = source_engine
        .test_set()
        .iter()
        .map(|t| pi.apply(t))
        .collect();
    let mut under = Vec::with_capacity(target_engine.ultrafilters().len());
    let mut unresolved = Vec::new();
    for (j, uf) in target_engine.ultrafilters().iter().enumerate() {
        let pre: Vec<usize> = (0..sn)
            .filter(|&i| target_engine.contains(uf, &images[i]))
            .collect();
        if pre.is_empty() {
            under.push(None);
            continue;
        }
        let members: Vec<usize> = (0..sn)
            .filter(|&k| pre.iter().any(|&i| source_engine.below(i, k)))
            .collect();
        match source_engine
            .ultrafilters()
            .iter()
            .position(|f| f.members == members)
        {
            Some(p) => under.push(Some(p)),
            None => {
                unresolved.push(j);
                under.push(None);
            }
        }
    }
    if under.iter().all(Option::is_none) && !target_engine.ultrafilters().is_empty() {
        return Err(FunctorError::EmptyDomain {
            context: "every preimage under the map is empty".into(),
        });
    }

    let (sg, sviol) = source_engine.filter_groupoid()?;
    let (tg, tviol) = target_engine.filter_groupoid()?;
    let dom: Vec<usize> = under
        .iter()
        .enumerate()
        .filter_map(|(j, o)| o.map(|_| j))
        .collect();
    let img: Vec<usize> = under.iter().filter_map(|o| *o).collect();
    let star_bijective = sviol.is_empty()
        && tviol.is_empty()
        && BaseMap::new(Arc::new(tg), Arc::new(sg), dom, img).is_ok();

    let mut unital = true;
    for (j, o) in under.iter().enumerate() {
        let Some(i) = *o else { continue };
        let uf = &target_engine.ultrafilters()[j];
        let sf = &source_engine.ultrafilters()[i];
        if target_engine.is_unit_filter(uf) != source_engine.is_unit_filter(sf) {
            unital = false;
            continue;
        }
        if target_engine.is_unit_filter(uf) {
            let pair = target_engine.pair(images[sf.generator].clone(), uf);
            if !target_engine.core_membership(&pair)?.member {
                unital = false;
            }
        }
    }

    let mut rng = SeededRng::new(0x7a21);
    let mut samples: Vec<S::Elem> = source_engine.algebra().basis();
    samples.truncate(12);
    samples.push(random_element(source_engine.algebra(), &mut rng));
    samples.push(random_element(source_engine.algebra(), &mut rng));
    let mut contraction_excess = 0.0f64;
    let mut outside_seminorm = 0.0f64;
    for a in &samples {
        let pa = pi.apply(a);
        for (j, o) in under.iter().enumerate() {
            let uf = &target_engine.ultrafilters()[j];
            let t_norm = target_engine.seminorm(&pa, uf);
            match o {
                Some(i) => {
                    let s_norm =
                        source_engine.seminorm(a, &source_engine.ultrafilters()[*i]);
                    contraction_excess =
                        contraction_excess.max(t_norm - s_norm - tol.allowance(1.0 + s_norm));
                }
                None => outside_seminorm = outside_seminorm.max(t_norm),
            }
        }
    }
    Ok(WeylMorphism {
        under,
        unresolved,
        star_bijective,
        unital,
        contraction_excess: contraction_excess.max(0.0),
        outside_seminorm,
    })
}

/// Outcome of the finite-scale duality checks between a bundle and a
/// structured algebra: naturality of the induced maps in both directions,
/// the two round-trip identities on units, and whether the algebra side's
/// quotient representation is an isomorphism exactly when its expectation is
/// faithful.
#[derive(Debug, Clone)]
pub struct AdjunctionReport {
    /// Germ filters whose reconstructed backward map disagrees with the base
    /// map of the supplied bundle morphisms.
    pub base_mismatches: usize,
    /// Worst mismatch between reducing a mapped section at a germ and
    /// applying the fibre map to the reduced source section.
    pub fiber_residual: f64,
    /// Worst seminorm-contraction excess across the backward maps.
    pub omega_contraction_excess: f64,
    /// Worst seminorm at a filter outside a backward map's domain.
    pub omega_outside_seminorm: f64,
    /// Worst mismatch between a section's value and its reduction at the
    /// germ filter of the same arrow.
    pub counit_residual: f64,
    /// Whether membership of a test element in a filter coincides with
    /// invertibility of its class in the fibre, for every filter and test
    /// element.
    pub unit_membership_agrees: bool,
    /// Worst seminorm of `reduce(a, U) - a` at `U`: reduction must not move
    /// an element within its own class.
    pub unit_reduction_residual: f64,
    /// The algebra's quotient representation is injective with total fibre
    /// dimension matching the algebra dimension.
    pub omega_isomorphism: bool,
    /// The conditional expectation is faithful (trivial kernel of the
    /// pairing `a -> (phi(e_i* a))_i`).
    pub phi_faithful: bool,
    pub elapsed: Duration,
}

impl AdjunctionReport {
    pub fn residual(&self) -> f64 {
        self.fiber_residual
            .max(self.omega_contraction_excess)
            .max(self.omega_outside_seminorm)
            .max(self.counit_residual)
            .max(self.unit_reduction_residual)
    }

    /// Whether the measured isomorphism verdict matches the faithfulness of
    /// the expectation — the predicted criterion for the duality to restrict
    /// to an equivalence.
    pub fn iso_matches_faithfulness(&self) -> bool {
        self.omega_isomorphism == self.phi_faithful
    }

    pub fn pass(&self) -> bool {
        self.base_mismatches == 0
            && self.unit_membership_agrees
            && self.omega_isomorphism
            && self.phi_faithful
            && self.residual() <= ADJUNCTION_RESIDUAL_BOUND
    }
}

fn germ_position(engine: &WeylEngine<'_, StructuredView>, arrow: usize) -> Option<usize> {
    engine
        .ultrafilters()
        .iter()
        .position(|f| f.generator == arrow)
}

/// Run the duality checks on a corical bundle and a structured algebra.
///
/// The bundle side builds the canonical morphism family — identity,
/// inclusion into the double, fold of the double — and checks that each
/// induced algebra map reconstructs to the original base map (germ by germ
/// and fibre by fibre), that quotient seminorms contract across the backward
/// map and vanish outside its domain, and that the two round-trip identities
/// hold: reduction at a germ filter returns the section's value there, and
/// membership of a test element in a filter coincides with invertibility of
/// its class.  The algebra side (whose test set is its flattened pattern
/// bases) measures whether the quotient representation is an isomorphism and
/// whether the expectation is faithful; the two verdicts are predicted to
/// coincide.  Bundles up to twelve arrows fit the doubled enumeration cap.
pub fn verify_adjunction<T: Structured>(
    fb: &Arc<FellBundle>,
    sa: &T,
    tol: &Tolerance,
) -> Result<AdjunctionReport, FunctorError> {
    let start = Instant::now();
    let rep = coricality(fb, tol);
    if !rep.is_corical {
        return Err(FunctorError::NotCorical {
            arrows: rep.non_corical_arrows,
        });
    }

    let view = extract_structured(fb, tol)?;
    let engine = WeylEngine::new(&view, indicator_test_set(fb, tol)?, tol)?;
    let (double, inclusion, fold) = doubled_bundle(fb)?;
    let dview = extract_structured(&double, tol)?;
    let dengine = WeylEngine::new(&dview, indicator_test_set(&double, tol)?, tol)?;
    let identity = FellMorphism::identity(fb)?;

    let mut rng = SeededRng::new(0x6b2f);
    let mut samples: Vec<Section> = view.basis();
    samples.truncate(10);
    samples.push(random_element(&view, &mut rng));
    samples.push(random_element(&view, &mut rng));

    let mut base_mismatches = 0usize;
    let mut fiber_residual = 0.0f64;
    let mut omega_contraction_excess = 0.0f64;
    let mut omega_outside_seminorm = 0.0f64;
    let cases: [(&FellMorphism, &StructuredView, &WeylEngine<'_, StructuredView>); 3] = [
        (&identity, &view, &engine),
        (&inclusion, &dview, &dengine),
        (&fold, &dview, &dengine),
    ];
    for (m, tview, teng) in cases {
        let pi = ab_functor(m, &view, tview, tol)?;
        let wm = sp_functor(&pi, &engine, teng, tol)?;
        omega_contraction_excess = omega_contraction_excess.max(wm.contraction_excess);
        omega_outside_seminorm = omega_outside_seminorm.max(wm.outside_seminorm);
        for (j, tf) in teng.ultrafilters().iter().enumerate() {
            let expected = m
                .base()
                .apply(tf.generator)
                .and_then(|gamma| germ_position(&engine, gamma));
            if wm.under[j] != expected {
                base_mismatches += 1;
            }
        }
        for a in &samples {
            let pa = pi.apply(a);
            for k in 0..m.domain().len() {
                let gamma_t = m.domain()[k];
                let gamma_s = m.image()[k];
                let (Some(jt), Some(js)) = (
                    germ_position(teng, gamma_t),
                    germ_position(&engine, gamma_s),
                ) else {
                    continue;
                };
                let (tr, tc) = m.target().fiber_shape(gamma_t);
                let lhs = teng.reduce(&pa, &teng.ultrafilters()[jt]);
                let reduced = engine.reduce(a, &engine.ultrafilters()[js]);
                let rhs = apply_fiber_map(&m.beta()[k], reduced.value(gamma_s), tr, tc);
                fiber_residual = fiber_residual.max(lhs.value(gamma_t).max_abs_diff(&rhs));
            }
        }
    }

    let mut counit_residual = 0.0f64;
    let mut unit_membership_agrees = true;
    let mut unit_reduction_residual = 0.0f64;
    for f in engine.ultrafilters() {
        for a in &samples {
            let red = engine.reduce(a, f);
            counit_residual =
                counit_residual.max(red.value(f.generator).max_abs_diff(a.value(f.generator)));
            let diff = view.sub(&red, a);
            unit_reduction_residual = unit_reduction_residual.max(engine.seminorm(&diff, f));
        }
        for (i, t) in engine.test_set().iter().enumerate() {
            let in_filter = f.members.contains(&i);
            let verdict = engine.core_membership(&engine.pair(t.clone(), f))?;
            if in_filter != verdict.member || !verdict.agreement() {
                unit_membership_agrees = false;
            }
        }
    }

    let sa_tests: Vec<T::Elem> = sa.pattern_bases().into_iter().flatten().collect();
    let es = WeylEngine::new(sa, sa_tests, tol)?;
    if !es.is_well_structured() {
        return Err(FunctorError::NotWellStructured {
            reason: es.gate_reason().to_string(),
        });
    }
    let dim = sa.dim();
    let filters = es.ultrafilters();
    let omega_isomorphism = if filters.is_empty() {
        false
    } else {
        let complements: Vec<ComplexMatrix> = filters
            .iter()
            .map(|f| ComplexMatrix::identity(dim).sub(es.null_space(f).projector()))
            .collect();
        let stacked = ComplexMatrix::from_fn(filters.len() * dim, dim, |i, j| {
            complements[i / dim].get(i % dim, j)
        });
        let zero = Subspace::span(filters.len() * dim, &[], tol);
        let injective = kernel_into(&stacked, &zero, tol).is_empty();
        let fiber_total: usize = filters.iter().map(|f| es.fiber(f).dim).sum();
        injective && fiber_total == dim
    };
    let basis = sa.basis();
    let mut gram = ComplexMatrix::zeros(dim * dim, dim);
    for j in 0..dim {
        for i in 0..dim {
            let v = sa.vectorize(&sa.phi(&sa.mul(&sa.star(&basis[i]), &basis[j])));
            for (r, z) in v.iter().enumerate() {
                gram.set(i * dim + r, j, *z);
            }
        }
    }
    let zero = Subspace::span(dim * dim, &[], tol);
    let phi_faithful = kernel_into(&gram, &zero, tol).is_empty();

    Ok(AdjunctionReport {
        base_mismatches,
        fiber_residual,
        omega_contraction_excess,
        omega_outside_seminorm,
        counit_residual,
        unit_membership_agrees,
        unit_reduction_residual,
        omega_isomorphism,
        phi_faithful,
        elapsed: start.elapsed(),
    })
}
