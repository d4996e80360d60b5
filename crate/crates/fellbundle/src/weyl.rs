//! Ultrafilters of the domination order and the bundle they rebuild.
//!
//! Slices of the section algebra, ordered by domination, carry enough
//! information to recover the underlying groupoid: ultrafilters of the order
//! become arrows, composition is the up-closure of element products, and the
//! quotient of the algebra by each ultrafilter's null space becomes a fibre.
//! This module enumerates those ultrafilters over a finite test set, computes
//! the quotient seminorms with explicit witness chains, assembles the
//! reconstructed bundle, and measures how faithfully a round trip through the
//! reconstruction returns to the bundle it started from.

use std::sync::Arc;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use thiserror::Error;

use crate::bundle::{coricality, FellBundle};
use crate::domination::{Domination, DominationError, DominationWitness};
use crate::groupoid::{validate_groupoid, FiniteGroupoid, GroupoidViolation};
use crate::numeric::{kernel_into, op_norm, ComplexMatrix, Subspace, Tolerance};
use crate::rng::SeededRng;
use crate::sections::{extract_structured, fiber_invertible, Section, SectionError};
use crate::structured::{property_report, random_element, Structured, StructuredError};

/// Hard cap on the closed test set; past this the exhaustive filter search
/// stops being honest about its running time.
pub const MAX_TEST_SET: usize = 24;

/// Residual bound a reconstruction must clear before `pass()` reports success.
pub const ROUNDTRIP_RESIDUAL_BOUND: f64 = 1e-8;

/// Samples used by the well-structured gate in front of the representation.
const GATE_SAMPLES: usize = 48;
const GATE_SEED: u64 = 0x3e7a;
const ROUNDTRIP_SEED: u64 = 0x40f1;

#[derive(Debug, Error)]
pub enum WeylError {
    #[error("test set holds {size} elements after closure; the cap is {cap}")]
    TestSetTooLarge { size: usize, cap: usize },
    #[error("ultrafilter representations do not line up: {context}")]
    RepresentationMismatch { context: String },
    #[error("the filters do not compose: some member product vanishes")]
    NonComposable,
    #[error("the algebra is not well structured: {reason}")]
    NotWellStructured { reason: String },
    #[error("the bundle has no invertible elements over arrows {arrows:?}")]
    NotCorical { arrows: Vec<usize> },
    #[error(transparent)]
    Domination(#[from] DominationError),
    #[error(transparent)]
    Structured(#[from] StructuredError),
    #[error(transparent)]
    Sections(#[from] SectionError),
}

/// A proper filter of the domination order on a finite test set.
///
/// Every filter over a finite set is the up-closure of a single self-dominated
/// element: down-directedness walks any member list to a cycle, and a cycle is
/// a reflexive point by transitivity.  `members` are indices into the engine's
/// test set, sorted ascending, and `generator` is one such reflexive element
/// below all of them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteFilter {
    pub members: Vec<usize>,
    pub generator: usize,
}

/// The two ways this crate realises an ultrafilter.
///
/// A `Germ` is an arrow of a concrete bundle's groupoid; a section belongs to
/// it exactly when its value there is invertible.  A `Finite` filter is the
/// abstract fallback that only uses the order on a test set, so it also works
/// for algebras with no bundle in sight.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UltrafilterRep {
    Germ { gamma: usize },
    Finite(FiniteFilter),
}

impl UltrafilterRep {
    pub fn germ(&self) -> Option<usize> {
        match self {
            UltrafilterRep::Germ { gamma } => Some(*gamma),
            UltrafilterRep::Finite(_) => None,
        }
    }

    pub fn finite(&self) -> Option<&FiniteFilter> {
        match self {
            UltrafilterRep::Germ { .. } => None,
            UltrafilterRep::Finite(f) => Some(f),
        }
    }
}

/// An element of the reconstructed bundle: a representative together with the
/// ultrafilter it is quotiented at, and the cached quotient seminorm of the
/// representative.  Two pairs over the same ultrafilter are equal when the
/// seminorm of their difference vanishes.
#[derive(Clone, Debug)]
pub struct WeylPair<E> {
    pub representative: E,
    pub ultrafilter: UltrafilterRep,
    pub seminorm: f64,
}

/// Fibre of the reconstructed bundle at one ultrafilter: the quotient of the
/// algebra by the seminorm's null space.
#[derive(Clone, Debug)]
pub struct WeylFiber<E> {
    /// Dimension of the quotient.
    pub dim: usize,
    /// The null space kept its dimension when recomputed at a tenth of the
    /// tolerance, so no basis direction sat on the threshold boundary.
    pub stable: bool,
    /// One representative per quotient dimension, spanning a complement of
    /// the null space.
    pub representatives: Vec<E>,
}

/// The bundle rebuilt from ultrafilters: a groupoid of filters plus one
/// quotient fibre per arrow.
#[derive(Clone, Debug)]
pub struct WeylBundle<E> {
    pub base: FiniteGroupoid,
    /// Arrow `i` of `base` is `filters[i]`.
    pub filters: Vec<FiniteFilter>,
    pub fibers: Vec<WeylFiber<E>>,
    /// Axiom failures of the reconstructed groupoid; empty on success.
    pub violations: Vec<GroupoidViolation>,
    /// Every fibre contains an invertible pair.
    pub corical: bool,
}

/// Membership of a pair in the invertible core, with the certificate the
/// verdict rests on.
#[derive(Clone, Debug)]
pub struct WeylCoreVerdict {
    /// The generator dominates the reduced representative.
    pub member: bool,
    /// A two-sided inverse pair exists: both products with the witness reduce
    /// to the identity at the corresponding unit filters.
    pub inverse_certified: bool,
}

impl WeylCoreVerdict {
    pub fn agreement(&self) -> bool {
        self.member == self.inverse_certified
    }
}

/// One canonical witness chain `u <_s b` hanging below a reflexive test-set
/// element, reused for every quotient computation at filters it generates.
#[derive(Clone, Debug)]
struct Chain<E> {
    s: E,
    b: E,
    /// `s` is a contraction with `b = s*`, so `‖Φ(a·s)‖` already bounds the
    /// chain value from above.
    contraction: bool,
}

/// Enumerates the ultrafilters of the domination order over a finite test set
/// and carries everything needed to quotient the algebra at each of them.
pub struct WeylEngine<'a, T: Structured> {
    sa: &'a T,
    dom: Domination<'a, T>,
    tol: Tolerance,
    test_set: Vec<T::Elem>,
    /// `below[i][j]` — test element `i` is dominated by test element `j`.
    below: Vec<Vec<bool>>,
    witnesses: Vec<Vec<Option<DominationWitness<T::Elem>>>>,
    chains: Vec<Option<Chain<T::Elem>>>,
    filters: Vec<FiniteFilter>,
    well_structured: bool,
    gate_reason: String,
}

fn close<T: Structured>(sa: &T, a: &T::Elem, b: &T::Elem, tol: &Tolerance) -> bool {
    let d = sa.sub(a, b);
    sa.norm(&d) <= tol.allowance(sa.norm(a).max(sa.norm(b)))
}

fn is_subset(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|x| b.contains(x))
}

impl<'a, T: Structured> WeylEngine<'a, T> {
    pub fn new(sa: &'a T, test_set: Vec<T::Elem>, tol: &Tolerance) -> Result<Self, WeylError> {
        Self::with_cap(sa, test_set, tol, MAX_TEST_SET)
    }

    /// Builds the engine: validates the seed set, closes it under the
    /// canonical interpolants of dominated pairs, tabulates the order with
    /// its witnesses, and enumerates the maximal proper filters.
    pub fn with_cap(
        sa: &'a T,
        seed_set: Vec<T::Elem>,
        tol: &Tolerance,
        cap: usize,
    ) -> Result<Self, WeylError> {
        let dom = Domination::new(sa, tol);
        for e in &seed_set {
            if !sa.owns(e) {
                return Err(WeylError::RepresentationMismatch {
                    context: "a test-set element belongs to a different algebra".into(),
                });
            }
            let d = dom.s_distance(e);
            if d > tol.allowance(sa.norm(e)) {
                return Err(WeylError::Domination(DominationError::NotInS {
                    residual: d,
                }));
            }
        }
        if seed_set.len() > cap {
            return Err(WeylError::TestSetTooLarge {
                size: seed_set.len(),
                cap,
            });
        }

        let mut test_set: Vec<T::Elem> = Vec::with_capacity(seed_set.len());
        for e in seed_set {
            if !test_set.iter().any(|f| close(sa, f, &e, tol)) {
                test_set.push(e);
            }
        }

        // Close under interpolants: every dominated pair contributes the
        // midpoint of its witness chain, until nothing new appears.
        let mut examined = 0usize;
        loop {
            let n = test_set.len();
            let mut added = false;
            for i in 0..n {
                for j in 0..n {
                    if i < examined && j < examined {
                        continue;
                    }
                    let verdict = dom.dominates(&test_set[i], &test_set[j]);
                    let Some(witness) = verdict.witness else {
                        continue;
                    };
                    let Ok(inter) = dom.interpolate(&witness) else {
                        continue;
                    };
                    if sa.norm(&inter.c) <= tol.allowance(0.0) {
                        continue;
                    }
                    if test_set.iter().any(|e| close(sa, e, &inter.c, tol)) {
                        continue;
                    }
                    test_set.push(inter.c);
                    added = true;
                    if test_set.len() > cap {
                        return Err(WeylError::TestSetTooLarge {
                            size: test_set.len(),
                            cap,
                        });
                    }
                }
            }
            examined = n;
            if !added {
                break;
            }
        }

        let n = test_set.len();
        let mut below = vec![vec![false; n]; n];
        let mut witnesses: Vec<Vec<Option<DominationWitness<T::Elem>>>> =
            (0..n).map(|_| (0..n).map(|_| None).collect()).collect();
        for i in 0..n {
            for j in 0..n {
                let verdict = dom.dominates(&test_set[i], &test_set[j]);
                below[i][j] = verdict.dominated;
                witnesses[i][j] = verdict.witness;
            }
        }

        // One canonical chain per reflexive element: a contraction `s` with
        // `u <_s s*` when the unit interpolation succeeds, otherwise the raw
        // reflexive witness.
        let mut chains: Vec<Option<Chain<T::Elem>>> = (0..n).map(|_| None).collect();
        for i in 0..n {
            if !below[i][i] {
                continue;
            }
            chains[i] = match dom.interpolate_unit(&test_set[i], &test_set[i]) {
                Ok(unit) => {
                    let b = sa.star(&unit.s);
                    Some(Chain {
                        s: unit.s,
                        b,
                        contraction: true,
                    })
                }
                Err(_) => witnesses[i][i].as_ref().map(|w| Chain {
                    s: w.s.clone(),
                    b: w.b.clone(),
                    contraction: false,
                }),
            };
        }

        // Every filter is the up-set of a reflexive element; keep the proper
        // ones (no vanishing member) and among those the maximal ones.
        let zeroish: Vec<bool> = test_set
            .iter()
            .map(|e| sa.norm(e) <= tol.allowance(0.0))
            .collect();
        let mut candidates: Vec<FiniteFilter> = Vec::new();
        for i in 0..n {
            if !below[i][i] {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&j| below[i][j]).collect();
            if members.iter().any(|&j| zeroish[j]) {
                continue;
            }
            match candidates.iter_mut().find(|f| f.members == members) {
                Some(f) => f.generator = f.generator.min(i),
                None => candidates.push(FiniteFilter {
                    members,
                    generator: i,
                }),
            }
        }
        let keep: Vec<bool> = candidates
            .iter()
            .map(|f| {
                !candidates.iter().any(|g| {
                    g.members.len() > f.members.len() && is_subset(&f.members, &g.members)
                })
            })
            .collect();
        let mut filters: Vec<FiniteFilter> = candidates
            .into_iter()
            .zip(keep)
            .filter_map(|(f, k)| k.then_some(f))
            .collect();
        filters.sort_by(|a, b| a.members.cmp(&b.members));

        let report = property_report(sa, tol, GATE_SAMPLES, GATE_SEED);
        let well_structured = report.well_structured();
        let gate_reason = if well_structured {
            String::new()
        } else {
            let failing: Vec<&str> = report
                .entries()
                .into_iter()
                .filter(|(name, outcome)| {
                    matches!(*name, "normal" | "bistable Z" | "bistable phi" | "binormal Z")
                        && !outcome.holds
                })
                .map(|(name, _)| name)
                .collect();
            format!("failing expectation/centre checks: {}", failing.join(", "))
        };

        Ok(Self {
            sa,
            dom,
            tol: *tol,
            test_set,
            below,
            witnesses,
            chains,
            filters,
            well_structured,
            gate_reason,
        })
    }

    pub fn test_set(&self) -> &[T::Elem] {
        &self.test_set
    }

    /// The algebra the engine quotients.
    pub fn algebra(&self) -> &'a T {
        self.sa
    }

    /// Whether the expectation/centre checks behind the quotient
    /// construction passed at construction time.
    pub fn is_well_structured(&self) -> bool {
        self.well_structured
    }

    /// Names of the failing checks when the gate is closed; empty otherwise.
    pub fn gate_reason(&self) -> &str {
        &self.gate_reason
    }

    /// The maximal proper filters of the order, sorted by member set.
    pub fn ultrafilters(&self) -> &[FiniteFilter] {
        &self.filters
    }

    pub fn below(&self, i: usize, j: usize) -> bool {
        self.below[i][j]
    }

    /// Test-set indices dominated by element `j` (everything below it).
    pub fn lower_set(&self, j: usize) -> Vec<usize> {
        (0..self.test_set.len())
            .filter(|&i| self.below[i][j])
            .collect()
    }

    /// Test-set indices dominating element `i` (its up-set).
    pub fn upper_set(&self, i: usize) -> Vec<usize> {
        (0..self.test_set.len())
            .filter(|&j| self.below[i][j])
            .collect()
    }

    /// Positions of the ultrafilters containing test element `k`.
    pub fn filters_containing(&self, k: usize) -> Vec<usize> {
        self.filters
            .iter()
            .enumerate()
            .filter_map(|(pos, f)| f.members.contains(&k).then_some(pos))
            .collect()
    }

    /// Membership of an arbitrary algebra element in the filter's up-set.
    pub fn contains(&self, u: &FiniteFilter, a: &T::Elem) -> bool {
        self.below_elem(&self.test_set[u.generator], a)
    }

    /// Domination with the model's geometric shortcut when it has one; the
    /// tabulated order always uses the full numeric synthesis instead.
    fn below_elem(&self, a: &T::Elem, b: &T::Elem) -> bool {
        match self.sa.support_verdict(a, b, &self.tol) {
            Some(verdict) => verdict,
            None => self.dom.dominates(a, b).dominated,
        }
    }

    fn position(&self, members: &[usize]) -> Option<usize> {
        self.filters.iter().position(|f| f.members == members)
    }

    /// A unit filter absorbs the expectation: the image of every member lands
    /// back inside the filter.
    pub fn is_unit_filter(&self, u: &FiniteFilter) -> bool {
        let generator = &self.test_set[u.generator];
        u.members.iter().all(|&m| {
            let pm = self.sa.phi(&self.test_set[m]);
            self.below_elem(generator, &pm)
                || u.members
                    .iter()
                    .any(|&k| close(self.sa, &self.test_set[k], &pm, &self.tol))
        })
    }

    /// The starred filter `{u* : u ∈ U}`, matched against the enumeration.
    pub fn inverse_filter(&self, u: &FiniteFilter) -> Result<FiniteFilter, WeylError> {
        let star = self.sa.star(&self.test_set[u.generator]);
        let members: Vec<usize> = (0..self.test_set.len())
            .filter(|&k| self.below_elem(&star, &self.test_set[k]))
            .collect();
        match self.position(&members) {
            Some(pos) => Ok(self.filters[pos].clone()),
            None => Err(WeylError::RepresentationMismatch {
                context: format!(
                    "the starred filter of generator {} is not an enumerated ultrafilter",
                    u.generator
                ),
            }),
        }
    }

    /// Product of two filters: the up-closure of the pairwise member
    /// products.  `None` means undefined — some member product vanished, so
    /// the filters do not compose.
    pub fn filter_product(
        &self,
        t: &FiniteFilter,
        u: &FiniteFilter,
    ) -> Result<Option<FiniteFilter>, WeylError> {
        let mut products = Vec::with_capacity(t.members.len() * u.members.len());
        for &i in &t.members {
            for &j in &u.members {
                let p = self.sa.mul(&self.test_set[i], &self.test_set[j]);
                if self.sa.norm(&p) <= self.tol.allowance(0.0) {
                    return Ok(None);
                }
                products.push(p);
            }
        }
        let members: Vec<usize> = (0..self.test_set.len())
            .filter(|&k| {
                products
                    .iter()
                    .any(|p| self.below_elem(p, &self.test_set[k]))
            })
            .collect();
        match self.position(&members) {
            Some(pos) => Ok(Some(self.filters[pos].clone())),
            None => Err(WeylError::RepresentationMismatch {
                context: format!(
                    "the product up-closure {members:?} is not an enumerated ultrafilter"
                ),
            }),
        }
    }

    /// The unit filter `U*·U` at the source of `u`.
    pub fn source_filter(&self, u: &FiniteFilter) -> Result<FiniteFilter, WeylError> {
        let inv = self.inverse_filter(u)?;
        self.filter_product(&inv, u)?
            .ok_or(WeylError::NonComposable)
    }

    /// The unit filter `U·U*` at the range of `u`.
    pub fn range_filter(&self, u: &FiniteFilter) -> Result<FiniteFilter, WeylError> {
        let inv = self.inverse_filter(u)?;
        self.filter_product(u, &inv)?
            .ok_or(WeylError::NonComposable)
    }

    /// Quotient seminorm of `a` at the filter: the smallest value of
    /// `‖Φ(a·s)·b‖` over the canonical witness chains hanging below the
    /// members, seeded with the plain norm `‖a‖` as the trivial bound.
    pub fn seminorm(&self, a: &T::Elem, u: &FiniteFilter) -> f64 {
        let sa = self.sa;
        let mut best = sa.norm(a);
        for &i in &u.members {
            if let Some(chain) = &self.chains[i] {
                best = best.min(self.chain_value(a, chain));
            }
            for j in 0..self.test_set.len() {
                if j == i {
                    continue;
                }
                if let Some(w) = &self.witnesses[i][j] {
                    let phi_as = sa.phi(&sa.mul(a, &w.s));
                    best = best.min(sa.norm(&sa.mul(&phi_as, &w.b)));
                }
            }
        }
        best
    }

    fn chain_value(&self, a: &T::Elem, chain: &Chain<T::Elem>) -> f64 {
        let sa = self.sa;
        let phi_as = sa.phi(&sa.mul(a, &chain.s));
        if chain.contraction {
            sa.norm(&phi_as)
        } else {
            sa.norm(&sa.mul(&phi_as, &chain.b))
        }
    }

    /// Matrix of the generator's chain map `a ↦ Φ(a·s)·b` in the basis
    /// coordinates; its kernel is the filter's null space.
    fn chain_operator(&self, u: &FiniteFilter) -> Option<ComplexMatrix> {
        let chain = self.chains[u.generator].as_ref()?;
        let sa = self.sa;
        let basis = sa.basis();
        let columns: Vec<Vec<Complex64>> = basis
            .iter()
            .map(|e| {
                let phi_es = sa.phi(&sa.mul(e, &chain.s));
                let image = if chain.contraction {
                    phi_es
                } else {
                    sa.mul(&phi_es, &chain.b)
                };
                sa.vectorize(&image)
            })
            .collect();
        let rows = columns.first().map_or(0, Vec::len);
        Some(ComplexMatrix::from_fn(rows, columns.len(), |r, c| {
            columns[c][r]
        }))
    }

    fn null_space_at(&self, u: &FiniteFilter, tol: &Tolerance) -> Subspace {
        let dim = self.sa.dim();
        match self.chain_operator(u) {
            Some(op) => {
                let target = Subspace::span(op.rows(), &[], tol);
                let kernel = kernel_into(&op, &target, tol);
                Subspace::span(dim, &kernel, tol)
            }
            None => Subspace::span(dim, &[], tol),
        }
    }

    /// Elements whose quotient seminorm vanishes at the filter, as a subspace
    /// of basis coefficients.
    pub fn null_space(&self, u: &FiniteFilter) -> Subspace {
        self.null_space_at(u, &self.tol)
    }

    /// The quotient fibre at the filter.  Boundary ties are caught by
    /// recomputing the null space at a tenth of the tolerance and demanding
    /// the same dimension.
    pub fn fiber(&self, u: &FiniteFilter) -> WeylFiber<T::Elem> {
        let kernel = self.null_space(u);
        let finer = Tolerance {
            absolute: self.tol.absolute / 10.0,
            relative: self.tol.relative / 10.0,
            invertibility_threshold: self.tol.invertibility_threshold / 10.0,
        };
        let refined = self.null_space_at(u, &finer);
        let stable = kernel.dim() == refined.dim();

        let dim_total = self.sa.dim();
        let dim = dim_total - kernel.dim();
        let basis = self.sa.basis();
        let mut picked: Vec<Vec<Complex64>> = Vec::with_capacity(dim);
        let mut span_vectors: Vec<Vec<Complex64>> = Vec::new();
        for j in 0..dim_total {
            let column: Vec<Complex64> = (0..dim_total)
                .map(|i| kernel.projector().get(i, j))
                .collect();
            span_vectors.push(column);
        }
        let mut representatives = Vec::with_capacity(dim);
        for k in 0..dim_total {
            if representatives.len() == dim {
                break;
            }
            let mut candidate = vec![Complex64::new(0.0, 0.0); dim_total];
            candidate[k] = Complex64::new(1.0, 0.0);
            let current = Subspace::span(dim_total, &span_vectors, &self.tol);
            if current.residual(&candidate) <= self.tol.invertibility_threshold {
                continue;
            }
            let projected = current.project(&candidate);
            let residual_vec: Vec<Complex64> = candidate
                .iter()
                .zip(&projected)
                .map(|(c, p)| c - p)
                .collect();
            span_vectors.push(residual_vec.clone());
            picked.push(residual_vec.clone());
            representatives.push(self.sa.combine(&residual_vec, &basis));
        }
        WeylFiber {
            dim,
            stable,
            representatives,
        }
    }

    /// Canonical reduced representative: `Φ(a·s)·b` along the generator's
    /// chain, an element of the same class with everything outside the
    /// filter's germ stripped away.
    pub fn reduce(&self, a: &T::Elem, u: &FiniteFilter) -> T::Elem {
        match &self.chains[u.generator] {
            Some(chain) => {
                let phi_as = self.sa.phi(&self.sa.mul(a, &chain.s));
                self.sa.mul(&phi_as, &chain.b)
            }
            None => a.clone(),
        }
    }

    pub fn pair(&self, a: T::Elem, u: &FiniteFilter) -> WeylPair<T::Elem> {
        let seminorm = self.seminorm(&a, u);
        WeylPair {
            representative: a,
            ultrafilter: UltrafilterRep::Finite(u.clone()),
            seminorm,
        }
    }

    fn finite_of<'p>(
        &self,
        p: &'p WeylPair<T::Elem>,
    ) -> Result<&'p FiniteFilter, WeylError> {
        match &p.ultrafilter {
            UltrafilterRep::Finite(f) => Ok(f),
            UltrafilterRep::Germ { gamma } => Err(WeylError::RepresentationMismatch {
                context: format!("expected a finite-filter pair, got a germ at arrow {gamma}"),
            }),
        }
    }

    /// Pairs are equal when they sit at the same filter and the seminorm of
    /// their difference vanishes.
    pub fn pair_eq(
        &self,
        p: &WeylPair<T::Elem>,
        q: &WeylPair<T::Elem>,
    ) -> Result<bool, WeylError> {
        let (fu, fv) = (self.finite_of(p)?, self.finite_of(q)?);
        if fu.members != fv.members {
            return Ok(false);
        }
        let diff = self.sa.sub(&p.representative, &q.representative);
        let scale = self
            .sa
            .norm(&p.representative)
            .max(self.sa.norm(&q.representative));
        Ok(self.seminorm(&diff, fu) <= self.tol.allowance(scale))
    }

    /// Product of two pairs: the left representative is reduced along its
    /// canonical chain first, so the result does not depend on which class
    /// member was handed in.
    pub fn pair_product(
        &self,
        p: &WeylPair<T::Elem>,
        q: &WeylPair<T::Elem>,
    ) -> Result<WeylPair<T::Elem>, WeylError> {
        let (fu, fv) = (self.finite_of(p)?, self.finite_of(q)?);
        let w = self
            .filter_product(fu, fv)?
            .ok_or(WeylError::NonComposable)?;
        let reduced = self.reduce(&p.representative, fu);
        let rep = self.sa.mul(&reduced, &q.representative);
        Ok(self.pair(rep, &w))
    }

    /// Invertible-core membership of a pair, with an independent certificate:
    /// the domination witness of the reduced representative must give a
    /// two-sided inverse through the unit filters on both sides.
    pub fn core_membership(
        &self,
        p: &WeylPair<T::Elem>,
    ) -> Result<WeylCoreVerdict, WeylError> {
        let u = self.finite_of(p)?;
        let generator = &self.test_set[u.generator];
        let reduced = self.reduce(&p.representative, u);
        let verdict = self.dom.dominates(generator, &reduced);
        let member = verdict.dominated;
        let inverse_certified = match verdict.witness {
            Some(w) => {
                let inv = self.inverse_filter(u)?;
                let range = self.filter_product(u, &inv)?;
                let source = self.filter_product(&inv, u)?;
                match (range, source) {
                    (Some(range), Some(source)) => {
                        let one = self.sa.one();
                        let rs = self.sa.mul(&reduced, &w.s);
                        let sr = self.sa.mul(&w.s, &reduced);
                        let scale = (1.0 + self.sa.norm(&reduced))
                            * (1.0 + self.sa.norm(&w.s));
                        self.seminorm(&self.sa.sub(&rs, &one), &range)
                            <= self.tol.allowance(scale)
                            && self.seminorm(&self.sa.sub(&sr, &one), &source)
                                <= self.tol.allowance(scale)
                    }
                    _ => false,
                }
            }
            None => false,
        };
        Ok(WeylCoreVerdict {
            member,
            inverse_certified,
        })
    }

    /// The full representation `a ↦ [a, U]` over every enumerated
    /// ultrafilter.  Requires the expectation/centre checks behind the
    /// quotient construction to hold.
    pub fn representation(&self, a: &T::Elem) -> Result<Vec<WeylPair<T::Elem>>, WeylError> {
        if !self.well_structured {
            return Err(WeylError::NotWellStructured {
                reason: self.gate_reason.clone(),
            });
        }
        Ok(self
            .filters
            .iter()
            .map(|f| self.pair(a.clone(), f))
            .collect())
    }

    /// Assembles the reconstructed bundle: filters become arrows, filter
    /// products the composition table, and quotients the fibres.
    /// The groupoid of ultrafilters alone — units, inverses, source, range
    /// and the partial product — without computing any fibres, plus whatever
    /// axiom violations the assembled tables exhibit.
    pub fn filter_groupoid(&self) -> Result<(FiniteGroupoid, Vec<GroupoidViolation>), WeylError> {
        let n = self.filters.len();
        let mut units = Vec::new();
        let mut source = Vec::with_capacity(n);
        let mut range = Vec::with_capacity(n);
        let mut inverse = Vec::with_capacity(n);
        let mut product: Vec<Option<usize>> = Vec::with_capacity(n * n);
        let resolve = |f: &FiniteFilter| -> Result<usize, WeylError> {
            self.position(&f.members)
                .ok_or_else(|| WeylError::RepresentationMismatch {
                    context: "a derived filter escaped the enumeration".into(),
                })
        };
        for (i, f) in self.filters.iter().enumerate() {
            if self.is_unit_filter(f) {
                units.push(i);
            }
            inverse.push(resolve(&self.inverse_filter(f)?)?);
            source.push(resolve(&self.source_filter(f)?)?);
            range.push(resolve(&self.range_filter(f)?)?);
        }
        for f in &self.filters {
            for g in &self.filters {
                product.push(match self.filter_product(f, g)? {
                    Some(h) => Some(resolve(&h)?),
                    None => None,
                });
            }
        }
        let base = FiniteGroupoid::from_parts(units, source, range, inverse, product);
        let violations = validate_groupoid(&base);
        Ok((base, violations))
    }

    pub fn weyl_bundle(&self) -> Result<WeylBundle<T::Elem>, WeylError> {
        let (base, violations) = self.filter_groupoid()?;
        let fibers: Vec<WeylFiber<T::Elem>> =
            self.filters.iter().map(|f| self.fiber(f)).collect();
        let mut corical = fibers.iter().all(|f| f.dim >= 1);
        if corical {
            for f in &self.filters {
                let pair = self.pair(self.test_set[f.generator].clone(), f);
                if !self.core_membership(&pair)?.member {
                    corical = false;
                    break;
                }
            }
        }
        Ok(WeylBundle {
            base,
            filters: self.filters.clone(),
            fibers,
            violations,
            corical,
        })
    }

    /// Containment in the order mirrors containment of ultrafilter sets:
    /// everything below `a` sits below `b` exactly when every ultrafilter
    /// through `a` passes through `b` — and a single interpolant below `b`
    /// already captures the whole lower set.  Expected to hold when the test
    /// set consists of invertible-valued slices.
    pub fn order_reflects_filters(&self) -> bool {
        let n = self.test_set.len();
        for i in 0..n {
            for j in 0..n {
                let lower_i = self.lower_set(i);
                let lower_j = self.lower_set(j);
                let order_side = is_subset(&lower_i, &lower_j);
                let filter_side =
                    is_subset(&self.filters_containing(i), &self.filters_containing(j));
                if order_side != filter_side {
                    return false;
                }
                let interpolated_side = (0..n)
                    .any(|c| self.below[c][j] && is_subset(&lower_i, &self.lower_set(c)));
                if interpolated_side != filter_side {
                    return false;
                }
            }
        }
        true
    }

    /// Pointwise compatibility of two lower sets mirrors the union of their
    /// ultrafilters forming a slice: no two distinct filters in the union
    /// share a source or a range.
    pub fn slices_match_compatibility(&self) -> Result<bool, WeylError> {
        let n = self.test_set.len();
        let mut sources = Vec::with_capacity(self.filters.len());
        let mut ranges = Vec::with_capacity(self.filters.len());
        for f in &self.filters {
            sources.push(self.source_filter(f)?.members);
            ranges.push(self.range_filter(f)?.members);
        }
        for i in 0..n {
            for j in 0..n {
                let lower_i = self.lower_set(i);
                let lower_j = self.lower_set(j);
                let compatible = lower_i.iter().all(|&x| {
                    lower_j.iter().all(|&y| {
                        self.dom
                            .compatibility_verdict(&self.test_set[x], &self.test_set[y])
                            .compatible
                    })
                });
                let mut union = self.filters_containing(i);
                for pos in self.filters_containing(j) {
                    if !union.contains(&pos) {
                        union.push(pos);
                    }
                }
                let mut slice = true;
                for (a, &fa) in union.iter().enumerate() {
                    for &fb in union.iter().skip(a + 1) {
                        if sources[fa] == sources[fb] || ranges[fa] == ranges[fb] {
                            slice = false;
                        }
                    }
                }
                if compatible != slice {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Ultrafilters are prime over the sums the test set can see: when a
    /// member is a sum of two test elements, the up-set of one of the
    /// summands stays inside the filter.
    pub fn prime_over_sums(&self) -> bool {
        let n = self.test_set.len();
        for i in 0..n {
            for j in 0..n {
                let sum = self.sa.add(&self.test_set[i], &self.test_set[j]);
                let Some(k) =
                    (0..n).find(|&k| close(self.sa, &self.test_set[k], &sum, &self.tol))
                else {
                    continue;
                };
                for f in &self.filters {
                    if !f.members.contains(&k) {
                        continue;
                    }
                    let left = is_subset(&self.upper_set(i), &f.members);
                    let right = is_subset(&self.upper_set(j), &f.members);
                    if !left && !right {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Identity-valued indicator sections, one per arrow — the canonical test set
/// for a bundle view.  Demands an invertible element in every fibre, which at
/// finite scale means square fibres.
pub fn indicator_test_set(
    fb: &Arc<FellBundle>,
    tol: &Tolerance,
) -> Result<Vec<Section>, WeylError> {
    let report = coricality(fb, tol);
    if !report.is_corical {
        return Err(WeylError::NotCorical {
            arrows: report.non_corical_arrows,
        });
    }
    Ok(fb
        .base()
        .elements()
        .map(|gamma| {
            let (rows, _) = fb.fiber_shape(gamma);
            Section::delta(fb, gamma, ComplexMatrix::identity(rows))
        })
        .collect())
}

/// Every arrow of a bundle's groupoid as a germ ultrafilter.
pub fn germ_filters(fb: &Arc<FellBundle>) -> Vec<UltrafilterRep> {
    fb.base()
        .elements()
        .map(|gamma| UltrafilterRep::Germ { gamma })
        .collect()
}

/// Germ membership: the section takes an invertible value at the arrow.
pub fn germ_membership(a: &Section, gamma: usize, tol: &Tolerance) -> bool {
    fiber_invertible(a.value(gamma), tol)
}

/// At a germ the quotient seminorm is the operator norm of the value.
pub fn germ_seminorm(a: &Section, gamma: usize) -> f64 {
    op_norm(a.value(gamma))
}

pub fn germ_pair(a: Section, gamma: usize) -> WeylPair<Section> {
    let seminorm = germ_seminorm(&a, gamma);
    WeylPair {
        representative: a,
        ultrafilter: UltrafilterRep::Germ { gamma },
        seminorm,
    }
}

fn germ_of(p: &WeylPair<Section>, role: &str) -> Result<usize, WeylError> {
    p.ultrafilter
        .germ()
        .ok_or_else(|| WeylError::RepresentationMismatch {
            context: format!("the {role} pair does not carry a germ ultrafilter"),
        })
}

/// Product of two germ pairs follows the groupoid composition directly.
pub fn germ_pair_product(
    p: &WeylPair<Section>,
    q: &WeylPair<Section>,
) -> Result<WeylPair<Section>, WeylError> {
    let ga = germ_of(p, "left")?;
    let gb = germ_of(q, "right")?;
    let g = p.representative.bundle().base();
    let Some(gc) = g.product(ga, gb) else {
        return Err(WeylError::NonComposable);
    };
    Ok(germ_pair(p.representative.mul(&q.representative), gc))
}

/// Two germ pairs are equal when they share the arrow and their values there
/// agree.
pub fn germ_pair_eq(
    p: &WeylPair<Section>,
    q: &WeylPair<Section>,
    tol: &Tolerance,
) -> Result<bool, WeylError> {
    let ga = germ_of(p, "left")?;
    let gb = germ_of(q, "right")?;
    if ga != gb {
        return Ok(false);
    }
    let diff = p.representative.value(ga).sub(q.representative.value(gb));
    Ok(op_norm(&diff) <= tol.allowance(p.seminorm.max(q.seminorm)))
}

/// Core membership of a germ pair: invertibility of the value at the arrow.
pub fn germ_core_membership(p: &WeylPair<Section>, tol: &Tolerance) -> Result<bool, WeylError> {
    let gamma = germ_of(p, "core")?;
    Ok(fiber_invertible(p.representative.value(gamma), tol))
}

/// Outcome of rebuilding a bundle from its section algebra and comparing the
/// result with the original.
#[derive(Clone, Debug)]
pub struct RoundTripReport {
    pub arrows: usize,
    pub ultrafilters: usize,
    /// Ultrafilters correspond one-to-one with the arrows through their
    /// indicator generators.
    pub groupoid_bijective: bool,
    /// Axiom failures of the reconstructed groupoid.
    pub law_violations: usize,
    /// Entries of the reconstructed unit/inverse/source/range/product tables
    /// that disagree with the original groupoid under the bijection.
    pub table_mismatches: usize,
    /// Quotient dimension per ultrafilter, in enumeration order.
    pub fiber_dims: Vec<usize>,
    /// Every quotient dimension equals the matching fibre dimension.
    pub fiber_dims_match: bool,
    /// Every null space kept its dimension at a tenth of the tolerance.
    pub fibers_stable: bool,
    /// Every reconstructed fibre contains an invertible pair.
    pub corical: bool,
    /// Largest gap between the witness-chain seminorm and the germ value.
    pub seminorm_residual: f64,
    /// Largest change a canonical reduction makes to a germ value.
    pub section_residual: f64,
    /// Largest gap between pair products and the bundle's fibre products,
    /// twist included.
    pub product_residual: f64,
    pub elapsed: Duration,
}

impl RoundTripReport {
    pub fn residual(&self) -> f64 {
        self.seminorm_residual
            .max(self.section_residual)
            .max(self.product_residual)
    }

    pub fn pass(&self) -> bool {
        self.groupoid_bijective
            && self.law_violations == 0
            && self.table_mismatches == 0
            && self.fiber_dims_match
            && self.fibers_stable
            && self.corical
            && self.residual() <= ROUNDTRIP_RESIDUAL_BOUND
    }
}

/// Rebuilds the bundle from its section algebra through the ultrafilter
/// machinery and reports how closely the reconstruction matches the original.
pub fn roundtrip(fb: &Arc<FellBundle>, tol: &Tolerance) -> Result<RoundTripReport, WeylError> {
    let start = Instant::now();
    let g = fb.base();
    let arrows = g.len();
    let indicators = indicator_test_set(fb, tol)?;
    let view = extract_structured(fb, tol)?;
    let engine = WeylEngine::new(&view, indicators, tol)?;
    let filters = engine.ultrafilters().to_vec();

    // The first `arrows` test-set entries are the indicators in arrow order,
    // so a generator index below `arrows` names its germ directly.
    let mut bijective = filters.len() == arrows;
    let mut germ_arrow: Vec<usize> = Vec::with_capacity(filters.len());
    for f in &filters {
        if f.generator < arrows {
            germ_arrow.push(f.generator);
        } else {
            bijective = false;
            germ_arrow.push(0);
        }
    }
    let mut seen = vec![false; arrows];
    for &gamma in &germ_arrow {
        if seen[gamma] {
            bijective = false;
        }
        seen[gamma] = true;
    }
    if filters.len() == arrows {
        bijective &= seen.iter().all(|&s| s);
    }

    let wb = engine.weyl_bundle()?;
    let law_violations = wb.violations.len();
    let corical = wb.corical;

    let mut table_mismatches = 0usize;
    if bijective {
        for i in 0..filters.len() {
            let gi = germ_arrow[i];
            if wb.base.is_unit(i) != g.is_unit(gi) {
                table_mismatches += 1;
            }
            if germ_arrow[wb.base.inverse(i)] != g.inverse(gi) {
                table_mismatches += 1;
            }
            if germ_arrow[wb.base.source(i)] != g.source(gi) {
                table_mismatches += 1;
            }
            if germ_arrow[wb.base.range(i)] != g.range(gi) {
                table_mismatches += 1;
            }
            for j in 0..filters.len() {
                let got = wb.base.product(i, j).map(|k| germ_arrow[k]);
                let want = g.product(germ_arrow[i], germ_arrow[j]);
                if got != want {
                    table_mismatches += 1;
                }
            }
        }
    }

    let fiber_dims: Vec<usize> = wb.fibers.iter().map(|f| f.dim).collect();
    let fibers_stable = wb.fibers.iter().all(|f| f.stable);
    let mut fiber_dims_match = bijective;
    if bijective {
        for (i, f) in wb.fibers.iter().enumerate() {
            let (rows, cols) = fb.fiber_shape(germ_arrow[i]);
            if f.dim != rows * cols {
                fiber_dims_match = false;
            }
        }
    }

    let mut sample: Vec<Section> = view.basis();
    let mut rng = SeededRng::new(ROUNDTRIP_SEED);
    for _ in 0..3 {
        sample.push(random_element(&view, &mut rng));
    }

    let mut seminorm_residual = 0.0f64;
    let mut section_residual = 0.0f64;
    if bijective {
        for a in &sample {
            for (i, f) in filters.iter().enumerate() {
                let germ_value = germ_seminorm(a, germ_arrow[i]);
                let witness_value = engine.seminorm(a, f);
                seminorm_residual = seminorm_residual.max((germ_value - witness_value).abs());

                let reduced = engine.reduce(a, f);
                let diff = reduced.value(germ_arrow[i]).sub(a.value(germ_arrow[i]));
                section_residual = section_residual.max(op_norm(&diff));
            }
        }
    }

    let mut product_residual = 0.0f64;
    if bijective {
        let a = random_element(&view, &mut rng);
        let b = random_element(&view, &mut rng);
        let pairs_a: Vec<WeylPair<Section>> = filters
            .iter()
            .map(|f| engine.pair(a.clone(), f))
            .collect();
        let pairs_b: Vec<WeylPair<Section>> = filters
            .iter()
            .map(|f| engine.pair(b.clone(), f))
            .collect();
        for i in 0..filters.len() {
            for j in 0..filters.len() {
                let (alpha, beta) = (germ_arrow[i], germ_arrow[j]);
                let Some(gamma) = g.product(alpha, beta) else {
                    continue;
                };
                let prod = engine.pair_product(&pairs_a[i], &pairs_b[j])?;
                let want = fb.fiber_product(alpha, beta, a.value(alpha), b.value(beta));
                let diff = prod.representative.value(gamma).sub(&want);
                product_residual = product_residual.max(op_norm(&diff));
            }
        }
    }

    Ok(RoundTripReport {
        arrows,
        ultrafilters: filters.len(),
        groupoid_bijective: bijective,
        law_violations,
        table_mismatches,
        fiber_dims,
        fiber_dims_match,
        fibers_stable,
        corical,
        seminorm_residual,
        section_residual,
        product_residual,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{generate_bundle, DimProfile, TwistFamily};
    use crate::groupoid::{cyclic_group_table, product_group_table, GroupoidFamily};
    use crate::sections::StructuredView;
    use crate::structured::MatrixStructured;
    use proptest::prelude::*;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn line_pair(points: usize) -> Arc<FellBundle> {
        generate_bundle(
            &GroupoidFamily::Pair { points },
            &DimProfile::Constant(1),
            &TwistFamily::Trivial,
            0,
        )
        .expect("pair line bundle")
    }

    fn matrix_pair(points: usize, d: usize) -> Arc<FellBundle> {
        generate_bundle(
            &GroupoidFamily::Pair { points },
            &DimProfile::Constant(d),
            &TwistFamily::Trivial,
            0,
        )
        .expect("pair matrix bundle")
    }

    fn z2_line() -> Arc<FellBundle> {
        generate_bundle(
            &GroupoidFamily::Group {
                table: cyclic_group_table(2),
            },
            &DimProfile::Constant(1),
            &TwistFamily::Trivial,
            0,
        )
        .expect("z2 line bundle")
    }

    fn klein_twisted_line() -> Arc<FellBundle> {
        generate_bundle(
            &GroupoidFamily::Group {
                table: product_group_table(&cyclic_group_table(2), &cyclic_group_table(2)),
            },
            &DimProfile::Constant(1),
            &TwistFamily::KleinBicharacter,
            0,
        )
        .expect("twisted klein bundle")
    }

    fn engine_over<'a>(
        view: &'a StructuredView,
        fb: &Arc<FellBundle>,
    ) -> WeylEngine<'a, StructuredView> {
        let indicators = indicator_test_set(fb, &tol()).expect("corical bundle");
        WeylEngine::new(view, indicators, &tol()).expect("engine")
    }

    fn indicator(fb: &Arc<FellBundle>, gamma: usize) -> Section {
        let (rows, _) = fb.fiber_shape(gamma);
        Section::delta(fb, gamma, ComplexMatrix::identity(rows))
    }

    #[test]
    fn indicator_filters_biject_with_the_arrows() {
        let fb = line_pair(2);
        let view = extract_structured(&fb, &tol()).unwrap();
        let engine = engine_over(&view, &fb);
        let filters = engine.ultrafilters();
        assert_eq!(filters.len(), 4);
        let mut generators: Vec<usize> = filters.iter().map(|f| f.generator).collect();
        generators.sort_unstable();
        assert_eq!(generators, vec![0, 1, 2, 3]);
        for f in filters {
            assert_eq!(f.members, vec![f.generator]);
        }
        assert_eq!(germ_filters(&fb).len(), 4);
    }

    #[test]
    fn group_line_yields_one_filter_per_element() {
        let fb = z2_line();
        let view = extract_structured(&fb, &tol()).unwrap();
        let engine = engine_over(&view, &fb);
        assert_eq!(engine.ultrafilters().len(), 2);
        let unit_flags: Vec<bool> = engine
            .ultrafilters()
            .iter()
            .map(|f| engine.is_unit_filter(f))
            .collect();
        let germ_flags: Vec<bool> = engine
            .ultrafilters()
            .iter()
            .map(|f| fb.base().is_unit(f.generator))
            .collect();
        assert_eq!(unit_flags, germ_flags);
        assert_eq!(unit_flags.iter().filter(|&&u| u).count(), 1);
    }

    #[test]
    fn zero_test_sets_have_no_proper_filters() {
        let fb = line_pair(2);
        let view = extract_structured(&fb, &tol()).unwrap();
        let engine = WeylEngine::new(&view, vec![Section::zero(&fb)], &tol()).unwrap();
        assert!(engine.ultrafilters().is_empty());

        // Adding the zero element to a working test set changes nothing: it
        // joins no proper filter.
        let engine =
            WeylEngine::new(&view, vec![Section::zero(&fb), indicator(&fb, 0)], &tol()).unwrap();
        assert_eq!(engine.ultrafilters().len(), 1);
        assert_eq!(engine.ultrafilters()[0].members.len(), 1);
    }

    #[test]
    fn oversized_test_sets_are_rejected() {
        let fb = line_pair(5);
        let view = extract_structured(&fb, &tol()).unwrap();
        let indicators = indicator_test_set(&fb, &tol()).unwrap();
        assert_eq!(indicators.len(), 25);
        match WeylEngine::new(&view, indicators, &tol()) {
            Err(WeylError::TestSetTooLarge { size, cap }) => {
                assert_eq!(size, 25);
                assert_eq!(cap, MAX_TEST_SET);
            }
            Err(other) => panic!("expected the cap to fire, got {other:?}"),
            Ok(_) => panic!("expected the cap to fire, got an engine"),
        }
    }

    #[test]
    fn filter_products_follow_the_groupoid() {
        let fb = line_pair(2);
        let g = fb.base();
        let view = extract_structured(&fb, &tol()).unwrap();
        let engine = engine_over(&view, &fb);
        let filters = engine.ultrafilters();
        let by_arrow = |gamma: usize| {
            filters
                .iter()
                .find(|f| f.generator == gamma)
                .expect("filter for arrow")
        };
        // Arrows of the two-point pair groupoid: (i, j) has id 2i + j.
        let product = engine
            .filter_product(by_arrow(1), by_arrow(2))
            .unwrap()
            .expect("(0,1)·(1,0) composes");
        assert_eq!(product.generator, 0);
        assert!(engine
            .filter_product(by_arrow(1), by_arrow(1))
            .unwrap()
            .is_none());
        for f in filters {
            for h in filters {
                let got = engine
                    .filter_product(f, h)
                    .unwrap()
                    .map(|p| p.generator);
                assert_eq!(got, g.product(f.generator, h.generator));
            }
        }
    }

    #[test]
    fn inverses_trace_the_groupoid_and_triple_products_return_home() {
        let fb = line_pair(2);
        let g = fb.base();
        let view = extract_structured(&fb, &tol()).unwrap();
        let engine = engine_over(&view, &fb);
        for f in engine.ultrafilters() {
            let inv = engine.inverse_filter(f).unwrap();
            assert_eq!(inv.generator, g.inverse(f.generator));
            assert_eq!(
                engine.source_filter(f).unwrap().generator,
                g.source(f.generator)
            );
            assert_eq!(
                engine.range_filter(f).unwrap().generator,
                g.range(f.generator)
            );
            // U · U* · U walks back to U.
            let back = engine
                .filter_product(&engine.range_filter(f).unwrap(), f)
                .unwrap()
                .expect("range unit composes with the filter");
            assert_eq!(&back, f);
        }
    }

    #[test]
    fn seminorms_localize_at_the_germ() {
        let fb = line_pair(2);
        let view = extract_structured(&fb, &tol()).unwrap();
        let engine = engine_over(&view, &fb);
        let filters = engine.ultrafilters();
        let by_arrow = |gamma: usize| {
            filters
                .iter()
                .find(|f| f.generator == gamma)
                .expect("filter for arrow")
        };

        // The all-ones section has unit seminorm at every germ.
        let mut ones = Section::zero(&fb);
        for gamma in fb.base().elements() {
            ones = ones.with_value(gamma, ComplexMatrix::identity(1));
        }
        let value = engine.seminorm(&ones, by_arrow(1));
        assert!((value - 1.0).abs() < 1e-9, "got {value}");
        assert_eq!(engine.seminorm(&Section::zero(&fb), by_arrow(1)), 0.0);

        // The witness formula agrees with the germ value across the basis.
        for a in view.basis() {
            for f in filters {
                let germ = germ_seminorm(&a, f.generator);
                let witness = engine.seminorm(&a, f);
                assert!(
                    (germ - witness).abs() < 1e-9,
                    "germ {germ} vs witness {witness}"
                );
            }
        }

        // A section over the diagonal slice attains its norm at a germ.
        let a = indicator(&fb, 0)
            .scale(Complex64::new(3.0, 0.0))
            .add(&indicator(&fb, 3).scale(Complex64::new(0.0, 4.0)));
        let max = filters
            .iter()
            .map(|f| engine.seminorm(&a, f))
            .fold(0.0f64, f64::max);
        assert!((max - 4.0).abs() < 1e-9, "got {max}");
        assert!((view.norm(&a) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn fibers_match_the_bundle_dimensions() {
        let cases = [
            (line_pair(2), 1usize),
            (matrix_pair(2, 2), 4usize),
            (z2_line(), 1usize),
        ];
        for (fb, want) in &cases {
            let view = extract_structured(fb, &tol()).unwrap();
            let engine = engine_over(&view, fb);
            for f in engine.ultrafilters() {
                let fiber = engine.fiber(f);
                assert_eq!(fiber.dim, *want);
                assert!(fiber.stable);
                assert_eq!(fiber.representatives.len(), *want);
                for rep in &fiber.representatives {
                    assert!(engine.seminorm(rep, f) > tol().invertibility_threshold);
                }
            }
        }
    }

    #[test]
    fn reduction_preserves_the_germ() {
        let fb = matrix_pair(2, 2);
        let view = extract_structured(&fb, &tol()).unwrap();
        let engine = engine_over(&view, &fb);
        let mut rng = SeededRng::new(0xbead);
        let a = random_element(&view, &mut rng);
        for f in engine.ultrafilters() {
            let reduced = engine.reduce(&a, f);
            let diff = reduced.value(f.generator).sub(a.value(f.generator));
            assert!(op_norm(&diff) < 1e-9);
            let p = engine.pair(a.clone(), f);
            let q = engine.pair(reduced, f);
            assert!(engine.pair_eq(&p, &q).unwrap());
        }
    }

    #[test]
    fn pair_products_compose_and_respect_units() {
        let fb = line_pair(2);
        let g = fb.base();
        let view = extract_structured(&fb, &tol()).unwrap();
        let engine = engine_over(&view, &fb);
        let filters = engine.ultrafilters();
        let by_arrow = |gamma: usize| {
            filters
                .iter()
                .find(|f| f.generator == gamma)
                .expect("filter for arrow")
        };

        // [1_{(0,1)}, U] · [1_{(1,0)}, V] lands at the unit arrow with the
        // identity as representative value.
        let p = engine.pair(indicator(&fb, 1), by_arrow(1));
        let q = engine.pair(indicator(&fb, 2), by_arrow(2));
        let prod = engine.pair_product(&p, &q).unwrap();
        assert_eq!(prod.ultrafilter.finite().unwrap().generator, 0);
        let diff = prod.representative.value(0).sub(&ComplexMatrix::identity(1));
        assert!(op_norm(&diff) < 1e-9);

        // The germ representation computes the same product.
        let gp = germ_pair(indicator(&fb, 1), 1);
        let gq = germ_pair(indicator(&fb, 2), 2);
        let gprod = germ_pair_product(&gp, &gq).unwrap();
        assert_eq!(gprod.ultrafilter.germ(), Some(0));
        let diff = gprod
            .representative
            .value(0)
            .sub(prod.representative.value(0));
        assert!(op_norm(&diff) < 1e-9);

        // Multiplying by the source unit's indicator leaves the class alone.
        let mut rng = SeededRng::new(0x7a1e);
        let a = random_element(&view, &mut rng);
        let pa = engine.pair(a.clone(), by_arrow(1));
        let source_unit = g.source(1);
        let pu = engine.pair(indicator(&fb, source_unit), by_arrow(source_unit));
        let moved = engine.pair_product(&pa, &pu).unwrap();
        assert!(engine.pair_eq(&moved, &pa).unwrap());

        // Zero absorbs products.
        let zp = engine.pair(Section::zero(&fb), by_arrow(1));
        let absorbed = engine.pair_product(&zp, &q).unwrap();
        assert!(absorbed.seminorm < 1e-12);

        // Non-composable filters refuse to multiply.
        match engine.pair_product(&p, &p) {
            Err(WeylError::NonComposable) => {}
            other => panic!("expected NonComposable, got {other:?}"),
        }

        // Germ pairs cannot enter the finite-filter engine.
        match engine.pair_product(&gp, &q) {
            Err(WeylError::RepresentationMismatch { .. }) => {}
            other => panic!("expected RepresentationMismatch, got {other:?}"),
        }
    }

    #[test]
    fn core_membership_detects_invertible_germs() {
        let fb = line_pair(2);
        let view = extract_structured(&fb, &tol()).unwrap();
        let engine = engine_over(&view, &fb);
        let by_arrow = |gamma: usize| {
            engine
                .ultrafilters()
                .iter()
                .find(|f| f.generator == gamma)
                .unwrap()
                .clone()
        };

        let good = engine.pair(indicator(&fb, 1), &by_arrow(1));
        let verdict = engine.core_membership(&good).unwrap();
        assert!(verdict.member && verdict.inverse_certified);

        let zero = engine.pair(Section::zero(&fb), &by_arrow(1));
        let verdict = engine.core_membership(&zero).unwrap();
        assert!(!verdict.member && verdict.agreement());

        // A singular value at the germ keeps the pair out of the core.
        let fb2 = matrix_pair(2, 2);
        let view2 = extract_structured(&fb2, &tol()).unwrap();
        let engine2 = engine_over(&view2, &fb2);
        let f = engine2
            .ultrafilters()
            .iter()
            .find(|f| f.generator == 1)
            .unwrap()
            .clone();
        let singular = Section::delta(
            &fb2,
            1,
            ComplexMatrix::diag(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]),
        );
        let pair = engine2.pair(singular.clone(), &f);
        let verdict = engine2.core_membership(&pair).unwrap();
        assert!(!verdict.member && verdict.agreement());

        // Germ verdicts line up.
        assert!(germ_core_membership(&germ_pair(indicator(&fb, 1), 1), &tol()).unwrap());
        assert!(!germ_core_membership(&germ_pair(singular, 1), &tol()).unwrap());
    }

    #[test]
    fn representation_gates_on_the_expectation_checks() {
        // A projection onto two matrix units is idempotent but not an
        // expectation, so the gate must refuse it.
        let zero = vec![ComplexMatrix::zeros(2, 2)];
        let unit = |i: usize, j: usize| {
            let mut m = ComplexMatrix::zeros(2, 2);
            m.set(i, j, Complex64::new(1.0, 0.0));
            vec![m]
        };
        let broken = MatrixStructured::cartan(2).with_phi_images(vec![
            unit(0, 0),
            unit(0, 1),
            zero.clone(),
            zero,
        ]);
        let basis = broken.basis();
        let engine = WeylEngine::new(&broken, basis.clone(), &tol()).unwrap();
        match engine.representation(&basis[0]) {
            Err(WeylError::NotWellStructured { reason }) => {
                assert!(reason.contains("normal"), "reason: {reason}");
            }
            other => panic!("expected the gate to fire, got {other:?}"),
        }

        let sa = MatrixStructured::cartan(2);
        let basis = sa.basis();
        let engine = WeylEngine::new(&sa, basis.clone(), &tol()).unwrap();
        assert_eq!(engine.ultrafilters().len(), 4);

        let e01 = &basis[1];
        let pairs = engine.representation(e01).unwrap();
        assert_eq!(pairs.len(), 4);

        // The expectation's image is the restriction to unit filters: equal
        // classes there, vanishing classes elsewhere.
        let phi_e = sa.phi(&sa.add(e01, &basis[0]));
        for f in engine.ultrafilters() {
            let p = engine.pair(phi_e.clone(), f);
            if engine.is_unit_filter(f) {
                let q = engine.pair(sa.add(e01, &basis[0]), f);
                assert!(engine.pair_eq(&p, &q).unwrap());
            } else {
                assert!(p.seminorm < 1e-9);
            }
        }

        // Contractive for both auxiliary norms; the supremum over filters
        // picks out the largest germ of the element, which undercuts the
        // full operator norm when the support is not a slice.
        let a = sa.add(e01, &sa.scale(Complex64::new(0.0, 2.0), &basis[3]));
        let sup = engine
            .ultrafilters()
            .iter()
            .map(|f| engine.seminorm(&a, f))
            .fold(0.0f64, f64::max);
        let two_norm = sa.norm(&sa.phi(&sa.mul(&sa.star(&a), &a))).sqrt();
        assert!(sup <= two_norm + 1e-9);
        assert!(sup <= sa.norm(&a) + 1e-9);
        assert!((sup - 2.0).abs() < 1e-9, "sup {sup}");

        // On slice-supported elements the supremum is the norm itself.
        let b = sa.scale(Complex64::new(0.0, -3.0), e01);
        let sup_b = engine
            .ultrafilters()
            .iter()
            .map(|f| engine.seminorm(&b, f))
            .fold(0.0f64, f64::max);
        assert!((sup_b - sa.norm(&b)).abs() < 1e-9);

        // Multiplicative on slice elements.
        let p = engine.pair(basis[1].clone(), &engine.ultrafilters()[1]);
        let q = engine.pair(basis[2].clone(), &engine.ultrafilters()[2]);
        let prod = engine.pair_product(&p, &q);
        if let Ok(prod) = prod {
            let direct = engine.pair(
                sa.mul(&basis[1], &basis[2]),
                prod.ultrafilter.finite().unwrap(),
            );
            assert!(engine.pair_eq(&prod, &direct).unwrap());
        }
    }

    #[test]
    fn order_laws_agree_with_filter_laws() {
        // Indicators of the two-point pair groupoid plus the diagonal sum:
        // a set with a genuine two-element filter above each diagonal germ.
        let fb = line_pair(2);
        let view = extract_structured(&fb, &tol()).unwrap();
        let c = indicator(&fb, 0).add(&indicator(&fb, 3));
        let engine = WeylEngine::new(
            &view,
            vec![indicator(&fb, 0), indicator(&fb, 3), c],
            &tol(),
        )
        .unwrap();
        assert_eq!(engine.ultrafilters().len(), 2);
        for f in engine.ultrafilters() {
            assert_eq!(f.members.len(), 2, "members {:?}", f.members);
        }
        assert!(engine.order_reflects_filters());
        assert!(engine.slices_match_compatibility().unwrap());
        assert!(engine.prime_over_sums());

        // The full indicator set of a three-point pair groupoid.
        let fb = line_pair(3);
        let view = extract_structured(&fb, &tol()).unwrap();
        let engine = engine_over(&view, &fb);
        assert_eq!(engine.ultrafilters().len(), 9);
        assert!(engine.order_reflects_filters());
        assert!(engine.slices_match_compatibility().unwrap());
        assert!(engine.prime_over_sums());
    }

    #[test]
    fn roundtrip_reconstructs_the_line_bundle() {
        let fb = line_pair(2);
        let report = roundtrip(&fb, &tol()).unwrap();
        assert!(report.pass(), "report: {report:?}");
        assert_eq!(report.ultrafilters, 4);
        assert_eq!(report.fiber_dims, vec![1, 1, 1, 1]);
        assert!(report.residual() <= 1e-9);
    }

    #[test]
    fn roundtrip_recovers_the_twisted_klein_line() {
        let fb = klein_twisted_line();
        // The sign pairing is genuinely nontrivial on this group.
        assert!((fb.twist().get(1, 2) - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        let report = roundtrip(&fb, &tol()).unwrap();
        assert!(report.pass(), "report: {report:?}");
        assert_eq!(report.ultrafilters, 4);

        // The reconstructed product carries the sign of the twist.
        let view = extract_structured(&fb, &tol()).unwrap();
        let engine = engine_over(&view, &fb);
        let by_arrow = |gamma: usize| {
            engine
                .ultrafilters()
                .iter()
                .find(|f| f.generator == gamma)
                .unwrap()
                .clone()
        };
        let p = engine.pair(indicator(&fb, 1), &by_arrow(1));
        let q = engine.pair(indicator(&fb, 2), &by_arrow(2));
        let prod = engine.pair_product(&p, &q).unwrap();
        let product_arrow = fb.base().product(1, 2).unwrap();
        let got = prod.representative.value(product_arrow).get(0, 0);
        assert!((got - Complex64::new(-1.0, 0.0)).norm() < 1e-9, "got {got}");
    }

    #[test]
    fn roundtrip_handles_matrix_fibres() {
        let fb = matrix_pair(2, 2);
        let report = roundtrip(&fb, &tol()).unwrap();
        assert!(report.pass(), "report: {report:?}");
        assert_eq!(report.fiber_dims, vec![4, 4, 4, 4]);
    }

    #[test]
    fn roundtrip_rejects_non_corical_bundles() {
        let fb = generate_bundle(
            &GroupoidFamily::Pair { points: 2 },
            &DimProfile::PerUnit(vec![1, 2]),
            &TwistFamily::Trivial,
            0,
        )
        .expect("mixed-dimension bundle");
        match roundtrip(&fb, &tol()) {
            Err(WeylError::NotCorical { arrows }) => {
                assert_eq!(arrows.len(), 2);
            }
            other => panic!("expected NotCorical, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]

        #[test]
        fn roundtrips_across_random_corical_bundles(
            seed in 0u64..4096,
            family in 0usize..4,
            d in 1usize..3,
            twisted in proptest::bool::ANY,
        ) {
            let (family, twist) = match family {
                0 => (
                    GroupoidFamily::Pair { points: 2 },
                    if twisted { TwistFamily::RandomCoboundary } else { TwistFamily::Trivial },
                ),
                1 => (
                    GroupoidFamily::Pair { points: 3 },
                    if twisted { TwistFamily::RandomCoboundary } else { TwistFamily::Trivial },
                ),
                2 => (
                    GroupoidFamily::Group { table: cyclic_group_table(2) },
                    if twisted { TwistFamily::RandomCoboundary } else { TwistFamily::Trivial },
                ),
                _ => (
                    GroupoidFamily::Group {
                        table: product_group_table(&cyclic_group_table(2), &cyclic_group_table(2)),
                    },
                    if twisted { TwistFamily::KleinBicharacter } else { TwistFamily::Trivial },
                ),
            };
            let fb = generate_bundle(&family, &DimProfile::Constant(d), &twist, seed)
                .expect("corical bundle");
            let report = roundtrip(&fb, &tol()).unwrap();
            prop_assert!(report.pass(), "report: {report:?}");
        }
    }
}
