//! Finite groupoids with the discrete topology.
//!
//! Elements are integer ids `0..len`. A groupoid is stored as an explicit
//! product table plus source/range/inverse maps, so every axiom can be
//! verified by direct scan and composable pairs can be enumerated cheaply.
//! At this scale the discrete topology makes the groupoid automatically
//! étale, locally compact and Hausdorff, every subgroupoid open, and every
//! functor proper.

use num_complex::Complex64;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupoidError {
    #[error("invalid generator parameters: {reason}")]
    InvalidParams { reason: String },
    #[error("not a functor: {reason}")]
    InvalidFunctor { reason: String },
    #[error("subset is not a subgroupoid: {reason}")]
    NotSubgroupoid { reason: String },
}

/// A finite groupoid as explicit tables. Construction does not validate the
/// axioms; run [`validate_groupoid`] to get a violation report.
#[derive(Clone, PartialEq)]
pub struct FiniteGroupoid {
    units: Vec<usize>,
    source: Vec<usize>,
    range: Vec<usize>,
    inverse: Vec<usize>,
    /// Row-major `len x len`; entry `(a, b)` is `Some(ab)` where defined.
    product: Vec<Option<usize>>,
    /// Arrows grouped by source element id (nonempty only at units).
    star: Vec<Vec<usize>>,
    /// Arrows grouped by range element id.
    costar: Vec<Vec<usize>>,
    /// Position of each unit in `units`, by element id.
    unit_pos: Vec<Option<usize>>,
}

impl FiniteGroupoid {
    /// Assemble from raw tables. Panics on shape errors (indices out of
    /// range, wrong lengths); semantic axioms are left to the validator.
    pub fn from_parts(
        units: Vec<usize>,
        source: Vec<usize>,
        range: Vec<usize>,
        inverse: Vec<usize>,
        product: Vec<Option<usize>>,
    ) -> Self {
        let n = source.len();
        assert_eq!(range.len(), n, "range table has wrong length");
        assert_eq!(inverse.len(), n, "inverse table has wrong length");
        assert_eq!(product.len(), n * n, "product table has wrong length");
        let in_range = |&i: &usize| i < n;
        assert!(units.iter().all(in_range), "unit id out of range");
        assert!(source.iter().all(in_range), "source id out of range");
        assert!(range.iter().all(in_range), "range id out of range");
        assert!(inverse.iter().all(in_range), "inverse id out of range");
        assert!(
            product.iter().flatten().all(|&i| i < n),
            "product id out of range"
        );

        let mut units = units;
        units.sort_unstable();
        units.dedup();

        let mut star = vec![Vec::new(); n];
        let mut costar = vec![Vec::new(); n];
        for gamma in 0..n {
            star[source[gamma]].push(gamma);
            costar[range[gamma]].push(gamma);
        }
        let mut unit_pos = vec![None; n];
        for (pos, &u) in units.iter().enumerate() {
            unit_pos[u] = Some(pos);
        }
        Self {
            units,
            source,
            range,
            inverse,
            product,
            star,
            costar,
            unit_pos,
        }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn elements(&self) -> impl Iterator<Item = usize> {
        0..self.len()
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn is_unit(&self, gamma: usize) -> bool {
        self.unit_pos[gamma].is_some()
    }

    /// Position of a unit inside `units()`, used to index per-unit data.
    pub fn unit_position(&self, gamma: usize) -> Option<usize> {
        self.unit_pos[gamma]
    }

    pub fn source(&self, gamma: usize) -> usize {
        self.source[gamma]
    }

    pub fn range(&self, gamma: usize) -> usize {
        self.range[gamma]
    }

    pub fn inverse(&self, gamma: usize) -> usize {
        self.inverse[gamma]
    }

    pub fn product(&self, a: usize, b: usize) -> Option<usize> {
        self.product[a * self.len() + b]
    }

    pub fn composable(&self, a: usize, b: usize) -> bool {
        self.source[a] == self.range[b]
    }

    /// Arrows with the given source.
    pub fn star(&self, x: usize) -> &[usize] {
        &self.star[x]
    }

    /// Arrows with the given range.
    pub fn costar(&self, x: usize) -> &[usize] {
        &self.costar[x]
    }

    pub fn composable_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for a in self.elements() {
            for &b in self.costar(self.source[a]) {
                pairs.push((a, b));
            }
        }
        pairs
    }

    pub fn product_table(&self) -> &[Option<usize>] {
        &self.product
    }

    pub fn source_table(&self) -> &[usize] {
        &self.source
    }

    pub fn range_table(&self) -> &[usize] {
        &self.range
    }

    pub fn inverse_table(&self) -> &[usize] {
        &self.inverse
    }
}

impl fmt::Debug for FiniteGroupoid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "FiniteGroupoid {{ elements: {}, units: {:?} }}",
            self.len(),
            self.units
        )
    }
}

/// A single broken axiom, with the witnesses that break it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupoidViolation {
    /// A listed unit is not fixed by source, range and inverse, or is not
    /// idempotent.
    UnitMalformed { unit: usize },
    /// The source of an element is not a listed unit.
    SourceNotUnit { element: usize },
    /// The range of an element is not a listed unit.
    RangeNotUnit { element: usize },
    /// The product is defined on a non-composable pair, or undefined on a
    /// composable one.
    ComposabilityWrong {
        left: usize,
        right: usize,
        defined: bool,
    },
    /// A defined product has the wrong source or range.
    ProductLegsWrong { left: usize, right: usize },
    /// Composing with the range or source unit does not return the element.
    IdentityFails { element: usize },
    /// The inverse does not satisfy its defining equations.
    InverseFails { element: usize },
    /// `(ab)c` and `a(bc)` differ (including defined-on-one-side-only).
    NonAssociativeTriple { a: usize, b: usize, c: usize },
}

impl fmt::Display for GroupoidViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            GroupoidViolation::UnitMalformed { unit } => {
                write!(f, "unit {unit} is not a self-inverse idempotent fixed point")
            }
            GroupoidViolation::SourceNotUnit { element } => {
                write!(f, "source of {element} is not a unit")
            }
            GroupoidViolation::RangeNotUnit { element } => {
                write!(f, "range of {element} is not a unit")
            }
            GroupoidViolation::ComposabilityWrong {
                left,
                right,
                defined,
            } => {
                if defined {
                    write!(f, "product defined on non-composable pair ({left}, {right})")
                } else {
                    write!(f, "product missing on composable pair ({left}, {right})")
                }
            }
            GroupoidViolation::ProductLegsWrong { left, right } => {
                write!(f, "product of ({left}, {right}) has wrong source or range")
            }
            GroupoidViolation::IdentityFails { element } => {
                write!(f, "identity laws fail at {element}")
            }
            GroupoidViolation::InverseFails { element } => {
                write!(f, "inverse laws fail at {element}")
            }
            GroupoidViolation::NonAssociativeTriple { a, b, c } => {
                write!(f, "associativity fails on ({a}, {b}, {c})")
            }
        }
    }
}

/// Scan every axiom and report each violation with its witnesses. The empty
/// report certifies a groupoid.
pub fn validate_groupoid(g: &FiniteGroupoid) -> Vec<GroupoidViolation> {
    let mut out = Vec::new();
    let n = g.len();

    for &u in g.units() {
        let fixed = g.source(u) == u && g.range(u) == u && g.inverse(u) == u;
        let idempotent = g.product(u, u) == Some(u);
        if !fixed || !idempotent {
            out.push(GroupoidViolation::UnitMalformed { unit: u });
        }
    }
    for gamma in g.elements() {
        if !g.is_unit(g.source(gamma)) {
            out.push(GroupoidViolation::SourceNotUnit { element: gamma });
        }
        if !g.is_unit(g.range(gamma)) {
            out.push(GroupoidViolation::RangeNotUnit { element: gamma });
        }
    }

    for a in 0..n {
        for b in 0..n {
            let defined = g.product(a, b).is_some();
            if defined != g.composable(a, b) {
                out.push(GroupoidViolation::ComposabilityWrong {
                    left: a,
                    right: b,
                    defined,
                });
            }
            if let Some(ab) = g.product(a, b) {
                if g.source(ab) != g.source(b) || g.range(ab) != g.range(a) {
                    out.push(GroupoidViolation::ProductLegsWrong { left: a, right: b });
                }
            }
        }
    }

    for gamma in g.elements() {
        let r = g.range(gamma);
        let s = g.source(gamma);
        if g.product(r, gamma) != Some(gamma) || g.product(gamma, s) != Some(gamma) {
            out.push(GroupoidViolation::IdentityFails { element: gamma });
        }
        let inv = g.inverse(gamma);
        let left_ok = g.product(gamma, inv) == Some(r);
        let right_ok = g.product(inv, gamma) == Some(s);
        if !left_ok || !right_ok || g.inverse(inv) != gamma {
            out.push(GroupoidViolation::InverseFails { element: gamma });
        }
    }

    // Associativity, including agreement of defined-ness on both sides.
    for a in 0..n {
        for b in g.costar(g.source(a)).to_vec() {
            let ab = g.product(a, b);
            for c in 0..n {
                let bc = g.product(b, c);
                let left = ab.and_then(|ab| g.product(ab, c));
                let right = bc.and_then(|bc| g.product(a, bc));
                if left != right {
                    out.push(GroupoidViolation::NonAssociativeTriple { a, b, c });
                }
            }
        }
    }
    out
}

/// Whether both source and range are injective on the subset — the dual
/// characterization of `SS⁻¹ ∪ S⁻¹S` consisting of units.
pub fn is_slice(g: &FiniteGroupoid, subset: &[usize]) -> bool {
    let mut sources = BTreeSet::new();
    let mut ranges = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for &gamma in subset {
        if !seen.insert(gamma) {
            continue;
        }
        if !sources.insert(g.source(gamma)) || !ranges.insert(g.range(gamma)) {
            return false;
        }
    }
    true
}

/// All slices that cannot be enlarged by another arrow, each sorted
/// ascending. Every slice extends to a maximal one, so a union over this
/// family covers all slice-supported data. Errors once more than `cap`
/// maximal slices exist.
pub fn maximal_slices(g: &FiniteGroupoid, cap: usize) -> Result<Vec<Vec<usize>>, GroupoidError> {
    let n = g.len();
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut chosen: Vec<usize> = Vec::new();
    let mut source_used = vec![false; n];
    let mut range_used = vec![false; n];
    fn rec(
        g: &FiniteGroupoid,
        next: usize,
        chosen: &mut Vec<usize>,
        source_used: &mut [bool],
        range_used: &mut [bool],
        cap: usize,
        out: &mut Vec<Vec<usize>>,
    ) -> Result<(), GroupoidError> {
        if next == g.len() {
            let maximal = g
                .elements()
                .all(|gamma| source_used[g.source(gamma)] || range_used[g.range(gamma)]);
            if maximal {
                if out.len() == cap {
                    return Err(GroupoidError::InvalidParams {
                        reason: format!("more than {cap} maximal slices"),
                    });
                }
                out.push(chosen.clone());
            }
            return Ok(());
        }
        let s = g.source(next);
        let r = g.range(next);
        if !source_used[s] && !range_used[r] {
            source_used[s] = true;
            range_used[r] = true;
            chosen.push(next);
            rec(g, next + 1, chosen, source_used, range_used, cap, out)?;
            chosen.pop();
            source_used[s] = false;
            range_used[r] = false;
        }
        rec(g, next + 1, chosen, source_used, range_used, cap, out)
    }
    rec(
        g,
        0,
        &mut chosen,
        &mut source_used,
        &mut range_used,
        cap,
        &mut out,
    )?;
    out.sort();
    Ok(out)
}

/// Generator families for groupoid instances. All constructions are
/// canonical: the same family always yields the same tables.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupoidFamily {
    /// The pair groupoid on `points` objects: arrows `(i, j)` from `j` to
    /// `i`, composing by matching indices.
    Pair { points: usize },
    /// A single-object groupoid from a group multiplication table
    /// (`table[a][b]` is the product, ids `0..order`).
    Group { table: Vec<Vec<usize>> },
    /// Disjoint union of the listed families, ids offset in order.
    DisjointUnion { parts: Vec<GroupoidFamily> },
    /// One copy of the given group sitting over each of `fibres` units,
    /// with no arrows between distinct units.
    GroupBundle { fibres: usize, table: Vec<Vec<usize>> },
}

/// Build a groupoid from a family description. The result always passes
/// [`validate_groupoid`].
pub fn generate(family: &GroupoidFamily) -> Result<FiniteGroupoid, GroupoidError> {
    let g = match family {
        GroupoidFamily::Pair { points } => {
            if *points == 0 {
                return Err(GroupoidError::InvalidParams {
                    reason: "pair groupoid needs at least one point".into(),
                });
            }
            pair_groupoid(*points)
        }
        GroupoidFamily::Group { table } => {
            let identity = validate_group_table(table)?;
            group_groupoid(table, identity)
        }
        GroupoidFamily::DisjointUnion { parts } => {
            if parts.is_empty() {
                return Err(GroupoidError::InvalidParams {
                    reason: "disjoint union needs at least one part".into(),
                });
            }
            let built: Result<Vec<FiniteGroupoid>, GroupoidError> =
                parts.iter().map(generate).collect();
            disjoint_union(&built?)
        }
        GroupoidFamily::GroupBundle { fibres, table } => {
            if *fibres == 0 {
                return Err(GroupoidError::InvalidParams {
                    reason: "group bundle needs at least one fibre".into(),
                });
            }
            let identity = validate_group_table(table)?;
            group_bundle(*fibres, table, identity)
        }
    };
    debug_assert!(validate_groupoid(&g).is_empty());
    Ok(g)
}

fn pair_groupoid(n: usize) -> FiniteGroupoid {
    let id = |i: usize, j: usize| i * n + j;
    let total = n * n;
    let mut source = vec![0; total];
    let mut range = vec![0; total];
    let mut inverse = vec![0; total];
    let mut product = vec![None; total * total];
    let mut units = Vec::with_capacity(n);
    for i in 0..n {
        units.push(id(i, i));
        for j in 0..n {
            let e = id(i, j);
            source[e] = id(j, j);
            range[e] = id(i, i);
            inverse[e] = id(j, i);
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                product[id(i, j) * total + id(j, k)] = Some(id(i, k));
            }
        }
    }
    FiniteGroupoid::from_parts(units, source, range, inverse, product)
}

/// Check a multiplication table describes a group; returns the identity id.
fn validate_group_table(table: &[Vec<usize>]) -> Result<usize, GroupoidError> {
    let k = table.len();
    if k == 0 {
        return Err(GroupoidError::InvalidParams {
            reason: "group table is empty".into(),
        });
    }
    if table.iter().any(|row| row.len() != k) {
        return Err(GroupoidError::InvalidParams {
            reason: "group table is not square".into(),
        });
    }
    if table.iter().flatten().any(|&x| x >= k) {
        return Err(GroupoidError::InvalidParams {
            reason: "group table entry out of range".into(),
        });
    }
    let identity = (0..k)
        .find(|&e| (0..k).all(|a| table[e][a] == a && table[a][e] == a))
        .ok_or_else(|| GroupoidError::InvalidParams {
            reason: "group table has no identity".into(),
        })?;
    for a in 0..k {
        if !(0..k).any(|b| table[a][b] == identity && table[b][a] == identity) {
            return Err(GroupoidError::InvalidParams {
                reason: format!("group element {a} has no inverse"),
            });
        }
        for b in 0..k {
            for c in 0..k {
                if table[table[a][b]][c] != table[a][table[b][c]] {
                    return Err(GroupoidError::InvalidParams {
                        reason: format!("group table not associative at ({a}, {b}, {c})"),
                    });
                }
            }
        }
    }
    Ok(identity)
}

fn group_groupoid(table: &[Vec<usize>], identity: usize) -> FiniteGroupoid {
    let k = table.len();
    let inverse = (0..k)
        .map(|a| (0..k).find(|&b| table[a][b] == identity).unwrap())
        .collect();
    let mut product = vec![None; k * k];
    for a in 0..k {
        for b in 0..k {
            product[a * k + b] = Some(table[a][b]);
        }
    }
    FiniteGroupoid::from_parts(
        vec![identity],
        vec![identity; k],
        vec![identity; k],
        inverse,
        product,
    )
}

fn disjoint_union(parts: &[FiniteGroupoid]) -> FiniteGroupoid {
    let total: usize = parts.iter().map(FiniteGroupoid::len).sum();
    let mut units = Vec::new();
    let mut source = Vec::with_capacity(total);
    let mut range = Vec::with_capacity(total);
    let mut inverse = Vec::with_capacity(total);
    let mut product = vec![None; total * total];
    let mut offset = 0;
    for part in parts {
        let n = part.len();
        units.extend(part.units().iter().map(|&u| u + offset));
        source.extend(part.source_table().iter().map(|&x| x + offset));
        range.extend(part.range_table().iter().map(|&x| x + offset));
        inverse.extend(part.inverse_table().iter().map(|&x| x + offset));
        for a in 0..n {
            for b in 0..n {
                if let Some(ab) = part.product(a, b) {
                    product[(a + offset) * total + (b + offset)] = Some(ab + offset);
                }
            }
        }
        offset += n;
    }
    FiniteGroupoid::from_parts(units, source, range, inverse, product)
}

fn group_bundle(fibres: usize, table: &[Vec<usize>], identity: usize) -> FiniteGroupoid {
    let k = table.len();
    let total = fibres * k;
    let id = |u: usize, a: usize| u * k + a;
    let group_inverse: Vec<usize> = (0..k)
        .map(|a| (0..k).find(|&b| table[a][b] == identity).unwrap())
        .collect();
    let mut units = Vec::with_capacity(fibres);
    let mut source = vec![0; total];
    let mut range = vec![0; total];
    let mut inverse = vec![0; total];
    let mut product = vec![None; total * total];
    for u in 0..fibres {
        units.push(id(u, identity));
        for a in 0..k {
            let e = id(u, a);
            source[e] = id(u, identity);
            range[e] = id(u, identity);
            inverse[e] = id(u, group_inverse[a]);
            for b in 0..k {
                product[e * total + id(u, b)] = Some(id(u, table[a][b]));
            }
        }
    }
    FiniteGroupoid::from_parts(units, source, range, inverse, product)
}

/// Cyclic group of the given order as a multiplication table.
pub fn cyclic_group_table(order: usize) -> Vec<Vec<usize>> {
    (0..order)
        .map(|a| (0..order).map(|b| (a + b) % order).collect())
        .collect()
}

/// Direct product of two group tables; element `(a, b)` gets id
/// `a * |B| + b`.
pub fn product_group_table(a: &[Vec<usize>], b: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let kb = b.len();
    let id = |x: usize, y: usize| x * kb + y;
    let mut out = Vec::new();
    for x1 in 0..a.len() {
        for y1 in 0..kb {
            let mut row = Vec::new();
            for x2 in 0..a.len() {
                for y2 in 0..kb {
                    row.push(id(a[x1][x2], b[y1][y2]));
                }
            }
            out.push(row);
        }
    }
    // Rows were built in (x1, y1) lexicographic order already; reshape is a
    // no-op because the loops emit one row per element id.
    let _ = id;
    out
}

/// The restriction of a groupoid to a subset closed under units, inverse and
/// products, returned with the inclusion functor back into the parent.
pub fn restrict(
    g: &Arc<FiniteGroupoid>,
    subset: &[usize],
) -> Result<(Arc<FiniteGroupoid>, GroupoidFunctor), GroupoidError> {
    let mut elements: Vec<usize> = subset.to_vec();
    elements.sort_unstable();
    elements.dedup();
    if let Some(&bad) = elements.iter().find(|&&e| e >= g.len()) {
        return Err(GroupoidError::NotSubgroupoid {
            reason: format!("element {bad} is not in the parent groupoid"),
        });
    }
    let member = |e: usize| elements.binary_search(&e).is_ok();
    for &e in &elements {
        for missing in [g.source(e), g.range(e), g.inverse(e)] {
            if !member(missing) {
                return Err(GroupoidError::NotSubgroupoid {
                    reason: format!("subset contains {e} but not {missing}"),
                });
            }
        }
    }
    for &a in &elements {
        for &b in &elements {
            if let Some(ab) = g.product(a, b) {
                if !member(ab) {
                    return Err(GroupoidError::NotSubgroupoid {
                        reason: format!("subset contains {a} and {b} but not their product {ab}"),
                    });
                }
            }
        }
    }

    let local = |e: usize| elements.binary_search(&e).unwrap();
    let n = elements.len();
    let units = g
        .units()
        .iter()
        .copied()
        .filter(|&u| member(u))
        .map(local)
        .collect();
    let source = elements.iter().map(|&e| local(g.source(e))).collect();
    let range = elements.iter().map(|&e| local(g.range(e))).collect();
    let inverse = elements.iter().map(|&e| local(g.inverse(e))).collect();
    let mut product = vec![None; n * n];
    for (ia, &a) in elements.iter().enumerate() {
        for (ib, &b) in elements.iter().enumerate() {
            if let Some(ab) = g.product(a, b) {
                product[ia * n + ib] = Some(local(ab));
            }
        }
    }
    let sub = Arc::new(FiniteGroupoid::from_parts(
        units, source, range, inverse, product,
    ));
    let inclusion = GroupoidFunctor::new(Arc::clone(&sub), Arc::clone(g), elements);
    Ok((sub, inclusion))
}

/// A map of groupoid elements. Construction is unchecked; [`Self::validate`]
/// confirms functoriality.
#[derive(Clone)]
pub struct GroupoidFunctor {
    domain: Arc<FiniteGroupoid>,
    codomain: Arc<FiniteGroupoid>,
    map: Vec<usize>,
}

impl GroupoidFunctor {
    pub fn new(
        domain: Arc<FiniteGroupoid>,
        codomain: Arc<FiniteGroupoid>,
        map: Vec<usize>,
    ) -> Self {
        assert_eq!(map.len(), domain.len(), "functor map has wrong length");
        assert!(
            map.iter().all(|&e| e < codomain.len()),
            "functor map target out of range"
        );
        Self {
            domain,
            codomain,
            map,
        }
    }

    pub fn identity(g: &Arc<FiniteGroupoid>) -> Self {
        Self::new(Arc::clone(g), Arc::clone(g), (0..g.len()).collect())
    }

    pub fn domain(&self) -> &Arc<FiniteGroupoid> {
        &self.domain
    }

    pub fn codomain(&self) -> &Arc<FiniteGroupoid> {
        &self.codomain
    }

    pub fn apply(&self, gamma: usize) -> usize {
        self.map[gamma]
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    /// Check that products and units are preserved (inverses then follow,
    /// but are checked anyway — the scan is cheap).
    pub fn validate(&self) -> Result<(), GroupoidError> {
        for &u in self.domain.units() {
            if !self.codomain.is_unit(self.map[u]) {
                return Err(GroupoidError::InvalidFunctor {
                    reason: format!("image of unit {u} is not a unit"),
                });
            }
        }
        for (a, b) in self.domain.composable_pairs() {
            let ab = self.domain.product(a, b).unwrap();
            match self.codomain.product(self.map[a], self.map[b]) {
                Some(image) if image == self.map[ab] => {}
                Some(_) => {
                    return Err(GroupoidError::InvalidFunctor {
                        reason: format!("product of ({a}, {b}) is not preserved"),
                    });
                }
                None => {
                    return Err(GroupoidError::InvalidFunctor {
                        reason: format!("images of composable pair ({a}, {b}) do not compose"),
                    });
                }
            }
        }
        for gamma in self.domain.elements() {
            if self.map[self.domain.inverse(gamma)] != self.codomain.inverse(self.map[gamma]) {
                return Err(GroupoidError::InvalidFunctor {
                    reason: format!("inverse of {gamma} is not preserved"),
                });
            }
        }
        Ok(())
    }

    /// `self` after `earlier`; domains must line up.
    pub fn compose(&self, earlier: &GroupoidFunctor) -> Result<GroupoidFunctor, GroupoidError> {
        if !same_groupoid(&self.domain, earlier.codomain()) {
            return Err(GroupoidError::InvalidFunctor {
                reason: "composition domains do not line up".into(),
            });
        }
        let map = earlier.map.iter().map(|&e| self.map[e]).collect();
        Ok(GroupoidFunctor::new(
            Arc::clone(&earlier.domain),
            Arc::clone(&self.codomain),
            map,
        ))
    }

    /// Preimage of a subset of the codomain.
    pub fn preimage(&self, subset: &[usize]) -> Vec<usize> {
        let targets: BTreeSet<usize> = subset.iter().copied().collect();
        self.domain
            .elements()
            .filter(|&e| targets.contains(&self.map[e]))
            .collect()
    }
}

impl fmt::Debug for GroupoidFunctor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "GroupoidFunctor {{ {} -> {} elements, map: {:?} }}",
            self.domain.len(),
            self.codomain.len(),
            self.map
        )
    }
}

/// Pointer-or-structural equality, so rebuilt copies of the same tables are
/// accepted wherever a shared groupoid is expected.
pub fn same_groupoid(a: &Arc<FiniteGroupoid>, b: &Arc<FiniteGroupoid>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// Whether each star of the domain maps bijectively onto the corresponding
/// star of the codomain: for every domain unit `x` and codomain arrow with
/// source `φ(x)`, exactly one preimage arrow with source `x`.
pub fn is_star_bijective(f: &GroupoidFunctor) -> Result<bool, GroupoidError> {
    f.validate()?;
    for &x in f.domain().units() {
        let fx = f.apply(x);
        for &target in f.codomain().star(fx) {
            let preimages = f
                .domain()
                .star(x)
                .iter()
                .filter(|&&gamma| f.apply(gamma) == target)
                .count();
            if preimages != 1 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// A unit-modulus weight on composable pairs, stored densely with `1` on
/// non-composable slots. Twists the fibrewise products downstream.
#[derive(Clone, PartialEq)]
pub struct TwoCocycle {
    len: usize,
    values: Vec<Complex64>,
}

impl TwoCocycle {
    pub fn trivial(g: &FiniteGroupoid) -> Self {
        Self {
            len: g.len(),
            values: vec![Complex64::new(1.0, 0.0); g.len() * g.len()],
        }
    }

    /// Build from a weight on arrows: `σ(a, b) = λ(a) λ(b) / λ(ab)`. Any
    /// unit-modulus `λ` that is `1` on units yields a valid cocycle.
    pub fn coboundary(g: &FiniteGroupoid, lambda: &[Complex64]) -> Self {
        assert_eq!(lambda.len(), g.len(), "weight has wrong length");
        let mut cocycle = Self::trivial(g);
        for (a, b) in g.composable_pairs() {
            let ab = g.product(a, b).unwrap();
            cocycle.values[a * g.len() + b] = lambda[a] * lambda[b] / lambda[ab];
        }
        cocycle
    }

    /// A coboundary from random unit-modulus arrow weights (1 on units).
    pub fn random_coboundary(g: &FiniteGroupoid, rng: &mut crate::rng::SeededRng) -> Self {
        let lambda: Vec<Complex64> = g
            .elements()
            .map(|e| {
                if g.is_unit(e) {
                    Complex64::new(1.0, 0.0)
                } else {
                    rng.unit_complex()
                }
            })
            .collect();
        Self::coboundary(g, &lambda)
    }

    pub fn from_values(g: &FiniteGroupoid, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), g.len() * g.len(), "cocycle table wrong size");
        Self {
            len: g.len(),
            values,
        }
    }

    pub fn get(&self, a: usize, b: usize) -> Complex64 {
        self.values[a * self.len + b]
    }

    pub fn set(&mut self, a: usize, b: usize, z: Complex64) {
        self.values[a * self.len + b] = z;
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
}

impl fmt::Debug for TwoCocycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nontrivial = self
            .values
            .iter()
            .filter(|z| (*z - Complex64::new(1.0, 0.0)).norm() > 1e-12)
            .count();
        write!(
            f,
            "TwoCocycle {{ {} pairs, {nontrivial} nontrivial }}",
            self.len * self.len
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CocycleViolation {
    /// Value on a composable pair is not of unit modulus.
    NotUnitModulus { left: usize, right: usize },
    /// `σ(r(γ), γ) = σ(γ, s(γ)) = 1` fails.
    NotNormalized { element: usize },
    /// `σ(a,b) σ(ab,c) = σ(b,c) σ(a,bc)` fails on a composable triple.
    IdentityFails { a: usize, b: usize, c: usize },
}

impl fmt::Display for CocycleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CocycleViolation::NotUnitModulus { left, right } => {
                write!(f, "value at ({left}, {right}) is not unit modulus")
            }
            CocycleViolation::NotNormalized { element } => {
                write!(f, "normalization fails at {element}")
            }
            CocycleViolation::IdentityFails { a, b, c } => {
                write!(f, "cocycle identity fails on ({a}, {b}, {c})")
            }
        }
    }
}

/// Check unit modulus, unit normalization and the cocycle identity on every
/// composable triple.
pub fn validate_cocycle(g: &FiniteGroupoid, sigma: &TwoCocycle) -> Vec<CocycleViolation> {
    let mut out = Vec::new();
    let tol = 1e-9;
    for (a, b) in g.composable_pairs() {
        if (sigma.get(a, b).norm() - 1.0).abs() > tol {
            out.push(CocycleViolation::NotUnitModulus { left: a, right: b });
        }
    }
    let one = Complex64::new(1.0, 0.0);
    for gamma in g.elements() {
        let left = sigma.get(g.range(gamma), gamma);
        let right = sigma.get(gamma, g.source(gamma));
        if (left - one).norm() > tol || (right - one).norm() > tol {
            out.push(CocycleViolation::NotNormalized { element: gamma });
        }
    }
    for (a, b) in g.composable_pairs() {
        let ab = g.product(a, b).unwrap();
        for &c in g.costar(g.source(b)).to_vec().iter() {
            let bc = g.product(b, c).unwrap();
            let lhs = sigma.get(a, b) * sigma.get(ab, c);
            let rhs = sigma.get(b, c) * sigma.get(a, bc);
            if (lhs - rhs).norm() > tol {
                out.push(CocycleViolation::IdentityFails { a, b, c });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn pair(n: usize) -> FiniteGroupoid {
        generate(&GroupoidFamily::Pair { points: n }).unwrap()
    }

    fn z2() -> FiniteGroupoid {
        generate(&GroupoidFamily::Group {
            table: cyclic_group_table(2),
        })
        .unwrap()
    }

    #[test]
    fn pair_groupoid_shape() {
        let g = pair(2);
        assert_eq!(g.len(), 4);
        assert_eq!(g.unit_count(), 2);
        assert!(validate_groupoid(&g).is_empty());
    }

    #[test]
    fn cyclic_group_valid() {
        let g = z2();
        assert_eq!(g.len(), 2);
        assert_eq!(g.unit_count(), 1);
        assert!(validate_groupoid(&g).is_empty());
    }

    #[test]
    fn disjoint_union_counts_add() {
        let g = generate(&GroupoidFamily::DisjointUnion {
            parts: vec![
                GroupoidFamily::Pair { points: 2 },
                GroupoidFamily::Group {
                    table: cyclic_group_table(2),
                },
            ],
        })
        .unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.unit_count(), 3);
        assert!(validate_groupoid(&g).is_empty());
    }

    #[test]
    fn group_bundle_valid() {
        let g = generate(&GroupoidFamily::GroupBundle {
            fibres: 3,
            table: cyclic_group_table(2),
        })
        .unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.unit_count(), 3);
        assert!(validate_groupoid(&g).is_empty());
        // No arrows between distinct units.
        for gamma in g.elements() {
            assert_eq!(g.source(gamma), g.range(gamma));
        }
    }

    #[test]
    fn corrupted_product_is_reported() {
        let g = pair(2);
        // Elements of the pair groupoid on {0, 1}: id(i, j) = 2i + j.
        // Redirect (0,1)*(1,0) from (0,0) to (1,1).
        let mut product = g.product_table().to_vec();
        product[1 * g.len() + 2] = Some(3);
        let broken = FiniteGroupoid::from_parts(
            g.units().to_vec(),
            g.source_table().to_vec(),
            g.range_table().to_vec(),
            g.inverse_table().to_vec(),
            product,
        );
        let report = validate_groupoid(&broken);
        assert!(!report.is_empty());
        assert!(report
            .iter()
            .any(|v| matches!(v, GroupoidViolation::NonAssociativeTriple { .. })));
    }

    #[test]
    fn slice_examples() {
        let g = pair(2);
        assert!(is_slice(&g, &[0, 3])); // the diagonal
        assert!(!is_slice(&g, &[0, 1, 2, 3])); // everything
        assert!(is_slice(&g, &[1])); // a singleton
        assert!(is_slice(&g, &[])); // empty set
    }

    #[test]
    fn maximal_slices_of_pair_are_permutations() {
        let g = pair(3);
        let slices = maximal_slices(&g, 4096).unwrap();
        assert_eq!(slices.len(), 6);
        for slice in &slices {
            assert_eq!(slice.len(), 3);
            assert!(is_slice(&g, slice));
        }
        // The diagonal is among them: id(i, j) = 3i + j.
        assert!(slices.contains(&vec![0, 4, 8]));
    }

    #[test]
    fn maximal_slices_of_a_group_are_singletons() {
        let g = generate(&GroupoidFamily::Group {
            table: cyclic_group_table(4),
        })
        .unwrap();
        let slices = maximal_slices(&g, 4096).unwrap();
        assert_eq!(slices.len(), 4);
        assert!(slices.iter().all(|s| s.len() == 1));
    }

    #[test]
    fn maximal_slice_cap_is_enforced() {
        let g = pair(3);
        assert!(maximal_slices(&g, 5).is_err());
    }

    #[test]
    fn slice_union_criterion_exhaustive() {
        let g = pair(2);
        let n = g.len();
        let subsets: Vec<Vec<usize>> = (0..1u32 << n)
            .map(|mask| (0..n).filter(|&i| mask & (1 << i) != 0).collect())
            .collect();
        for t in subsets.iter().filter(|s| is_slice(&g, s)) {
            for u in subsets.iter().filter(|s| is_slice(&g, s)) {
                let union: Vec<usize> = t.iter().chain(u.iter()).copied().collect();
                // TU⁻¹ ∪ T⁻¹U lands in the units.
                let mut mixed_ok = true;
                for &a in t {
                    for &b in u {
                        if let Some(p) = g.product(a, g.inverse(b)) {
                            mixed_ok &= g.is_unit(p);
                        }
                        if let Some(p) = g.product(g.inverse(a), b) {
                            mixed_ok &= g.is_unit(p);
                        }
                    }
                }
                assert_eq!(is_slice(&g, &union), mixed_ok, "T = {t:?}, U = {u:?}");
            }
        }
    }

    #[test]
    fn identity_functor_is_star_bijective() {
        let g = Arc::new(pair(2));
        let f = GroupoidFunctor::identity(&g);
        assert!(is_star_bijective(&f).unwrap());
    }

    #[test]
    fn fold_functor_is_star_bijective() {
        let double = Arc::new(
            generate(&GroupoidFamily::DisjointUnion {
                parts: vec![
                    GroupoidFamily::Pair { points: 2 },
                    GroupoidFamily::Pair { points: 2 },
                ],
            })
            .unwrap(),
        );
        let single = Arc::new(pair(2));
        let map: Vec<usize> = (0..8).map(|e| e % 4).collect();
        let fold = GroupoidFunctor::new(Arc::clone(&double), Arc::clone(&single), map);
        fold.validate().unwrap();
        assert!(is_star_bijective(&fold).unwrap());
    }

    #[test]
    fn collapse_functor_is_not_star_bijective() {
        let g = Arc::new(pair(2));
        let point = Arc::new(
            generate(&GroupoidFamily::Group {
                table: cyclic_group_table(1),
            })
            .unwrap(),
        );
        let collapse = GroupoidFunctor::new(Arc::clone(&g), Arc::clone(&point), vec![0; 4]);
        collapse.validate().unwrap();
        assert!(!is_star_bijective(&collapse).unwrap());
    }

    #[test]
    fn invalid_functor_is_rejected() {
        let g = Arc::new(z2());
        // Swap unit and flip: sends the unit to the non-unit.
        let f = GroupoidFunctor::new(Arc::clone(&g), Arc::clone(&g), vec![1, 0]);
        let err = is_star_bijective(&f).unwrap_err();
        assert!(matches!(err, GroupoidError::InvalidFunctor { .. }));
    }

    #[test]
    fn star_bijective_composition() {
        let mut rng = SeededRng::new(91);
        let n = 3;
        let g = Arc::new(pair(n));
        for _ in 0..8 {
            let mut perm_a: Vec<usize> = (0..n).collect();
            let mut perm_b: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm_a.swap(i, rng.index(i + 1));
                perm_b.swap(i, rng.index(i + 1));
            }
            let auto = |perm: &Vec<usize>| {
                let map = (0..n * n)
                    .map(|e| perm[e / n] * n + perm[e % n])
                    .collect::<Vec<usize>>();
                GroupoidFunctor::new(Arc::clone(&g), Arc::clone(&g), map)
            };
            let fa = auto(&perm_a);
            let fb = auto(&perm_b);
            assert!(is_star_bijective(&fa).unwrap());
            let composed = fb.compose(&fa).unwrap();
            assert!(is_star_bijective(&composed).unwrap());
        }
    }

    #[test]
    fn star_bijective_pulls_slices_back() {
        let double = Arc::new(
            generate(&GroupoidFamily::DisjointUnion {
                parts: vec![
                    GroupoidFamily::Pair { points: 2 },
                    GroupoidFamily::Pair { points: 2 },
                ],
            })
            .unwrap(),
        );
        let single = Arc::new(pair(2));
        let map: Vec<usize> = (0..8).map(|e| e % 4).collect();
        let fold = GroupoidFunctor::new(Arc::clone(&double), Arc::clone(&single), map);
        let n = single.len();
        for mask in 0..1u32 << n {
            let subset: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
            if is_slice(&single, &subset) {
                assert!(is_slice(&double, &fold.preimage(&subset)));
            }
        }
    }

    #[test]
    fn restrict_to_components() {
        let g = Arc::new(
            generate(&GroupoidFamily::DisjointUnion {
                parts: vec![
                    GroupoidFamily::Pair { points: 2 },
                    GroupoidFamily::Group {
                        table: cyclic_group_table(2),
                    },
                ],
            })
            .unwrap(),
        );
        let (sub, inclusion) = restrict(&g, &[4, 5]).unwrap();
        assert_eq!(sub.len(), 2);
        inclusion.validate().unwrap();
        assert!(is_star_bijective(&inclusion).unwrap());

        let err = restrict(&g, &[1]).unwrap_err();
        assert!(matches!(err, GroupoidError::NotSubgroupoid { .. }));
    }

    #[test]
    fn trivial_cocycle_valid() {
        let g = pair(2);
        let sigma = TwoCocycle::trivial(&g);
        assert!(validate_cocycle(&g, &sigma).is_empty());
    }

    #[test]
    fn klein_bicharacter_is_a_cocycle() {
        let table = product_group_table(&cyclic_group_table(2), &cyclic_group_table(2));
        let g = generate(&GroupoidFamily::Group { table }).unwrap();
        // Element (a, b) has id 2a + b; the weight pairs the second
        // coordinate of the left factor with the first of the right.
        let mut sigma = TwoCocycle::trivial(&g);
        for x in g.elements() {
            for y in g.elements() {
                let bx = x % 2;
                let cy = y / 2;
                if bx * cy == 1 {
                    sigma.set(x, y, Complex64::new(-1.0, 0.0));
                }
            }
        }
        assert!(validate_cocycle(&g, &sigma).is_empty());
    }

    #[test]
    fn corrupted_cocycle_is_reported() {
        let table = product_group_table(&cyclic_group_table(2), &cyclic_group_table(2));
        let g = generate(&GroupoidFamily::Group { table }).unwrap();
        let mut sigma = TwoCocycle::trivial(&g);
        sigma.set(1, 2, Complex64::new(-1.0, 0.0));
        let report = validate_cocycle(&g, &sigma);
        assert!(report
            .iter()
            .any(|v| matches!(v, CocycleViolation::IdentityFails { .. })));
    }

    #[test]
    fn random_coboundaries_are_cocycles() {
        let mut rng = SeededRng::new(17);
        for family in [
            GroupoidFamily::Pair { points: 3 },
            GroupoidFamily::Group {
                table: cyclic_group_table(4),
            },
            GroupoidFamily::GroupBundle {
                fibres: 2,
                table: cyclic_group_table(3),
            },
        ] {
            let g = generate(&family).unwrap();
            for _ in 0..4 {
                let sigma = TwoCocycle::random_coboundary(&g, &mut rng);
                assert!(validate_cocycle(&g, &sigma).is_empty());
            }
        }
    }

    #[test]
    fn bad_group_tables_are_rejected() {
        // No identity.
        let err = generate(&GroupoidFamily::Group {
            table: vec![vec![1, 0], vec![1, 0]],
        })
        .unwrap_err();
        assert!(matches!(err, GroupoidError::InvalidParams { .. }));
        // Not square.
        let err = generate(&GroupoidFamily::Group {
            table: vec![vec![0, 1]],
        })
        .unwrap_err();
        assert!(matches!(err, GroupoidError::InvalidParams { .. }));
    }
}
