//! Finite-scale Fell bundles over etale groupoids and the structured
//! C*-algebras of their sections.
//!
//! The library builds everything from explicit finite data: groupoids are
//! product tables, bundle fibres are complex matrices, and sections are
//! fibre-valued maps.  On top of that sit the three section norms, the
//! domination and compatibility relations with constructive witnesses, the
//! ultrafilter (Weyl) groupoid, and the reconstruction of a bundle from its
//! section algebra together with the functors relating the two sides.

pub mod bundle;
pub mod domination;
pub mod functor;
pub mod groupoid;
pub mod numeric;
pub mod rng;
pub mod sections;
pub mod structured;
pub mod weyl;
