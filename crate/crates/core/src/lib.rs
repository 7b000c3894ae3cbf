//! Constraint propagation for first-order logic with inductive definitions
//! and aggregates, over finite four-valued structures.
//!
//! The pipeline: parse a problem ([`io`]), normalize its theory to
//! implicational normal form ([`normalize`]), and refine a partial structure
//! with the resulting propagators ([`propagate`]). The same propagation can be
//! run as a positive rule set ([`rules`]) or lifted to queries over an input
//! vocabulary ([`symbolic`]). [`oracle`] holds brute-force reference
//! implementations for small instances.

pub mod engine;
pub mod io;
pub mod normalize;
pub mod oracle;
pub mod propagate;
pub mod rules;
pub mod structure;
pub mod symbolic;
pub mod syntax;

pub use structure::{Domain, DomainLiteral, Elem, FourValuedStructure, RelStructure, TfStructure, TruthValue, Tuple};
pub use syntax::{Formula, Term, Theory, Vocabulary};
