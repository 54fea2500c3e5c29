//! Marked Galton-Watson trees, their mass processes, and the martingale
//! changes of measure obtained by penalizing with the number of marks.
//!
//! Finite-support laws are held as exact rationals, so every identity that
//! holds exactly (masses, truncated-tree probabilities, polynomial
//! martingales) can be checked with equality in [`oracle`].

pub mod asymptotics;
pub mod error;
pub mod laws;
pub mod marked_tree;
pub mod moments;
pub mod oracle;
pub mod penalty;
pub mod sampler;
pub mod scalar;
pub mod series;
pub mod stats;

pub use error::{Error, Result};
pub use laws::{gen_fn_eval, parse_law_json, reproduction_mark_prob, truncated_tree_probability, validate_law};
pub use laws::{Criticality, DegreeBounds, MarkFunction, MarkedGWLaw};
pub use marked_tree::{build_tree, compute_masses, generation_stats, restrict, MarkedTree, MassAssignment, NodeWord};
pub use penalty::{girsanov_weight, kappa_solve, GirsanovWeight, Regime, State, WeightTables};
pub use sampler::{RngStream, TypedMarkedTree};
