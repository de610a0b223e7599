//! Preference optimization for neural combinatorial optimization.
//!
//! The crate bundles constructive environments for job-shop, flexible
//! job-shop and travelling-salesman problems, a small reverse-mode
//! differentiation engine, the policy networks built on it, preference-pair
//! construction, the loss family and the training loop.

pub mod autodiff;
pub mod cop;
pub mod env;
pub mod error;
pub mod losses;
pub mod model;
pub mod pairs;
pub mod rng;
pub mod trainer;

pub use cop::{gap_percent, sort_solutions, Origin, PreferencePair, Solution, SortedSolutionSet};
pub use env::Environment;
pub use error::{Error, Result};
