//! Expected-utility maximization on finite scenario trees under a family of
//! perturbed numéraires `N^eps = E((eps theta) . R)`.
//!
//! The crate solves the primal and dual problems exactly, computes first- and
//! second-order expansions of the value functions in `(x, eps)`, builds
//! nearly optimal wealth processes, and verifies all of it against exact
//! re-solves of the perturbed problems.

pub mod duality;
pub mod error;
pub mod harness;
pub mod instances;
pub mod linalg;
pub mod market;
pub mod market_file;
pub mod process;
pub mod risk_tolerance;
pub mod sensitivity;
pub mod strategy;
pub mod tree;
pub mod utility;

pub use duality::{DualSolution, PrimalSolution};
pub use error::{Error, Result};
pub use market::MarketModel;
pub use process::{AdaptedProcess, PredictableProcess};
pub use tree::EventTree;
pub use utility::{Utility, UtilityKind};
