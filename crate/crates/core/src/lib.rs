//! Tabular laboratory for rule-based preference optimization of reasoning
//! policies: exact losses and gradients over finite prompt/response spaces,
//! a seeded bandit trainer, and numeric checks of the lemmas and the
//! monotonic-improvement bound.

pub mod distmath;
pub mod error;
pub mod losses;
pub mod policy;
pub mod preference;
pub mod rules;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
