//! Protagonist-antagonist induced regret minimization on tabular MDPs.

pub mod alignment;
pub mod envs;
pub mod error;
pub mod io;
pub mod irl;
pub mod mdp;
pub mod policy_opt;
pub mod reward;
pub mod solver;
pub mod suites;

pub use error::{PagarError, Result};
