pub mod analysis;
pub mod ce;
pub mod env;
pub mod error;
pub mod features;
pub mod mdp;
pub mod lstd;
pub mod policy;
pub mod schedule;
pub mod trajectory;

pub use error::{Error, Result};
