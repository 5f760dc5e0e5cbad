pub mod acquisition;
pub mod basis;
pub mod curves;
pub mod density;
pub mod domain;
pub mod error;
pub mod expert;
pub mod neldermead;
pub mod objective;
pub mod optimizer;
pub mod simplex;
pub mod surrogate;
pub mod testbed;

pub use error::{Error, ErrorKind, Result};

/// Seeded random stream used throughout the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;
