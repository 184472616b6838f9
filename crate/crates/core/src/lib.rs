pub mod adversary;
pub mod audit;
pub mod error;
pub mod game;
pub mod mechanisms;
pub mod problem;
pub mod reconstruction;
pub mod seed;
pub mod signvec;
pub mod wire;

pub use error::{Error, Result};
pub use problem::ProblemParams;
pub use signvec::{Sign, SignVector};
