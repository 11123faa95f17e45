pub mod analysis;
pub mod cli;
pub mod constraint;
pub mod energy;
pub mod epiperimetric;
pub mod error;
pub mod flow;
pub mod fourier;
pub mod geometry;
pub mod operator;
pub mod solver;
pub mod stationary;

pub use error::{Result, VilabError};
