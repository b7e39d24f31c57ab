//! Training a conditioned generator against a frozen classifier.

mod loss;
mod train;

pub use loss::*;
pub use train::*;
