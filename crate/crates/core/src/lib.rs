pub mod analysis;
pub mod classifier;
pub mod conditioning;
pub mod data_io;
pub mod error;
pub mod generator;
pub mod inversion;
pub mod nn;
pub mod scalar;
pub mod seeding;
pub mod state;
pub mod tensor;

pub use classifier::{Classifier, ClassifierConfig};
pub use conditioning::{ConditioningBatch, ConditioningMode};
pub use generator::{Generator, GeneratorConfig};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Classifier32 = Classifier<f32>;
pub type Classifier64 = Classifier<f64>;
pub type Generator32 = Generator<f32>;
pub type Generator64 = Generator<f64>;
