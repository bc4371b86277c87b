//! Small classifiers trained under cyclically oscillating class-weighted
//! cross entropy, instrumented with Hessian and NTK spectra.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod loss;
pub mod model;
pub mod real;
pub mod schedule;
pub mod seeds;
pub mod spectral;
pub mod sweep;
pub mod trainer;

pub use dataset::{generate_spiral, Dataset, LabeledPoint};
pub use error::{Error, Result};
pub use model::{Checkpoint, Layout, Logits, MlpParams};
pub use schedule::{ClassWeights, OscillationSchedule};
pub use trainer::{train, TrainConfig, TrainTrace};
