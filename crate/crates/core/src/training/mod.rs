//! Joint MAP training of decoder, mixture and representations, and
//! inference of representations for new data under a frozen model.

mod config;
mod history;
mod inference;
mod trainer;

pub use config::{PriorWeighting, TrainConfig};
pub use history::{EpochRecord, History};
pub use inference::{hard_cluster, infer_representations, InferConfig, Inferred, InitMode};
pub use trainer::{train, RepresentationSet, TrainOutput, Trainer};
