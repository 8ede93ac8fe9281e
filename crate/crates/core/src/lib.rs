pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod data;
pub mod divergence;
pub mod error;
pub mod eval;
pub mod generator;
pub mod nn;
pub mod numcore;
pub mod rng;
pub mod train;
pub mod tuning;

pub use backbone::{Backbone, BackboneConfig, DynamicLayerParams};
pub use config::RunConfig;
pub use controller::{ControllerConfig, ControllerVariant, ValueScore};
pub use data::{Dataset, DatasetSplits, Interaction, InteractionSequence, LearnerId, SplitMode, Window};
pub use error::{Error, Result};
pub use eval::{EvalReport, Method};
pub use generator::{Generator, GeneratorConfig, GeneratorVariant};
pub use numcore::Matrix;
pub use train::{TrainConfig, TrainLog};
pub use tuning::{TuningConfig, TuningMethod};
