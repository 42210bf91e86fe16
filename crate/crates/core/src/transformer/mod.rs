//! Transformer-based Negative Binomial predictor.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod forecast;
pub mod gradcheck;
pub mod linalg;
pub mod model;
pub mod params;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{EmbedConfig, TrainConfig};
pub use data::{Dataset, StationSequence, WindowRef};
pub use forecast::{nearest_rank, predict, ForecastDistribution, DEFAULT_SAMPLES};
pub use gradcheck::{analytic_gradient, compare_gradients, gradient_check, GradCheckOptions, GradCheckReport};
pub use model::{positional_encoding, Mode, Model, StationRef, Window};
pub use params::{ParamLayout, TensorSpec};
pub use train::{mix_seed, train, TrainReport};
