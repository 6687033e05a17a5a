//! Residual GRU transition model: `x[t+1] = x[t] + scale ⊙ GRU(norm(x[t]), h[t])`.

mod dataset;
mod model;
mod normalizer;
mod params;
mod train;

pub use dataset::{
    DatasetSplit, Episode, EpisodeTag, Sample, TrajectoryDataset, DATASET_FORMAT_VERSION,
};
pub use model::{load_model, save_model, TransitionModel, MODEL_FORMAT_VERSION};
pub use normalizer::{fit_normalizer, Normalizer, DEFAULT_SCALE_FLOOR};
pub use params::GruParams;
pub use train::{
    normalized_mse, prepare_episodes, train_transition_model, window_loss, window_loss_and_grad,
    Lane, PreparedEpisode, TrainOutcome, TrainSpec, WindowOutcome,
};
