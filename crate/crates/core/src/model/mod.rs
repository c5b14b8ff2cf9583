//! Stance classifier: social encoding of the author's neighborhood
//! concatenated with the post's own text embedding, followed by
//! `softmax(ReLU(z)·W + b)`.

mod adam;
mod checkpoint;
mod network;
mod params;
mod train;

pub use adam::{adam_step, OptimizerState, BETA1, BETA2, EPSILON};
pub use checkpoint::Checkpoint;
pub use network::{Dataset, EmbeddingTable, ModelInputs, Prediction, Sample, PROB_FLOOR};
pub use params::{ModelConfig, ModelParams};
pub use train::{
    best_cell, metric_log_csv, split_dataset, split_sizes, sweep, train, train_dataset, write_metric_log, EpochRecord,
    Split, SweepCell, TrainConfig, TrainOutcome,
};

use crate::corpus::{Post, StanceLabel};
use crate::error::Result;

/// Probabilities for a single post.
pub fn forward(post: &Post, inputs: &ModelInputs, params: &ModelParams, config: &ModelConfig) -> Result<Prediction> {
    Dataset::build([(post, None)], inputs, config)?.predict(params, 0)
}

/// Most probable label for a single post.
pub fn classify(post: &Post, inputs: &ModelInputs, params: &ModelParams, config: &ModelConfig) -> Result<StanceLabel> {
    Ok(forward(post, inputs, params, config)?.label)
}

fn labelled_batch(batch: &[(&Post, StanceLabel)], inputs: &ModelInputs, config: &ModelConfig) -> Result<Dataset> {
    Dataset::build(batch.iter().map(|(p, l)| (*p, Some(*l))), inputs, config)
}

/// Mean cross-entropy of a labelled batch.
pub fn loss(
    batch: &[(&Post, StanceLabel)],
    inputs: &ModelInputs,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<f64> {
    let data = labelled_batch(batch, inputs, config)?;
    let all: Vec<usize> = (0..data.len()).collect();
    data.loss(params, &all)
}

/// Gradient of [`loss`] with respect to every parameter.
pub fn gradients(
    batch: &[(&Post, StanceLabel)],
    inputs: &ModelInputs,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ModelParams> {
    let data = labelled_batch(batch, inputs, config)?;
    let all: Vec<usize> = (0..data.len()).collect();
    Ok(data.gradients(params, &all)?.1)
}
