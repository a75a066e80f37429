//! Driving-style network: four predictor subnetworks and a posterior network
//! trained jointly with one 3-D embedding per driver.

pub mod checkpoint;
mod dataset;
mod fit;
mod loss;
mod model;
pub mod nn;
mod policy;
mod train;

pub use dataset::{trace_labels, Dataset, Sample, TraceLabels};
pub use fit::fit_new_user;
pub use loss::{behavior_loss, total_loss, Gradients, LossBreakdown, LossWeights};
pub use model::{Model, Normalization, StyleEmbedding, SubnetActivations, EMBED_DIM};
pub use policy::NetworkPolicy;
pub use train::{train, train_dataset, write_log_csv, Adam, EpochLog, TrainOutcome};
