//! Feed-forward ReLU binary classifiers: evaluation, training and the
//! retraining ensemble used to measure validity after model updates.

mod network;
mod train;

pub use network::ReluNetwork;
pub use train::{
    accuracy, init_network, mean_loss, retrain_ensemble, retrain_ensemble_sized, train, train_with_report,
    TrainConfig, TrainReport,
};

#[cfg(test)]
pub(crate) use network::tiny_net;
