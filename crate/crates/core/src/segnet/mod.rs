//! From-scratch U-Net segmenter: layers, network, Adam, training loop and
//! weight files.

pub mod adam;
pub mod layers;
pub mod net;
pub mod train;
pub mod weights_io;

pub use adam::{AdamParams, AdamState};
pub use net::{ModelWeights, NetConfig};
pub use train::{predict_mask, train, EvalSample, LearningCurve, TrainConfig, TrainingPair};
pub use weights_io::{load_weights, save_weights};
