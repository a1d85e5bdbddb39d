//! Training, voting inference, augmentation and segmentation metrics.

pub mod ablation;
pub mod augment;
pub mod gradsuite;
pub mod metrics;
pub mod train;
pub mod voting;

pub use augment::{augment, AugmentConfig};
pub use metrics::{compute_metrics, ConfusionMatrix, Metrics};
pub use train::{input_features, load_model, prepare_crop, CropSample, StepRecord, TrainConfig, Trainer, INPUT_CHANNELS};
pub use voting::{evaluate_with_voting, lattice_centers, predict_at_centers, predict_with_voting, VotingConfig, VotingResult};
