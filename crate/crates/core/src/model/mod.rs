//! The pose network, its objective, training loop and checkpoints.

pub mod checkpoint;
mod check;
mod config;
mod loss;
mod net;
mod train;

pub use check::{check_layer_gradients, check_model_gradients, LayerGradCheck, ModelGradCheck};
pub use config::{format_backbone, parse_backbone, BackboneLayer, ModelConfig, Variant};
pub use loss::{masked_loss, sample_negative_mask, LabelTensor};
pub use net::{ForwardCache, PoseNet, GROUP_BACKBONE, GROUP_NEW};
pub use train::{evaluate_loss, train, EpochRecord, TrainConfig, TrainReport, TrainSample};
