//! Cosine distillation losses, the plain reverse-distillation trainer, and inference maps.

mod loss;
mod map;
mod train;

pub use loss::{
    cos_sim, flat_cos, layer_cos_loss, layer_cos_loss_grad, location_cos_map, LossReport, COS_EPS,
};
pub use map::{
    anomaly_map, bilinear_resize, fused_distance_map, gaussian_kernel, gaussian_smooth, AnomalyMap,
    DEFAULT_SMOOTH_SIGMA,
};
pub use train::{
    batch_order, extract_features, score_dataset, score_images, train_rd, train_rd_features,
    train_rd_features_with, EpochHook, LossHistory, TrainSettings,
};
pub(crate) use train::{minibatch_step, Objective};
