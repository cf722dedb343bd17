//! Desk-scale super-resolution: synthetic data, a small residual backbone
//! with optional Fourier blocks, training, metrics and receptive-field maps.

mod data;
mod erf;
mod image;
mod metrics;
mod model;
mod train;

pub use data::{synth_dataset, SamplePair};
pub use erf::{erf_map, support};
pub use image::{downsample, parse_pgm, read_pgm, resize_bicubic, upsample, write_pgm, CUBIC_A};
pub use metrics::{gaussian_taps, mse, psnr, ssim, PSNR_CAP_DB, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use model::{
    build_model, positions_text, random_positions, PluginInit, SRModel, SRModelConfig, CHECKPOINT_CONFIG, MODEL_KEYS,
};
pub use train::{
    train, validate, DataConfig, LossKind, RunConfig, Schedule, StepRecord, TrainConfig, TrainingHistory, DATA_KEYS,
    HISTORY_HEADER, TRAIN_KEYS,
};
