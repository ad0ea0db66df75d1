//! Two-stage training: triplet pretraining of the embedding branches, then
//! end-to-end AU finetuning. Also manifests, statistics, folds, coefficient
//! precomputation, checkpoints and synthetic fixtures.

mod checkpoint;
mod config;
mod data;
mod finetune;
pub mod fixtures;
mod manifest;
mod model;
mod precompute;
mod pretrain;

pub use checkpoint::{transfer_embedding, Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use config::{OptimizerConfig, Reduction, Stage, TrainConfig};
pub use data::{compute_stats, make_folds, occurrence_counts, AuData, AuFrame, FaceSample, Fold, TripletData};
pub use finetune::{finetune, finetune_with};
pub use manifest::{AuManifest, AuRecord, FaceRef, TripletManifest, TripletRecord, DATA_ROOT_VAR};
pub use model::{GleeModel, ModelVars};
pub use precompute::{fit_landmark_sets, precompute_coefficients};
pub use pretrain::{pretrain, pretrain_with, ranking_accuracy, StepHook};
