//! Teacher-student distillation: success-filtered dataset generation from
//! state-based teachers, balanced on-disk batching, supervised training of
//! the observation-based generalist, and the two fine-tuning procedures.

mod batch;
mod dataset;
mod train;

pub use batch::{all_trajectory_refs, epoch_chunk_plans, load_chunk, ChunkPlan, TrajRef};
pub use dataset::{
    collect_teacher_trajectories, generate_distill_dataset, step_noise_seed, EnvEntry, ObsMode, StoredTrajectory,
    TrajectoryDataset, DATASET_SCHEMA, SHARD_SCHEMA,
};
pub use train::{
    distill_update, finetune_fewshot, train_generalist, DistillConfig, DistillLog,
    DistillOptimizer,
};
