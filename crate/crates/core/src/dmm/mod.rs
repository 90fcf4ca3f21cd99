//! The diffusion motion magnifier.

pub mod data;
pub mod hhme;
pub mod model;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use data::{real_example, synthetic_example, DmmExample, RealFlowConfig, Source, TrainingData};
pub use hhme::{hhme_features, Hhme};
pub use model::{array_to_flows, flows_to_array, MagnifierConfig, MagnifierModel, LATENT_FACTOR, MASK_CHANNELS};
pub use sampler::{ddim_sample, sample_magnified_flow, sample_magnified_flows, ConditionedMagnifier, X0Predictor};
pub use schedule::{make_schedule, DiffusionSchedule, ScheduleKind};
pub use train::{dmm_train_step, train_dmm};
