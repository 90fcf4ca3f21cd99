//! Synthetic flow supervision: shaped motion regions with diverse directions,
//! smoothed log-normal noise outside them, and exactly noise-free targets.

pub mod dataset;
pub mod flow;
pub mod noise;
pub mod region;
pub mod video;

pub use dataset::{generate_dataset, generate_sample, load_dataset, sample_seed, Manifest, NofaConfig, SyntheticFlowSample};
pub use flow::{compose_conditional_flow, make_target_flow, sample_directions, sample_directions_seeded};
pub use noise::{fit_lognormal_mle, generate_noise_flow, simulate_photon_noise, NoiseModel};
pub use region::{generate_mask, RegionSpec, Shape};
pub use video::{render_synthetic_video, write_synthetic_video, Scene, SceneConfig, SyntheticVideo};
