//! Flow-based frame synthesis.

pub mod model;
pub mod pyramid;
pub mod style;
pub mod train;

pub use model::{array_to_images, blend_scale, images_to_array, DecoderOverride, SynthesisConfig, SynthesisModel, SATURATED_LOGIT};
pub use pyramid::{build_pyramid, num_scales, PyramidLevel, R_MIN};
pub use style::{style_loss, style_loss_from_features, StyleExtractor};
pub use train::{fvs_train_step, train_fvs, translating_pair, FvsExample, FvsLossWeights, FvsLosses, STYLE_WEIGHTS};
