//! Flow-field and image primitives: storage, interchange formats, warping,
//! resampling, smoothing, metrics and a classical dense flow estimator.

pub mod blur;
pub mod color;
pub mod field;
pub mod flo;
pub mod lk;
pub mod metrics;
pub mod ppm;
pub mod resize;
pub mod warp;

pub use blur::gaussian_blur;
pub use color::flow_to_color;
pub use field::{FlowField, ImageBuffer, Raster};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo};
pub use lk::estimate_flow_pyrlk;
pub use metrics::{flow_metrics, image_metrics, MetricReport};
pub use ppm::{read_ppm, read_video, write_ppm, write_video};
pub use resize::{resize, resize_to};
pub use warp::warp_backward;
