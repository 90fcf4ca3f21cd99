//! Scale selection and image/flow pyramids.

use crate::error::Result;
use crate::flowcore::{resize, FlowField, ImageBuffer};

/// Default minimum resolution of the coarsest synthesis scale.
pub const R_MIN: usize = 64;

/// `ceil(log2(min(H, W) / r_min)) + 1`, or 1 (with a warning) below `r_min`.
pub fn num_scales(height: usize, width: usize, r_min: usize) -> usize {
    let m = height.min(width);
    if r_min == 0 || m < r_min {
        log::warn!("{width}x{height} is below the minimum synthesis resolution {r_min}; using a single scale");
        return 1;
    }
    (m as f64 / r_min as f64).log2().ceil() as usize + 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidLevel {
    pub level: usize,
    /// `1 / 2^level`.
    pub scale: f64,
    pub image: ImageBuffer,
    /// Flow resampled to this level and multiplied by `scale`.
    pub flow: FlowField,
}

/// Levels ordered coarsest first (`level = levels - 1 .. 0`).
pub fn build_pyramid(image: &ImageBuffer, flow: &FlowField, levels: usize) -> Result<Vec<PyramidLevel>> {
    if image.dims() != flow.dims() {
        return Err(crate::error::Error::contract("pyramid: image and flow dimensions differ"));
    }
    (0..levels.max(1))
        .rev()
        .map(|level| {
            let scale = 0.5f64.powi(level as i32);
            let (image, flow) = if level == 0 { (image.clone(), flow.clone()) } else { (resize(image, scale)?, resize(flow, scale)?) };
            Ok(PyramidLevel { level, scale, image, flow })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_counts() {
        assert_eq!(num_scales(64, 64, 64), 1);
        assert_eq!(num_scales(65, 65, 64), 2);
        assert_eq!(num_scales(65, 512, 64), 2);
        assert_eq!(num_scales(256, 256, 64), 3);
        assert_eq!(num_scales(1024, 1024, 64), 5);
        assert_eq!(num_scales(32, 128, 64), 1);
    }

    #[test]
    fn single_level_is_the_input() {
        let img = ImageBuffer::from_fn(8, 8, 3, |x, y, c| (x + y + c) as f32 / 20.0).unwrap();
        let flow = FlowField::constant(8, 8, 1.0, 2.0);
        let p = build_pyramid(&img, &flow, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].scale, &p[0].image, &p[0].flow), (1.0, &img, &flow));
    }

    #[test]
    fn flow_values_follow_the_level_scale() {
        let img = ImageBuffer::filled(64, 64, 3, 0.5).unwrap();
        let p = build_pyramid(&img, &FlowField::constant(64, 64, 8.0, 0.0), 3).unwrap();
        assert_eq!(p.iter().map(|l| l.level).collect::<Vec<_>>(), vec![2, 1, 0]);
        assert_eq!(p[1].flow.dims(), (32, 32));
        assert!(p[1].flow.u().iter().all(|&u| (u - 4.0).abs() < 1e-5));
        assert!(p[0].flow.u().iter().all(|&u| (u - 2.0).abs() < 1e-5));
    }

    #[test]
    fn adjacent_levels_halve_smooth_flow_magnitudes() {
        let flow = FlowField::from_fn(128, 128, |x, y| (3.0 + (x as f32 * 0.05).sin(), 1.0 + (y as f32 * 0.04).cos())).unwrap();
        let img = ImageBuffer::filled(128, 128, 3, 0.5).unwrap();
        let p = build_pyramid(&img, &flow, 3).unwrap();
        for pair in p.windows(2) {
            let ratio = pair[0].flow.mean_magnitude() / pair[1].flow.mean_magnitude();
            assert!((ratio - 0.5).abs() < 1e-3, "{ratio}");
        }
    }
}
