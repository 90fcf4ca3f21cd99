use crate::error::{Error, Result};
use crate::flowcore::{FlowField, ImageBuffer};

/// Bilinear sample of a row-major plane with clamp-to-edge addressing.
#[inline]
pub fn sample_bilinear(plane: &[f32], width: usize, height: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (width - 1) as f32);
    let y = y.clamp(0.0, (height - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let top = plane[y0 * width + x0] + fx * (plane[y0 * width + x1] - plane[y0 * width + x0]);
    let bottom = plane[y1 * width + x0] + fx * (plane[y1 * width + x1] - plane[y1 * width + x0]);
    top + fy * (bottom - top)
}

/// Backward warp: `output(p)` samples `input(p + flow(p))` bilinearly, clamping at edges.
///
/// The function is convention-free; callers decide the sign of `flow`.
pub fn warp_backward(image: &ImageBuffer, flow: &FlowField) -> Result<ImageBuffer> {
    if image.dims() != flow.dims() {
        return Err(Error::contract(format!(
            "warp_backward: image {}x{} vs flow {}x{}",
            image.width(),
            image.height(),
            flow.width(),
            flow.height()
        )));
    }
    let (w, h) = image.dims();
    let planes: Vec<Vec<f32>> = image
        .planes()
        .iter()
        .map(|plane| warp_plane(plane, w, h, flow.u(), flow.v()))
        .collect();
    ImageBuffer::from_planes(w, h, &planes)
}

pub(crate) fn warp_plane(plane: &[f32], w: usize, h: usize, u: &[f32], v: &[f32]) -> Vec<f32> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out.push(sample_bilinear(plane, w, h, x as f32 + u[i], y as f32 + v[i]));
        }
    }
    out
}
