use std::f32::consts::PI;

use crate::flowcore::{FlowField, ImageBuffer};

/// Renders a flow field as an HSV color image: hue follows direction,
/// saturation follows magnitude relative to `max_norm` (clamped), value is 1.
/// Zero vectors are white. Without `max_norm` the largest magnitude is used.
pub fn flow_to_color(flow: &FlowField, max_norm: Option<f32>) -> ImageBuffer {
    let max_norm = match max_norm {
        Some(m) if m > 0.0 => m,
        _ => {
            let m = flow.max_magnitude();
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let (w, h) = flow.dims();
    let mut data = Vec::with_capacity(w * h * 3);
    for (&u, &v) in flow.u().iter().zip(flow.v()) {
        let sat = (u.hypot(v) / max_norm).min(1.0);
        let angle = v.atan2(u).rem_euclid(2.0 * PI);
        let hue = (angle / (2.0 * PI)).min(1.0 - f32::EPSILON);
        data.extend_from_slice(&hsv_to_rgb(hue, sat, 1.0));
    }
    ImageBuffer::new(w, h, 3, data).expect("dimensions come from a valid flow")
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let sector = h * 6.0;
    let i = sector.floor();
    let f = sector - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}
