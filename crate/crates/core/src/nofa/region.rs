//! Motion-region shapes and their rasterized masks.

use std::f32::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape family with its parameters. Lengths are pixels, angles radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ellipse {
        semi_major: f32,
        semi_minor: f32,
        orientation: f32,
    },
    /// Convex polygon with vertices on a circle of `radius` (stretched by
    /// `aspect` along the local y axis, then rotated by `orientation`).
    Polygon {
        radius: f32,
        aspect: f32,
        orientation: f32,
        vertex_angles: Vec<f32>,
    },
    /// Radial contour `base * (1 + sum a_j sin(j phi + psi_j))`, j = 2..
    Fractal {
        base: f32,
        aspect: f32,
        orientation: f32,
        harmonics: Vec<(f32, f32)>,
    },
    Spot {
        radius: f32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    /// Sub-pixel centre; pixel `(x, y)` sits at coordinates `(x, y)`.
    pub center: (f32, f32),
    pub shape: Shape,
    /// Motion direction in `[0, 2pi)`.
    pub theta: f32,
    /// Motion magnitude, pixels per frame.
    pub magnitude: f32,
}

/// Binary mask, row-major.
pub type Mask = Vec<bool>;

fn local(dx: f32, dy: f32, orientation: f32) -> (f32, f32) {
    let (s, c) = orientation.sin_cos();
    (c * dx + s * dy, -s * dx + c * dy)
}

impl Shape {
    /// Whether the offset `(dx, dy)` from the centre lies inside.
    pub fn contains(&self, dx: f32, dy: f32) -> bool {
        match self {
            Shape::Ellipse { semi_major, semi_minor, orientation } => {
                let (p, q) = local(dx, dy, *orientation);
                (p / semi_major).powi(2) + (q / semi_minor).powi(2) <= 1.0
            }
            Shape::Polygon { radius, aspect, orientation, vertex_angles } => {
                let (p, q) = local(dx, dy, *orientation);
                let verts: Vec<(f32, f32)> = vertex_angles.iter().map(|a| (radius * a.cos(), radius * aspect * a.sin())).collect();
                // counter-clockwise convex polygon: inside iff left of every edge
                (0..verts.len()).all(|i| {
                    let (x0, y0) = verts[i];
                    let (x1, y1) = verts[(i + 1) % verts.len()];
                    (x1 - x0) * (q - y0) - (y1 - y0) * (p - x0) >= 0.0
                })
            }
            Shape::Fractal { base, aspect, orientation, harmonics } => {
                let (p, q) = local(dx, dy, *orientation);
                let q = q / aspect;
                let phi = q.atan2(p);
                let r = base * (1.0 + harmonics.iter().enumerate().map(|(i, (a, psi))| a * ((i + 2) as f32 * phi + psi).sin()).sum::<f32>());
                p.hypot(q) <= r
            }
            Shape::Spot { radius } => dx.hypot(dy) <= *radius,
        }
    }

    /// Largest distance from the centre any inside point can have.
    pub fn extent(&self) -> f32 {
        match self {
            Shape::Ellipse { semi_major, semi_minor, .. } => semi_major.max(*semi_minor),
            Shape::Polygon { radius, aspect, .. } => radius * aspect.max(1.0),
            Shape::Fractal { base, aspect, harmonics, .. } => {
                base * aspect.max(1.0) * (1.0 + harmonics.iter().map(|(a, _)| a.abs()).sum::<f32>())
            }
            Shape::Spot { radius } => *radius,
        }
    }
}

/// Rasterizes `spec` at pixel centres, forces the centre pixel on and keeps
/// its 4-connected component, so masks are nonempty and connected.
pub fn generate_mask(spec: &RegionSpec, width: usize, height: usize) -> Result<Mask> {
    let (cx, cy) = spec.center;
    let (px, py) = (cx.round(), cy.round());
    if !(px >= 0.0 && py >= 0.0 && (px as usize) < width && (py as usize) < height) {
        return Err(Error::EmptyMask { width, height });
    }
    let mut raw = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            raw[y * width + x] = spec.shape.contains(x as f32 - cx, y as f32 - cy);
        }
    }
    let seed = py as usize * width + px as usize;
    raw[seed] = true;

    let mut mask = vec![false; width * height];
    let mut stack = vec![seed];
    mask[seed] = true;
    while let Some(i) = stack.pop() {
        let (x, y) = (i % width, i / width);
        let mut visit = |j: usize| {
            if raw[j] && !mask[j] {
                mask[j] = true;
                stack.push(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < width {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - width);
        }
        if y + 1 < height {
            visit(i + width);
        }
    }
    Ok(mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Ellipse,
    Polygon,
    Fractal,
    Spot,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Ellipse, ShapeKind::Polygon, ShapeKind::Fractal, ShapeKind::Spot];
}

/// Random shape of `kind` with characteristic size `scale` pixels.
pub fn random_shape(kind: ShapeKind, scale: f32, smoothness: f32, rng: &mut impl Rng) -> Shape {
    let aspect = rng.random_range(0.5f32..=1.0);
    let orientation = rng.random_range(0.0..TAU);
    match kind {
        ShapeKind::Ellipse => Shape::Ellipse { semi_major: scale, semi_minor: scale * aspect, orientation },
        ShapeKind::Polygon => {
            let k = rng.random_range(3..=8usize);
            let step = TAU / k as f32;
            // jitter of at most 0.2 steps keeps vertices ordered and every gap below pi,
            // so the polygon is convex and surrounds its centre
            let vertex_angles = (0..k).map(|i| (i as f32 + rng.random_range(-0.2f32..0.2)) * step).collect();
            Shape::Polygon { radius: scale, aspect, orientation, vertex_angles }
        }
        ShapeKind::Fractal => {
            let harmonics = (2..=6).map(|_| (rng.random_range(-smoothness..=smoothness), rng.random_range(0.0..TAU))).collect();
            Shape::Fractal { base: scale, aspect, orientation, harmonics }
        }
        ShapeKind::Spot => Shape::Spot { radius: rng.random_range(1.0f32..=3.0) },
    }
}
