//! Direction sampling and composition of conditional/target flows.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flowcore::FlowField;
use crate::nofa::region::{generate_mask, Mask, RegionSpec};

/// `n` angles from `n` distinct segments of `[0, 2pi)` split into `d` equal
/// parts, each uniform within its segment.
pub fn sample_directions(n: usize, d: usize, rng: &mut impl Rng) -> Result<Vec<f32>> {
    if n == 0 || n > d {
        return Err(Error::contract(format!("sample_directions: need 1 <= n <= d, got n = {n}, d = {d}")));
    }
    let width = TAU / d as f64;
    Ok(sample(rng, d, n)
        .into_iter()
        .map(|k| {
            let theta = ((k as f64 + rng.random::<f64>()) * width) as f32;
            // rounding to f32 must not carry the angle into the next segment
            if segment_of(theta, d) == k {
                theta
            } else {
                ((k as f64 + 0.5) * width) as f32
            }
        })
        .collect())
}

pub fn sample_directions_seeded(n: usize, d: usize, seed: u64) -> Result<Vec<f32>> {
    sample_directions(n, d, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Index of the segment containing `theta`.
pub fn segment_of(theta: f32, d: usize) -> usize {
    ((theta as f64 * d as f64 / TAU).floor() as usize).min(d - 1)
}

/// Region vector `m * (cos theta, sin theta)`.
pub fn region_vector(spec: &RegionSpec) -> (f32, f32) {
    (spec.magnitude * spec.theta.cos(), spec.magnitude * spec.theta.sin())
}

/// Writes each region's vector into its mask; later regions overwrite earlier
/// ones where masks overlap. Returns the flow and the union mask.
pub fn compose_from_masks(regions: &[RegionSpec], masks: &[Mask], width: usize, height: usize) -> Result<(FlowField, Mask)> {
    if regions.len() != masks.len() || masks.iter().any(|m| m.len() != width * height) {
        return Err(Error::contract("compose: one full-size mask per region required"));
    }
    let mut flow = FlowField::zeros(width, height);
    let mut union = vec![false; width * height];
    for (spec, mask) in regions.iter().zip(masks) {
        let (du, dv) = region_vector(spec);
        let (u, v) = flow.planes_mut();
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            u[i] = du;
            v[i] = dv;
            union[i] = true;
        }
    }
    Ok((flow, union))
}

pub fn compose_conditional_flow(regions: &[RegionSpec], width: usize, height: usize) -> Result<(FlowField, Mask)> {
    if regions.is_empty() {
        return Err(Error::contract("compose: at least one region required"));
    }
    let masks = regions.iter().map(|r| generate_mask(r, width, height)).collect::<Result<Vec<_>>>()?;
    compose_from_masks(regions, &masks, width, height)
}

/// `alpha * conditional` inside the mask union, exactly zero elsewhere.
pub fn make_target_flow(conditional: &FlowField, union: &Mask, alpha: f32) -> Result<FlowField> {
    if union.len() != conditional.len() {
        return Err(Error::contract("make_target_flow: mask size differs from flow"));
    }
    if !(alpha >= 0.0) {
        return Err(Error::contract(format!("make_target_flow: alpha must be >= 0, got {alpha}")));
    }
    let pick = |plane: &[f32]| plane.iter().zip(union).map(|(&x, &m)| if m { alpha * x } else { 0.0 }).collect();
    FlowField::new(conditional.width(), conditional.height(), pick(conditional.u()), pick(conditional.v()))
}
