//! Deterministic inputs shared by the benchmarks.

use magniflow::flowcore::{FlowField, ImageBuffer};
use magniflow::nofa::video::Texture;
use magniflow::substrate::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn textured_image(width: usize, height: usize, seed: u64) -> ImageBuffer {
    let tex = Texture::random(&mut ChaCha8Rng::seed_from_u64(seed), 4);
    ImageBuffer::from_fn(width, height, 3, |x, y, c| tex.eval(x as f32, y as f32)[c]).expect("finite texture")
}

pub fn smooth_flow(width: usize, height: usize, amplitude: f32) -> FlowField {
    FlowField::from_fn(width, height, |x, y| {
        let (fx, fy) = (x as f32 / width as f32, y as f32 / height as f32);
        (amplitude * (6.0 * fy).sin(), amplitude * (5.0 * fx).cos())
    })
    .expect("finite flow")
}

pub fn uniform_array(shape: &[usize], seed: u64) -> Array<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}
