use crate::flowcore::Raster;

/// Reflects an out-of-range index back into `0..n` (`d c b a | a b c d | d c b a`).
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= sum);
    k
}

/// Separable convolution of a plane with a symmetric odd-length kernel, reflective borders.
pub fn convolve_separable(plane: &[f32], w: usize, h: usize, kernel: &[f32]) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0f32;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * row[reflect_index(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for (k, &kv) in kernel.iter().enumerate() {
            let sy = reflect_index(y as isize + k as isize - r, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Per-channel separable Gaussian blur. `sigma == 0` returns the input unchanged.
pub fn gaussian_blur<R: Raster + Clone>(raster: &R, sigma: f32) -> R {
    assert!(sigma >= 0.0, "gaussian_blur: sigma must be >= 0");
    if sigma == 0.0 {
        return raster.clone();
    }
    let (w, h) = raster.raster_dims();
    let kernel = gaussian_kernel(sigma);
    let planes = raster.to_planes().iter().map(|p| convolve_separable(p, w, h, &kernel)).collect();
    raster.with_planes(w, h, planes).expect("blur preserves shape and finiteness")
}
