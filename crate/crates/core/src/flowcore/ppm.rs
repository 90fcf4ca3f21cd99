//! Binary PPM (P6, maxval 255) frames and numbered frame directories.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::flowcore::ImageBuffer;

pub fn encode_ppm(image: &ImageBuffer) -> Vec<u8> {
    let (w, h) = image.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    let quantize = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let src = if image.channels() == 1 { 0 } else { c };
                out.push(quantize(image.get(x, y, src)));
            }
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P6" {
        return Err(Error::Format(format!("unsupported PPM magic {:?}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PPM header field {s:?}")));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit PPM (maxval 255) is supported, got {maxval}")));
    }
    let expected = pos + w * h * 3;
    if bytes.len() < expected {
        return Err(Error::Length { expected, actual: bytes.len() });
    }
    let data = bytes[pos..expected].iter().map(|&b| b as f32 / 255.0).collect();
    ImageBuffer::new(w, h, 3, data)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    decode_ppm(&fs::read(path).map_err(Error::at(path))?)
}

pub fn write_ppm(path: impl AsRef<Path>, image: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)).map_err(Error::at(path))
}

/// File name of the 1-based frame `index` inside a video directory.
pub fn frame_name(index: usize) -> String {
    format!("frame_{index:06}.ppm")
}

/// Sorted list of `*.ppm` files in a directory.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    list_with_extension(dir, "ppm")
}

pub fn list_with_extension(dir: impl AsRef<Path>, ext: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(Error::at(dir))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_video(dir: impl AsRef<Path>) -> Result<Vec<ImageBuffer>> {
    list_frames(dir)?.iter().map(read_ppm).collect()
}

/// Writes frames as `frame_000001.ppm`, `frame_000002.ppm`, ...
pub fn write_video(dir: impl AsRef<Path>, frames: &[ImageBuffer]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(Error::at(dir))?;
    for (i, frame) in frames.iter().enumerate() {
        write_ppm(dir.join(frame_name(i + 1)), frame)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_roundtrip() {
        let img = ImageBuffer::from_fn(4, 3, 3, |x, y, c| ((x * 37 + y * 11 + c * 5) % 256) as f32 / 255.0).unwrap();
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn header_with_comment() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(1, 0, 1), 1.0);
    }

    #[test]
    fn rejects_other_formats() {
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n0 0 0"), Err(Error::Format(_))));
        assert!(matches!(decode_ppm(b"P6\n2 2\n255\n\x00"), Err(Error::Length { .. })));
    }

    #[test]
    fn frame_names_are_zero_padded() {
        assert_eq!(frame_name(1), "frame_000001.ppm");
    }
}
