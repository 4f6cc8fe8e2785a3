//! Image decoding and resizing to the fixed 224x224x3 input shape.

use std::io::{Read, Write};
use std::path::Path;

use image::imageops::FilterType;

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 224;
pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE * IMAGE_CHANNELS;

const TENSOR_MAGIC: &[u8; 4] = b"MMT1";

/// A 224x224x3 float image, row-major HWC, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        if data.len() != IMAGE_LEN {
            return Err(Error::ImageShape {
                expected: format!("{IMAGE_SIDE}x{IMAGE_SIDE}x{IMAGE_CHANNELS}"),
                found: format!("{} values", data.len()),
            });
        }
        Ok(ImageTensor { data })
    }

    pub fn zeros() -> Self {
        ImageTensor {
            data: vec![0.0; IMAGE_LEN],
        }
    }

    /// Simple deterministic test pattern.
    pub fn checkerboard(period: usize) -> Self {
        let p = period.max(1);
        let mut data = vec![0.0f32; IMAGE_LEN];
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                let v = if (x / p + y / p) % 2 == 0 { 1.0 } else { 0.0 };
                for c in 0..IMAGE_CHANNELS {
                    data[(y * IMAGE_SIDE + x) * IMAGE_CHANNELS + c] = v;
                }
            }
        }
        ImageTensor { data }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Row-major little-endian float32 bytes; the canonical input
    /// representation hashed by deterministic backends and the cache.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Decode bytes, replicate single-channel inputs to 3 channels, and
/// bilinearly resize to 224x224. Values scaled to [0, 1].
pub fn preprocess_image(bytes: &[u8], article_id: Option<&str>) -> Result<ImageTensor> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::ImageDecode {
        id: article_id.map(String::from),
        msg: e.to_string(),
    })?;
    // to_rgb8 replicates luma into all three channels for grayscale inputs
    let rgb = img.to_rgb8();
    let resized = image::imageops::resize(
        &rgb,
        IMAGE_SIDE as u32,
        IMAGE_SIDE as u32,
        FilterType::Triangle,
    );
    let data: Vec<f32> = resized.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
    ImageTensor::from_vec(data)
}

pub fn load_and_preprocess(path: &Path, article_id: Option<&str>) -> Result<ImageTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::ImageDecode {
        id: article_id.map(String::from),
        msg: format!("{}: {e}", path.display()),
    })?;
    preprocess_image(&bytes, article_id)
}

/// Persist a preprocessed tensor: 16-byte header (magic, h, w, c) then
/// little-endian float32 payload.
pub fn save_tensor(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(TENSOR_MAGIC).map_err(|e| Error::io(path, e))?;
    for dim in [IMAGE_SIDE as u32, IMAGE_SIDE as u32, IMAGE_CHANNELS as u32] {
        f.write_all(&dim.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    f.write_all(&img.canonical_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 16];
    f.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[0..4] != TENSOR_MAGIC {
        return Err(Error::ImageDecode {
            id: None,
            msg: format!("{}: bad tensor magic", path.display()),
        });
    }
    let mut payload = Vec::new();
    f.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() != IMAGE_LEN * 4 {
        return Err(Error::ImageDecode {
            id: None,
            msg: format!("{}: truncated tensor payload", path.display()),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ImageTensor::from_vec(data)
}

/// Encode a tensor back to a PNG file (test fixtures, chart inputs).
pub fn encode_png(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(IMAGE_SIDE as u32, IMAGE_SIDE as u32, raw)
        .expect("raw buffer has exact size");
    buf.save(path).map_err(|e| Error::ImageDecode {
        id: None,
        msg: format!("{}: {e}", path.display()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png_bytes(width: u32, height: u32, gray: bool) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        if gray {
            let img = image::GrayImage::from_fn(width, height, |x, y| {
                image::Luma([((x + y) % 256) as u8])
            });
            img.write_to(&mut out, image::ImageFormat::Png).unwrap();
        } else {
            let img = image::RgbImage::from_fn(width, height, |x, y| {
                image::Rgb([(x % 256) as u8, (y % 256) as u8, 7])
            });
            img.write_to(&mut out, image::ImageFormat::Png).unwrap();
        }
        out.into_inner()
    }

    #[test]
    fn resizes_to_fixed_shape() {
        let t = preprocess_image(&png_bytes(640, 480, false), None).unwrap();
        assert_eq!(t.data().len(), IMAGE_LEN);
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn identity_shape_preserved() {
        let t = preprocess_image(&png_bytes(224, 224, false), None).unwrap();
        assert_eq!(t.data().len(), IMAGE_LEN);
    }

    #[test]
    fn grayscale_replicates_channels() {
        let t = preprocess_image(&png_bytes(100, 100, true), None).unwrap();
        for px in t.data().chunks_exact(3) {
            assert_eq!(px[0], px[1]);
            assert_eq!(px[1], px[2]);
        }
    }

    #[test]
    fn decode_failure_carries_id() {
        match preprocess_image(b"garbage", Some("art-1")) {
            Err(Error::ImageDecode { id, .. }) => assert_eq!(id.as_deref(), Some("art-1")),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn tensor_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::checkerboard(5);
        let path = dir.path().join("x.t224");
        save_tensor(&img, &path).unwrap();
        assert_eq!(load_tensor(&path).unwrap(), img);
    }
}
