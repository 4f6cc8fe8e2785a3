//! Hash-seeded deterministic stub backends.
//!
//! The stub makes the full pipeline runnable and bit-reproducible with
//! zero model downloads. Every output vector is derived from
//!
//! ```text
//! seed   = FNV-1a64(utf8(backend_id) || 0x1F || canonical input bytes)
//! stream = SplitMix64(seed)
//! comp   = ((x >> 11) * 2^-52) * 2 - 1   for each 64-bit draw x
//! ```
//!
//! followed by L2 normalization (computed in f64, stored as f32).
//! Canonical input bytes: UTF-8 of the source text for text roles,
//! row-major little-endian float32 bytes for images, and
//! `text || 0x1F || image` for the multimodal role. Last-hidden-state
//! rows beyond the class token append `0x1F || le_u32(row)` to the
//! canonical bytes before seeding.

use sha2::{Digest, Sha256};

use super::{
    Embedding, EmbeddingMatrix, EncoderBackendDescriptor, EncoderRole, TextEncoder, TokenSequence,
    Tokenizer,
};
use crate::error::Result;
use crate::imageproc::ImageTensor;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;
const FIELD_SEP: u8 = 0x1F;

/// FNV-1a 64-bit over a byte stream.
pub fn fnv1a64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(FNV_OFFSET, |h, b| {
        (h ^ b as u64).wrapping_mul(FNV_PRIME)
    })
}

/// SplitMix64 pseudo-random stream.
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }
}

/// The published stub vector algorithm.
pub fn stub_unit_vector(backend_id: &str, input: &[u8], dim: usize) -> Vec<f32> {
    let seed = fnv1a64(
        backend_id
            .as_bytes()
            .iter()
            .copied()
            .chain([FIELD_SEP])
            .chain(input.iter().copied()),
    );
    let mut stream = SplitMix64::new(seed);
    let raw: Vec<f64> = (0..dim)
        .map(|_| ((stream.next_u64() >> 11) as f64 * 2f64.powi(-52)) * 2.0 - 1.0)
        .collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.iter().map(|v| (v / norm) as f32).collect()
}

fn row_input(input: &[u8], row: u32) -> Vec<u8> {
    let mut v = Vec::with_capacity(input.len() + 5);
    v.extend_from_slice(input);
    v.push(FIELD_SEP);
    v.extend_from_slice(&row.to_le_bytes());
    v
}

fn descriptor(backend_id: &str, role: EncoderRole, output_dim: usize) -> EncoderBackendDescriptor {
    EncoderBackendDescriptor {
        backend_id: backend_id.to_string(),
        role,
        output_dim,
        version: "1".to_string(),
        deterministic: true,
    }
}

/// Whitespace tokenizer hashing each token into a fixed id range.
pub struct StubTokenizer;

impl Tokenizer for StubTokenizer {
    fn tokenize(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|t| 1000 + (fnv1a64(t.bytes()) % 30000) as u32)
            .collect()
    }
}

pub struct StubTextEncoder {
    desc: EncoderBackendDescriptor,
}

impl StubTextEncoder {
    pub fn text_indic() -> Self {
        StubTextEncoder {
            desc: descriptor("stub-text-indic", EncoderRole::TextIndic, 768),
        }
    }

    pub fn text_english() -> Self {
        StubTextEncoder {
            desc: descriptor("stub-text-english", EncoderRole::TextEnglish, 768),
        }
    }

    pub fn caption_text() -> Self {
        StubTextEncoder {
            desc: descriptor("stub-caption-text", EncoderRole::CaptionText, 768),
        }
    }
}

impl TextEncoder for StubTextEncoder {
    fn descriptor(&self) -> &EncoderBackendDescriptor {
        &self.desc
    }

    fn encode(&self, seq: &TokenSequence) -> Result<(EmbeddingMatrix, Embedding)> {
        let input = seq.source_text.as_bytes();
        let dim = self.desc.output_dim;
        let mut values = Vec::with_capacity(seq.n_max * dim);
        values.extend(stub_unit_vector(&self.desc.backend_id, input, dim));
        for row in 1..seq.n_max as u32 {
            values.extend(stub_unit_vector(
                &self.desc.backend_id,
                &row_input(input, row),
                dim,
            ));
        }
        let matrix = EmbeddingMatrix::new(seq.n_max, dim, values)?;
        let cls = Embedding::new(matrix.row(0).to_vec(), self.desc.clone())?;
        Ok((matrix, cls))
    }
}

pub struct StubImageEncoder {
    desc: EncoderBackendDescriptor,
}

impl StubImageEncoder {
    pub fn patch() -> Self {
        StubImageEncoder {
            desc: descriptor("stub-image-patch", EncoderRole::ImagePatch, 768),
        }
    }

    /// Conv role defaults to 1024 to exercise heterogeneous
    /// concatenation downstream.
    pub fn conv() -> Self {
        StubImageEncoder {
            desc: descriptor("stub-image-conv", EncoderRole::ImageConv, 1024),
        }
    }
}

impl super::ImageEncoder for StubImageEncoder {
    fn descriptor(&self) -> &EncoderBackendDescriptor {
        &self.desc
    }

    fn encode(&self, img: &ImageTensor) -> Result<Embedding> {
        let values = stub_unit_vector(
            &self.desc.backend_id,
            &img.canonical_bytes(),
            self.desc.output_dim,
        );
        Embedding::new(values, self.desc.clone())
    }
}

pub struct StubMultimodalEncoder {
    desc: EncoderBackendDescriptor,
}

impl StubMultimodalEncoder {
    pub fn new() -> Self {
        StubMultimodalEncoder {
            desc: descriptor("stub-multimodal", EncoderRole::Multimodal, 768),
        }
    }
}

impl Default for StubMultimodalEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl super::MultimodalEncoder for StubMultimodalEncoder {
    fn descriptor(&self) -> &EncoderBackendDescriptor {
        &self.desc
    }

    fn encode(&self, text_en: &str, img: &ImageTensor) -> Result<Embedding> {
        let mut input = text_en.as_bytes().to_vec();
        input.push(FIELD_SEP);
        input.extend(img.canonical_bytes());
        let values = stub_unit_vector(&self.desc.backend_id, &input, self.desc.output_dim);
        Embedding::new(values, self.desc.clone())
    }
}

pub struct StubCaptionGenerator {
    desc: EncoderBackendDescriptor,
}

impl StubCaptionGenerator {
    pub fn new() -> Self {
        // output_dim is unused for caption text; kept at 1 to satisfy
        // the descriptor invariant
        StubCaptionGenerator {
            desc: descriptor("stub-caption-gen", EncoderRole::CaptionGen, 1),
        }
    }
}

impl Default for StubCaptionGenerator {
    fn default() -> Self {
        Self::new()
    }
}

impl super::CaptionGenerator for StubCaptionGenerator {
    fn descriptor(&self) -> &EncoderBackendDescriptor {
        &self.desc
    }

    fn generate(&self, img: &ImageTensor) -> Result<String> {
        let digest = Sha256::digest(img.canonical_bytes());
        let prefix: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
        Ok(format!("stub caption {prefix}"))
    }
}
