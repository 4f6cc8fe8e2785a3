//! Encoder backend contracts.
//!
//! The framework composes four encoder roles: an Indic text encoder,
//! an English text encoder, patch- and conv-style image encoders, a
//! crossmodal fusion encoder, and a caption generator whose output is
//! re-encoded as text. Every backend sits behind the traits below so
//! pretrained adapters and the deterministic stub are interchangeable.

mod cache;
mod stub;

pub use cache::{EmbeddingCache, FeatureCacheKey};
pub use stub::{
    fnv1a64, stub_unit_vector, SplitMix64, StubCaptionGenerator, StubImageEncoder,
    StubMultimodalEncoder, StubTextEncoder, StubTokenizer,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageproc::ImageTensor;

/// Default maximum token count for text pathways.
pub const DEFAULT_N_MAX: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderRole {
    TextIndic,
    TextEnglish,
    ImagePatch,
    ImageConv,
    Multimodal,
    CaptionGen,
    CaptionText,
}

impl EncoderRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            EncoderRole::TextIndic => "text_indic",
            EncoderRole::TextEnglish => "text_english",
            EncoderRole::ImagePatch => "image_patch",
            EncoderRole::ImageConv => "image_conv",
            EncoderRole::Multimodal => "multimodal",
            EncoderRole::CaptionGen => "caption_gen",
            EncoderRole::CaptionText => "caption_text",
        }
    }
}

/// Identity, version and output-dimension contract of one backend.
/// `(backend_id, version)` uniquely identifies numeric behaviour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderBackendDescriptor {
    pub backend_id: String,
    pub role: EncoderRole,
    pub output_dim: usize,
    pub version: String,
    pub deterministic: bool,
}

/// One pathway vector plus the descriptor that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
    producer: EncoderBackendDescriptor,
}

impl Embedding {
    pub fn new(values: Vec<f32>, producer: EncoderBackendDescriptor) -> Result<Self> {
        if values.len() != producer.output_dim {
            return Err(Error::Shape {
                what: format!("embedding from {}", producer.backend_id),
                expected: producer.output_dim.to_string(),
                found: values.len().to_string(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite embedding value from {}",
                producer.backend_id
            )));
        }
        Ok(Embedding { values, producer })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn producer(&self) -> &EncoderBackendDescriptor {
        &self.producer
    }
}

/// Full last-hidden-state matrix of a text encoder; row 0 is the
/// class-token state.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape {
                what: "embedding matrix".into(),
                expected: format!("{rows}x{cols}"),
                found: format!("{} values", values.len()),
            });
        }
        Ok(EmbeddingMatrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Fixed-length token sequence with specials and padding mask.
///
/// The originating text is retained so hash-seeded deterministic
/// backends can canonicalize on the raw UTF-8 bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub n_max: usize,
    pub source_text: String,
}

/// Maps text to content token ids; special ids are fixed by the trait.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<u32>;

    fn cls_id(&self) -> u32 {
        101
    }

    fn sep_id(&self) -> u32 {
        102
    }

    fn pad_id(&self) -> u32 {
        0
    }
}

/// Build `[CLS] content [SEP]` truncated to `n_max` positions (content
/// tokens are dropped first, specials never) and padded to `n_max`.
pub fn tokenize_with_specials(
    text: &str,
    tokenizer: &dyn Tokenizer,
    n_max: usize,
) -> Result<TokenSequence> {
    if n_max < 2 {
        return Err(Error::Config(format!(
            "n_max must be at least 2 to hold CLS and SEP, got {n_max}"
        )));
    }
    let mut content = tokenizer.tokenize(text);
    content.truncate(n_max - 2);
    let real_len = content.len() + 2;

    let mut tokens = Vec::with_capacity(n_max);
    tokens.push(tokenizer.cls_id());
    tokens.extend_from_slice(&content);
    tokens.push(tokenizer.sep_id());
    tokens.resize(n_max, tokenizer.pad_id());

    let mut attention_mask = vec![0u8; n_max];
    attention_mask[..real_len].fill(1);

    Ok(TokenSequence {
        tokens,
        attention_mask,
        n_max,
        source_text: text.to_string(),
    })
}

pub trait TextEncoder: Send + Sync {
    fn descriptor(&self) -> &EncoderBackendDescriptor;
    fn encode(&self, seq: &TokenSequence) -> Result<(EmbeddingMatrix, Embedding)>;
}

pub trait ImageEncoder: Send + Sync {
    fn descriptor(&self) -> &EncoderBackendDescriptor;
    fn encode(&self, img: &ImageTensor) -> Result<Embedding>;
}

pub trait MultimodalEncoder: Send + Sync {
    fn descriptor(&self) -> &EncoderBackendDescriptor;
    fn encode(&self, text_en: &str, img: &ImageTensor) -> Result<Embedding>;
}

pub trait CaptionGenerator: Send + Sync {
    fn descriptor(&self) -> &EncoderBackendDescriptor;
    fn generate(&self, img: &ImageTensor) -> Result<String>;
}

fn check_role(desc: &EncoderBackendDescriptor, allowed: &[EncoderRole]) -> Result<()> {
    if allowed.contains(&desc.role) {
        Ok(())
    } else {
        Err(Error::RoleMismatch {
            expected: allowed
                .iter()
                .map(|r| r.as_str())
                .collect::<Vec<_>>()
                .join("|"),
            found: desc.role.as_str().to_string(),
        })
    }
}

/// Last-hidden-state matrix plus the row-0 class-token vector.
pub fn encode_text(
    seq: &TokenSequence,
    backend: &dyn TextEncoder,
) -> Result<(EmbeddingMatrix, Embedding)> {
    check_role(
        backend.descriptor(),
        &[
            EncoderRole::TextIndic,
            EncoderRole::TextEnglish,
            EncoderRole::CaptionText,
        ],
    )?;
    backend.encode(seq)
}

pub fn encode_image_patch(img: &ImageTensor, backend: &dyn ImageEncoder) -> Result<Embedding> {
    check_role(backend.descriptor(), &[EncoderRole::ImagePatch])?;
    backend.encode(img)
}

pub fn encode_image_conv(img: &ImageTensor, backend: &dyn ImageEncoder) -> Result<Embedding> {
    check_role(backend.descriptor(), &[EncoderRole::ImageConv])?;
    backend.encode(img)
}

pub fn encode_multimodal(
    text_en: &str,
    img: &ImageTensor,
    backend: &dyn MultimodalEncoder,
) -> Result<Embedding> {
    check_role(backend.descriptor(), &[EncoderRole::Multimodal])?;
    backend.encode(text_en, img)
}

pub fn generate_caption(img: &ImageTensor, backend: &dyn CaptionGenerator) -> Result<String> {
    check_role(backend.descriptor(), &[EncoderRole::CaptionGen])?;
    backend.generate(img)
}

/// Caption pathway: generate a caption for the image and encode it
/// like any other text, keeping the class-token vector.
pub fn encode_caption(
    img: &ImageTensor,
    caption_gen: &dyn CaptionGenerator,
    caption_text: &dyn TextEncoder,
    tokenizer: &dyn Tokenizer,
    n_max: usize,
) -> Result<Embedding> {
    let caption = generate_caption(img, caption_gen)?;
    let seq = tokenize_with_specials(&caption, tokenizer, n_max)?;
    let (_, cls) = encode_text(&seq, caption_text)?;
    Ok(cls)
}
