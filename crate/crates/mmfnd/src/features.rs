//! Assembling per-article feature bundles from the encoder hub.

use crate::dataset::NewsArticle;
use crate::encoder::{
    encode_caption, encode_image_conv, encode_image_patch, encode_multimodal, encode_text,
    tokenize_with_specials, CaptionGenerator, Embedding, EmbeddingCache, EncoderBackendDescriptor,
    FeatureCacheKey, ImageEncoder, MultimodalEncoder, StubCaptionGenerator, StubImageEncoder,
    StubMultimodalEncoder, StubTextEncoder, StubTokenizer, TextEncoder, Tokenizer, DEFAULT_N_MAX,
};
use crate::error::{Error, Result};
use crate::fusion::{FeatureBundle, PathwayDims, PathwayMask};
use crate::imageproc::ImageTensor;
use crate::parallel::try_map_items;

/// One backend per role plus the shared tokenizer.
pub struct EncoderSet {
    pub text_indic: Box<dyn TextEncoder>,
    pub text_english: Box<dyn TextEncoder>,
    pub caption_text: Box<dyn TextEncoder>,
    pub image_patch: Box<dyn ImageEncoder>,
    pub image_conv: Box<dyn ImageEncoder>,
    pub multimodal: Box<dyn MultimodalEncoder>,
    pub caption_gen: Box<dyn CaptionGenerator>,
    pub tokenizer: Box<dyn Tokenizer>,
    pub n_max: usize,
}

impl EncoderSet {
    /// The hermetic default: deterministic stub backends everywhere.
    pub fn stub() -> Self {
        EncoderSet {
            text_indic: Box::new(StubTextEncoder::text_indic()),
            text_english: Box::new(StubTextEncoder::text_english()),
            caption_text: Box::new(StubTextEncoder::caption_text()),
            image_patch: Box::new(StubImageEncoder::patch()),
            image_conv: Box::new(StubImageEncoder::conv()),
            multimodal: Box::new(StubMultimodalEncoder::new()),
            caption_gen: Box::new(StubCaptionGenerator::new()),
            tokenizer: Box::new(StubTokenizer),
            n_max: DEFAULT_N_MAX,
        }
    }

    /// Nominal bundle dimensions implied by the configured backends.
    pub fn pathway_dims(&self) -> PathwayDims {
        PathwayDims {
            text: self.text_indic.descriptor().output_dim
                + self.text_english.descriptor().output_dim,
            image: self.image_conv.descriptor().output_dim
                + self.image_patch.descriptor().output_dim,
            multimodal: self.multimodal.descriptor().output_dim,
            caption: self.caption_text.descriptor().output_dim,
        }
    }
}

fn cached(
    cache: Option<&EmbeddingCache>,
    desc: &EncoderBackendDescriptor,
    canonical: &[u8],
    compute: impl FnOnce() -> Result<Embedding>,
) -> Result<Embedding> {
    match cache {
        Some(cache) if desc.deterministic => {
            let key = FeatureCacheKey::new(desc, canonical);
            cache.get_or_compute(&key, desc, compute)
        }
        _ => compute(),
    }
}

fn require_text_en<'a>(article: &'a NewsArticle, pathway: &str) -> Result<&'a str> {
    article.text_en.as_deref().ok_or_else(|| Error::MissingModality {
        pathway: pathway.into(),
        msg: format!("article '{}' has no English text", article.id),
    })
}

fn require_image<'a>(
    img: Option<&'a ImageTensor>,
    article: &NewsArticle,
    pathway: &str,
) -> Result<&'a ImageTensor> {
    img.ok_or_else(|| Error::MissingModality {
        pathway: pathway.into(),
        msg: format!("article '{}' has no image tensor", article.id),
    })
}

/// Build the four-pathway bundle for one article. Only enabled
/// pathways invoke encoders; disabled ones are zero vectors of their
/// nominal dimension.
pub fn build_feature_bundle(
    article: &NewsArticle,
    img: Option<&ImageTensor>,
    encoders: &EncoderSet,
    mask: PathwayMask,
    cache: Option<&EmbeddingCache>,
) -> Result<FeatureBundle> {
    mask.validate()?;
    let dims = encoders.pathway_dims();

    let f_text = if mask.use_text {
        let text_en = require_text_en(article, "text")?;
        let seq_indic =
            tokenize_with_specials(&article.text, encoders.tokenizer.as_ref(), encoders.n_max)?;
        let seq_en = tokenize_with_specials(text_en, encoders.tokenizer.as_ref(), encoders.n_max)?;
        let indic = cached(
            cache,
            encoders.text_indic.descriptor(),
            article.text.as_bytes(),
            || Ok(encode_text(&seq_indic, encoders.text_indic.as_ref())?.1),
        )?;
        let english = cached(
            cache,
            encoders.text_english.descriptor(),
            text_en.as_bytes(),
            || Ok(encode_text(&seq_en, encoders.text_english.as_ref())?.1),
        )?;
        let mut v = indic.values().to_vec();
        v.extend_from_slice(english.values());
        v
    } else {
        vec![0.0; dims.text]
    };

    let f_img = if mask.use_image {
        let img = require_image(img, article, "image")?;
        let canonical = img.canonical_bytes();
        let conv = cached(cache, encoders.image_conv.descriptor(), &canonical, || {
            encode_image_conv(img, encoders.image_conv.as_ref())
        })?;
        let patch = cached(cache, encoders.image_patch.descriptor(), &canonical, || {
            encode_image_patch(img, encoders.image_patch.as_ref())
        })?;
        let mut v = conv.values().to_vec();
        v.extend_from_slice(patch.values());
        v
    } else {
        vec![0.0; dims.image]
    };

    let f_multimodal = if mask.use_multimodal {
        let text_en = require_text_en(article, "multimodal")?;
        let img = require_image(img, article, "multimodal")?;
        let mut canonical = text_en.as_bytes().to_vec();
        canonical.push(0x1F);
        canonical.extend(img.canonical_bytes());
        cached(cache, encoders.multimodal.descriptor(), &canonical, || {
            encode_multimodal(text_en, img, encoders.multimodal.as_ref())
        })?
        .values()
        .to_vec()
    } else {
        vec![0.0; dims.multimodal]
    };

    let f_caption = if mask.use_caption {
        let img = require_image(img, article, "caption")?;
        let canonical = img.canonical_bytes();
        cached(cache, encoders.caption_text.descriptor(), &canonical, || {
            encode_caption(
                img,
                encoders.caption_gen.as_ref(),
                encoders.caption_text.as_ref(),
                encoders.tokenizer.as_ref(),
                encoders.n_max,
            )
        })?
        .values()
        .to_vec()
    } else {
        vec![0.0; dims.caption]
    };

    Ok(FeatureBundle {
        f_text,
        f_img,
        f_multimodal,
        f_caption,
        mask,
    })
}

/// Bundle extraction across a whole dataset; the per-article work is
/// pure and fans out with rayon when enabled.
pub fn extract_bundles(
    articles: &[NewsArticle],
    images: &[Option<ImageTensor>],
    encoders: &EncoderSet,
    mask: PathwayMask,
    cache: Option<&EmbeddingCache>,
    parallel: bool,
) -> Result<Vec<FeatureBundle>> {
    assert_eq!(articles.len(), images.len());
    let pairs: Vec<(usize, &NewsArticle)> = articles.iter().enumerate().collect();
    try_map_items(&pairs, parallel, |(i, article)| {
        build_feature_bundle(article, images[*i].as_ref(), encoders, mask, cache)
    })
}
