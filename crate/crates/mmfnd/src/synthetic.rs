//! Deterministic synthetic corpora for desk-scale experiments and
//! tests.
//!
//! Encoder outputs are hash-derived and carry no class information, so
//! a separable dataset is made by planting a class-aligned direction
//! into already-extracted feature bundles. The article/image side
//! exists to exercise the full pipeline (manifests, decoding,
//! extraction, caching) end to end.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{save_manifest, DatasetManifest, Label, Language, NewsArticle};
use crate::error::{Error, Result};
use crate::fusion::{FeatureBundle, PathwayDims, PathwayMask};
use crate::imageproc::{encode_png, ImageTensor, IMAGE_LEN};

pub const SYNTHETIC_LANGUAGES: [Language; 7] = [
    Language::Hi,
    Language::Bn,
    Language::Mr,
    Language::Ml,
    Language::Ta,
    Language::Gu,
    Language::Pa,
];

const SUBJECTS: [&str; 8] = [
    "minister", "hospital", "river", "election", "village", "festival", "railway", "farmer",
];
const VERBS: [&str; 6] = ["announces", "denies", "reports", "claims", "confirms", "disputes"];
const OBJECTS: [&str; 8] = [
    "new policy",
    "flood relief",
    "vaccine drive",
    "road project",
    "power cut",
    "exam results",
    "water supply",
    "market prices",
];

fn native_text(language: Language, idx: usize) -> String {
    // distinct strings per language and index; content is a stand-in,
    // the stub encoders only see bytes
    format!("{} samachar lekh {} vistar vivaran", language.as_str(), idx)
}

fn english_text(rng: &mut ChaCha8Rng, idx: usize) -> String {
    let s = SUBJECTS[rng.gen_range(0..SUBJECTS.len())];
    let v = VERBS[rng.gen_range(0..VERBS.len())];
    let o = OBJECTS[rng.gen_range(0..OBJECTS.len())];
    format!("{s} {v} {o} in district report {idx}")
}

/// Deterministic article i: language cycles through the seven
/// supported ones, labels alternate, so classes and languages are
/// balanced.
pub fn synthetic_articles(n: usize, seed: u64) -> Vec<NewsArticle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let language = SYNTHETIC_LANGUAGES[i % SYNTHETIC_LANGUAGES.len()];
            let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
            NewsArticle {
                id: format!("syn-{i:05}"),
                language,
                text: native_text(language, i),
                text_en: Some(english_text(&mut rng, i)),
                image_ref: Some(format!("images/syn-{i:05}.png")),
                label,
                source_url: None,
                published_at: None,
                tags: vec!["synthetic".into()],
                text_en_source: Some("synthetic".into()),
            }
        })
        .collect()
}

/// A cheap deterministic image for article `idx`: a shifted gradient
/// with a checker overlay, distinct per index.
pub fn synthetic_image(idx: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64));
    let phase: f32 = rng.gen_range(0.0..1.0);
    let period = 8 + (idx % 16);
    let mut data = Vec::with_capacity(IMAGE_LEN);
    for y in 0..224usize {
        for x in 0..224usize {
            let checker = ((x / period + y / period) % 2) as f32;
            let grad = (x as f32 / 223.0 + phase) % 1.0;
            data.push(grad);
            data.push(checker * 0.8);
            data.push((grad + checker) * 0.5 % 1.0);
        }
    }
    ImageTensor::from_vec(data).expect("fixed-size construction")
}

/// Write `n` articles plus PNG images under `dir` and return the
/// manifest path.
pub fn write_synthetic_corpus(dir: impl AsRef<Path>, n: usize, seed: u64) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let articles = synthetic_articles(n, seed);
    for (i, article) in articles.iter().enumerate() {
        let path = dir.join(article.image_ref.as_ref().unwrap());
        encode_png(&synthetic_image(i, seed), &path)?;
    }
    let manifest_path = dir.join("manifest.jsonl");
    let manifest = DatasetManifest {
        records: articles,
        root_dir: dir.to_path_buf(),
        schema_version: 1,
    };
    save_manifest(&manifest, &manifest_path)?;
    Ok(manifest_path)
}

/// Add `alpha * (2y - 1) * u_p` to every enabled pathway of every
/// bundle, where each `u_p` is a fixed seeded unit direction. This is
/// the planted signal that makes the classes linearly separable.
pub fn plant_signal(bundles: &mut [FeatureBundle], labels: &[Label], alpha: f32, seed: u64) {
    assert_eq!(bundles.len(), labels.len());
    if bundles.is_empty() {
        return;
    }
    let dims = bundles[0].dims().as_array();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<Vec<f32>> = dims
        .iter()
        .map(|&d| {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| (x / norm) as f32).collect()
        })
        .collect();
    for (bundle, label) in bundles.iter_mut().zip(labels) {
        let sign = alpha * (2.0 * label.as_u8() as f32 - 1.0);
        let flags = bundle.mask.flags();
        let pathways = [
            &mut bundle.f_text,
            &mut bundle.f_img,
            &mut bundle.f_multimodal,
            &mut bundle.f_caption,
        ];
        for ((pathway, direction), enabled) in pathways.into_iter().zip(&directions).zip(flags) {
            if !enabled {
                continue;
            }
            for (x, u) in pathway.iter_mut().zip(direction) {
                *x += sign * u;
            }
        }
    }
}

/// Noise-plus-planted-direction bundles with small pathway dimensions,
/// for unit tests that need trainable data without running encoders.
pub fn planted_dataset(
    n: usize,
    seed: u64,
    alpha: f32,
) -> (Vec<FeatureBundle>, Vec<Label>, PathwayDims) {
    let dims = PathwayDims {
        text: 24,
        image: 20,
        multimodal: 12,
        caption: 12,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<Label> = (0..n)
        .map(|i| if i % 2 == 0 { Label::Real } else { Label::Fake })
        .collect();
    let mut noise = |d: usize| -> Vec<f32> {
        let scale = 1.0 / (d as f32).sqrt();
        (0..d).map(|_| rng.gen_range(-scale..scale)).collect()
    };
    let mut bundles: Vec<FeatureBundle> = (0..n)
        .map(|_| FeatureBundle {
            f_text: noise(dims.text),
            f_img: noise(dims.image),
            f_multimodal: noise(dims.multimodal),
            f_caption: noise(dims.caption),
            mask: PathwayMask::all(),
        })
        .collect();
    plant_signal(&mut bundles, &labels, alpha, seed ^ 0x9e3779b97f4a7c15);
    (bundles, labels, dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_manifest;

    #[test]
    fn articles_cover_languages_and_balance_labels() {
        let articles = synthetic_articles(70, 1);
        for lang in SYNTHETIC_LANGUAGES {
            assert!(articles.iter().any(|a| a.language == lang));
        }
        let real = articles.iter().filter(|a| a.label == Label::Real).count();
        assert_eq!(real, 35);
        assert!(articles.iter().all(|a| a.text_en.is_some()));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synthetic_articles(10, 4);
        let b = synthetic_articles(10, 4);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(synthetic_image(3, 4).data(), synthetic_image(3, 4).data());
        assert_ne!(synthetic_image(3, 4).data(), synthetic_image(4, 4).data());
    }

    #[test]
    fn corpus_roundtrips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_synthetic_corpus(dir.path(), 5, 2).unwrap();
        let manifest = load_manifest(&path).unwrap();
        assert_eq!(manifest.records.len(), 5);
        for a in &manifest.records {
            let img = manifest.image_path(a).unwrap();
            assert!(img.exists(), "{}", img.display());
        }
    }

    #[test]
    fn planted_signal_separates_class_means() {
        let (bundles, labels, _) = planted_dataset(100, 7, 1.0);
        let dim = bundles[0].f_text.len();
        let mut mean = [vec![0.0f64; dim], vec![0.0f64; dim]];
        let mut count = [0usize; 2];
        for (b, l) in bundles.iter().zip(&labels) {
            let k = l.as_u8() as usize;
            count[k] += 1;
            for (m, &x) in mean[k].iter_mut().zip(&b.f_text) {
                *m += x as f64;
            }
        }
        let gap: f64 = (0..dim)
            .map(|i| {
                let d = mean[1][i] / count[1] as f64 - mean[0][i] / count[0] as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt();
        // class means differ by about 2 * alpha along the direction
        assert!(gap > 1.5, "gap {gap}");
    }

    #[test]
    fn masked_pathways_stay_zero_after_planting() {
        let (mut bundles, labels, _) = planted_dataset(4, 9, 1.0);
        for b in bundles.iter_mut() {
            *b = b.masked(PathwayMask::text_only());
        }
        plant_signal(&mut bundles, &labels, 1.0, 3);
        for b in &bundles {
            assert!(b.f_img.iter().all(|&v| v == 0.0));
            assert!(b.f_caption.iter().all(|&v| v == 0.0));
        }
    }
}
