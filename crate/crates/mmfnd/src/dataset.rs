//! Dataset ingestion and preprocessing.
//!
//! Ingestion starts from a JSON Lines manifest (one [`NewsArticle`]
//! per line). The pipeline cleans text, attaches English translations,
//! drops records without a decodable image, and produces deterministic
//! train/test splits and per-language statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imageproc;
use crate::parallel::map_items;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// The seven dataset languages plus a catch-all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Hi,
    Bn,
    Mr,
    Ml,
    Ta,
    Gu,
    Pa,
    Other,
}

impl Language {
    pub const ALL: [Language; 8] = [
        Language::Hi,
        Language::Bn,
        Language::Mr,
        Language::Ml,
        Language::Ta,
        Language::Gu,
        Language::Pa,
        Language::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Language::Hi => "hi",
            Language::Bn => "bn",
            Language::Mr => "mr",
            Language::Ml => "ml",
            Language::Ta => "ta",
            Language::Gu => "gu",
            Language::Pa => "pa",
            Language::Other => "other",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary article label: 0 = fake, 1 = real.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Fake,
    Real,
}

impl Label {
    pub fn from_int(v: i64) -> Result<Label> {
        match v {
            0 => Ok(Label::Fake),
            1 => Ok(Label::Real),
            other => Err(Error::Label(other)),
        }
    }

    pub fn as_u8(&self) -> u8 {
        match self {
            Label::Fake => 0,
            Label::Real => 1,
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Label, D::Error> {
        let v = i64::deserialize(d)?;
        Label::from_int(v).map_err(serde::de::Error::custom)
    }
}

/// One multimodal news record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewsArticle {
    pub id: String,
    pub language: Language,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_en: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_at: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    /// Which translator produced `text_en`, when it was filled in by
    /// the pipeline rather than the source data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_en_source: Option<String>,
}

/// An ordered collection of articles plus the directory image_refs
/// resolve against.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<NewsArticle>,
    pub root_dir: PathBuf,
    pub schema_version: u32,
}

impl DatasetManifest {
    pub fn image_path(&self, article: &NewsArticle) -> Option<PathBuf> {
        article.image_ref.as_ref().map(|r| self.root_dir.join(r))
    }
}

/// Parse a JSON Lines manifest. `image_ref`s resolve against the
/// manifest file's parent directory unless overridden afterwards.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let article: NewsArticle = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if !seen.insert(article.id.clone()) {
            return Err(Error::DuplicateId(article.id));
        }
        records.push(article);
    }
    if records.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(DatasetManifest {
        records,
        root_dir,
        schema_version: MANIFEST_SCHEMA_VERSION,
    })
}

/// Serialize a manifest back to JSON Lines.
pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for rec in &manifest.records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

// Emoji and pictograph blocks, variation selectors, and the ZWJ.
fn is_emoji(c: char) -> bool {
    matches!(u32::from(c),
        0x1F000..=0x1FAFF   // SMP emoji, pictographs, symbols, flags
        | 0x2600..=0x27BF   // misc symbols + dingbats
        | 0x2B00..=0x2BFF   // misc symbols and arrows (stars etc.)
        | 0xFE00..=0xFE0F   // variation selectors
        | 0x200D            // zero-width joiner
    )
}

// Zero-width and directional format characters that survive scraping.
fn is_format_artifact(c: char) -> bool {
    matches!(
        u32::from(c),
        0x200B..=0x200F | 0x202A..=0x202E | 0x2060..=0x2064 | 0xFEFF | 0x00AD
    )
}

fn is_url_token(token: &str) -> bool {
    let lower = token.to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

/// Strip URLs, emoji, control and zero-width characters, and collapse
/// whitespace. Total and idempotent.
pub fn clean_text(raw: &str) -> String {
    let filtered: String = raw
        .chars()
        .map(|c| if c.is_whitespace() { ' ' } else { c })
        .filter(|&c| !(c.is_control() || is_format_artifact(c) || is_emoji(c)))
        .collect();
    let mut out = String::with_capacity(filtered.len());
    for token in filtered.split(' ').filter(|t| !t.is_empty()) {
        if is_url_token(token) {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Keep only records whose image exists and decodes; returns the
/// surviving manifest (order preserved) and the dropped ids.
pub fn exclude_incomplete(manifest: &DatasetManifest) -> (DatasetManifest, Vec<String>) {
    let decodable: Vec<bool> = map_items(&manifest.records, true, |rec| {
        match manifest.image_path(rec) {
            Some(path) => imageproc::load_and_preprocess(&path, Some(&rec.id)).is_ok(),
            None => false,
        }
    });
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (rec, ok) in manifest.records.iter().zip(&decodable) {
        if *ok {
            kept.push(rec.clone());
        } else {
            dropped.push(rec.id.clone());
        }
    }
    (
        DatasetManifest {
            records: kept,
            root_dir: manifest.root_dir.clone(),
            schema_version: manifest.schema_version,
        },
        dropped,
    )
}

/// Translation backend. The paper relied on an external web service,
/// so the kit keeps translation behind an injected interface with an
/// identity fallback.
pub trait Translator: Send + Sync {
    fn name(&self) -> &str;
    fn translate(&self, text: &str, language: Language) -> std::result::Result<String, String>;
}

/// Passes cleaned text through unchanged. Never fails.
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn name(&self) -> &str {
        "identity"
    }

    fn translate(&self, text: &str, _language: Language) -> std::result::Result<String, String> {
        Ok(text.to_string())
    }
}

/// Table-lookup translator for tests and small fixtures.
pub struct TableTranslator {
    map: std::collections::HashMap<String, String>,
}

impl TableTranslator {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        TableTranslator {
            map: entries.into_iter().collect(),
        }
    }
}

impl Translator for TableTranslator {
    fn name(&self) -> &str {
        "table"
    }

    fn translate(&self, text: &str, _language: Language) -> std::result::Result<String, String> {
        self.map
            .get(text)
            .cloned()
            .ok_or_else(|| format!("no table entry for {text:?}"))
    }
}

/// Fill `text_en` from the translator when absent; articles that
/// already carry a translation pass through unchanged.
pub fn translate_article(article: &NewsArticle, translator: &dyn Translator) -> Result<NewsArticle> {
    if article.text_en.is_some() {
        return Ok(article.clone());
    }
    let cleaned = clean_text(&article.text);
    let translated = translator
        .translate(&cleaned, article.language)
        .map_err(|msg| Error::Translator {
            id: article.id.clone(),
            msg,
        })?;
    let mut out = article.clone();
    out.text_en = Some(translated);
    out.text_en_source = Some(translator.name().to_string());
    Ok(out)
}

/// Deterministic train/test partition of article ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
    pub ratio: f64,
}

/// Shuffle ids with a seeded permutation and take the first
/// round(ratio * N) as the train set (half-up rounding).
pub fn split_dataset(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} not in (0, 1)")));
    }
    let n = manifest.records.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "cannot split a manifest of {n} record(s); need at least 2"
        )));
    }
    let mut ids: Vec<String> = manifest.records.iter().map(|r| r.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = ((ratio * n as f64) + 0.5).floor() as usize;
    let test_ids = ids.split_off(n_train);
    Ok(DatasetSplit {
        train_ids: ids,
        test_ids,
        seed,
        ratio,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub real: usize,
    pub fake: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.real + self.fake
    }
}

/// Per-language real/fake counts plus totals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub per_language: BTreeMap<Language, LabelCounts>,
    pub totals: LabelCounts,
}

pub fn compute_stats(manifest: &DatasetManifest) -> DatasetStats {
    let mut per_language: BTreeMap<Language, LabelCounts> = BTreeMap::new();
    let mut totals = LabelCounts::default();
    for rec in &manifest.records {
        let entry = per_language.entry(rec.language).or_default();
        match rec.label {
            Label::Real => {
                entry.real += 1;
                totals.real += 1;
            }
            Label::Fake => {
                entry.fake += 1;
                totals.fake += 1;
            }
        }
    }
    DatasetStats {
        per_language,
        totals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn article(id: &str, lang: Language, label: Label) -> NewsArticle {
        NewsArticle {
            id: id.to_string(),
            language: lang,
            text: format!("text of {id}"),
            text_en: None,
            image_ref: None,
            label,
            source_url: None,
            published_at: None,
            tags: vec![],
            text_en_source: None,
        }
    }

    fn manifest_of(records: Vec<NewsArticle>) -> DatasetManifest {
        DatasetManifest {
            records,
            root_dir: PathBuf::from("."),
            schema_version: MANIFEST_SCHEMA_VERSION,
        }
    }

    fn write_manifest(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    #[test]
    fn load_manifest_parses_in_order() {
        let f = write_manifest(&[
            r#"{"id":"a","language":"hi","text":"one","label":0}"#,
            r#"{"id":"b","language":"bn","text":"two","label":1,"unknown_field":42}"#,
            r#"{"id":"c","language":"ta","text":"three","label":1}"#,
        ]);
        let m = load_manifest(f.path()).unwrap();
        let ids: Vec<&str> = m.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(m.schema_version, 1);
    }

    #[test]
    fn load_manifest_rejects_empty() {
        let f = write_manifest(&[]);
        assert!(matches!(load_manifest(f.path()), Err(Error::EmptyManifest)));
    }

    #[test]
    fn load_manifest_rejects_bad_label_with_line() {
        let f = write_manifest(&[
            r#"{"id":"a","language":"hi","text":"one","label":0}"#,
            r#"{"id":"b","language":"hi","text":"two","label":2}"#,
        ]);
        match load_manifest(f.path()) {
            Err(Error::Manifest { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("label"), "{msg}");
            }
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn load_manifest_rejects_duplicate_id() {
        let f = write_manifest(&[
            r#"{"id":"a","language":"hi","text":"one","label":0}"#,
            r#"{"id":"a","language":"hi","text":"two","label":1}"#,
        ]);
        match load_manifest(f.path()) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn clean_text_collapses_whitespace() {
        assert_eq!(clean_text("  नमस्ते   दुनिया  "), "नमस्ते दुनिया");
    }

    #[test]
    fn clean_text_strips_emoji_and_urls() {
        assert_eq!(clean_text("Breaking 😀 news https://t.co/abc"), "Breaking news");
        assert_eq!(clean_text("see www.example.com now"), "see now");
        assert_eq!(clean_text("HTTPS://UPPER.example x"), "x");
    }

    #[test]
    fn clean_text_empty_fixed_point() {
        assert_eq!(clean_text(""), "");
    }

    #[test]
    fn clean_text_strips_zero_width_and_controls() {
        assert_eq!(clean_text("a\u{200B}b\u{FEFF}c\u{0007}d"), "abcd");
        assert_eq!(clean_text("line1\nline2\tend"), "line1 line2 end");
    }

    #[test]
    fn translate_keeps_existing_text_en() {
        let mut a = article("a", Language::Hi, Label::Fake);
        a.text_en = Some("already here".into());
        let out = translate_article(&a, &IdentityTranslator).unwrap();
        assert_eq!(out.text_en.as_deref(), Some("already here"));
        assert!(out.text_en_source.is_none());
    }

    #[test]
    fn translate_identity_fills_cleaned_text() {
        let mut a = article("a", Language::Hi, Label::Fake);
        a.text = "  hello   world ".into();
        let out = translate_article(&a, &IdentityTranslator).unwrap();
        assert_eq!(out.text_en.as_deref(), Some("hello world"));
        assert_eq!(out.text_en_source.as_deref(), Some("identity"));
    }

    #[test]
    fn translate_table_lookup() {
        let tr = TableTranslator::new([("नमस्ते".to_string(), "hello".to_string())]);
        let mut a = article("a", Language::Hi, Label::Fake);
        a.text = "नमस्ते".into();
        let out = translate_article(&a, &tr).unwrap();
        assert_eq!(out.text_en.as_deref(), Some("hello"));
        assert_eq!(out.text_en_source.as_deref(), Some("table"));

        a.text = "missing".into();
        match translate_article(&a, &tr) {
            Err(Error::Translator { id, .. }) => assert_eq!(id, "a"),
            other => panic!("expected translator error, got {other:?}"),
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let records: Vec<NewsArticle> = (0..100)
            .map(|i| article(&format!("a{i}"), Language::Hi, Label::Real))
            .collect();
        let m = manifest_of(records);
        let s1 = split_dataset(&m, 0.8, 42).unwrap();
        let s2 = split_dataset(&m, 0.8, 42).unwrap();
        assert_eq!(s1.train_ids.len(), 80);
        assert_eq!(s1.test_ids.len(), 20);
        assert_eq!(s1.train_ids, s2.train_ids);
        assert_eq!(s1.test_ids, s2.test_ids);
    }

    #[test]
    fn split_rounds_half_up() {
        let records: Vec<NewsArticle> = (0..5)
            .map(|i| article(&format!("a{i}"), Language::Hi, Label::Real))
            .collect();
        let s = split_dataset(&manifest_of(records), 0.8, 7).unwrap();
        assert_eq!(s.train_ids.len(), 4);
        assert_eq!(s.test_ids.len(), 1);
    }

    #[test]
    fn split_rejects_tiny_manifest() {
        let m = manifest_of(vec![article("a", Language::Hi, Label::Real)]);
        assert!(split_dataset(&m, 0.8, 0).is_err());
    }

    #[test]
    fn stats_hand_count() {
        let mut records = Vec::new();
        for i in 0..4 {
            records.push(article(&format!("h{i}"), Language::Hi, Label::Real));
        }
        for i in 0..2 {
            records.push(article(&format!("hf{i}"), Language::Hi, Label::Fake));
        }
        for i in 0..2 {
            records.push(article(&format!("t{i}"), Language::Ta, Label::Real));
        }
        for i in 0..2 {
            records.push(article(&format!("tf{i}"), Language::Ta, Label::Fake));
        }
        let stats = compute_stats(&manifest_of(records));
        assert_eq!(stats.totals, LabelCounts { real: 6, fake: 4 });
        assert_eq!(stats.per_language[&Language::Hi], LabelCounts { real: 4, fake: 2 });
        assert_eq!(stats.per_language[&Language::Ta], LabelCounts { real: 2, fake: 2 });
        assert!(!stats.per_language.contains_key(&Language::Bn));
    }

    #[test]
    fn exclude_incomplete_drops_missing_and_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let img = crate::imageproc::ImageTensor::checkerboard(3);
        crate::imageproc::encode_png(&img, dir.path().join("ok.png")).unwrap();
        std::fs::write(dir.path().join("corrupt.png"), b"not an image").unwrap();

        let mut a = article("a", Language::Hi, Label::Real);
        a.image_ref = Some("ok.png".into());
        let mut b = article("b", Language::Hi, Label::Real);
        b.image_ref = Some("corrupt.png".into());
        let c = article("c", Language::Hi, Label::Real); // no image_ref
        let mut d = article("d", Language::Hi, Label::Real);
        d.image_ref = Some("missing.png".into());

        let m = DatasetManifest {
            records: vec![a, b, c, d],
            root_dir: dir.path().to_path_buf(),
            schema_version: 1,
        };
        let (kept, dropped) = exclude_incomplete(&m);
        let ids: Vec<&str> = kept.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a"]);
        assert_eq!(dropped, ["b", "c", "d"]);
    }

    proptest! {
        #[test]
        fn clean_text_idempotent(s in "\\PC{0,200}") {
            let once = clean_text(&s);
            prop_assert_eq!(clean_text(&once), once);
        }

        #[test]
        fn clean_text_contract(s in ".{0,200}") {
            let out = clean_text(&s);
            prop_assert!(!out.contains("  "));
            prop_assert_eq!(out.trim(), out.as_str());
            for token in out.split(' ') {
                prop_assert!(!is_url_token(token));
            }
            prop_assert!(out.chars().all(|c| !is_emoji(c) && !c.is_control()));
        }

        #[test]
        fn split_partition_laws(n in 2usize..300, seed in any::<u64>(), ratio_i in 0usize..3) {
            let ratio = [0.5, 0.8, 0.9][ratio_i];
            let records: Vec<NewsArticle> = (0..n)
                .map(|i| article(&format!("a{i}"), Language::Hi, Label::Real))
                .collect();
            let m = manifest_of(records);
            let s = split_dataset(&m, ratio, seed).unwrap();
            prop_assert_eq!(s.train_ids.len(), ((ratio * n as f64) + 0.5).floor() as usize);
            prop_assert_eq!(s.train_ids.len() + s.test_ids.len(), n);
            let all: HashSet<_> = s.train_ids.iter().chain(&s.test_ids).collect();
            prop_assert_eq!(all.len(), n);
        }

        #[test]
        fn stats_totals_match_record_count(labels in proptest::collection::vec(0u8..2, 1..100)) {
            let records: Vec<NewsArticle> = labels.iter().enumerate().map(|(i, &l)| {
                let lang = Language::ALL[i % Language::ALL.len()];
                article(&format!("a{i}"), lang, Label::from_int(l as i64).unwrap())
            }).collect();
            let stats = compute_stats(&manifest_of(records.clone()));
            prop_assert_eq!(stats.totals.total(), records.len());
            let lang_sum: usize = stats.per_language.values().map(|c| c.total()).sum();
            prop_assert_eq!(lang_sum, records.len());
        }
    }
}
