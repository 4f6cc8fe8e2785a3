//! Confusion counting, per-class metrics, language breakdowns, and the
//! ablation suites.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, Language};
use crate::error::{Error, Result};
use crate::fusion::{FeatureBundle, PathwayMask};
use crate::train::{evaluate_on_split, train, TrainConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const REPORT_CSV_HEADER: &str = "method,accuracy,fake_p,fake_r,fake_f1,real_p,real_r,real_f1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub positive: Label,
}

impl ConfusionCounts {
    pub fn from_pairs(predicted: &[Label], actual: &[Label], positive: Label) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::Eval(format!(
                "{} predictions vs {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let mut c = ConfusionCounts { tp: 0, fp: 0, tn: 0, fn_: 0, positive };
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p == positive, a == positive) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        // total() > 0 is guaranteed by compute_metrics
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    fn from_counts(c: &ConfusionCounts) -> Self {
        ClassMetrics {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        }
    }

    /// Recompute F1 from precision and recall, the zero convention
    /// included.
    pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }
}

/// Accuracy plus per-class precision/recall/F1 with fake and real each
/// taken as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub fake: ClassMetrics,
    pub real: ClassMetrics,
    pub support: usize,
}

pub fn compute_metrics(predicted: &[Label], actual: &[Label]) -> Result<MetricsReport> {
    if actual.is_empty() {
        return Err(Error::Eval("no instances to evaluate".into()));
    }
    let fake = ConfusionCounts::from_pairs(predicted, actual, Label::Fake)?;
    let real = ConfusionCounts::from_pairs(predicted, actual, Label::Real)?;
    Ok(MetricsReport {
        accuracy: fake.accuracy(),
        fake: ClassMetrics::from_counts(&fake),
        real: ClassMetrics::from_counts(&real),
        support: actual.len(),
    })
}

/// Metrics restricted to each language that actually occurs; languages
/// with no records are omitted.
pub fn per_language_breakdown(
    languages: &[Language],
    predicted: &[Label],
    actual: &[Label],
) -> Result<BTreeMap<Language, MetricsReport>> {
    if languages.len() != predicted.len() || languages.len() != actual.len() {
        return Err(Error::Eval(format!(
            "cannot join {} languages, {} predictions, {} labels",
            languages.len(),
            predicted.len(),
            actual.len()
        )));
    }
    let mut grouped: BTreeMap<Language, (Vec<Label>, Vec<Label>)> = BTreeMap::new();
    for ((&lang, &p), &a) in languages.iter().zip(predicted).zip(actual) {
        let entry = grouped.entry(lang).or_default();
        entry.0.push(p);
        entry.1.push(a);
    }
    grouped
        .into_iter()
        .map(|(lang, (p, a))| Ok((lang, compute_metrics(&p, &a)?)))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub mask: PathwayMask,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSpec {
    pub name: String,
    pub rows: Vec<AblationRow>,
}

fn row(label: &str, mask: PathwayMask) -> AblationRow {
    AblationRow { label: label.into(), mask }
}

impl AblationSpec {
    /// Drop whole modalities. "w/o Image" also disables the pathways
    /// that consume the image (multimodal, caption); "w/o Text"
    /// disables the text-consuming multimodal pathway.
    pub fn modality() -> Self {
        AblationSpec {
            name: "modality".into(),
            rows: vec![
                row("w/o Image", PathwayMask {
                    use_caption: false,
                    use_text: true,
                    use_image: false,
                    use_multimodal: false,
                }),
                row("w/o Text", PathwayMask {
                    use_caption: true,
                    use_text: false,
                    use_image: true,
                    use_multimodal: false,
                }),
                row("Text+Image", PathwayMask::all()),
            ],
        }
    }

    pub fn multimodal() -> Self {
        AblationSpec {
            name: "multimodal".into(),
            rows: vec![
                row("w/o multimodal", PathwayMask {
                    use_multimodal: false,
                    ..PathwayMask::all()
                }),
                row("with multimodal", PathwayMask::all()),
            ],
        }
    }

    pub fn caption() -> Self {
        AblationSpec {
            name: "caption".into(),
            rows: vec![
                row("w/o caption", PathwayMask {
                    use_caption: false,
                    ..PathwayMask::all()
                }),
                row("with caption", PathwayMask::all()),
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledReport {
    pub label: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub created_at: String,
    pub suite: String,
    pub config: TrainConfig,
    pub rows: Vec<LabeledReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_language: BTreeMap<Language, MetricsReport>,
}

impl EvaluationReport {
    pub fn new(suite: impl Into<String>, config: TrainConfig) -> Self {
        EvaluationReport {
            schema_version: REPORT_SCHEMA_VERSION,
            created_at: chrono::Utc::now().to_rfc3339(),
            suite: suite.into(),
            config,
            rows: Vec::new(),
            per_language: BTreeMap::new(),
        }
    }

    /// CSV at three decimals, one row per method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let m = &r.report;
            out.push_str(&format!(
                "{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
                r.label,
                m.accuracy,
                m.fake.precision,
                m.fake.recall,
                m.fake.f1,
                m.real.precision,
                m.real.recall,
                m.real.f1
            ));
        }
        out
    }
}

/// Spot-check that a trained row really ignores its disabled pathways:
/// perturbing a masked pathway of a test bundle must not change the
/// prediction.
fn verify_mask_invariance(
    config: &TrainConfig,
    checkpoint: &crate::train::Checkpoint,
    bundles: &[FeatureBundle],
) -> Result<()> {
    let flags = config.mask.flags();
    let probe = &bundles[0];
    let base = evaluate_on_split(checkpoint, std::slice::from_ref(probe))?[0];
    for (idx, enabled) in flags.iter().enumerate() {
        if *enabled {
            continue;
        }
        let mut perturbed = probe.clone();
        let v = match idx {
            0 => &mut perturbed.f_text,
            1 => &mut perturbed.f_img,
            2 => &mut perturbed.f_multimodal,
            _ => &mut perturbed.f_caption,
        };
        v.iter_mut().enumerate().for_each(|(i, x)| *x += 1.0 + i as f32);
        let got = evaluate_on_split(checkpoint, std::slice::from_ref(&perturbed))?[0];
        if got != base {
            return Err(Error::Eval(format!(
                "row not invariant to masked pathway {}",
                crate::fusion::PATHWAY_NAMES[idx]
            )));
        }
    }
    Ok(())
}

/// Retrain from the same seed once per row mask and evaluate on the
/// held-out bundles.
pub fn run_ablation_suite(
    train_bundles: &[FeatureBundle],
    train_labels: &[Label],
    test_bundles: &[FeatureBundle],
    test_labels: &[Label],
    config: &TrainConfig,
    spec: &AblationSpec,
) -> Result<EvaluationReport> {
    if test_bundles.is_empty() {
        return Err(Error::Eval("no instances to evaluate".into()));
    }
    let mut report = EvaluationReport::new(spec.name.clone(), config.clone());
    for ablation_row in &spec.rows {
        let mut row_config = config.clone();
        row_config.mask = ablation_row.mask;
        let (checkpoint, _) = train(train_bundles, train_labels, &row_config)?;
        let predictions = evaluate_on_split(&checkpoint, test_bundles)?;
        let predicted: Vec<Label> = predictions.iter().map(|p| p.label).collect();
        verify_mask_invariance(&row_config, &checkpoint, test_bundles)?;
        report.rows.push(LabeledReport {
            label: ablation_row.label.clone(),
            report: compute_metrics(&predicted, test_labels)?,
        });
    }
    Ok(report)
}
