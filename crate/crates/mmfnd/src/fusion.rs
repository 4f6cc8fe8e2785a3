//! Four-pathway feature fusion and the classification head.
//!
//! Each pathway vector passes its own fully connected projection with
//! ReLU (plus dropout in training); the refined representations are
//! concatenated in the fixed order (text, image, multimodal, caption),
//! passed through one hidden layer, and reduced to a single logit.
//! Disabled pathways contribute exact zero vectors end to end, which
//! realizes the ablation rows.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

pub const BCE_EPSILON: f64 = 1e-7;

/// Which of the four pathways are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathwayMask {
    pub use_caption: bool,
    pub use_text: bool,
    pub use_image: bool,
    pub use_multimodal: bool,
}

impl Default for PathwayMask {
    fn default() -> Self {
        PathwayMask::all()
    }
}

impl PathwayMask {
    pub fn all() -> Self {
        PathwayMask {
            use_caption: true,
            use_text: true,
            use_image: true,
            use_multimodal: true,
        }
    }

    pub fn text_only() -> Self {
        PathwayMask {
            use_caption: false,
            use_text: true,
            use_image: false,
            use_multimodal: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.use_caption || self.use_text || self.use_image || self.use_multimodal) {
            return Err(Error::Config("pathway mask disables every pathway".into()));
        }
        Ok(())
    }

    /// Flags in the fixed pathway order (text, image, multimodal, caption).
    pub fn flags(&self) -> [bool; 4] {
        [self.use_text, self.use_image, self.use_multimodal, self.use_caption]
    }
}

pub const PATHWAY_NAMES: [&str; 4] = ["text", "image", "multimodal", "caption"];

/// Nominal per-pathway input dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathwayDims {
    pub text: usize,
    pub image: usize,
    pub multimodal: usize,
    pub caption: usize,
}

impl PathwayDims {
    pub fn as_array(&self) -> [usize; 4] {
        [self.text, self.image, self.multimodal, self.caption]
    }
}

/// The four pathway vectors for one article. Masked pathways hold
/// all-zero vectors of their nominal dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub f_text: Vec<f32>,
    pub f_img: Vec<f32>,
    pub f_multimodal: Vec<f32>,
    pub f_caption: Vec<f32>,
    pub mask: PathwayMask,
}

impl FeatureBundle {
    pub fn dims(&self) -> PathwayDims {
        PathwayDims {
            text: self.f_text.len(),
            image: self.f_img.len(),
            multimodal: self.f_multimodal.len(),
            caption: self.f_caption.len(),
        }
    }

    fn pathway(&self, idx: usize) -> &[f32] {
        match idx {
            0 => &self.f_text,
            1 => &self.f_img,
            2 => &self.f_multimodal,
            3 => &self.f_caption,
            _ => unreachable!(),
        }
    }

    fn pathway_mut(&mut self, idx: usize) -> &mut Vec<f32> {
        match idx {
            0 => &mut self.f_text,
            1 => &mut self.f_img,
            2 => &mut self.f_multimodal,
            3 => &mut self.f_caption,
            _ => unreachable!(),
        }
    }

    /// Re-mask a bundle: disabled pathways become zero vectors of the
    /// same nominal dimension.
    pub fn masked(&self, mask: PathwayMask) -> FeatureBundle {
        let mut out = self.clone();
        out.mask = mask;
        for (idx, enabled) in mask.flags().iter().enumerate() {
            if !enabled {
                let v = out.pathway_mut(idx);
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        out
    }
}

/// Dense affine map, row-major weights (`out_dim` x `in_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut l = Linear::zeros(in_dim, out_dim);
        for w in l.w.iter_mut() {
            *w = rng.gen_range(-bound..bound);
        }
        for b in l.b.iter_mut() {
            *b = rng.gen_range(-bound..bound);
        }
        l
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.w.chunks_exact(self.in_dim).zip(&self.b))
        {
            *o = b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

/// Projection and head weights realizing the aggregation and
/// classification stages.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// Per-pathway projections in order (text, image, multimodal, caption).
    pub proj: [Linear; 4],
    pub hidden: Linear,
    pub out: Linear,
    pub dropout: f64,
    pub p: usize,
    pub h: usize,
    pub threshold: f64,
    pub dims: PathwayDims,
}

impl ClassifierParams {
    pub fn init(
        dims: PathwayDims,
        p: usize,
        h: usize,
        dropout: f64,
        threshold: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} not in [0, 1)")));
        }
        if p == 0 || h == 0 {
            return Err(Error::Config("projection and hidden dims must be positive".into()));
        }
        let d = dims.as_array();
        let proj = [
            Linear::init(d[0], p, rng),
            Linear::init(d[1], p, rng),
            Linear::init(d[2], p, rng),
            Linear::init(d[3], p, rng),
        ];
        let hidden = Linear::init(4 * p, h, rng);
        let out = Linear::init(h, 1, rng);
        Ok(ClassifierParams {
            proj,
            hidden,
            out,
            dropout,
            p,
            h,
            threshold,
            dims,
        })
    }

    /// Parameter blocks in serialization order.
    pub fn block_names() -> [&'static str; 12] {
        [
            "proj_text.w",
            "proj_text.b",
            "proj_image.w",
            "proj_image.b",
            "proj_multimodal.w",
            "proj_multimodal.b",
            "proj_caption.w",
            "proj_caption.b",
            "hidden.w",
            "hidden.b",
            "out.w",
            "out.b",
        ]
    }

    pub fn blocks(&self) -> Vec<&Vec<f64>> {
        let mut v = Vec::with_capacity(12);
        for l in &self.proj {
            v.push(&l.w);
            v.push(&l.b);
        }
        v.push(&self.hidden.w);
        v.push(&self.hidden.b);
        v.push(&self.out.w);
        v.push(&self.out.b);
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = Vec::with_capacity(12);
        for l in &mut self.proj {
            v.push(&mut l.w);
            v.push(&mut l.b);
        }
        v.push(&mut self.hidden.w);
        v.push(&mut self.hidden.b);
        v.push(&mut self.out.w);
        v.push(&mut self.out.b);
        v
    }

    pub fn check_bundle(&self, bundle: &FeatureBundle) -> Result<()> {
        let expected = self.dims.as_array();
        for (idx, name) in PATHWAY_NAMES.iter().enumerate() {
            let found = bundle.pathway(idx).len();
            if found != expected[idx] {
                return Err(Error::Shape {
                    what: format!("pathway '{name}'"),
                    expected: expected[idx].to_string(),
                    found: found.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Dropout source for training-mode forwards; inference is
/// deterministic and dropout-free.
pub enum ForwardMode<'a> {
    Inference,
    Train(&'a mut ChaCha8Rng),
}

impl ForwardMode<'_> {
    fn dropout_scales(&mut self, len: usize, rate: f64) -> Option<Vec<f64>> {
        match self {
            ForwardMode::Inference => None,
            ForwardMode::Train(rng) => {
                if rate == 0.0 {
                    return None;
                }
                let keep = 1.0 - rate;
                Some(
                    (0..len)
                        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
                        .collect(),
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p_real: f64,
    pub label: Label,
    pub logits: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn relu_inplace(xs: &mut [f64]) {
    for x in xs.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Intermediate activations kept for backprop.
pub struct ForwardTrace {
    pathway_inputs: [Vec<f64>; 4],
    proj_pre: [Vec<f64>; 4],
    proj_scale: [Option<Vec<f64>>; 4],
    agg: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden_act: Vec<f64>,
    hidden_scale: Option<Vec<f64>>,
    pub logit: f64,
}

fn project_pathways(
    bundle: &FeatureBundle,
    params: &ClassifierParams,
    mode: &mut ForwardMode,
) -> Result<ForwardTrace> {
    params.check_bundle(bundle)?;
    let p = params.p;
    let mut pathway_inputs: [Vec<f64>; 4] = Default::default();
    let mut proj_pre: [Vec<f64>; 4] = Default::default();
    let mut proj_scale: [Option<Vec<f64>>; 4] = Default::default();
    let mut agg = Vec::with_capacity(4 * p);
    let flags = bundle.mask.flags();
    for idx in 0..4 {
        let x: Vec<f64> = if flags[idx] {
            bundle.pathway(idx).iter().map(|&v| v as f64).collect()
        } else {
            vec![0.0; params.dims.as_array()[idx]]
        };
        let mut pre = vec![0.0; p];
        params.proj[idx].forward(&x, &mut pre);
        let mut act = pre.clone();
        relu_inplace(&mut act);
        let scale = mode.dropout_scales(p, params.dropout);
        if let Some(s) = &scale {
            for (a, s) in act.iter_mut().zip(s) {
                *a *= s;
            }
        }
        agg.extend_from_slice(&act);
        pathway_inputs[idx] = x;
        proj_pre[idx] = pre;
        proj_scale[idx] = scale;
    }
    Ok(ForwardTrace {
        pathway_inputs,
        proj_pre,
        proj_scale,
        agg,
        hidden_pre: Vec::new(),
        hidden_act: Vec::new(),
        hidden_scale: None,
        logit: 0.0,
    })
}

/// Project each pathway and concatenate in the fixed order
/// (text, image, multimodal, caption). Output length is 4*P.
pub fn project_and_aggregate(
    bundle: &FeatureBundle,
    params: &ClassifierParams,
    mut mode: ForwardMode,
) -> Result<Vec<f64>> {
    Ok(project_pathways(bundle, params, &mut mode)?.agg)
}

/// Hidden layer + output logit + sigmoid. Ties at the threshold
/// classify as real.
pub fn classify_forward(
    agg: &[f64],
    params: &ClassifierParams,
    mut mode: ForwardMode,
) -> Result<Prediction> {
    if agg.len() != 4 * params.p {
        return Err(Error::Shape {
            what: "aggregated feature vector".into(),
            expected: (4 * params.p).to_string(),
            found: agg.len().to_string(),
        });
    }
    let (pred, _, _, _) = head_forward(agg, params, &mut mode)?;
    Ok(pred)
}

#[allow(clippy::type_complexity)]
fn head_forward(
    agg: &[f64],
    params: &ClassifierParams,
    mode: &mut ForwardMode,
) -> Result<(Prediction, Vec<f64>, Vec<f64>, Option<Vec<f64>>)> {
    let mut hidden_pre = vec![0.0; params.h];
    params.hidden.forward(agg, &mut hidden_pre);
    let mut hidden_act = hidden_pre.clone();
    relu_inplace(&mut hidden_act);
    let hidden_scale = mode.dropout_scales(params.h, params.dropout);
    if let Some(s) = &hidden_scale {
        for (a, s) in hidden_act.iter_mut().zip(s) {
            *a *= s;
        }
    }
    let mut logit = [0.0];
    params.out.forward(&hidden_act, &mut logit);
    let logit = logit[0];
    if !logit.is_finite() {
        return Err(Error::Numerical("numerical overflow".into()));
    }
    let p_real = sigmoid(logit);
    let label = if p_real >= params.threshold {
        Label::Real
    } else {
        Label::Fake
    };
    Ok((
        Prediction {
            p_real,
            label,
            logits: logit,
        },
        hidden_pre,
        hidden_act,
        hidden_scale,
    ))
}

/// Full forward pass for one bundle, keeping the trace for backprop.
pub fn forward_trace(
    bundle: &FeatureBundle,
    params: &ClassifierParams,
    mut mode: ForwardMode,
) -> Result<(Prediction, ForwardTrace)> {
    let mut trace = project_pathways(bundle, params, &mut mode)?;
    let (pred, hidden_pre, hidden_act, hidden_scale) = head_forward(&trace.agg, params, &mut mode)?;
    trace.hidden_pre = hidden_pre;
    trace.hidden_act = hidden_act;
    trace.hidden_scale = hidden_scale;
    trace.logit = pred.logits;
    Ok((pred, trace))
}

/// Inference-mode prediction.
pub fn predict(bundle: &FeatureBundle, params: &ClassifierParams) -> Result<Prediction> {
    Ok(forward_trace(bundle, params, ForwardMode::Inference)?.0)
}

/// Model view that re-applies a pathway mask to every bundle before
/// the forward pass.
pub struct MaskedModel<'a> {
    params: &'a ClassifierParams,
    mask: PathwayMask,
}

/// All-false masks are rejected.
pub fn apply_pathway_mask(params: &ClassifierParams, mask: PathwayMask) -> Result<MaskedModel<'_>> {
    mask.validate()?;
    Ok(MaskedModel { params, mask })
}

impl MaskedModel<'_> {
    pub fn mask(&self) -> PathwayMask {
        self.mask
    }

    pub fn predict(&self, bundle: &FeatureBundle) -> Result<Prediction> {
        predict(&bundle.masked(self.mask), self.params)
    }
}

/// Binary cross-entropy with probability clamped to
/// [epsilon, 1 - epsilon].
pub fn bce_loss(y: u8, p_real: f64) -> Result<f64> {
    if y > 1 {
        return Err(Error::Label(y as i64));
    }
    let p = p_real.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    let y = y as f64;
    Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
}

/// Gradient accumulator shaped like [`ClassifierParams`].
pub struct Gradients {
    pub proj: [Linear; 4],
    pub hidden: Linear,
    pub out: Linear,
}

impl Gradients {
    pub fn zeros_like(params: &ClassifierParams) -> Self {
        let d = params.dims.as_array();
        Gradients {
            proj: [
                Linear::zeros(d[0], params.p),
                Linear::zeros(d[1], params.p),
                Linear::zeros(d[2], params.p),
                Linear::zeros(d[3], params.p),
            ],
            hidden: Linear::zeros(4 * params.p, params.h),
            out: Linear::zeros(params.h, 1),
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = Vec::with_capacity(12);
        for l in &mut self.proj {
            v.push(&mut l.w);
            v.push(&mut l.b);
        }
        v.push(&mut self.hidden.w);
        v.push(&mut self.hidden.b);
        v.push(&mut self.out.w);
        v.push(&mut self.out.b);
        v
    }
}

/// Mean BCE over the batch plus analytic gradients w.r.t. every
/// parameter block.
pub fn batch_loss_and_gradients(
    bundles: &[&FeatureBundle],
    labels: &[Label],
    params: &ClassifierParams,
    mut mode: ForwardMode,
) -> Result<(f64, Gradients, Vec<Prediction>)> {
    assert_eq!(bundles.len(), labels.len());
    let batch = bundles.len() as f64;
    let mut grads = Gradients::zeros_like(params);
    let mut total_loss = 0.0;
    let mut predictions = Vec::with_capacity(bundles.len());

    for (bundle, label) in bundles.iter().zip(labels) {
        let (pred, trace) = forward_trace(bundle, params, reborrow(&mut mode))?;
        total_loss += bce_loss(label.as_u8(), pred.p_real)?;

        // d(mean BCE)/d(logit); the clamp is inactive wherever the
        // gradient matters
        let dlogit = (pred.p_real - label.as_u8() as f64) / batch;

        // output layer
        for (gw, h) in grads.out.w.iter_mut().zip(&trace.hidden_act) {
            *gw += dlogit * h;
        }
        grads.out.b[0] += dlogit;

        // hidden layer
        let mut dhidden_pre = vec![0.0; params.h];
        for j in 0..params.h {
            let mut d = dlogit * params.out.w[j];
            if let Some(s) = &trace.hidden_scale {
                d *= s[j];
            }
            if trace.hidden_pre[j] <= 0.0 {
                d = 0.0;
            }
            dhidden_pre[j] = d;
        }
        let agg_len = 4 * params.p;
        let mut dagg = vec![0.0; agg_len];
        for j in 0..params.h {
            let d = dhidden_pre[j];
            if d == 0.0 {
                continue;
            }
            let row = &params.hidden.w[j * agg_len..(j + 1) * agg_len];
            let grow = &mut grads.hidden.w[j * agg_len..(j + 1) * agg_len];
            for k in 0..agg_len {
                grow[k] += d * trace.agg[k];
                dagg[k] += d * row[k];
            }
            grads.hidden.b[j] += d;
        }

        // per-pathway projections
        for idx in 0..4 {
            let x = &trace.pathway_inputs[idx];
            let pre = &trace.proj_pre[idx];
            let seg = &dagg[idx * params.p..(idx + 1) * params.p];
            for j in 0..params.p {
                let mut d = seg[j];
                if let Some(s) = &trace.proj_scale[idx] {
                    d *= s[j];
                }
                if pre[j] <= 0.0 {
                    d = 0.0;
                }
                if d == 0.0 {
                    continue;
                }
                let in_dim = params.proj[idx].in_dim;
                let grow = &mut grads.proj[idx].w[j * in_dim..(j + 1) * in_dim];
                for (g, xv) in grow.iter_mut().zip(x) {
                    *g += d * xv;
                }
                grads.proj[idx].b[j] += d;
            }
        }
        predictions.push(pred);
    }
    Ok((total_loss / batch, grads, predictions))
}

fn reborrow<'a>(mode: &'a mut ForwardMode<'_>) -> ForwardMode<'a> {
    match mode {
        ForwardMode::Inference => ForwardMode::Inference,
        ForwardMode::Train(rng) => ForwardMode::Train(rng),
    }
}
