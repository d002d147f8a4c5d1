//! Patch inference contract and its backends.
//!
//! A backend answers two questions about a patch: how much lesion tissue it
//! contains (detection) and which class it shows (classification). Three
//! backends are provided:
//!
//! * [`SignatureBackend`] decides from the synthetic colour signatures.
//! * [`LinearBackend`] scores the hand-crafted descriptor with a [`LinearModel`].
//! * [`PlaybackBackend`] replays precomputed feature rows through a model.
//!
//! All detection goes through the pixel rule: the fraction of pixels that are
//! not background.

mod features;
mod linear;

use std::collections::HashMap;

pub use features::{
    f32_from_le_bytes, f32_to_le_bytes, handcrafted_features, load_features, save_features, FeatureTable,
    PatchRef, FEATURES_F32, FEATURES_JSON, HANDCRAFTED_DIM,
};
pub use linear::{argmax_severity, linear_score, softmax, LinearModel, LinearScores};

use crate::error::{Error, Result};
use crate::labels::ClassLabel;
use crate::pyramid::Patch;

/// A pixel is background when every channel is at least this bright.
pub const BACKGROUND_MIN: u8 = 230;
/// Minimum lead of the dominant channel over the other two.
pub const SIGNATURE_MARGIN: i16 = 40;
/// Side of the pooled signature grid.
pub const POOLED_GRID: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    pub probability: f64,
}

/// `K x H x W` non-negative activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl FeatureMaps {
    pub fn new(k: usize, h: usize, w: usize, data: Vec<f32>) -> Result<FeatureMaps> {
        if data.len() != k * h * w {
            return Err(Error::validation("feature_maps", format!("{} values for {k}x{h}x{w}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("feature_maps", "values must be finite"));
        }
        Ok(FeatureMaps { k, h, w, data })
    }

    #[inline]
    pub fn get(&self, k: usize, y: usize, x: usize) -> f32 {
        self.data[(k * self.h + y) * self.w + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationResult {
    pub probs: [f64; 3],
    pub features: Option<Vec<f64>>,
    pub feature_maps: Option<FeatureMaps>,
}

impl ClassificationResult {
    /// Most probable class, ties toward the more severe class.
    pub fn argmax(&self) -> ClassLabel {
        argmax_severity(&self.probs)
    }
}

pub trait PatchBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn detect(&self, patch: &Patch) -> Result<DetectionResult>;
    fn classify(&self, patch: &Patch) -> Result<ClassificationResult>;
}

fn inference_error(patch: &Patch, msg: impl Into<String>) -> Error {
    Error::Inference {
        slide_id: patch.slide_id.clone(),
        level: patch.level,
        x: patch.x,
        y: patch.y,
        msg: msg.into(),
    }
}

/// Attaches patch coordinates to backend failures.
fn tag_error(patch: &Patch, e: Error) -> Error {
    match e {
        e @ Error::Inference { .. } => e,
        other => inference_error(patch, other.to_string()),
    }
}

/// Runs detection and checks the result contract.
pub fn detect_prob(backend: &dyn PatchBackend, patch: &Patch) -> Result<DetectionResult> {
    if !patch.is_well_formed() {
        return Err(inference_error(patch, "malformed patch buffer"));
    }
    let r = backend.detect(patch).map_err(|e| tag_error(patch, e))?;
    if !(r.probability.is_finite() && (0.0..=1.0).contains(&r.probability)) {
        return Err(inference_error(patch, format!("detection probability {} outside [0, 1]", r.probability)));
    }
    Ok(r)
}

/// Runs classification and checks the result contract.
pub fn classify_patch(backend: &dyn PatchBackend, patch: &Patch) -> Result<ClassificationResult> {
    if !patch.is_well_formed() {
        return Err(inference_error(patch, "malformed patch buffer"));
    }
    let r = backend.classify(patch).map_err(|e| tag_error(patch, e))?;
    let sum: f64 = r.probs.iter().sum();
    if r.probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(inference_error(patch, format!("class probabilities {:?} are not a distribution", r.probs)));
    }
    Ok(r)
}

#[inline]
pub fn is_background(p: [u8; 3]) -> bool {
    p.iter().all(|&c| c >= BACKGROUND_MIN)
}

/// Class whose signature channel leads both others by the margin.
#[inline]
pub fn signature_of(p: [u8; 3]) -> Option<ClassLabel> {
    if is_background(p) {
        return None;
    }
    let v = p.map(i16::from);
    for class in ClassLabel::ALL {
        let d = crate::synth::signature_channel(class);
        if (0..3).all(|c| c == d || v[d] >= v[c] + SIGNATURE_MARGIN) {
            return Some(class);
        }
    }
    None
}

/// Fraction of non-background pixels.
pub fn lesion_fraction(patch: &Patch) -> f64 {
    let n = patch.size * patch.size;
    let lesion = patch.pixel_iter().filter(|&p| !is_background(p)).count();
    lesion as f64 / n as f64
}

/// Normalized signature counts; uniform when no pixel carries a signature.
pub fn signature_probs(patch: &Patch) -> [f64; 3] {
    let mut counts = [0u64; 3];
    for p in patch.pixel_iter() {
        if let Some(c) = signature_of(p) {
            counts[c.index()] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return [1.0 / 3.0; 3];
    }
    counts.map(|c| c as f64 / total as f64)
}

/// Per-class signature indicator maps average-pooled onto an 8x8 grid.
pub fn signature_maps(patch: &Patch) -> FeatureMaps {
    let g = POOLED_GRID;
    let s = patch.size;
    let mut sums = vec![0f64; 3 * g * g];
    let mut cells = vec![0f64; g * g];
    for y in 0..s {
        let gy = y * g / s;
        for x in 0..s {
            let gx = x * g / s;
            cells[gy * g + gx] += 1.0;
            if let Some(c) = signature_of(patch.pixel(x, y)) {
                sums[(c.index() * g + gy) * g + gx] += 1.0;
            }
        }
    }
    let data = sums
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let n = cells[i % (g * g)];
            if n > 0.0 {
                (v / n) as f32
            } else {
                0.0
            }
        })
        .collect();
    FeatureMaps {
        k: 3,
        h: g,
        w: g,
        data,
    }
}

/// Rule-based backend for synthetic slides.
#[derive(Debug, Clone, Copy, Default)]
pub struct SignatureBackend {
    pub with_maps: bool,
}

impl PatchBackend for SignatureBackend {
    fn name(&self) -> &'static str {
        "synthetic"
    }

    fn detect(&self, patch: &Patch) -> Result<DetectionResult> {
        Ok(DetectionResult {
            probability: lesion_fraction(patch),
        })
    }

    fn classify(&self, patch: &Patch) -> Result<ClassificationResult> {
        Ok(ClassificationResult {
            probs: signature_probs(patch),
            features: None,
            feature_maps: self.with_maps.then(|| signature_maps(patch)),
        })
    }
}

/// Softmax over a linear model applied to [`handcrafted_features`].
#[derive(Debug, Clone)]
pub struct LinearBackend {
    model: LinearModel,
}

impl LinearBackend {
    pub fn new(model: LinearModel) -> Result<LinearBackend> {
        model.validate()?;
        if model.f != HANDCRAFTED_DIM {
            return Err(Error::validation(
                "f",
                format!("linear backend needs a {HANDCRAFTED_DIM}-feature model, got {}", model.f),
            ));
        }
        Ok(LinearBackend { model })
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }
}

impl PatchBackend for LinearBackend {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn detect(&self, patch: &Patch) -> Result<DetectionResult> {
        Ok(DetectionResult {
            probability: lesion_fraction(patch),
        })
    }

    fn classify(&self, patch: &Patch) -> Result<ClassificationResult> {
        let a = handcrafted_features(patch);
        let s = linear_score(&a, &self.model)?;
        Ok(ClassificationResult {
            probs: softmax(&s.scores),
            features: Some(a),
            feature_maps: Some(signature_maps(patch)),
        })
    }
}

/// Looks classification features up by patch reference instead of computing them.
#[derive(Debug, Clone)]
pub struct PlaybackBackend {
    table: FeatureTable,
    model: LinearModel,
    index: HashMap<PatchRef, usize>,
}

impl PlaybackBackend {
    pub fn new(table: FeatureTable, model: LinearModel) -> Result<PlaybackBackend> {
        model.validate()?;
        if table.f() != model.f {
            return Err(Error::validation(
                "f",
                format!("feature table has {} columns, model expects {}", table.f(), model.f),
            ));
        }
        if table.patch_refs.is_none() {
            return Err(Error::validation("patch_refs", "playback requires patch references"));
        }
        let index = table.index_by_ref();
        Ok(PlaybackBackend { table, model, index })
    }
}

impl PatchBackend for PlaybackBackend {
    fn name(&self) -> &'static str {
        "features"
    }

    fn detect(&self, patch: &Patch) -> Result<DetectionResult> {
        Ok(DetectionResult {
            probability: lesion_fraction(patch),
        })
    }

    fn classify(&self, patch: &Patch) -> Result<ClassificationResult> {
        let row = *self
            .index
            .get(&PatchRef::of(patch))
            .ok_or_else(|| inference_error(patch, "no precomputed features for this patch"))?;
        let a: Vec<f64> = self.table.row(row).iter().map(|&v| v as f64).collect();
        let s = linear_score(&a, &self.model)?;
        Ok(ClassificationResult {
            probs: softmax(&s.scores),
            features: Some(a),
            feature_maps: None,
        })
    }
}
