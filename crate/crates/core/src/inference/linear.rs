//! Linear scoring layer: `scores = Wᵀa + b` over three classes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::ClassLabel;

const C: usize = ClassLabel::COUNT;

/// Per-feature class weights plus bias. Row `i` of `w` holds the weights of
/// feature `i` for (non-carcinoma, DCIS, IDC).
///
/// `spatial_w`, when present, holds one row per spatial feature-map channel
/// and is what class activation maps use; otherwise `w` doubles for both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub class_names: Vec<String>,
    pub f: usize,
    pub w: Vec<[f64; C]>,
    pub b: [f64; C],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_w: Option<Vec<[f64; C]>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearScores {
    pub scores: [f64; C],
    pub argmax: ClassLabel,
}

impl LinearModel {
    pub fn zeros(f: usize) -> LinearModel {
        LinearModel {
            class_names: ClassLabel::ALL.iter().map(|c| c.as_str().to_string()).collect(),
            f,
            w: vec![[0.0; C]; f],
            b: [0.0; C],
            spatial_w: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.len() != C {
            return Err(Error::validation("class_names", format!("expected {C} names, got {}", self.class_names.len())));
        }
        if self.w.len() != self.f {
            return Err(Error::validation("w", format!("expected {} rows, got {}", self.f, self.w.len())));
        }
        let finite = |rows: &[[f64; C]]| rows.iter().flatten().all(|v| v.is_finite());
        if !finite(&self.w) || !self.b.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("w", "weights must be finite"));
        }
        if let Some(sw) = &self.spatial_w {
            if !finite(sw) {
                return Err(Error::validation("spatial_w", "weights must be finite"));
            }
        }
        Ok(())
    }

    /// Weights used for class activation maps, one row per map channel.
    pub fn spatial_weights(&self) -> &[[f64; C]] {
        self.spatial_w.as_deref().unwrap_or(&self.w)
    }

    pub fn load(path: &Path) -> Result<LinearModel> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: LinearModel = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Index of the largest value; ties go to the more severe class.
pub fn argmax_severity(values: &[f64; C]) -> ClassLabel {
    let mut best = 0;
    for i in 1..C {
        if values[i] >= values[best] {
            best = i;
        }
    }
    ClassLabel::from_index(best).expect("index < 3")
}

pub fn linear_score<T: Copy + Into<f64>>(a: &[T], model: &LinearModel) -> Result<LinearScores> {
    if a.len() != model.f {
        return Err(Error::validation(
            "features",
            format!("vector has {} entries, model expects {}", a.len(), model.f),
        ));
    }
    let mut scores = model.b;
    for (row, &v) in model.w.iter().zip(a) {
        let v: f64 = v.into();
        if v != 0.0 {
            for c in 0..C {
                scores[c] += row[c] * v;
            }
        }
    }
    Ok(LinearScores {
        scores,
        argmax: argmax_severity(&scores),
    })
}

pub fn softmax(scores: &[f64; C]) -> [f64; C] {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = scores.map(|s| (s - m).exp());
    let z: f64 = e.iter().sum();
    e.map(|v| v / z)
}
