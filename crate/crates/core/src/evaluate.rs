//! Slide assessment and the patch / region / slide evaluation harness.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::LesionCall;
use crate::detect::Footprint;
use crate::error::{Error, Result};
use crate::labels::{BinaryLabel, ClassLabel};
use crate::synth::{LesionTruth, RunMask};

pub const ASSESSMENT_JSON: &str = "assessment.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const FOLDS_JSON: &str = "folds.json";

#[derive(Debug, Clone, PartialEq)]
pub struct SlideAssessment {
    pub slide_id: String,
    pub label3: ClassLabel,
    pub label2: BinaryLabel,
    pub region_calls: Vec<LesionCall>,
}

/// Slide label = most severe region prediction; no regions means non-carcinoma.
pub fn assess_slide(slide_id: &str, calls: Vec<LesionCall>) -> SlideAssessment {
    let label3 = calls
        .iter()
        .map(|c| c.predicted)
        .max()
        .unwrap_or(ClassLabel::NonCarcinoma);
    SlideAssessment {
        slide_id: slide_id.to_string(),
        label3,
        label2: label3.to_binary(),
        region_calls: calls,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub region_id: usize,
    pub predicted: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentJson {
    pub slide_id: String,
    pub label: ClassLabel,
    pub binary_label: BinaryLabel,
    pub regions: Vec<RegionSummary>,
}

impl SlideAssessment {
    pub fn to_json(&self) -> AssessmentJson {
        AssessmentJson {
            slide_id: self.slide_id.clone(),
            label: self.label3,
            binary_label: self.label2,
            regions: self
                .region_calls
                .iter()
                .map(|c| RegionSummary {
                    region_id: c.region_id,
                    predicted: c.predicted,
                })
                .collect(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let p = dir.join(ASSESSMENT_JSON);
        fs::write(&p, serde_json::to_string_pretty(&self.to_json()).expect("assessment serializes"))
            .map_err(|e| Error::io(&p, e))
    }
}

pub fn load_assessment(dir: &Path) -> Result<AssessmentJson> {
    let p = dir.join(ASSESSMENT_JSON);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
}

/// `correct / total`.
pub fn accuracy(correct: u64, total: u64) -> Result<f64> {
    check_counts(correct, total)?;
    Ok(correct as f64 / total as f64)
}

/// `correct / total` rounded half-up to three decimals, computed in integers.
pub fn reported_accuracy(correct: u64, total: u64) -> Result<f64> {
    check_counts(correct, total)?;
    let milli = (2000 * correct as u128 + total as u128) / (2 * total as u128);
    Ok(milli as f64 / 1000.0)
}

fn check_counts(correct: u64, total: u64) -> Result<()> {
    if total == 0 {
        return Err(Error::UndefinedMetric("accuracy over zero samples".into()));
    }
    if correct > total {
        return Err(Error::validation("correct", format!("{correct} exceeds total {total}")));
    }
    Ok(())
}

/// Cohen's kappa between two raters. Computed from integer counts as
/// `(n·agree − Σ a_k b_k) / (n² − Σ a_k b_k)`; when both raters use one and
/// the same constant label the result is defined as 1.
pub fn cohen_kappa<T: Ord + Clone>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation("raters", format!("lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::validation("raters", "need at least one rating"));
    }
    let n = a.len() as u128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as u128;
    let mut ma: BTreeMap<&T, u128> = BTreeMap::new();
    let mut mb: BTreeMap<&T, u128> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1;
        *mb.entry(y).or_default() += 1;
    }
    let chance: u128 = ma.iter().map(|(k, &ca)| ca * mb.get(k).copied().unwrap_or(0)).sum();
    let denom = n * n - chance;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok((n as f64 * agree as f64 - chance as f64) / denom as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("folds serialize")).map_err(|e| Error::io(path, e))
    }
}

/// Per class: sort ids, shuffle with the seeded RNG, deal round-robin. The
/// dealing position carries over between classes so fold totals stay
/// balanced too.
pub fn stratified_kfold(slide_labels: &BTreeMap<String, ClassLabel>, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::validation("k", "need at least two folds"));
    }
    if k > slide_labels.len() {
        return Err(Error::validation("k", format!("{k} folds for {} slides", slide_labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in ClassLabel::ALL {
        let mut ids: Vec<&String> = slide_labels.iter().filter(|(_, &c)| c == class).map(|(id, _)| id).collect();
        ids.shuffle(&mut rng);
        for id in ids {
            folds[next].push(id.clone());
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan { k, seed, folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalLevel {
    Patch,
    Region,
    Slide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Binary,
    ThreeClass,
}

impl Scheme {
    fn classes(self) -> Vec<&'static str> {
        match self {
            Scheme::Binary => BinaryLabel::ALL.iter().map(|c| c.as_str()).collect(),
            Scheme::ThreeClass => ClassLabel::ALL.iter().map(|c| c.as_str()).collect(),
        }
    }

    fn project(self, c: ClassLabel) -> usize {
        match self {
            Scheme::Binary => c.to_binary().index(),
            Scheme::ThreeClass => c.index(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCount {
    pub correct: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overall {
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: EvalLevel,
    pub scheme: Scheme,
    pub per_class: BTreeMap<String, ClassCount>,
    pub overall: Overall,
    /// Rows are ground truth, columns predictions, in severity order.
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("metrics serialize")).map_err(|e| Error::io(path, e))
    }
}

/// Scores `predictions` against `truth`; both must carry the same keys.
pub fn evaluate_run(
    predictions: &BTreeMap<String, ClassLabel>,
    truth: &BTreeMap<String, ClassLabel>,
    level: EvalLevel,
    scheme: Scheme,
) -> Result<MetricsReport> {
    let pk: BTreeSet<&String> = predictions.keys().collect();
    let tk: BTreeSet<&String> = truth.keys().collect();
    if pk != tk {
        let missing_pred: Vec<&&String> = tk.difference(&pk).take(10).collect();
        let missing_truth: Vec<&&String> = pk.difference(&tk).take(10).collect();
        return Err(Error::validation(
            "keys",
            format!("missing predictions for {missing_pred:?}; missing truth for {missing_truth:?}"),
        ));
    }
    let names = scheme.classes();
    let c = names.len();
    let mut confusion = vec![vec![0u64; c]; c];
    for (key, &t) in truth {
        let p = predictions[key];
        confusion[scheme.project(t)][scheme.project(p)] += 1;
    }
    let per_class = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            (
                name.to_string(),
                ClassCount {
                    correct: confusion[i][i],
                    total: confusion[i].iter().sum(),
                },
            )
        })
        .collect();
    let correct: u64 = (0..c).map(|i| confusion[i][i]).sum();
    let total = truth.len() as u64;
    Ok(MetricsReport {
        level,
        scheme,
        per_class,
        overall: Overall {
            correct,
            total,
            accuracy: reported_accuracy(correct, total)?,
        },
        confusion,
    })
}

/// Truth lesions with decoded masks, for overlap queries.
pub struct TruthIndex {
    width0: usize,
    lesions: Vec<(ClassLabel, RunMask)>,
}

impl TruthIndex {
    pub fn new(lesions: &[LesionTruth], width0: usize) -> Result<TruthIndex> {
        let lesions = lesions
            .iter()
            .map(|l| Ok((l.class, l.mask()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TruthIndex { width0, lesions })
    }

    /// Mask pixels of lesion `i` inside the footprint.
    pub fn overlap(&self, i: usize, footprint: &Footprint) -> u64 {
        self.lesions[i]
            .1
            .row_segments(self.width0)
            .map(|(y, x0, x1)| footprint.overlap_row(y, x0, x1))
            .sum()
    }

    /// Index of the lesion overlapping the footprint most; ties go to the
    /// more severe class, then the lower index.
    pub fn best_lesion(&self, footprint: &Footprint) -> Option<usize> {
        let mut best: Option<(u64, ClassLabel, usize)> = None;
        for i in 0..self.lesions.len() {
            let ov = self.overlap(i, footprint);
            if ov == 0 {
                continue;
            }
            let cand = (ov, self.lesions[i].0, i);
            let better = match best {
                None => true,
                Some((bo, bc, _)) => ov > bo || (ov == bo && cand.1 > bc),
            };
            if better {
                best = Some(cand);
            }
        }
        best.map(|b| b.2)
    }

    /// Ground-truth class of a proposed region; regions touching no lesion are non-carcinoma.
    pub fn region_truth(&self, footprint: &Footprint) -> ClassLabel {
        self.best_lesion(footprint)
            .map_or(ClassLabel::NonCarcinoma, |i| self.lesions[i].0)
    }

    /// Class of the lesion containing the level-0 point, non-carcinoma on background.
    pub fn point_truth(&self, x0: i64, y0: i64) -> ClassLabel {
        self.lesions
            .iter()
            .find(|(_, m)| m.contains(self.width0, x0, y0))
            .map_or(ClassLabel::NonCarcinoma, |(c, _)| *c)
    }

    pub fn len(&self) -> usize {
        self.lesions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lesions.is_empty()
    }
}
