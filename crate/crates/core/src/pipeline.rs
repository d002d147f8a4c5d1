//! End-to-end wiring: configuration, per-slide runs, cohort runs, and the
//! file-level glue for evaluation and feature export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{classify_region_with, load_calls, save_calls, LesionCall, SamplingConfig};
use crate::detect::{
    extract_components, load_regions, propose_regions, save_regions, scan_with, Connectivity, Heatmap, ScanConfig,
};
use crate::error::{Error, Result};
use crate::evaluate::{assess_slide, load_assessment, EvalLevel, SlideAssessment, TruthIndex};
use crate::exec::{with_jobs, Execution};
use crate::inference::{
    handcrafted_features, load_features, FeatureTable, LinearBackend, LinearModel, PatchBackend, PatchRef,
    PlaybackBackend, SignatureBackend,
};
use crate::labels::ClassLabel;
use crate::pyramid::{read_metadata, Slide, SLIDE_JSON};
use crate::synth::{GroundTruth, TRUTH_JSON};

pub const RUN_JSON: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub level_mpp_target: f64,
    pub patch_size: usize,
    pub stride: usize,
    pub threshold: f64,
    pub connectivity: Connectivity,
    pub min_size_mm: f64,
    pub tissue_filter: bool,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            level_mpp_target: 0.25,
            patch_size: 256,
            stride: 256,
            threshold: 0.5,
            connectivity: Connectivity::Eight,
            min_size_mm: 1.0,
            tissue_filter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationConfig {
    pub level_mpp_target: f64,
    pub patch_size: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub density: f64,
    pub overlap_frac: f64,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        ClassificationConfig {
            level_mpp_target: 1.0,
            patch_size: 512,
            n_min: 5,
            n_max: 51,
            density: 0.5,
            overlap_frac: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    #[default]
    Synthetic,
    Linear {
        model: PathBuf,
    },
    Features {
        features: PathBuf,
        model: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detection: DetectionConfig,
    pub classification: ClassificationConfig,
    pub seed: u64,
    pub backend: BackendConfig,
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(field, format!("{v} must be positive")))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.detection;
        positive("detection.level_mpp_target", d.level_mpp_target)?;
        positive("detection.min_size_mm", d.min_size_mm)?;
        if d.patch_size == 0 || d.stride == 0 {
            return Err(Error::validation("detection", "patch_size and stride must be positive"));
        }
        if !(0.0..=1.0).contains(&d.threshold) {
            return Err(Error::validation("detection.threshold", format!("{} outside [0, 1]", d.threshold)));
        }
        positive("classification.level_mpp_target", self.classification.level_mpp_target)?;
        self.sampling(0).validate()
    }

    /// Reads a JSON config; relative backend paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.backend {
            BackendConfig::Synthetic => {}
            BackendConfig::Linear { model } => fix(model),
            BackendConfig::Features { features, model } => {
                fix(features);
                fix(model);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn sampling(&self, level: usize) -> SamplingConfig {
        let c = &self.classification;
        SamplingConfig {
            level,
            patch_size: c.patch_size,
            n_min: c.n_min,
            n_max: c.n_max,
            density: c.density,
            overlap_frac: c.overlap_frac,
            seed: self.seed,
        }
    }

    pub fn build_backend(&self) -> Result<Box<dyn PatchBackend>> {
        Ok(match &self.backend {
            BackendConfig::Synthetic => Box::new(SignatureBackend::default()),
            BackendConfig::Linear { model } => Box::new(LinearBackend::new(LinearModel::load(model)?)?),
            BackendConfig::Features { features, model } => {
                Box::new(PlaybackBackend::new(load_features(features)?, LinearModel::load(model)?)?)
            }
        })
    }
}

/// Resolved per-slide parameters, written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub slide_id: String,
    pub backend: String,
    pub detection_level: usize,
    pub classification_level: usize,
    pub classification_patch_size: usize,
    pub config: PipelineConfig,
}

impl RunRecord {
    pub fn load(dir: &Path) -> Result<RunRecord> {
        let p = dir.join(RUN_JSON);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
    }
}

/// Scan, propose, classify and assess one slide, writing every stage's
/// files into `out`.
pub fn run_slide(
    slide_dir: &Path,
    cfg: &PipelineConfig,
    backend: &dyn PatchBackend,
    out: &Path,
    exec: Execution,
) -> Result<SlideAssessment> {
    let slide = Slide::open(slide_dir)?;
    let meta = slide.metadata();
    let d = &cfg.detection;
    let scan_cfg = ScanConfig {
        level: meta.level_closest_to_mpp(d.level_mpp_target),
        patch_size: d.patch_size,
        stride: d.stride,
        tissue_filter: d.tissue_filter,
    };
    let class_level = meta.level_closest_to_mpp(cfg.classification.level_mpp_target);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let heatmap = scan_with(&slide, backend, &scan_cfg, exec)?;
    heatmap.save(out)?;
    let components = extract_components(&heatmap, d.threshold, d.connectivity);
    let regions = propose_regions(&components, &heatmap, meta, d.min_size_mm)?;
    save_regions(&regions, out)?;

    let sampling = cfg.sampling(class_level);
    let calls = regions
        .iter()
        .map(|r| classify_region_with(r, &heatmap, &slide, backend, &sampling, exec))
        .collect::<Result<Vec<_>>>()?;
    save_calls(&calls, out)?;

    let record = RunRecord {
        slide_id: meta.slide_id.clone(),
        backend: backend.name().to_string(),
        detection_level: scan_cfg.level,
        classification_level: class_level,
        classification_patch_size: cfg.classification.patch_size,
        config: cfg.clone(),
    };
    let p = out.join(RUN_JSON);
    fs::write(&p, serde_json::to_string_pretty(&record).expect("record serializes")).map_err(|e| Error::io(&p, e))?;

    let assessment = assess_slide(&meta.slide_id, calls);
    assessment.save(out)?;
    Ok(assessment)
}

/// Sorted names of the subdirectories of `dir` that contain `marker`.
pub fn list_dirs_with(dir: &Path, marker: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().join(marker).is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Runs every slide under `slides_dir` into `out/<slide_id>` on `jobs`
/// threads (0 = all cores). Per-slide outputs do not depend on `jobs`.
pub fn run_cohort(slides_dir: &Path, cfg: &PipelineConfig, out: &Path, jobs: usize) -> Result<Vec<SlideAssessment>> {
    let ids = list_dirs_with(slides_dir, SLIDE_JSON)?;
    let backend = cfg.build_backend()?;
    let backend = backend.as_ref();
    with_jobs(jobs, || {
        Execution::Parallel.try_map_slice(&ids, |id| {
            run_slide(&slides_dir.join(id), cfg, backend, &out.join(id), Execution::Parallel)
        })
    })
}

fn check_same_ids(runs: &[String], truth: &[String]) -> Result<()> {
    if runs == truth {
        return Ok(());
    }
    let r: BTreeSet<&String> = runs.iter().collect();
    let t: BTreeSet<&String> = truth.iter().collect();
    Err(Error::validation(
        "slides",
        format!(
            "slide sets differ: missing runs {:?}; missing truth {:?}",
            t.difference(&r).collect::<Vec<_>>(),
            r.difference(&t).collect::<Vec<_>>()
        ),
    ))
}

/// Predictions and ground truth keyed by slide (`id`), region (`id/r`) or
/// patch (`id/r/i`). `runs_dir` holds pipeline outputs, `truth_dir` the
/// generated slides with their truth files. At slide level a directory
/// without an assessment contributes its own truth label as the prediction,
/// so a truth tree can be scored against itself.
pub fn collect_labels(
    runs_dir: &Path,
    truth_dir: &Path,
    level: EvalLevel,
) -> Result<(BTreeMap<String, ClassLabel>, BTreeMap<String, ClassLabel>)> {
    let mut run_ids = list_dirs_with(runs_dir, crate::evaluate::ASSESSMENT_JSON)?;
    if run_ids.is_empty() && level == EvalLevel::Slide {
        run_ids = list_dirs_with(runs_dir, TRUTH_JSON)?;
    }
    let truth_ids = list_dirs_with(truth_dir, TRUTH_JSON)?;
    if truth_ids.is_empty() {
        return Err(Error::validation("truth", format!("no slides with {TRUTH_JSON} under {}", truth_dir.display())));
    }
    check_same_ids(&run_ids, &truth_ids)?;

    let mut pred = BTreeMap::new();
    let mut truth = BTreeMap::new();
    for id in &truth_ids {
        let run = runs_dir.join(id);
        let slide = truth_dir.join(id);
        let gt = GroundTruth::load(&slide)?;
        match level {
            EvalLevel::Slide => {
                let p = if run.join(crate::evaluate::ASSESSMENT_JSON).is_file() {
                    load_assessment(&run)?.label
                } else {
                    GroundTruth::load(&run)?.slide_label
                };
                pred.insert(id.clone(), p);
                truth.insert(id.clone(), gt.slide_label);
            }
            EvalLevel::Region | EvalLevel::Patch => {
                let meta = read_metadata(&slide)?;
                let index = TruthIndex::new(&gt.lesions, meta.width0)?;
                let calls = load_calls(&run)?;
                if level == EvalLevel::Region {
                    let heatmap = Heatmap::load(&run)?;
                    let regions = load_regions(&run)?;
                    let by_id: BTreeMap<usize, &LesionCall> = calls.iter().map(|c| (c.region_id, c)).collect();
                    for r in &regions {
                        let call = by_id.get(&r.region_id).ok_or_else(|| {
                            Error::validation("calls", format!("{id}: region {} has no call", r.region_id))
                        })?;
                        let key = format!("{id}/{}", r.region_id);
                        pred.insert(key.clone(), call.predicted);
                        truth.insert(key, index.region_truth(&r.footprint(&heatmap, &meta)?));
                    }
                } else {
                    let size = RunRecord::load(&run)?.classification_patch_size as i64;
                    for c in &calls {
                        for (i, p) in c.patches.iter().enumerate() {
                            let key = format!("{id}/{}/{i}", c.region_id);
                            let (cx, cy) = meta.to_level0(p.level, p.x + size / 2, p.y + size / 2)?;
                            pred.insert(key.clone(), p.argmax);
                            truth.insert(key, index.point_truth(cx, cy));
                        }
                    }
                }
            }
        }
    }
    Ok((pred, truth))
}

/// Hand-crafted features of every classification patch in a run tree,
/// labelled with the ground-truth class at the patch centre.
pub fn export_patch_features(runs_dir: &Path, slides_dir: &Path, exec: Execution) -> Result<FeatureTable> {
    let ids = list_dirs_with(runs_dir, crate::classify::CALLS_JSON)?;
    let mut refs = Vec::new();
    let mut labels = Vec::new();
    for id in &ids {
        let run = runs_dir.join(id);
        let slide_dir = slides_dir.join(id);
        let meta = read_metadata(&slide_dir)?;
        let index = TruthIndex::new(&GroundTruth::load(&slide_dir)?.lesions, meta.width0)?;
        let size = RunRecord::load(&run)?.classification_patch_size;
        for c in load_calls(&run)? {
            for p in &c.patches {
                let half = size as i64 / 2;
                let (cx, cy) = meta.to_level0(p.level, p.x + half, p.y + half)?;
                labels.push(index.point_truth(cx, cy));
                refs.push(PatchRef {
                    slide_id: id.clone(),
                    level: p.level,
                    x: p.x,
                    y: p.y,
                    size,
                });
            }
        }
    }
    if refs.is_empty() {
        return Err(Error::validation("runs", "no classification patches to export"));
    }
    let rows = exec.try_map_slice(&refs, |r| {
        let patch = crate::explain::read_ref(slides_dir, r)?;
        Ok::<_, Error>(handcrafted_features(&patch).into_iter().map(|v| v as f32).collect::<Vec<f32>>())
    })?;
    FeatureTable::from_rows(&rows)?.with_labels(labels)?.with_patch_refs(refs)
}
