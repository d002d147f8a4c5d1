//! Classification stage: per-region patch sampling at the classification
//! level and majority voting.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{Footprint, Heatmap, RegionProposal};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::inference::{argmax_severity, classify_patch, PatchBackend};
use crate::labels::ClassLabel;
use crate::pyramid::{Patch, Slide, SlideMetadata};

pub const CALLS_JSON: &str = "calls.json";

/// Rejections allowed per requested patch before the overlap requirement is relaxed.
pub const REJECTIONS_PER_PATCH: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub level: usize,
    pub patch_size: usize,
    pub n_min: usize,
    pub n_max: usize,
    /// Patches per patch-area of region.
    pub density: f64,
    /// Minimum fraction of a patch that must fall inside the region.
    pub overlap_frac: f64,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::validation("patch_size", "must be positive"));
        }
        if !(1 <= self.n_min && self.n_min <= self.n_max) {
            return Err(Error::validation("n_min/n_max", "need 1 <= n_min <= n_max"));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::validation("density", "must be positive"));
        }
        if !(self.overlap_frac > 0.0 && self.overlap_frac <= 1.0) {
            return Err(Error::validation("overlap_frac", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// `clamp(ceil(density * area / patch_area), n_min, n_max)` where the patch
/// area is measured at the classification level's resolution `mpp`.
pub fn sample_count(area_mm2: f64, cfg: &SamplingConfig, mpp: (f64, f64)) -> Result<usize> {
    if !(area_mm2 > 0.0 && area_mm2.is_finite()) {
        return Err(Error::validation("area_mm2", "must be positive"));
    }
    let side = cfg.patch_size as f64;
    let patch_area = side * mpp.0 * side * mpp.1 / 1e6;
    let raw = cfg.density * (area_mm2 / patch_area);
    // absorb rounding noise so exact multiples do not spill into the next integer
    let n = (raw - 1e-9 * raw.max(1.0)).ceil().max(0.0);
    Ok((n as usize).clamp(cfg.n_min, cfg.n_max))
}

fn region_rng(seed: u64, region_id: usize) -> ChaCha8Rng {
    let mut z = seed ^ (region_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Draws `n` patch positions (top-left, classification-level pixels) whose
/// overlap with `footprint` is at least `overlap_frac` of the patch.
///
/// Candidates are drawn uniformly from the positions where the required
/// overlap is geometrically possible. After `10_000 * n` rejections the
/// overlap requirement is halved once; a second exhaustion is an error.
pub fn sample_positions(
    footprint: &Footprint,
    meta: &SlideMetadata,
    cfg: &SamplingConfig,
    region_id: usize,
    n: usize,
) -> Result<Vec<(i64, i64)>> {
    cfg.validate()?;
    let ds = meta.level(cfg.level)?.downsample as i64;
    let p = cfg.patch_size as i64;
    let [bx, by, bw, bh] = footprint.bbox().map(|v| v as i64);
    // bbox at the classification level, rounded outward
    let (cx0, cy0) = (bx.div_euclid(ds), by.div_euclid(ds));
    let (cx1, cy1) = ((bx + bw + ds - 1).div_euclid(ds), (by + bh + ds - 1).div_euclid(ds));
    let patch_px0 = (p * ds) * (p * ds);

    let mut rng = region_rng(cfg.seed, region_id);
    let mut out = Vec::with_capacity(n);
    let mut frac = cfg.overlap_frac;
    let mut relaxed = false;
    let mut rejections = 0usize;
    while out.len() < n {
        let need = (frac * p as f64).ceil() as i64;
        let (xlo, xhi) = (cx0 + need - p, cx1 - need);
        let (ylo, yhi) = (cy0 + need - p, cy1 - need);
        let feasible = xlo <= xhi && ylo <= yhi;
        let mut accepted = false;
        if feasible {
            let x = rng.random_range(xlo..=xhi);
            let y = rng.random_range(ylo..=yhi);
            let ov = footprint.overlap([x * ds, y * ds, p * ds, p * ds]);
            if ov as f64 >= frac * patch_px0 as f64 {
                out.push((x, y));
                accepted = true;
            }
        }
        if !accepted {
            rejections += if feasible { 1 } else { REJECTIONS_PER_PATCH * n };
            if rejections >= REJECTIONS_PER_PATCH * n {
                if relaxed {
                    return Err(Error::Sampling {
                        region_id,
                        msg: format!(
                            "found {} of {n} patches with overlap >= {frac} after relaxing",
                            out.len()
                        ),
                    });
                }
                relaxed = true;
                frac /= 2.0;
                rejections = 0;
            }
        }
    }
    Ok(out)
}

/// Samples and reads the classification patches of a region.
pub fn sample_patches(
    region: &RegionProposal,
    heatmap: &Heatmap,
    slide: &Slide,
    cfg: &SamplingConfig,
) -> Result<Vec<Patch>> {
    let meta = slide.metadata();
    let fp = region.footprint(heatmap, meta)?;
    let n = sample_count(region.area_mm2, cfg, meta.mpp_at_level(cfg.level)?)?;
    sample_positions(&fp, meta, cfg, region.region_id, n)?
        .into_iter()
        .map(|(x, y)| slide.read_patch(cfg.level, x, y, cfg.patch_size))
        .collect()
}

/// Plurality label; ties go to the more severe class.
pub fn vote(labels: &[ClassLabel]) -> Result<ClassLabel> {
    if labels.is_empty() {
        return Err(Error::validation("votes", "cannot vote over zero patches"));
    }
    Ok(argmax_severity(&tally(labels).map(|c| c as f64)))
}

pub fn tally(labels: &[ClassLabel]) -> [usize; 3] {
    let mut votes = [0usize; 3];
    for l in labels {
        votes[l.index()] += 1;
    }
    votes
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub x: i64,
    pub y: i64,
    pub level: usize,
    pub probs: [f64; 3],
    pub argmax: ClassLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LesionCall {
    pub region_id: usize,
    pub n_patches: usize,
    pub votes: [usize; 3],
    pub predicted: ClassLabel,
    pub patches: Vec<PatchRecord>,
}

pub fn classify_region(
    region: &RegionProposal,
    heatmap: &Heatmap,
    slide: &Slide,
    backend: &dyn PatchBackend,
    cfg: &SamplingConfig,
) -> Result<LesionCall> {
    classify_region_with(region, heatmap, slide, backend, cfg, Execution::default())
}

pub fn classify_region_with(
    region: &RegionProposal,
    heatmap: &Heatmap,
    slide: &Slide,
    backend: &dyn PatchBackend,
    cfg: &SamplingConfig,
    exec: Execution,
) -> Result<LesionCall> {
    let tag = |e: Error| match e {
        Error::Inference {
            slide_id,
            level,
            x,
            y,
            msg,
        } => Error::Inference {
            slide_id,
            level,
            x,
            y,
            msg: format!("region {}: {msg}", region.region_id),
        },
        e @ Error::Sampling { .. } => e,
        other => Error::Sampling {
            region_id: region.region_id,
            msg: other.to_string(),
        },
    };
    let patches = sample_patches(region, heatmap, slide, cfg).map_err(tag)?;
    let records = exec
        .try_map_slice(&patches, |p| {
            classify_patch(backend, p).map(|r| PatchRecord {
                x: p.x,
                y: p.y,
                level: p.level,
                probs: r.probs,
                argmax: r.argmax(),
            })
        })
        .map_err(tag)?;
    let labels: Vec<ClassLabel> = records.iter().map(|r| r.argmax).collect();
    Ok(LesionCall {
        region_id: region.region_id,
        n_patches: records.len(),
        votes: tally(&labels),
        predicted: vote(&labels)?,
        patches: records,
    })
}

#[derive(Serialize, Deserialize)]
struct VotesJson {
    non_carcinoma: usize,
    dcis: usize,
    idc: usize,
}

#[derive(Serialize, Deserialize)]
struct PatchJson {
    x: i64,
    y: i64,
    level: usize,
    probs: [f64; 3],
    argmax: ClassLabel,
}

#[derive(Serialize, Deserialize)]
struct CallJson {
    region_id: usize,
    n_patches: usize,
    votes: VotesJson,
    predicted: ClassLabel,
    patches: Vec<PatchJson>,
}

impl Serialize for LesionCall {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CallJson {
            region_id: self.region_id,
            n_patches: self.n_patches,
            votes: VotesJson {
                non_carcinoma: self.votes[0],
                dcis: self.votes[1],
                idc: self.votes[2],
            },
            predicted: self.predicted,
            patches: self
                .patches
                .iter()
                .map(|p| PatchJson {
                    x: p.x,
                    y: p.y,
                    level: p.level,
                    probs: p.probs,
                    argmax: p.argmax,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LesionCall {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let c = CallJson::deserialize(d)?;
        Ok(LesionCall {
            region_id: c.region_id,
            n_patches: c.n_patches,
            votes: [c.votes.non_carcinoma, c.votes.dcis, c.votes.idc],
            predicted: c.predicted,
            patches: c
                .patches
                .into_iter()
                .map(|p| PatchRecord {
                    x: p.x,
                    y: p.y,
                    level: p.level,
                    probs: p.probs,
                    argmax: p.argmax,
                })
                .collect(),
        })
    }
}

pub fn save_calls(calls: &[LesionCall], dir: &Path) -> Result<()> {
    let p = dir.join(CALLS_JSON);
    fs::write(&p, serde_json::to_string_pretty(calls).expect("calls serialize")).map_err(|e| Error::io(&p, e))
}

pub fn load_calls(dir: &Path) -> Result<Vec<LesionCall>> {
    let p = dir.join(CALLS_JSON);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
}
