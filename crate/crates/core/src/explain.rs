//! Interpretability: decision-stump feature ranking, top-activating patches,
//! class activation maps and their overlays.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::inference::{FeatureMaps, FeatureTable, LinearModel, PatchRef};
use crate::labels::ClassLabel;
use crate::pyramid::{Patch, Slide};
use crate::raster::RgbImage;

pub const RANKING_JSON: &str = "ranking.json";

/// `predict(a) = positive iff polarity·(a − threshold) > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StumpResult {
    pub feature_index: usize,
    pub threshold: f64,
    pub polarity: i8,
    pub accuracy: f64,
    pub correct: usize,
}

impl StumpResult {
    pub fn predict(&self, a: f64) -> bool {
        f64::from(self.polarity) * (a - self.threshold) > 0.0
    }
}

/// Best single-threshold rule for one feature. Candidates are a sentinel one
/// below the minimum plus every midpoint between consecutive distinct values,
/// visited in ascending order with polarity +1 before −1; only a strictly
/// better count replaces the incumbent.
pub fn stump_fit(activations: &[f64], labels: &[bool]) -> Result<StumpResult> {
    let n = activations.len();
    if n != labels.len() {
        return Err(Error::validation("labels", format!("{} labels for {n} activations", labels.len())));
    }
    if n < 2 {
        return Err(Error::validation("activations", "need at least two samples"));
    }
    if activations.iter().any(|a| !a.is_finite()) {
        return Err(Error::validation("activations", "values must be finite"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| activations[i].total_cmp(&activations[j]));
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = n - positives;

    // Split after sorted index `i`: the first i+1 samples sit below t.
    // p=+1 gets right: positives above + negatives below.
    // p=−1 gets right: positives below + negatives above.
    let lo = activations[order[0]];
    let mut best = StumpResult {
        feature_index: 0,
        threshold: lo - 1.0,
        polarity: 1,
        accuracy: 0.0,
        correct: positives,
    };
    if negatives > best.correct {
        best.polarity = -1;
        best.correct = negatives;
    }
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    for w in 0..n - 1 {
        if labels[order[w]] {
            pos_below += 1;
        } else {
            neg_below += 1;
        }
        let (a, b) = (activations[order[w]], activations[order[w + 1]]);
        if a == b {
            continue;
        }
        let t = a + (b - a) / 2.0;
        let plus = (positives - pos_below) + neg_below;
        let minus = pos_below + (negatives - neg_below);
        if plus > best.correct {
            best = StumpResult { threshold: t, polarity: 1, correct: plus, ..best };
        }
        if minus > best.correct {
            best = StumpResult { threshold: t, polarity: -1, correct: minus, ..best };
        }
    }
    best.accuracy = best.correct as f64 / n as f64;
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRanking {
    pub target_class: ClassLabel,
    pub k: usize,
    pub ranked: Vec<StumpResult>,
}

#[derive(Serialize, Deserialize)]
struct RankedJson {
    index: usize,
    threshold: f64,
    polarity: i8,
    accuracy: f64,
}

#[derive(Serialize, Deserialize)]
struct RankingJson {
    target_class: ClassLabel,
    k: usize,
    features: Vec<RankedJson>,
}

impl FeatureRanking {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = RankingJson {
            target_class: self.target_class,
            k: self.k,
            features: self
                .ranked
                .iter()
                .map(|s| RankedJson {
                    index: s.feature_index,
                    threshold: s.threshold,
                    polarity: s.polarity,
                    accuracy: s.accuracy,
                })
                .collect(),
        };
        fs::write(path, serde_json::to_string_pretty(&json).expect("ranking serializes")).map_err(|e| Error::io(path, e))
    }

    pub fn indices(&self) -> Vec<usize> {
        self.ranked.iter().map(|s| s.feature_index).collect()
    }
}

pub fn rank_features(table: &FeatureTable, target: ClassLabel, k: usize) -> Result<FeatureRanking> {
    rank_features_with(table, target, k, Execution::default())
}

/// One-vs-rest stump per feature, top `k` by accuracy with ties toward the
/// lower feature index. The sort happens after all fits are gathered, so the
/// result does not depend on scheduling.
pub fn rank_features_with(table: &FeatureTable, target: ClassLabel, k: usize, exec: Execution) -> Result<FeatureRanking> {
    let labels = table
        .labels
        .as_ref()
        .ok_or_else(|| Error::validation("labels", "feature table carries no labels"))?;
    let y: Vec<bool> = labels.iter().map(|&l| l == target).collect();
    let features: Vec<usize> = (0..table.f()).collect();
    let mut fits = exec.try_map_slice(&features, |&j| {
        let col: Vec<f64> = table.column(j).into_iter().map(f64::from).collect();
        stump_fit(&col, &y).map(|s| StumpResult { feature_index: j, ..s })
    })?;
    fits.sort_by(|a, b| b.correct.cmp(&a.correct).then(a.feature_index.cmp(&b.feature_index)));
    fits.truncate(k.min(table.f()));
    Ok(FeatureRanking {
        target_class: target,
        k,
        ranked: fits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopActivation {
    pub row: usize,
    pub activation: f32,
    pub patch: PatchRef,
}

/// The `m` rows with the largest activation on one feature, descending, ties in row order.
pub fn top_activations(table: &FeatureTable, feature_index: usize, m: usize) -> Result<Vec<TopActivation>> {
    if feature_index >= table.f() {
        return Err(Error::Range {
            what: "feature",
            index: feature_index,
            available: table.f(),
        });
    }
    if m == 0 {
        return Err(Error::validation("m", "must be at least 1"));
    }
    let col = table.column(feature_index);
    let mut rows: Vec<usize> = (0..table.n()).collect();
    rows.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
    rows.truncate(m);
    Ok(rows
        .into_iter()
        .map(|r| TopActivation {
            row: r,
            activation: col[r],
            patch: table.patch_ref(r),
        })
        .collect())
}

/// Reads the pixels behind a patch reference from `slides_dir/<slide_id>`.
pub fn read_ref(slides_dir: &Path, r: &PatchRef) -> Result<Patch> {
    let slide = Slide::open(&slides_dir.join(&r.slide_id))?;
    slide.read_patch(r.level, r.x, r.y, r.size)
}

/// Writes `rank_{i}_row_{r}.png` for the top activations of one feature.
pub fn write_gallery(tops: &[TopActivation], slides_dir: &Path, out: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut names = Vec::with_capacity(tops.len());
    for (i, t) in tops.iter().enumerate() {
        let name = format!("rank_{i}_row_{}.png", t.row);
        read_ref(slides_dir, &t.patch)?.to_image().save_png(&out.join(&name))?;
        names.push(name);
    }
    Ok(names)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CamMap {
    pub class: ClassLabel,
    pub h: usize,
    pub w: usize,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub size: usize,
    pub upsampled: Vec<f64>,
}

/// `raw(y,x) = Σ_k w_{k,c}·F_k(y,x)` using the model's spatial weights,
/// min-max normalized and bilinearly upsampled to `patch_size`.
pub fn compute_cam(maps: &FeatureMaps, model: &LinearModel, class: ClassLabel, patch_size: usize) -> Result<CamMap> {
    let weights = model.spatial_weights();
    if weights.len() != maps.k {
        return Err(Error::validation(
            "feature_maps",
            format!("{} channels but the model has {} spatial weight rows", maps.k, weights.len()),
        ));
    }
    if maps.h == 0 || maps.w == 0 || patch_size == 0 {
        return Err(Error::validation("feature_maps", "empty grid"));
    }
    let c = class.index();
    let plane = maps.h * maps.w;
    let mut raw = vec![0f64; plane];
    for (k, w) in weights.iter().enumerate() {
        let wk = w[c];
        for (r, &f) in raw.iter_mut().zip(&maps.data[k * plane..(k + 1) * plane]) {
            *r += wk * f64::from(f);
        }
    }
    let normalized = normalize(&raw);
    let upsampled = upsample_bilinear(&normalized, maps.h, maps.w, patch_size);
    Ok(CamMap {
        class,
        h: maps.h,
        w: maps.w,
        raw,
        normalized,
        size: patch_size,
        upsampled,
    })
}

fn normalize(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Half-pixel-centre bilinear resize of an `h x w` grid to `size x size`.
pub fn upsample_bilinear(grid: &[f64], h: usize, w: usize, size: usize) -> Vec<f64> {
    let axis = |n: usize| -> Vec<(usize, usize, f64)> {
        (0..size)
            .map(|d| {
                let s = ((d as f64 + 0.5) * n as f64 / size as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = axis(h);
    let xs = axis(w);
    let mut out = Vec::with_capacity(size * size);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = grid[y0 * w + x0] * (1.0 - fx) + grid[y0 * w + x1] * fx;
            let bot = grid[y1 * w + x0] * (1.0 - fx) + grid[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Blue at 0, green at 0.5, red at 1, linear in between.
pub fn heat_color(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.5 {
        [0.0, 510.0 * v, 255.0 * (1.0 - 2.0 * v)]
    } else {
        [255.0 * (2.0 * v - 1.0), 255.0 * (2.0 - 2.0 * v), 0.0]
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// `out = (1 − α·v)·patch + α·v·heat(v)` per pixel.
pub fn render_overlay(cam: &CamMap, patch: &Patch, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::validation("alpha", format!("{alpha} outside [0, 1]")));
    }
    if cam.size != patch.size {
        return Err(Error::validation("cam", format!("map is {} px, patch is {} px", cam.size, patch.size)));
    }
    let mut img = RgbImage::new(patch.size, patch.size);
    for y in 0..patch.size {
        for x in 0..patch.size {
            let v = cam.upsampled[y * cam.size + x];
            let heat = heat_color(v);
            let p = patch.pixel(x, y);
            let a = alpha * v;
            img.put(x, y, std::array::from_fn(|i| to_u8((1.0 - a) * f64::from(p[i]) + a * heat[i])));
        }
    }
    Ok(img)
}

/// The activation map alone: the overlay over black at full opacity, so
/// cold regions fade to black.
pub fn cam_image(cam: &CamMap) -> RgbImage {
    let mut img = RgbImage::new(cam.size, cam.size);
    for (i, px) in img.as_raw_mut().chunks_exact_mut(3).enumerate() {
        let v = cam.upsampled[i];
        let heat = heat_color(v);
        for c in 0..3 {
            px[c] = to_u8(v * heat[c]);
        }
    }
    img
}
