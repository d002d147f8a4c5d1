//! Synthetic slides with geometric lesions of known class and size.
//!
//! Pixel colours follow fixed class signatures so that the rule-based
//! backend in [`crate::inference`] decides them exactly:
//!
//! | class          | dominant channel |
//! |----------------|------------------|
//! | non-carcinoma  | green            |
//! | DCIS           | blue             |
//! | IDC            | red              |
//!
//! The dominant channel lies in `[185, 215]`, the other two in `[55, 85]`;
//! background pixels have every channel in `[240, 255]`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::labels::{max_severity, ClassLabel, PhysicalCalibration};
use crate::pyramid::{write_slide, PyramidOptions, SlideMetadata};
use crate::raster::RgbImage;

pub const TRUTH_JSON: &str = "truth.json";

const BLOB_AMPLITUDE: f64 = 0.12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionShape {
    Ellipse,
    /// Ellipse with a seeded low-order radial wobble of up to ±12 %.
    Blob,
}

/// One lesion to paint. `center` and `axes` (semi-axes) are level-0 pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub shape: LesionShape,
    pub class: ClassLabel,
    pub center: (f64, f64),
    pub axes: (f64, f64),
    #[serde(default)]
    pub texture_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub slide_id: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub mpp: f64,
    pub lesions: Vec<LesionSpec>,
    /// Side of the square grain on which texture noise is drawn. 1 flips
    /// individual pixels; larger grains flip whole blocks.
    #[serde(default = "default_grain")]
    pub noise_grain_px: usize,
    #[serde(default = "default_tile")]
    pub tile_size: usize,
}

fn default_grain() -> usize {
    1
}

fn default_tile() -> usize {
    crate::pyramid::DEFAULT_TILE_SIZE
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation("size", "slide dimensions must be positive"));
        }
        PhysicalCalibration::isotropic(self.mpp)?;
        if self.noise_grain_px == 0 {
            return Err(Error::validation("noise_grain_px", "must be >= 1"));
        }
        if !self.tile_size.is_power_of_two() {
            return Err(Error::validation("tile_size", "must be a power of two"));
        }
        for (i, l) in self.lesions.iter().enumerate() {
            if !(l.axes.0 > 0.0 && l.axes.1 > 0.0 && l.axes.0.is_finite() && l.axes.1.is_finite()) {
                return Err(Error::validation(format!("lesions[{i}].axes"), "must be positive"));
            }
            if !(0.0..=1.0).contains(&l.texture_noise) {
                return Err(Error::validation(format!("lesions[{i}].texture_noise"), "must be in [0, 1]"));
            }
            if !(l.center.0.is_finite() && l.center.1.is_finite()) {
                return Err(Error::validation(format!("lesions[{i}].center"), "must be finite"));
            }
        }
        Ok(())
    }
}

/// Row-major level-0 run-length mask.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunMask {
    /// `(start, length)` with `start = y * width + x`, sorted and disjoint.
    pub runs: Vec<(u64, u64)>,
}

impl RunMask {
    pub fn encode(&self) -> String {
        let mut s = String::new();
        for (i, (start, len)) in self.runs.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{start}:{len}");
        }
        s
    }

    pub fn decode(s: &str) -> Result<RunMask> {
        let mut runs = Vec::new();
        if s.trim().is_empty() {
            return Ok(RunMask { runs });
        }
        for part in s.split(',') {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| Error::validation("rle_mask", format!("bad run {part:?}")))?;
            let start: u64 = a.trim().parse().map_err(|_| Error::validation("rle_mask", format!("bad start {a:?}")))?;
            let len: u64 = b.trim().parse().map_err(|_| Error::validation("rle_mask", format!("bad length {b:?}")))?;
            if let Some(&(ps, pl)) = runs.last() {
                if start < ps + pl {
                    return Err(Error::validation("rle_mask", "runs must be sorted and disjoint"));
                }
            }
            runs.push((start, len));
        }
        Ok(RunMask { runs })
    }

    pub fn pixel_count(&self) -> u64 {
        self.runs.iter().map(|r| r.1).sum()
    }

    /// Whether linear pixel index `idx` is inside the mask.
    pub fn contains_index(&self, idx: u64) -> bool {
        let i = self.runs.partition_point(|&(s, _)| s <= idx);
        i > 0 && {
            let (s, l) = self.runs[i - 1];
            idx < s + l
        }
    }

    pub fn contains(&self, width: usize, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x as usize >= width {
            return false;
        }
        self.contains_index(y as u64 * width as u64 + x as u64)
    }

    /// Runs split into `(y, x_start, x_end)` row segments.
    pub fn row_segments(&self, width: usize) -> impl Iterator<Item = (u64, u64, u64)> + '_ {
        let w = width as u64;
        self.runs.iter().flat_map(move |&(start, len)| {
            let mut segs = Vec::new();
            let mut s = start;
            let end = start + len;
            while s < end {
                let y = s / w;
                let row_end = (y + 1) * w;
                let e = end.min(row_end);
                segs.push((y, s - y * w, e - y * w));
                s = e;
            }
            segs
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionTruth {
    pub class: ClassLabel,
    /// `[x, y, w, h]` of the mask in level-0 pixels.
    pub bbox: [usize; 4],
    pub area_mm2: f64,
    pub rle_mask: String,
}

impl LesionTruth {
    pub fn mask(&self) -> Result<RunMask> {
        RunMask::decode(&self.rle_mask)
    }

    /// Largest bbox side in mm.
    pub fn size_mm(&self, cal: &PhysicalCalibration) -> f64 {
        (self.bbox[2] as f64 * cal.mpp_x).max(self.bbox[3] as f64 * cal.mpp_y) / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub slide_label: ClassLabel,
    pub lesions: Vec<LesionTruth>,
}

impl GroundTruth {
    pub fn load(dir: &Path) -> Result<GroundTruth> {
        let path = dir.join(TRUTH_JSON);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(TRUTH_JSON);
        let text = serde_json::to_string_pretty(self).expect("truth serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// splitmix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn hash4(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    mix64(mix64(mix64(seed ^ a).wrapping_add(b)).wrapping_add(c))
}

#[inline]
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Channel carrying a class signature.
pub fn signature_channel(class: ClassLabel) -> usize {
    match class {
        ClassLabel::Idc => 0,
        ClassLabel::NonCarcinoma => 1,
        ClassLabel::Dcis => 2,
    }
}

struct Geometry {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    blob: Option<[(f64, f64); 2]>,
}

impl Geometry {
    fn new(l: &LesionSpec, seed: u64, idx: usize) -> Geometry {
        let blob = match l.shape {
            LesionShape::Ellipse => None,
            LesionShape::Blob => {
                let h = hash4(seed, 0xB10B, idx as u64, 0);
                let p1 = unit(h) * 2.0 * PI;
                let p2 = unit(mix64(h)) * 2.0 * PI;
                Some([(3.0, p1), (5.0, p2)])
            }
        };
        Geometry {
            cx: l.center.0,
            cy: l.center.1,
            a: l.axes.0,
            b: l.axes.1,
            blob,
        }
    }

    fn reach(&self) -> f64 {
        if self.blob.is_some() {
            1.0 + BLOB_AMPLITUDE
        } else {
            1.0
        }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        let u = (px - self.cx) / self.a;
        let v = (py - self.cy) / self.b;
        let rho2 = u * u + v * v;
        match &self.blob {
            None => rho2 <= 1.0,
            Some(harmonics) => {
                let theta = v.atan2(u);
                let wobble: f64 = harmonics.iter().map(|&(k, p)| (k * theta + p).sin()).sum::<f64>();
                let r = 1.0 + BLOB_AMPLITUDE * 0.5 * wobble;
                rho2 <= r * r
            }
        }
    }
}

/// Rasterizes lesions into a per-pixel label map (0 = background, i+1 = lesion i).
fn rasterize(spec: &SynthSpec) -> Result<Vec<u16>> {
    if spec.lesions.len() >= u16::MAX as usize {
        return Err(Error::validation("lesions", "too many lesions"));
    }
    let (w, h) = (spec.width, spec.height);
    let mut labels = vec![0u16; w * h];
    for (i, l) in spec.lesions.iter().enumerate() {
        let g = Geometry::new(l, spec.seed, i);
        let rx = g.a * g.reach();
        let ry = g.b * g.reach();
        let x0 = ((g.cx - rx).floor().max(0.0) as usize).min(w);
        let x1 = ((g.cx + rx).ceil().max(0.0) as usize + 1).min(w);
        let y0 = ((g.cy - ry).floor().max(0.0) as usize).min(h);
        let y1 = ((g.cy + ry).ceil().max(0.0) as usize + 1).min(h);
        let mut painted = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                if g.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    let slot = &mut labels[y * w + x];
                    if *slot != 0 {
                        return Err(Error::validation(
                            format!("lesions[{i}]"),
                            format!("overlaps lesion {}", *slot - 1),
                        ));
                    }
                    *slot = (i + 1) as u16;
                    painted += 1;
                }
            }
        }
        if painted == 0 {
            return Err(Error::validation(format!("lesions[{i}]"), "covers no pixel of the slide"));
        }
    }
    Ok(labels)
}

#[inline]
fn pixel_color(spec: &SynthSpec, x: usize, y: usize, label: u16) -> [u8; 3] {
    let seed = spec.seed;
    let h = hash4(seed, x as u64, y as u64, 0xC01);
    if label == 0 {
        return [240 + (h & 15) as u8, 240 + ((h >> 8) & 15) as u8, 240 + ((h >> 16) & 15) as u8];
    }
    let idx = (label - 1) as usize;
    let lesion = &spec.lesions[idx];
    let mut class = lesion.class;
    if lesion.texture_noise > 0.0 {
        let g = spec.noise_grain_px as u64;
        let gh = hash4(seed ^ 0x7E47, idx as u64, x as u64 / g, y as u64 / g);
        if unit(gh) < lesion.texture_noise {
            let others: Vec<ClassLabel> = ClassLabel::ALL.iter().copied().filter(|&c| c != class).collect();
            class = others[((gh >> 7) & 1) as usize];
        }
    }
    let dom = signature_channel(class);
    let mut rgb = [0u8; 3];
    for (c, v) in rgb.iter_mut().enumerate() {
        let jitter = ((h >> (24 + 8 * c)) % 31) as u8;
        *v = if c == dom { 185 + jitter } else { 55 + jitter };
    }
    rgb
}

/// Paints the level-0 image and computes the ground truth without writing anything.
pub fn render(spec: &SynthSpec, exec: Execution) -> Result<(RgbImage, GroundTruth)> {
    spec.validate()?;
    let labels = rasterize(spec)?;
    let (w, h) = (spec.width, spec.height);
    let rows: Vec<Vec<u8>> = exec.map_range(h, |y| {
        let mut row = Vec::with_capacity(w * 3);
        for x in 0..w {
            row.extend_from_slice(&pixel_color(spec, x, y, labels[y * w + x]));
        }
        row
    });
    let image = RgbImage::from_raw(w, h, rows.concat())?;

    let cal = PhysicalCalibration::isotropic(spec.mpp)?;
    struct Acc {
        runs: Vec<(u64, u64)>,
        bbox: (usize, usize, usize, usize),
        count: u64,
    }
    let mut accs: Vec<Acc> = (0..spec.lesions.len())
        .map(|_| Acc {
            runs: Vec::new(),
            bbox: (usize::MAX, usize::MAX, 0, 0),
            count: 0,
        })
        .collect();
    for (p, &lab) in labels.iter().enumerate() {
        if lab == 0 {
            continue;
        }
        let acc = &mut accs[(lab - 1) as usize];
        let (x, y) = (p % w, p / w);
        let b = &mut acc.bbox;
        *b = (b.0.min(x), b.1.min(y), b.2.max(x + 1), b.3.max(y + 1));
        acc.count += 1;
        match acc.runs.last_mut() {
            Some((s, len)) if *s + *len == p as u64 && x != 0 => *len += 1,
            _ => acc.runs.push((p as u64, 1)),
        }
    }
    let lesions: Vec<LesionTruth> = spec
        .lesions
        .iter()
        .zip(accs)
        .map(|(l, acc)| {
            let (x0, y0, x1, y1) = acc.bbox;
            LesionTruth {
                class: l.class,
                bbox: [x0, y0, x1 - x0, y1 - y0],
                area_mm2: acc.count as f64 * cal.pixel_area_mm2(),
                rle_mask: RunMask { runs: acc.runs }.encode(),
            }
        })
        .collect();
    let classes: Vec<ClassLabel> = spec.lesions.iter().map(|l| l.class).collect();
    let slide_label = max_severity(&classes).unwrap_or(ClassLabel::NonCarcinoma);
    Ok((image, GroundTruth { slide_label, lesions }))
}

/// Writes a slide container plus `truth.json` into `out`.
pub fn generate(spec: &SynthSpec, out: &Path) -> Result<GroundTruth> {
    generate_with(spec, out, Execution::default()).map(|(_, t)| t)
}

pub fn generate_with(spec: &SynthSpec, out: &Path, exec: Execution) -> Result<(SlideMetadata, GroundTruth)> {
    let (image, truth) = render(spec, exec)?;
    let opts = PyramidOptions {
        tile_size: spec.tile_size,
        min_level_dim: spec.tile_size,
        ..PyramidOptions::default()
    };
    let meta = write_slide(out, &spec.slide_id, &image, PhysicalCalibration::isotropic(spec.mpp)?, &opts)?;
    truth.save(out)?;
    Ok((meta, truth))
}

/// Parameters for a balanced cohort of synthetic slides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub slides_per_class: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub mpp: f64,
    /// Full lesion extent along x, mm.
    pub major_mm: (f64, f64),
    /// Full lesion extent along y, mm.
    pub minor_mm: (f64, f64),
    pub lesions_per_slide: usize,
    pub decoys_per_slide: usize,
    /// Diameter range of decoy (sub-threshold) lesions, mm.
    pub decoy_mm: (f64, f64),
    pub texture_noise: f64,
    pub noise_grain_px: usize,
    pub blob_fraction: f64,
    pub tile_size: usize,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            slides_per_class: 10,
            seed: 7,
            width: 4096,
            height: 4096,
            mpp: 1.0,
            major_mm: (1.5, 4.0),
            minor_mm: (1.2, 1.6),
            lesions_per_slide: 1,
            decoys_per_slide: 2,
            decoy_mm: (0.4, 0.8),
            texture_noise: 0.0,
            noise_grain_px: 1,
            blob_fraction: 0.3,
            tile_size: crate::pyramid::DEFAULT_TILE_SIZE,
        }
    }
}

impl CohortSpec {
    /// Lays out one slide per (class, index). The slide's primary lesions are
    /// stacked in horizontal bands from the top; decoys share a bottom band.
    /// Secondary primaries and decoys never exceed the slide class, so the
    /// slide label is always the class the slide was drawn for.
    pub fn slide_specs(&self) -> Result<Vec<SynthSpec>> {
        if self.lesions_per_slide == 0 {
            return Err(Error::validation("lesions_per_slide", "must be >= 1"));
        }
        let px = |mm: f64| mm * 1000.0 / self.mpp;
        let margin = px(0.04);
        let reach = 1.0 + BLOB_AMPLITUDE;
        let band_h = px(self.minor_mm.1) * reach + 2.0 * margin;
        let decoy_band = if self.decoys_per_slide > 0 {
            px(self.decoy_mm.1) + 2.0 * margin
        } else {
            0.0
        };
        if band_h * self.lesions_per_slide as f64 + decoy_band > self.height as f64 {
            return Err(Error::validation("cohort", "lesion bands do not fit the slide height"));
        }
        if px(self.major_mm.1) + 2.0 * margin > self.width as f64 {
            return Err(Error::validation("cohort", "major axis does not fit the slide width"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut specs = Vec::new();
        for class in ClassLabel::ALL {
            for k in 0..self.slides_per_class {
                let mut lesions = Vec::new();
                for j in 0..self.lesions_per_slide {
                    let lclass = if j == 0 {
                        class
                    } else {
                        ClassLabel::from_index(rng.random_range(0..=class.index())).expect("in range")
                    };
                    let blob = rng.random::<f64>() < self.blob_fraction;
                    let grow = if blob { reach } else { 1.0 };
                    let mut major = px(rng.random_range(self.major_mm.0..=self.major_mm.1));
                    major = major.min((self.width as f64 - 2.0 * margin) / grow);
                    let minor = px(rng.random_range(self.minor_mm.0..=self.minor_mm.1));
                    let (a, b) = (major / 2.0, minor / 2.0);
                    let free = self.width as f64 - 2.0 * margin - 2.0 * a * grow;
                    let cx = margin + a * grow + rng.random::<f64>() * free.max(0.0);
                    let top = j as f64 * band_h;
                    let cy = top + band_h / 2.0;
                    lesions.push(LesionSpec {
                        shape: if blob { LesionShape::Blob } else { LesionShape::Ellipse },
                        class: lclass,
                        center: (cx, cy),
                        axes: (a, b),
                        texture_noise: self.texture_noise,
                    });
                }
                let decoy_top = band_h * self.lesions_per_slide as f64;
                let spare = self.height as f64 - decoy_top;
                let slot_w = self.width as f64 / self.decoys_per_slide.max(1) as f64;
                for d in 0..self.decoys_per_slide {
                    let diam = px(rng.random_range(self.decoy_mm.0..=self.decoy_mm.1));
                    let r = diam / 2.0;
                    let cx = slot_w * (d as f64 + 0.5) + (rng.random::<f64>() - 0.5) * (slot_w - diam - 2.0 * margin).max(0.0);
                    let cy = decoy_top + spare / 2.0 + (rng.random::<f64>() - 0.5) * (spare - diam - 2.0 * margin).max(0.0);
                    let dclass = ClassLabel::from_index(rng.random_range(0..=class.index())).expect("in range");
                    lesions.push(LesionSpec {
                        shape: LesionShape::Ellipse,
                        class: dclass,
                        center: (cx, cy),
                        axes: (r, r),
                        texture_noise: self.texture_noise,
                    });
                }
                specs.push(SynthSpec {
                    slide_id: format!("{}_{:02}", class.as_str(), k),
                    seed: rng.random(),
                    width: self.width,
                    height: self.height,
                    mpp: self.mpp,
                    lesions,
                    noise_grain_px: self.noise_grain_px,
                    tile_size: self.tile_size,
                });
            }
        }
        Ok(specs)
    }
}

/// Generates every slide of a cohort under `out/<slide_id>`.
pub fn generate_cohort(cohort: &CohortSpec, out: &Path, exec: Execution) -> Result<Vec<(SynthSpec, GroundTruth)>> {
    let specs = cohort.slide_specs()?;
    let truths = exec.try_map_slice(&specs, |s| generate_with(s, &out.join(&s.slide_id), Execution::Sequential))?;
    Ok(specs.into_iter().zip(truths.into_iter().map(|(_, t)| t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_lesion(class: ClassLabel, radius_px: f64, noise: f64) -> SynthSpec {
        SynthSpec {
            slide_id: "t".into(),
            seed: 11,
            width: 1200,
            height: 1200,
            mpp: 2.0,
            lesions: vec![LesionSpec {
                shape: LesionShape::Ellipse,
                class,
                center: (600.0, 600.0),
                axes: (radius_px, radius_px),
                texture_noise: noise,
            }],
            noise_grain_px: 1,
            tile_size: 256,
        }
    }

    #[test]
    fn ellipse_area_matches_formula() {
        // 2 mm diameter at 2 µm/px: radius 500 px
        let (_, truth) = render(&one_lesion(ClassLabel::Idc, 500.0, 0.0), Execution::Sequential).unwrap();
        let expected = PI * 1.0 * 1.0;
        let got = truth.lesions[0].area_mm2;
        assert!((got - expected).abs() / expected < 0.02, "{got} vs {expected}");
        assert_eq!(truth.slide_label, ClassLabel::Idc);
    }

    #[test]
    fn area_is_pixel_count_times_pixel_area() {
        let (_, truth) = render(&one_lesion(ClassLabel::Dcis, 123.4, 0.0), Execution::Sequential).unwrap();
        let l = &truth.lesions[0];
        let n = l.mask().unwrap().pixel_count();
        assert_eq!(l.area_mm2, n as f64 * (2.0 * 2.0) / 1e6);
    }

    #[test]
    fn empty_spec_is_non_carcinoma() {
        let mut s = one_lesion(ClassLabel::Idc, 10.0, 0.0);
        s.lesions.clear();
        let (img, truth) = render(&s, Execution::Sequential).unwrap();
        assert_eq!(truth.slide_label, ClassLabel::NonCarcinoma);
        assert!(truth.lesions.is_empty());
        assert!(img.as_raw().iter().all(|&v| v >= 240));
    }

    #[test]
    fn overlapping_lesions_rejected() {
        let mut s = one_lesion(ClassLabel::Idc, 100.0, 0.0);
        let mut second = s.lesions[0].clone();
        second.center.0 += 150.0;
        s.lesions.push(second);
        assert!(matches!(render(&s, Execution::Sequential), Err(Error::Validation { .. })));
    }

    #[test]
    fn signature_colours_without_noise() {
        for class in ClassLabel::ALL {
            let spec = one_lesion(class, 80.0, 0.0);
            let (img, truth) = render(&spec, Execution::Sequential).unwrap();
            let mask = truth.lesions[0].mask().unwrap();
            let dom = signature_channel(class);
            let mut good = 0u64;
            for (y, x0, x1) in mask.row_segments(spec.width) {
                for x in x0..x1 {
                    let p = img.get(x as usize, y as usize);
                    if (0..3).all(|c| c == dom || p[dom] as i32 >= p[c] as i32 + 40) {
                        good += 1;
                    }
                }
            }
            assert!(good as f64 >= 0.99 * mask.pixel_count() as f64);
        }
    }

    #[test]
    fn rle_round_trip_and_lookup() {
        let m = RunMask {
            runs: vec![(3, 2), (10, 5)],
        };
        let back = RunMask::decode(&m.encode()).unwrap();
        assert_eq!(back, m);
        assert!(m.contains_index(4) && !m.contains_index(5) && m.contains_index(14) && !m.contains_index(15));
        assert!(RunMask::decode("5:1,2:1").is_err());
        assert!(RunMask::decode("x").is_err());
        // run crossing a row boundary is split per row
        let segs: Vec<_> = RunMask { runs: vec![(3, 4)] }.row_segments(5).collect();
        assert_eq!(segs, vec![(0, 3, 5), (1, 0, 2)]);
    }

    #[test]
    fn seeded_generation_is_byte_identical() {
        let spec = one_lesion(ClassLabel::Dcis, 150.0, 0.3);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(&spec, a.path()).unwrap();
        generate_with(&spec, b.path(), Execution::Sequential).unwrap();
        for entry in walk(a.path()) {
            let rel = entry.strip_prefix(a.path()).unwrap();
            assert_eq!(fs::read(&entry).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel:?}");
        }
    }

    fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn cohort_layout_is_valid_and_labelled() {
        let cohort = CohortSpec {
            slides_per_class: 2,
            width: 1024,
            height: 1024,
            mpp: 4.0,
            ..CohortSpec::default()
        };
        for spec in cohort.slide_specs().unwrap() {
            let (_, truth) = render(&spec, Execution::Sequential).unwrap();
            assert!(spec.slide_id.starts_with(truth.slide_label.as_str()));
            assert_eq!(truth.lesions.len(), 1 + cohort.decoys_per_slide);
            let cal = PhysicalCalibration::isotropic(cohort.mpp).unwrap();
            let min = match spec.lesions[0].shape {
                LesionShape::Ellipse => 1.499,
                LesionShape::Blob => 1.2,
            };
            assert!(truth.lesions[0].size_mm(&cal) >= min);
            for d in &truth.lesions[1..] {
                assert!(d.size_mm(&cal) <= 0.81);
            }
        }
    }
}
