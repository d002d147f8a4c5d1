//! Detection stage: heatmap scan, connected components, size-filtered
//! region proposals.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::inference::{detect_prob, f32_from_le_bytes, f32_to_le_bytes, PatchBackend};
use crate::pyramid::{Patch, Slide, SlideMetadata};
use crate::raster::save_gray_png;

pub const HEATMAP_JSON: &str = "heatmap.json";
pub const HEATMAP_F32: &str = "heatmap.f32";
pub const HEATMAP_PNG: &str = "heatmap.png";
pub const REGIONS_JSON: &str = "regions.json";

/// Patches whose mean luminance reaches this value are treated as empty glass.
pub const TISSUE_LUMINANCE_MAX: f64 = 240.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub level: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub tissue_filter: bool,
}

/// Per-cell lesion probability at the detection level. Cell `(r, c)` is the
/// patch with top-left `(c * stride, r * stride)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub level: usize,
    pub stride: usize,
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
    #[serde(skip)]
    pub grid: Vec<f32>,
}

/// Number of patch positions along an axis of `len` pixels.
pub fn grid_len(len: usize, patch: usize, stride: usize) -> usize {
    if len <= patch {
        1
    } else {
        (len - patch).div_ceil(stride) + 1
    }
}

impl Heatmap {
    pub fn from_rows(rows: &[Vec<f32>], patch_size: usize, stride: usize) -> Result<Heatmap> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::validation("grid", "heatmap rows must be non-empty and equal length"));
        }
        let hm = Heatmap {
            level: 0,
            stride,
            patch_size,
            rows: rows.len(),
            cols,
            grid: rows.concat(),
        };
        hm.validate()?;
        Ok(hm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.len() != self.rows * self.cols {
            return Err(Error::validation("grid", "size does not match rows x cols"));
        }
        if self.stride == 0 || self.stride > self.patch_size {
            return Err(Error::validation("stride", "must satisfy 0 < stride <= patch_size"));
        }
        if self.grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation("grid", "cells must lie in [0, 1]"));
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.grid[row * self.cols + col]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let jp = dir.join(HEATMAP_JSON);
        fs::write(&jp, serde_json::to_string_pretty(self).expect("heatmap serializes")).map_err(|e| Error::io(&jp, e))?;
        let fp = dir.join(HEATMAP_F32);
        fs::write(&fp, f32_to_le_bytes(&self.grid)).map_err(|e| Error::io(&fp, e))?;
        let gray: Vec<u8> = self.grid.iter().map(|&p| (255.0 * p as f64).round() as u8).collect();
        save_gray_png(&dir.join(HEATMAP_PNG), self.cols, self.rows, &gray)
    }

    pub fn load(dir: &Path) -> Result<Heatmap> {
        let jp = dir.join(HEATMAP_JSON);
        let text = fs::read_to_string(&jp).map_err(|e| Error::io(&jp, e))?;
        let mut hm: Heatmap = serde_json::from_str(&text).map_err(|e| Error::format(&jp, e.to_string()))?;
        let fp = dir.join(HEATMAP_F32);
        let bytes = fs::read(&fp).map_err(|e| Error::io(&fp, e))?;
        hm.grid = f32_from_le_bytes(&fp, &bytes, hm.rows * hm.cols)?;
        hm.validate()?;
        Ok(hm)
    }
}

/// Rec. 601 luma averaged over the patch.
pub fn mean_luminance(patch: &Patch) -> f64 {
    let sum: f64 = patch
        .pixel_iter()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .sum();
    sum / (patch.size * patch.size) as f64
}

pub fn scan(slide: &Slide, backend: &dyn PatchBackend, cfg: &ScanConfig) -> Result<Heatmap> {
    scan_with(slide, backend, cfg, Execution::default())
}

pub fn scan_with(slide: &Slide, backend: &dyn PatchBackend, cfg: &ScanConfig, exec: Execution) -> Result<Heatmap> {
    let lv = slide.metadata().level(cfg.level)?.clone();
    if cfg.patch_size == 0 || cfg.stride == 0 || cfg.stride > cfg.patch_size {
        return Err(Error::validation("stride", "must satisfy 0 < stride <= patch_size"));
    }
    let rows = grid_len(lv.height, cfg.patch_size, cfg.stride);
    let cols = grid_len(lv.width, cfg.patch_size, cfg.stride);
    let cells = exec.map_range(rows * cols, |i| -> Result<f32> {
        let (r, c) = (i / cols, i % cols);
        let patch = slide.read_patch(
            cfg.level,
            (c * cfg.stride) as i64,
            (r * cfg.stride) as i64,
            cfg.patch_size,
        )?;
        if cfg.tissue_filter && mean_luminance(&patch) >= TISSUE_LUMINANCE_MAX {
            return Ok(0.0);
        }
        Ok(detect_prob(backend, &patch)?.probability as f32)
    });
    let grid = cells.into_iter().collect::<Result<Vec<f32>>>()?;
    Ok(Heatmap {
        level: cfg.level,
        stride: cfg.stride,
        patch_size: cfg.patch_size,
        rows,
        cols,
        grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::validation("connectivity", format!("must be 4 or 8, got {other}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
        }
    }
}

pub type Cell = (usize, usize);

/// Maximal connected sets of cells with value `>= threshold`. Components are
/// ordered by their first cell in row-major order; cells within a component
/// are sorted row-major.
pub fn extract_components(heatmap: &Heatmap, threshold: f64, connectivity: Connectivity) -> Vec<Vec<Cell>> {
    let (rows, cols) = (heatmap.rows, heatmap.cols);
    let on = |r: usize, c: usize| heatmap.get(r, c) as f64 >= threshold;
    let mut seen = vec![false; rows * cols];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for r0 in 0..rows {
        for c0 in 0..cols {
            if seen[r0 * cols + c0] || !on(r0, c0) {
                continue;
            }
            seen[r0 * cols + c0] = true;
            queue.push_back((r0, c0));
            let mut comp = Vec::new();
            while let Some((r, c)) = queue.pop_front() {
                comp.push((r, c));
                for &(dr, dc) in connectivity.offsets() {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    if !seen[nr * cols + nc] && on(nr, nc) {
                        seen[nr * cols + nc] = true;
                        queue.push_back((nr, nc));
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
    }
    out
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Union of detection-cell footprints, rasterized on square level-0 blocks.
///
/// Block side is `gcd(stride, patch_size) * downsample`, which makes every
/// union of cell footprints exactly representable.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    block: u64,
    bx0: u64,
    by0: u64,
    cols: u64,
    rows: u64,
    mask: Vec<bool>,
    width0: u64,
    height0: u64,
}

impl Footprint {
    pub fn from_cells(cells: &[Cell], heatmap: &Heatmap, meta: &SlideMetadata) -> Result<Footprint> {
        let ds = meta.level(heatmap.level)?.downsample as u64;
        let g = gcd(heatmap.stride, heatmap.patch_size) as u64;
        let (s, p) = (heatmap.stride as u64 / g, heatmap.patch_size as u64 / g);
        let block = g * ds;
        let (width0, height0) = (meta.width0 as u64, meta.height0 as u64);
        let max_bx = width0.div_ceil(block);
        let max_by = height0.div_ceil(block);
        let span = |c: usize, max: u64| ((c as u64 * s).min(max), (c as u64 * s + p).min(max));
        let mut bx0 = u64::MAX;
        let mut by0 = u64::MAX;
        let mut bx1 = 0;
        let mut by1 = 0;
        for &(r, c) in cells {
            let (x0, x1) = span(c, max_bx);
            let (y0, y1) = span(r, max_by);
            if x0 < x1 && y0 < y1 {
                bx0 = bx0.min(x0);
                by0 = by0.min(y0);
                bx1 = bx1.max(x1);
                by1 = by1.max(y1);
            }
        }
        if bx0 == u64::MAX {
            return Err(Error::validation("cells", "footprint lies outside the slide"));
        }
        let cols = bx1 - bx0;
        let rows = by1 - by0;
        let mut mask = vec![false; (cols * rows) as usize];
        for &(r, c) in cells {
            let (x0, x1) = span(c, max_bx);
            let (y0, y1) = span(r, max_by);
            for by in y0..y1 {
                for bx in x0..x1 {
                    mask[((by - by0) * cols + (bx - bx0)) as usize] = true;
                }
            }
        }
        Ok(Footprint {
            block,
            bx0,
            by0,
            cols,
            rows,
            mask,
            width0,
            height0,
        })
    }

    fn block_rect(&self, bx: u64, by: u64) -> (u64, u64, u64, u64) {
        let x0 = bx * self.block;
        let y0 = by * self.block;
        (x0, y0, (x0 + self.block).min(self.width0), (y0 + self.block).min(self.height0))
    }

    /// `[x, y, w, h]` in level-0 pixels.
    pub fn bbox(&self) -> [u64; 4] {
        let (x0, y0, _, _) = self.block_rect(self.bx0, self.by0);
        let (_, _, x1, y1) = self.block_rect(self.bx0 + self.cols - 1, self.by0 + self.rows - 1);
        [x0, y0, x1 - x0, y1 - y0]
    }

    /// Covered level-0 pixels.
    pub fn area_px(&self) -> u64 {
        self.overlap([0, 0, self.width0 as i64, self.height0 as i64])
    }

    /// Covered level-0 pixels inside `[x, y, w, h]`.
    pub fn overlap(&self, rect: [i64; 4]) -> u64 {
        let [x, y, w, h] = rect;
        if w <= 0 || h <= 0 {
            return 0;
        }
        let b = self.block as i64;
        let cbx0 = (x.div_euclid(b)).max(self.bx0 as i64);
        let cbx1 = ((x + w - 1).div_euclid(b) + 1).min((self.bx0 + self.cols) as i64);
        let cby0 = (y.div_euclid(b)).max(self.by0 as i64);
        let cby1 = ((y + h - 1).div_euclid(b) + 1).min((self.by0 + self.rows) as i64);
        let mut total = 0u64;
        for by in cby0..cby1 {
            for bx in cbx0..cbx1 {
                let (bxu, byu) = (bx as u64, by as u64);
                if !self.mask[((byu - self.by0) * self.cols + (bxu - self.bx0)) as usize] {
                    continue;
                }
                let (rx0, ry0, rx1, ry1) = self.block_rect(bxu, byu);
                let ix = (x + w).min(rx1 as i64) - x.max(rx0 as i64);
                let iy = (y + h).min(ry1 as i64) - y.max(ry0 as i64);
                if ix > 0 && iy > 0 {
                    total += (ix * iy) as u64;
                }
            }
        }
        total
    }

    /// Number of covered level-0 pixels in each row segment `[x0, x1)` of row `y`.
    pub fn overlap_row(&self, y: u64, x0: u64, x1: u64) -> u64 {
        self.overlap([x0 as i64, y as i64, (x1 - x0) as i64, 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProposal {
    pub region_id: usize,
    pub bbox_level0: [u64; 4],
    pub size_mm: f64,
    pub area_mm2: f64,
    pub cells: Vec<Cell>,
}

impl RegionProposal {
    pub fn footprint(&self, heatmap: &Heatmap, meta: &SlideMetadata) -> Result<Footprint> {
        Footprint::from_cells(&self.cells, heatmap, meta)
    }
}

/// Largest physical bbox side in mm.
pub fn size_mm(bbox_w: u64, bbox_h: u64, meta: &SlideMetadata) -> f64 {
    let c = meta.calibration;
    (bbox_w as f64 * c.mpp_x).max(bbox_h as f64 * c.mpp_y) / 1000.0
}

/// Maps components to level-0 geometry and keeps those at least
/// `min_size_mm` across.
pub fn propose_regions(
    components: &[Vec<Cell>],
    heatmap: &Heatmap,
    meta: &SlideMetadata,
    min_size_mm: f64,
) -> Result<Vec<RegionProposal>> {
    if !(min_size_mm > 0.0 && min_size_mm.is_finite()) {
        return Err(Error::validation("min_size_mm", "must be positive"));
    }
    let mut out = Vec::new();
    for comp in components {
        let fp = Footprint::from_cells(comp, heatmap, meta)?;
        let bbox = fp.bbox();
        let size = size_mm(bbox[2], bbox[3], meta);
        if size >= min_size_mm {
            out.push(RegionProposal {
                region_id: out.len(),
                bbox_level0: bbox,
                size_mm: size,
                area_mm2: fp.area_px() as f64 * meta.calibration.pixel_area_mm2(),
                cells: comp.clone(),
            });
        }
    }
    Ok(out)
}

pub fn save_regions(regions: &[RegionProposal], dir: &Path) -> Result<()> {
    let p = dir.join(REGIONS_JSON);
    fs::write(&p, serde_json::to_string_pretty(regions).expect("regions serialize")).map_err(|e| Error::io(&p, e))
}

pub fn load_regions(dir: &Path) -> Result<Vec<RegionProposal>> {
    let p = dir.join(REGIONS_JSON);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
}
