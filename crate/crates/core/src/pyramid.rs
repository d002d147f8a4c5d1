//! Tiled multi-level slide container.
//!
//! On disk a slide is a directory:
//!
//! ```text
//! slide.json
//! level_0/tile_0_0.png  tile_0_1.png ...
//! level_1/...
//! ```
//!
//! Tiles are 8-bit RGB PNGs of `tile_size` pixels (edge tiles are cropped to
//! the image). Reads outside the image are padded with white.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::PhysicalCalibration;
use crate::raster::RgbImage;

pub const SLIDE_JSON: &str = "slide.json";
pub const DEFAULT_TILE_SIZE: usize = 512;
pub const PAD_VALUE: u8 = 255;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub index: usize,
    pub downsample: u32,
    pub width: usize,
    pub height: usize,
}

/// Parsed and validated `slide.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideMetadata {
    pub slide_id: String,
    pub width0: usize,
    pub height0: usize,
    pub calibration: PhysicalCalibration,
    pub tile_size: usize,
    pub levels: Vec<LevelInfo>,
}

#[derive(Serialize, Deserialize)]
struct SlideJson {
    slide_id: String,
    width: usize,
    height: usize,
    mpp_x: f64,
    mpp_y: f64,
    tile_size: usize,
    levels: Vec<LevelInfo>,
}

impl SlideMetadata {
    pub fn validate(&self) -> Result<()> {
        self.calibration.validate()?;
        if self.slide_id.is_empty() {
            return Err(Error::validation("slide_id", "must not be empty"));
        }
        if self.width0 == 0 || self.height0 == 0 {
            return Err(Error::validation("width/height", "level-0 dimensions must be positive"));
        }
        if !self.tile_size.is_power_of_two() {
            return Err(Error::validation("tile_size", format!("{} is not a power of two", self.tile_size)));
        }
        let Some(first) = self.levels.first() else {
            return Err(Error::validation("levels", "no levels"));
        };
        if first.downsample != 1 {
            return Err(Error::validation("levels", "level 0 must have downsample 1"));
        }
        for (i, lv) in self.levels.iter().enumerate() {
            if lv.index != i {
                return Err(Error::validation("levels", format!("level at position {i} has index {}", lv.index)));
            }
            if i > 0 && lv.downsample <= self.levels[i - 1].downsample {
                return Err(Error::validation("levels", "downsample not increasing"));
            }
            let ds = lv.downsample as usize;
            if lv.width != self.width0.div_ceil(ds) || lv.height != self.height0.div_ceil(ds) {
                return Err(Error::validation(
                    "levels",
                    format!(
                        "level {i} is {}x{}, expected {}x{}",
                        lv.width,
                        lv.height,
                        self.width0.div_ceil(ds),
                        self.height0.div_ceil(ds)
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn level(&self, level: usize) -> Result<&LevelInfo> {
        self.levels.get(level).ok_or(Error::Range {
            what: "level",
            index: level,
            available: self.levels.len(),
        })
    }

    /// Level-`level` pixel coordinates to level 0.
    pub fn to_level0(&self, level: usize, x: i64, y: i64) -> Result<(i64, i64)> {
        let ds = self.level(level)?.downsample as i64;
        Ok((x * ds, y * ds))
    }

    /// Microns per pixel at `level`, per axis.
    pub fn mpp_at_level(&self, level: usize) -> Result<(f64, f64)> {
        let ds = self.level(level)?.downsample as f64;
        Ok((self.calibration.mpp_x * ds, self.calibration.mpp_y * ds))
    }

    /// The level whose mean mpp is closest to `target`; ties go to the finer level.
    pub fn level_closest_to_mpp(&self, target: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for lv in &self.levels {
            let ds = lv.downsample as f64;
            let mpp = 0.5 * (self.calibration.mpp_x + self.calibration.mpp_y) * ds;
            let d = (mpp - target).abs();
            if d < best_d {
                best_d = d;
                best = lv.index;
            }
        }
        best
    }

    fn to_json(&self) -> SlideJson {
        SlideJson {
            slide_id: self.slide_id.clone(),
            width: self.width0,
            height: self.height0,
            mpp_x: self.calibration.mpp_x,
            mpp_y: self.calibration.mpp_y,
            tile_size: self.tile_size,
            levels: self.levels.clone(),
        }
    }
}

/// Reads and validates `slide.json` in `dir`.
pub fn read_metadata(dir: &Path) -> Result<SlideMetadata> {
    let path = dir.join(SLIDE_JSON);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(&path, "slide.json not found"),
        _ => Error::io(&path, e),
    })?;
    let raw: SlideJson = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let meta = SlideMetadata {
        slide_id: raw.slide_id,
        width0: raw.width,
        height0: raw.height,
        calibration: PhysicalCalibration {
            mpp_x: raw.mpp_x,
            mpp_y: raw.mpp_y,
        },
        tile_size: raw.tile_size,
        levels: raw.levels,
    };
    meta.validate()?;
    Ok(meta)
}

/// An RGB patch read from one pyramid level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub slide_id: String,
    pub level: usize,
    pub x: i64,
    pub y: i64,
    pub size: usize,
    pub pixels: Vec<u8>,
}

impl Patch {
    pub fn from_image(slide_id: impl Into<String>, level: usize, x: i64, y: i64, img: &RgbImage) -> Result<Patch> {
        if img.width() != img.height() {
            return Err(Error::validation("patch", "patches are square"));
        }
        Ok(Patch {
            slide_id: slide_id.into(),
            level,
            x,
            y,
            size: img.width(),
            pixels: img.as_raw().to_vec(),
        })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.size + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn pixel_iter(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_raw(self.size, self.size, self.pixels.clone()).expect("patch buffer is size^2*3")
    }

    pub fn is_well_formed(&self) -> bool {
        self.size > 0 && self.pixels.len() == self.size * self.size * 3
    }
}

type TileSlot = OnceLock<Arc<RgbImage>>;

/// An opened slide container with a lazily filled tile cache.
///
/// Reading is `&self` and thread-safe; each tile is decoded at most once
/// per successful read.
#[derive(Debug)]
pub struct Slide {
    root: PathBuf,
    meta: SlideMetadata,
    tiles: Vec<Vec<TileSlot>>,
}

pub fn open_slide(dir: &Path) -> Result<Slide> {
    Slide::open(dir)
}

impl Slide {
    pub fn open(dir: &Path) -> Result<Slide> {
        let meta = read_metadata(dir)?;
        let tiles = meta
            .levels
            .iter()
            .map(|lv| {
                let n = lv.width.div_ceil(meta.tile_size) * lv.height.div_ceil(meta.tile_size);
                (0..n).map(|_| OnceLock::new()).collect()
            })
            .collect();
        Ok(Slide {
            root: dir.to_path_buf(),
            meta,
            tiles,
        })
    }

    pub fn metadata(&self) -> &SlideMetadata {
        &self.meta
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn slide_id(&self) -> &str {
        &self.meta.slide_id
    }

    fn tile(&self, level: usize, row: usize, col: usize) -> Result<Arc<RgbImage>> {
        let lv = &self.meta.levels[level];
        let ts = self.meta.tile_size;
        let cols = lv.width.div_ceil(ts);
        let slot = &self.tiles[level][row * cols + col];
        if let Some(t) = slot.get() {
            return Ok(t.clone());
        }
        let path = self.root.join(format!("level_{level}")).join(format!("tile_{row}_{col}.png"));
        let img = RgbImage::load_png(&path)?;
        let ew = ts.min(lv.width - col * ts);
        let eh = ts.min(lv.height - row * ts);
        if img.width() != ew || img.height() != eh {
            return Err(Error::format(
                &path,
                format!("tile is {}x{}, expected {ew}x{eh}", img.width(), img.height()),
            ));
        }
        Ok(slot.get_or_init(|| Arc::new(img)).clone())
    }

    /// Reads a `size x size` patch with top-left `(x, y)` in level pixels.
    /// Pixels outside the level are white.
    pub fn read_patch(&self, level: usize, x: i64, y: i64, size: usize) -> Result<Patch> {
        let lv = self.meta.level(level)?;
        if size == 0 {
            return Err(Error::validation("size", "patch size must be positive"));
        }
        let mut pixels = vec![PAD_VALUE; size * size * 3];
        let ts = self.meta.tile_size as i64;
        let (lw, lh) = (lv.width as i64, lv.height as i64);
        let x0 = x.max(0);
        let y0 = y.max(0);
        let x1 = (x + size as i64).min(lw);
        let y1 = (y + size as i64).min(lh);
        if x0 < x1 && y0 < y1 {
            for trow in (y0 / ts)..=((y1 - 1) / ts) {
                for tcol in (x0 / ts)..=((x1 - 1) / ts) {
                    let tile = self.tile(level, trow as usize, tcol as usize)?;
                    let tx0 = tcol * ts;
                    let ty0 = trow * ts;
                    let cx0 = x0.max(tx0);
                    let cx1 = x1.min(tx0 + tile.width() as i64);
                    let cy0 = y0.max(ty0);
                    let cy1 = y1.min(ty0 + tile.height() as i64);
                    let n = ((cx1 - cx0) * 3) as usize;
                    for gy in cy0..cy1 {
                        let src = (((gy - ty0) as usize * tile.width()) + (cx0 - tx0) as usize) * 3;
                        let dst = (((gy - y) as usize * size) + (cx0 - x) as usize) * 3;
                        pixels[dst..dst + n].copy_from_slice(&tile.as_raw()[src..src + n]);
                    }
                }
            }
        }
        Ok(Patch {
            slide_id: self.meta.slide_id.clone(),
            level,
            x,
            y,
            size,
            pixels,
        })
    }

    pub fn to_level0(&self, level: usize, x: i64, y: i64) -> Result<(i64, i64)> {
        self.meta.to_level0(level, x, y)
    }

    pub fn mpp_at_level(&self, level: usize) -> Result<(f64, f64)> {
        self.meta.mpp_at_level(level)
    }

    /// Reads an entire level into memory.
    pub fn read_level(&self, level: usize) -> Result<RgbImage> {
        let lv = self.meta.level(level)?.clone();
        let ts = self.meta.tile_size;
        let mut out = RgbImage::new(lv.width, lv.height);
        for row in 0..lv.height.div_ceil(ts) {
            for col in 0..lv.width.div_ceil(ts) {
                let tile = self.tile(level, row, col)?;
                for ty in 0..tile.height() {
                    for tx in 0..tile.width() {
                        out.put(col * ts + tx, row * ts + ty, tile.get(tx, ty));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Pyramid writer options.
#[derive(Debug, Clone)]
pub struct PyramidOptions {
    pub tile_size: usize,
    /// Add power-of-two levels until both dimensions fit in this many pixels.
    pub min_level_dim: usize,
    pub max_levels: usize,
}

impl Default for PyramidOptions {
    fn default() -> Self {
        PyramidOptions {
            tile_size: DEFAULT_TILE_SIZE,
            min_level_dim: DEFAULT_TILE_SIZE,
            max_levels: 8,
        }
    }
}

/// Writes a slide container from a level-0 image, building power-of-two
/// levels by 2x2 box averaging.
pub fn write_slide(
    dir: &Path,
    slide_id: &str,
    level0: &RgbImage,
    calibration: PhysicalCalibration,
    opts: &PyramidOptions,
) -> Result<SlideMetadata> {
    let mut images = vec![level0.clone()];
    while images.len() < opts.max_levels.max(1) {
        let last = images.last().expect("non-empty");
        if last.width() <= opts.min_level_dim && last.height() <= opts.min_level_dim {
            break;
        }
        images.push(last.downsample2());
    }
    let levels = images
        .iter()
        .enumerate()
        .map(|(i, img)| LevelInfo {
            index: i,
            downsample: 1 << i,
            width: img.width(),
            height: img.height(),
        })
        .collect();
    let meta = SlideMetadata {
        slide_id: slide_id.to_string(),
        width0: level0.width(),
        height0: level0.height(),
        calibration,
        tile_size: opts.tile_size,
        levels,
    };
    meta.validate()?;
    write_levels(dir, &meta, &images)?;
    Ok(meta)
}

/// Writes `slide.json` and tiles for pre-built level images. The reader
/// accepts any increasing integer downsample list, so this is also how
/// non-power-of-two pyramids are produced.
pub fn write_levels(dir: &Path, meta: &SlideMetadata, images: &[RgbImage]) -> Result<()> {
    meta.validate()?;
    if images.len() != meta.levels.len() {
        return Err(Error::validation("levels", "one image per level required"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ts = meta.tile_size;
    for (lv, img) in meta.levels.iter().zip(images) {
        if img.width() != lv.width || img.height() != lv.height {
            return Err(Error::validation("levels", format!("image for level {} has wrong size", lv.index)));
        }
        let ldir = dir.join(format!("level_{}", lv.index));
        fs::create_dir_all(&ldir).map_err(|e| Error::io(&ldir, e))?;
        for row in 0..lv.height.div_ceil(ts) {
            for col in 0..lv.width.div_ceil(ts) {
                let x = col * ts;
                let y = row * ts;
                let tile = img.crop(x, y, ts.min(lv.width - x), ts.min(lv.height - y));
                tile.save_png(&ldir.join(format!("tile_{row}_{col}.png")))?;
            }
        }
    }
    let path = dir.join(SLIDE_JSON);
    let text = serde_json::to_string_pretty(&meta.to_json()).expect("metadata serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
