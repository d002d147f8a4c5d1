//! Feature tables (`features.json` + `features.f32`) and the hand-crafted
//! patch descriptor used by the linear backend.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::ClassLabel;
use crate::pyramid::Patch;

pub const FEATURES_JSON: &str = "features.json";
pub const FEATURES_F32: &str = "features.f32";

/// Where a feature row came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRef {
    pub slide_id: String,
    pub level: usize,
    pub x: i64,
    pub y: i64,
    pub size: usize,
}

impl PatchRef {
    pub fn of(patch: &Patch) -> PatchRef {
        PatchRef {
            slide_id: patch.slide_id.clone(),
            level: patch.level,
            x: patch.x,
            y: patch.y,
            size: patch.size,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    f: usize,
    labels: Option<Vec<ClassLabel>>,
    patch_refs: Option<Vec<PatchRef>>,
}

/// `n x f` activations, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    n: usize,
    f: usize,
    data: Vec<f32>,
    pub labels: Option<Vec<ClassLabel>>,
    pub patch_refs: Option<Vec<PatchRef>>,
}

impl FeatureTable {
    pub fn new(n: usize, f: usize, data: Vec<f32>) -> Result<FeatureTable> {
        let t = FeatureTable {
            n,
            f,
            data,
            labels: None,
            patch_refs: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<FeatureTable> {
        let f = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != f) {
            return Err(Error::validation("rows", "rows have different lengths"));
        }
        FeatureTable::new(rows.len(), f, rows.concat())
    }

    pub fn with_labels(mut self, labels: Vec<ClassLabel>) -> Result<FeatureTable> {
        self.labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn with_patch_refs(mut self, refs: Vec<PatchRef>) -> Result<FeatureTable> {
        self.patch_refs = Some(refs);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("n", "feature table must have at least one row"));
        }
        if self.data.len() != self.n * self.f {
            return Err(Error::validation("data", format!("{} values for {}x{}", self.data.len(), self.n, self.f)));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(
                "activations",
                format!("non-finite value at row {} column {}", i / self.f.max(1), i % self.f.max(1)),
            ));
        }
        if self.labels.as_ref().is_some_and(|l| l.len() != self.n) {
            return Err(Error::validation("labels", "one label per row required"));
        }
        if self.patch_refs.as_ref().is_some_and(|r| r.len() != self.n) {
            return Err(Error::validation("patch_refs", "one reference per row required"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.f..(i + 1) * self.f]
    }

    pub fn column(&self, j: usize) -> Vec<f32> {
        (0..self.n).map(|i| self.data[i * self.f + j]).collect()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Reference of row `i`, falling back to a synthetic `row_{i}` id.
    pub fn patch_ref(&self, i: usize) -> PatchRef {
        match &self.patch_refs {
            Some(r) => r[i].clone(),
            None => PatchRef {
                slide_id: format!("row_{i}"),
                level: 0,
                x: 0,
                y: 0,
                size: 0,
            },
        }
    }

    pub fn index_by_ref(&self) -> HashMap<PatchRef, usize> {
        self.patch_refs
            .iter()
            .flatten()
            .enumerate()
            .map(|(i, r)| (r.clone(), i))
            .collect()
    }
}

/// Writes `features.json` and `features.f32` into `dir`.
pub fn save_features(table: &FeatureTable, dir: &Path) -> Result<()> {
    table.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = Header {
        n: table.n,
        f: table.f,
        labels: table.labels.clone(),
        patch_refs: table.patch_refs.clone(),
    };
    let hp = dir.join(FEATURES_JSON);
    fs::write(&hp, serde_json::to_string_pretty(&header).expect("header serializes")).map_err(|e| Error::io(&hp, e))?;
    let pp = dir.join(FEATURES_F32);
    fs::write(&pp, f32_to_le_bytes(&table.data)).map_err(|e| Error::io(&pp, e))
}

pub fn load_features(dir: &Path) -> Result<FeatureTable> {
    let hp = dir.join(FEATURES_JSON);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::format(&hp, e.to_string()))?;
    if header.n == 0 {
        return Err(Error::validation("n", "feature table must have at least one row"));
    }
    let pp = dir.join(FEATURES_F32);
    let bytes = fs::read(&pp).map_err(|e| Error::io(&pp, e))?;
    let data = f32_from_le_bytes(&pp, &bytes, header.n * header.f)?;
    let table = FeatureTable {
        n: header.n,
        f: header.f,
        data,
        labels: header.labels,
        patch_refs: header.patch_refs,
    };
    table.validate()?;
    Ok(table)
}

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Decodes exactly `count` little-endian floats.
pub fn f32_from_le_bytes(path: &Path, bytes: &[u8], count: usize) -> Result<Vec<f32>> {
    let expected = count * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, expected {expected}", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Length of [`handcrafted_features`].
pub const HANDCRAFTED_DIM: usize = 34;

/// Fixed 34-value colour/texture descriptor:
///
/// * `0..3`   per-channel mean / 255
/// * `3..6`   per-channel variance / 255²
/// * `6..30`  8-bin histogram per channel (fractions), R bins then G then B
/// * `30..34` luminance gradients: mean |dx|, mean |dy|, mean dx²+dy², and the
///   fraction of pixels whose gradient magnitude exceeds 0.125
pub fn handcrafted_features(patch: &Patch) -> Vec<f64> {
    let n = (patch.size * patch.size) as f64;
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    let mut hist = [[0f64; 8]; 3];
    for p in patch.pixel_iter() {
        for c in 0..3 {
            let v = p[c] as f64 / 255.0;
            sum[c] += v;
            sq[c] += v * v;
            hist[c][(p[c] / 32) as usize] += 1.0;
        }
    }
    let mut out = Vec::with_capacity(HANDCRAFTED_DIM);
    let mean = sum.map(|s| s / n);
    out.extend_from_slice(&mean);
    for c in 0..3 {
        out.push((sq[c] / n - mean[c] * mean[c]).max(0.0));
    }
    for h in &hist {
        out.extend(h.iter().map(|v| v / n));
    }

    let s = patch.size;
    let lum = |x: usize, y: usize| {
        let p = patch.pixel(x, y);
        (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
    };
    let (mut adx, mut ady, mut energy, mut strong) = (0.0, 0.0, 0.0, 0.0);
    for y in 0..s {
        for x in 0..s {
            let l = lum(x, y);
            let dx = if x + 1 < s { lum(x + 1, y) - l } else { 0.0 };
            let dy = if y + 1 < s { lum(x, y + 1) - l } else { 0.0 };
            adx += dx.abs();
            ady += dy.abs();
            let e = dx * dx + dy * dy;
            energy += e;
            if e.sqrt() > 0.125 {
                strong += 1.0;
            }
        }
    }
    out.extend_from_slice(&[adx / n, ady / n, energy / n, strong / n]);
    debug_assert_eq!(out.len(), HANDCRAFTED_DIM);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_table(n: usize, f: usize) -> FeatureTable {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data = (0..n * f).map(|_| rng.random_range(-10.0f32..10.0)).collect();
        FeatureTable::new(n, f, data).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = random_table(10, 16)
            .with_labels((0..10).map(|i| ClassLabel::from_index(i % 3).unwrap()).collect())
            .unwrap();
        save_features(&t, dir.path()).unwrap();
        assert_eq!(load_features(dir.path()).unwrap(), t);
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        save_features(&random_table(10, 16), dir.path()).unwrap();
        let p = dir.path().join(FEATURES_F32);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_features(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        let msg = err.to_string();
        assert!(msg.contains("637") && msg.contains("640"), "{msg}");
    }

    #[test]
    fn empty_and_non_finite_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(FEATURES_JSON), r#"{"n":0,"f":4,"labels":null,"patch_refs":null}"#).unwrap();
        fs::write(dir.path().join(FEATURES_F32), b"").unwrap();
        assert!(matches!(load_features(dir.path()), Err(Error::Validation { .. })));

        fs::write(dir.path().join(FEATURES_JSON), r#"{"n":1,"f":2,"labels":null,"patch_refs":null}"#).unwrap();
        fs::write(dir.path().join(FEATURES_F32), f32_to_le_bytes(&[1.0, f32::NAN])).unwrap();
        assert!(matches!(load_features(dir.path()), Err(Error::Validation { .. })));
    }

    #[test]
    fn descriptor_of_flat_patch() {
        let patch = Patch {
            slide_id: "s".into(),
            level: 0,
            x: 0,
            y: 0,
            size: 4,
            pixels: [255u8, 0, 64].repeat(16),
        };
        let f = handcrafted_features(&patch);
        assert_eq!(f.len(), HANDCRAFTED_DIM);
        assert_eq!(&f[0..3], &[1.0, 0.0, 64.0 / 255.0]);
        assert!(f[3..6].iter().all(|&v| v.abs() < 1e-12));
        assert_eq!(f[6 + 7], 1.0); // R in the top bin
        assert_eq!(f[14], 1.0); // G in the bottom bin
        assert_eq!(f[22 + 2], 1.0); // B = 64 -> bin 2
        assert!(f[30..].iter().all(|&v| v == 0.0));
    }
}
