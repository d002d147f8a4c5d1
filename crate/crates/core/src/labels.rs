//! Class vocabulary shared by every stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lesion class. Discriminants encode severity: a larger value is more severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    NonCarcinoma = 0,
    Dcis = 1,
    Idc = 2,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::NonCarcinoma, ClassLabel::Dcis, ClassLabel::Idc];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ClassLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::NonCarcinoma => "non_carcinoma",
            ClassLabel::Dcis => "dcis",
            ClassLabel::Idc => "idc",
        }
    }

    pub fn to_binary(self) -> BinaryLabel {
        match self {
            ClassLabel::NonCarcinoma => BinaryLabel::NonCarcinoma,
            ClassLabel::Dcis | ClassLabel::Idc => BinaryLabel::Carcinoma,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non_carcinoma" => Ok(ClassLabel::NonCarcinoma),
            "dcis" => Ok(ClassLabel::Dcis),
            "idc" => Ok(ClassLabel::Idc),
            other => Err(Error::validation("class", format!("unknown class label {other:?}"))),
        }
    }
}

/// Carcinoma present or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    NonCarcinoma = 0,
    Carcinoma = 1,
}

impl BinaryLabel {
    pub const ALL: [BinaryLabel; 2] = [BinaryLabel::NonCarcinoma, BinaryLabel::Carcinoma];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BinaryLabel::NonCarcinoma => "non_carcinoma",
            BinaryLabel::Carcinoma => "carcinoma",
        }
    }
}

impl fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn to_binary(label: ClassLabel) -> BinaryLabel {
    label.to_binary()
}

/// Most severe label in `labels`.
pub fn max_severity(labels: &[ClassLabel]) -> Result<ClassLabel> {
    labels
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::validation("labels", "max_severity of an empty list"))
}

/// Level-0 scanner calibration in microns per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalCalibration {
    pub mpp_x: f64,
    pub mpp_y: f64,
}

impl PhysicalCalibration {
    pub fn new(mpp_x: f64, mpp_y: f64) -> Result<Self> {
        let cal = PhysicalCalibration { mpp_x, mpp_y };
        cal.validate()?;
        Ok(cal)
    }

    pub fn isotropic(mpp: f64) -> Result<Self> {
        Self::new(mpp, mpp)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mpp_x", self.mpp_x), ("mpp_y", self.mpp_y)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Area of one pixel in mm².
    pub fn pixel_area_mm2(&self) -> f64 {
        self.mpp_x * self.mpp_y / 1e6
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassLabel::*;

    #[test]
    fn binary_projection() {
        assert_eq!(to_binary(NonCarcinoma), BinaryLabel::NonCarcinoma);
        assert_eq!(to_binary(Dcis), BinaryLabel::Carcinoma);
        assert_eq!(to_binary(Idc), BinaryLabel::Carcinoma);
        // order-preserving
        for a in ClassLabel::ALL {
            for b in ClassLabel::ALL {
                if a <= b {
                    assert!(a.to_binary() <= b.to_binary());
                }
            }
        }
    }

    #[test]
    fn severity_max() {
        assert_eq!(max_severity(&[NonCarcinoma]).unwrap(), NonCarcinoma);
        assert_eq!(max_severity(&[NonCarcinoma, Dcis]).unwrap(), Dcis);
        assert_eq!(max_severity(&[Dcis, Idc, NonCarcinoma]).unwrap(), Idc);
        assert!(max_severity(&[]).is_err());
    }

    #[test]
    fn serde_names() {
        assert_eq!(serde_json::to_string(&Dcis).unwrap(), "\"dcis\"");
        assert_eq!(serde_json::to_string(&NonCarcinoma).unwrap(), "\"non_carcinoma\"");
        let back: ClassLabel = serde_json::from_str("\"idc\"").unwrap();
        assert_eq!(back, Idc);
        assert_eq!("dcis".parse::<ClassLabel>().unwrap(), Dcis);
        assert!("adh".parse::<ClassLabel>().is_err());
    }

    #[test]
    fn calibration_rejects_bad_values() {
        assert!(PhysicalCalibration::new(0.25, 0.25).is_ok());
        assert!(PhysicalCalibration::new(0.0, 0.25).is_err());
        assert!(PhysicalCalibration::new(0.25, f64::NAN).is_err());
        assert!(PhysicalCalibration::new(-1.0, 1.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn max_severity_permutation_and_duplicates(v in proptest::collection::vec(0usize..3, 1..20), k in 1usize..4) {
            let labels: Vec<_> = v.iter().map(|&i| ClassLabel::from_index(i).unwrap()).collect();
            let m = max_severity(&labels).unwrap();
            let mut rev = labels.clone();
            rev.reverse();
            proptest::prop_assert_eq!(max_severity(&rev).unwrap(), m);
            let dup: Vec<_> = labels.iter().flat_map(|&l| std::iter::repeat_n(l, k)).collect();
            proptest::prop_assert_eq!(max_severity(&dup).unwrap(), m);
        }
    }
}
