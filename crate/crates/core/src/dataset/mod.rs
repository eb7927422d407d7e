//! Patch collections: in-memory model, on-disk formats, featurization.

mod features;
mod manifest;
mod pack;
pub mod pnm;

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

pub use features::{extract_features, BandMode, FeatureConfig, FeatureMatrix, Normalize};
pub use manifest::{read_manifest, write_manifest, ManifestRow};
pub use pack::{ingest_image_dir, load_patch_pack, manifest_path_for, write_patch_pack, PACK_HEADER_LEN};

pub type PatchId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Settle,
    NonSettle,
    Unlabeled,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Settle, Label::NonSettle, Label::Unlabeled];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Settle => "settle",
            Label::NonSettle => "non_settle",
            Label::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // Case-sensitive on purpose: "Settle" is not a label.
        match s {
            "settle" => Ok(Label::Settle),
            "non_settle" => Ok(Label::NonSettle),
            "unlabeled" => Ok(Label::Unlabeled),
            other => Err(Error::Manifest(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    F32,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::U8 => 0,
            Dtype::F32 => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Dtype::U8),
            1 => Ok(Dtype::F32),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn sample_size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }
}

/// Pixel samples of one patch, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::U8(v) => v.len(),
            Samples::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            Samples::U8(_) => Dtype::U8,
            Samples::F32(_) => Dtype::F32,
        }
    }

    /// Sample `i` as a real; u8 samples are scaled into [0, 1].
    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        match self {
            Samples::U8(v) => f64::from(v[i]) / 255.0,
            Samples::F32(v) => f64::from(v[i]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub id: PatchId,
    pub samples: Samples,
    pub label: Label,
    pub tile_id: String,
    pub origin: (u64, u64),
}

impl Patch {
    /// A patch with default metadata: unlabeled, empty tile id, origin (0, 0).
    pub fn bare(id: PatchId, samples: Samples) -> Self {
        Patch {
            id,
            samples,
            label: Label::Unlabeled,
            tile_id: String::new(),
            origin: (0, 0),
        }
    }
}

/// Shape and encoding shared by every patch in a set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchShape {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub dtype: Dtype,
}

impl PatchShape {
    pub fn new(height: u32, width: u32, channels: u32, dtype: Dtype) -> Self {
        PatchShape {
            height,
            width,
            channels,
            dtype,
        }
    }

    pub fn samples_per_patch(&self) -> usize {
        self.height as usize * self.width as usize * self.channels as usize
    }
}

/// An immutable, validated patch collection ordered by ascending patch id.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    shape: PatchShape,
    patches: Vec<Patch>,
}

impl PatchSet {
    /// Validates and sorts `patches`. Fails on duplicate ids, or on any
    /// patch whose sample count or dtype disagrees with `shape`.
    pub fn new(shape: PatchShape, mut patches: Vec<Patch>) -> Result<Self> {
        let expected = shape.samples_per_patch();
        for p in &patches {
            if p.samples.dtype() != shape.dtype {
                return Err(Error::Contract(format!(
                    "patch {} has dtype {:?}, set has {:?}",
                    p.id,
                    p.samples.dtype(),
                    shape.dtype
                )));
            }
            if p.samples.len() != expected {
                return Err(Error::DimensionMismatch(format!(
                    "patch {} has {} samples, expected {}",
                    p.id,
                    p.samples.len(),
                    expected
                )));
            }
        }
        patches.sort_by_key(|p| p.id);
        if let Some(w) = patches.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Contract(format!("duplicate patch id {}", w[0].id)));
        }
        if patches.len() > u32::MAX as usize {
            return Err(Error::Contract("too many patches for a pack".into()));
        }
        Ok(PatchSet { shape, patches })
    }

    pub fn empty(shape: PatchShape) -> Self {
        PatchSet {
            shape,
            patches: Vec::new(),
        }
    }

    pub fn shape(&self) -> PatchShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn ids(&self) -> Vec<PatchId> {
        self.patches.iter().map(|p| p.id).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.patches.iter().map(|p| p.label).collect()
    }

    pub fn manifest(&self) -> Vec<ManifestRow> {
        self.patches.iter().map(ManifestRow::from_patch).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_case_sensitive() {
        assert_eq!("settle".parse::<Label>().unwrap(), Label::Settle);
        assert_eq!("non_settle".parse::<Label>().unwrap(), Label::NonSettle);
        assert!("Settle".parse::<Label>().is_err());
        assert!("nonsettle".parse::<Label>().is_err());
    }

    #[test]
    fn set_sorts_by_id_and_rejects_duplicates() {
        let shape = PatchShape::new(1, 1, 1, Dtype::U8);
        let set = PatchSet::new(
            shape,
            vec![
                Patch::bare(5, Samples::U8(vec![1])),
                Patch::bare(2, Samples::U8(vec![2])),
            ],
        )
        .unwrap();
        assert_eq!(set.ids(), vec![2, 5]);

        let dup = PatchSet::new(
            shape,
            vec![
                Patch::bare(1, Samples::U8(vec![1])),
                Patch::bare(1, Samples::U8(vec![2])),
            ],
        );
        assert!(matches!(dup, Err(Error::Contract(_))));
    }

    #[test]
    fn set_rejects_wrong_sample_count() {
        let shape = PatchShape::new(2, 2, 1, Dtype::U8);
        let err = PatchSet::new(shape, vec![Patch::bare(0, Samples::U8(vec![0; 3]))]);
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }
}
