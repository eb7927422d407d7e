//! Patch Pack container.
//!
//! Little-endian layout: magic `PPK1`, then u32 fields version (=1), N, H, W,
//! C and dtype (0 = u8, 1 = f32), 28 bytes in all, followed by N·H·W·C samples, patch-major and
//! row-major within a patch. Patch metadata lives in a sibling manifest CSV
//! with the same stem and a `.csv` extension.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::manifest::{check_header, parse_manifest, write_manifest};
use super::pnm::read_pnm;
use super::{Dtype, Label, Patch, PatchSet, PatchShape, Samples};
use crate::{Error, Result};

pub const PACK_HEADER_LEN: usize = 28;
const MAGIC_PREFIX: &[u8; 3] = b"PPK";
const VERSION: u32 = 1;

/// Where the manifest for a pack lives: same path, `.csv` extension.
pub fn manifest_path_for(pack: &Path) -> PathBuf {
    pack.with_extension("csv")
}

pub fn write_patch_pack(set: &PatchSet, path: &Path) -> Result<()> {
    let shape = set.shape();
    let mut buf =
        Vec::with_capacity(PACK_HEADER_LEN + set.len() * shape.samples_per_patch() * shape.dtype.sample_size());
    buf.extend_from_slice(b"PPK1");
    for field in [
        VERSION,
        set.len() as u32,
        shape.height,
        shape.width,
        shape.channels,
        shape.dtype.code(),
    ] {
        buf.extend_from_slice(&field.to_le_bytes());
    }
    for p in set.patches() {
        match &p.samples {
            Samples::U8(v) => buf.extend_from_slice(v),
            Samples::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    write_manifest(&set.manifest(), &manifest_path_for(path))
}

pub fn load_patch_pack(path: &Path) -> Result<PatchSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (shape, n) = parse_header(&bytes)?;

    let per_patch = shape.samples_per_patch();
    let payload_len = (n as u64)
        .checked_mul(per_patch as u64)
        .and_then(|s| s.checked_mul(shape.dtype.sample_size() as u64))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let expected_end = PACK_HEADER_LEN as u64 + payload_len;
    let actual = bytes.len() as u64;
    if actual < expected_end {
        return Err(Error::Corrupt {
            offset: actual,
            message: format!("truncated payload, expected {expected_end} bytes in total"),
        });
    }
    if actual > expected_end {
        return Err(Error::Corrupt {
            offset: expected_end,
            message: format!("{} trailing bytes after payload", actual - expected_end),
        });
    }

    let payload = &bytes[PACK_HEADER_LEN..];
    let chunk = per_patch * shape.dtype.sample_size();
    let samples: Vec<Samples> = (0..n as usize)
        .map(|i| {
            let raw = &payload[i * chunk..(i + 1) * chunk];
            match shape.dtype {
                Dtype::U8 => Samples::U8(raw.to_vec()),
                Dtype::F32 => Samples::F32(
                    raw.chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect(),
                ),
            }
        })
        .collect();

    let manifest_path = manifest_path_for(path);
    let patches = if manifest_path.exists() {
        let file = File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let rows = parse_manifest(file, &manifest_path.display().to_string())?;
        if rows.len() != samples.len() {
            return Err(Error::Manifest(format!(
                "{} has {} rows but the pack holds {} patches",
                manifest_path.display(),
                rows.len(),
                samples.len()
            )));
        }
        if rows.windows(2).any(|w| w[0].patch_id >= w[1].patch_id) {
            return Err(Error::Manifest(format!(
                "{}: patch ids must be strictly ascending",
                manifest_path.display()
            )));
        }
        rows.into_iter()
            .zip(samples)
            .map(|(r, s)| Patch {
                id: r.patch_id,
                samples: s,
                label: r.label,
                tile_id: r.tile_id,
                origin: (r.x, r.y),
            })
            .collect()
    } else {
        samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| Patch::bare(i as u64, s))
            .collect()
    };
    PatchSet::new(shape, patches)
}

fn parse_header(bytes: &[u8]) -> Result<(PatchShape, u32)> {
    match bytes.get(..4) {
        Some(b"PPK1") => {}
        Some(m) if &m[..3] == MAGIC_PREFIX => {
            return Err(Error::Version(format!(
                "patch pack {:?} (only PPK1 is supported)",
                String::from_utf8_lossy(m)
            )))
        }
        _ => return Err(Error::Format("missing PPK1 magic".into())),
    }
    if bytes.len() < PACK_HEADER_LEN {
        return Err(Error::Corrupt {
            offset: bytes.len() as u64,
            message: format!("header needs {PACK_HEADER_LEN} bytes"),
        });
    }
    let field = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
    };
    let version = field(0);
    if version != VERSION {
        return Err(Error::Version(format!("patch pack version {version} (only 1 is supported)")));
    }
    let shape = PatchShape::new(field(2), field(3), field(4), Dtype::from_code(field(5))?);
    Ok((shape, field(1)))
}

#[derive(Deserialize)]
struct IngestRow {
    file: String,
    label: String,
    tile_id: String,
    x: u64,
    y: u64,
}

const INGEST_HEADER: [&str; 5] = ["file", "label", "tile_id", "x", "y"];

/// Reads every PGM/PPM in `dir` (ascending filename order assigns patch ids
/// 0, 1, ...) and labels them from `manifest_csv`.
///
/// The ingest manifest keys rows by filename: `file,label,tile_id,x,y`.
/// Files without a row stay unlabeled.
pub fn ingest_image_dir(dir: &Path, manifest_csv: &Path) -> Result<PatchSet> {
    let manifest_file = File::open(manifest_csv).map_err(|e| Error::io(manifest_csv, e))?;
    let mut rdr = csv::Reader::from_reader(manifest_file);
    let what = manifest_csv.display().to_string();
    let header = rdr
        .headers()
        .map_err(|e| Error::Manifest(format!("{what}: {e}")))?
        .clone();
    check_header(&header, &INGEST_HEADER, &what)?;
    let mut meta: BTreeMap<String, (Label, String, (u64, u64))> = BTreeMap::new();
    for rec in rdr.deserialize::<IngestRow>() {
        let row = rec.map_err(|e| Error::Manifest(format!("{what}: {e}")))?;
        let label: Label = row.label.parse()?;
        if meta
            .insert(row.file.clone(), (label, row.tile_id, (row.x, row.y)))
            .is_some()
        {
            return Err(Error::Manifest(format!("{what}: file {:?} listed twice", row.file)));
        }
    }

    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let ty = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
        if ty.is_file() {
            let name = entry.file_name().into_string().map_err(|n| {
                Error::Format(format!("non UTF-8 filename {n:?} in {}", dir.display()))
            })?;
            names.push(name);
        }
    }
    names.sort();

    if let Some(missing) = meta.keys().find(|f| names.binary_search(f).is_err()) {
        return Err(Error::Manifest(format!(
            "{what}: references {missing:?}, which is not in {}",
            dir.display()
        )));
    }

    let mut images = Vec::with_capacity(names.len());
    for name in &names {
        images.push(read_pnm(&dir.join(name))?);
    }
    let Some(first) = images.first() else {
        return Ok(PatchSet::empty(PatchShape::new(0, 0, 0, Dtype::U8)));
    };
    // The most common shape is the reference; ties go to the earliest file.
    let shape_of = |img: &super::pnm::PnmImage| (img.height, img.width, img.channels);
    let mut counts: Vec<((u32, u32, u32), usize)> = Vec::new();
    for img in &images {
        match counts.iter_mut().find(|(d, _)| *d == shape_of(img)) {
            Some((_, c)) => *c += 1,
            None => counts.push((shape_of(img), 1)),
        }
    }
    let mut dims = shape_of(first);
    let mut best = 0;
    for (d, c) in counts {
        if c > best {
            best = c;
            dims = d;
        }
    }
    let reference = names
        .iter()
        .zip(&images)
        .find(|(_, img)| shape_of(img) == dims)
        .map(|(n, _)| n.as_str())
        .unwrap_or_default();
    let offenders: Vec<String> = names
        .iter()
        .zip(&images)
        .filter(|(_, img)| shape_of(img) != dims)
        .map(|(n, img)| format!("{n} ({}x{}x{})", img.height, img.width, img.channels))
        .collect();
    if !offenders.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "expected {}x{}x{} (from {}), got {}",
            dims.0,
            dims.1,
            dims.2,
            reference,
            offenders.join(", ")
        )));
    }

    let shape = PatchShape::new(dims.0, dims.1, dims.2, Dtype::U8);
    let patches = names
        .into_iter()
        .zip(images)
        .enumerate()
        .map(|(i, (name, img))| {
            let (label, tile_id, origin) = meta
                .remove(&name)
                .unwrap_or((Label::Unlabeled, String::new(), (0, 0)));
            Patch {
                id: i as u64,
                samples: Samples::U8(img.data),
                label,
                tile_id,
                origin,
            }
        })
        .collect();
    PatchSet::new(shape, patches)
}
