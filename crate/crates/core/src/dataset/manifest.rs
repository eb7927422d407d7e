use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Label, Patch, PatchId};
use crate::{Error, Result};

pub(crate) const MANIFEST_HEADER: [&str; 5] = ["patch_id", "label", "tile_id", "x", "y"];

/// One row of a manifest CSV (`patch_id,label,tile_id,x,y`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub patch_id: PatchId,
    pub label: Label,
    pub tile_id: String,
    pub x: u64,
    pub y: u64,
}

#[derive(Serialize, Deserialize)]
struct RawRow {
    patch_id: PatchId,
    label: String,
    tile_id: String,
    x: u64,
    y: u64,
}

impl ManifestRow {
    pub(crate) fn from_patch(p: &Patch) -> Self {
        ManifestRow {
            patch_id: p.id,
            label: p.label,
            tile_id: p.tile_id.clone(),
            x: p.origin.0,
            y: p.origin.1,
        }
    }
}

pub(crate) fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub(crate) fn check_header(found: &csv::StringRecord, expected: &[&str], what: &str) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::Manifest(format!(
            "{what}: expected header {:?}, found {:?}",
            expected.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(file, &path.display().to_string())
}

pub(crate) fn parse_manifest<R: Read>(reader: R, what: &str) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Manifest(format!("{what}: {e}")))?
        .clone();
    check_header(&header, &MANIFEST_HEADER, what)?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<RawRow>() {
        let raw = rec.map_err(|e| Error::Manifest(format!("{what}: {e}")))?;
        rows.push(ManifestRow {
            patch_id: raw.patch_id,
            label: raw.label.parse()?,
            tile_id: raw.tile_id,
            x: raw.x,
            y: raw.y,
        });
    }
    Ok(rows)
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(MANIFEST_HEADER)
            .map_err(|e| Error::Manifest(e.to_string()))?;
        for r in rows {
            let raw = RawRow {
                patch_id: r.patch_id,
                label: r.label.as_str().to_owned(),
                tile_id: r.tile_id.clone(),
                x: r.x,
                y: r.y,
            };
            w.serialize(raw).map_err(|e| Error::Manifest(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_header_and_unknown_label() {
        let bad_header = "id,label,tile_id,x,y\n0,settle,t,0,0\n";
        assert!(matches!(
            parse_manifest(bad_header.as_bytes(), "m"),
            Err(Error::Manifest(_))
        ));
        let bad_label = "patch_id,label,tile_id,x,y\n0,Settle,t,0,0\n";
        let err = parse_manifest(bad_label.as_bytes(), "m").unwrap_err();
        assert!(err.to_string().contains("Settle"));
    }

    #[test]
    fn writes_lf_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![ManifestRow {
            patch_id: 3,
            label: Label::NonSettle,
            tile_id: "tile, with comma".into(),
            x: 10,
            y: 20,
        }];
        write_manifest(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        assert!(text.starts_with("patch_id,label,tile_id,x,y\n"));
        assert_eq!(read_manifest(&path).unwrap(), rows);
    }
}
