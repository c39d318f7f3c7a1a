use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{image_size, rasterize_regions, save_mask_png, DataError, Label, SliceRecord, ViaAnnotations};

pub const MANIFEST_HEADER: [&str; 6] = [
    "patient_id",
    "scan_id",
    "slice_index",
    "image_path",
    "label",
    "mask_path",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map_or(0, csv::Position::line);
    DataError::Csv {
        path: path.display().to_string(),
        line,
        reason: e.to_string(),
    }
}

/// Writes the manifest CSV. A `# seed=N` line precedes the header when a
/// seed is given.
pub fn write_manifest<W: Write>(records: &[SliceRecord], seed: Option<u64>, mut out: W) -> std::io::Result<()> {
    if let Some(seed) = seed {
        writeln!(out, "# seed={seed}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MANIFEST_HEADER)?;
    for r in records {
        let mask = r
            .mask_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        w.write_record([
            r.patient_id.as_str(),
            r.scan_id.as_str(),
            &r.slice_index.to_string(),
            &r.image_path.display().to_string(),
            &r.label.to_string(),
            &mask,
        ])?;
    }
    w.flush()
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    patient_id: String,
    scan_id: String,
    slice_index: u32,
    image_path: String,
    label: String,
    mask_path: String,
}

fn reader(path: &Path) -> Result<csv::Reader<File>, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

fn check_header(path: &Path, r: &mut csv::Reader<File>, expected: &[&str]) -> Result<(), DataError> {
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(DataError::Csv {
            path: path.display().to_string(),
            line: 1,
            reason: format!("header must be {}", expected.join(",")),
        });
    }
    Ok(())
}

/// Reads a manifest written by [`write_manifest`]. Regions are not stored,
/// so records come back with `regions` empty.
pub fn read_manifest(path: &Path) -> Result<Vec<SliceRecord>, DataError> {
    let mut r = reader(path)?;
    check_header(path, &mut r, &MANIFEST_HEADER)?;
    let mut out = Vec::new();
    for row in r.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let label = row.label.parse::<Label>().map_err(|reason| DataError::Csv {
            path: path.display().to_string(),
            line: out.len() as u64 + 2,
            reason,
        })?;
        out.push(SliceRecord {
            patient_id: row.patient_id,
            scan_id: row.scan_id,
            slice_index: row.slice_index,
            image_path: PathBuf::from(row.image_path),
            label,
            regions: Vec::new(),
            mask_path: (!row.mask_path.is_empty()).then(|| PathBuf::from(row.mask_path)),
        });
    }
    Ok(out)
}

/// One line of the labels file: `filename,patient_id,scan_id,slice_index,label`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct LabelRow {
    pub filename: String,
    pub patient_id: String,
    pub scan_id: String,
    pub slice_index: u32,
    pub label: String,
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>, DataError> {
    let mut r = reader(path)?;
    check_header(
        path,
        &mut r,
        &["filename", "patient_id", "scan_id", "slice_index", "label"],
    )?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Joins labels with annotations into slice records, checking every row
/// before failing so all problems are reported at once.
///
/// With `mask_dir`, each slice's regions are rasterized at the native image
/// size and written as `<scan_id>_<slice_index>.png`.
pub fn build_manifest(
    image_dir: &Path,
    via: &ViaAnnotations,
    labels: &[LabelRow],
    mask_dir: Option<&Path>,
) -> Result<Vec<SliceRecord>, DataError> {
    let mut issues = Vec::new();
    for u in &via.unsupported {
        issues.push(format!(
            "{}, region {}: unsupported shape {:?}",
            u.file, u.index, u.name
        ));
    }
    let labelled: HashSet<&str> = labels.iter().map(|l| l.filename.as_str()).collect();
    for file in via.regions.keys() {
        if !labelled.contains(file.as_str()) {
            issues.push(format!("{file}: annotated but missing from the labels file"));
        }
    }
    let mut seen = BTreeSet::new();
    let mut records = Vec::with_capacity(labels.len());
    for row in labels {
        let name = format!("{} (scan {}, slice {})", row.filename, row.scan_id, row.slice_index);
        if !seen.insert((row.scan_id.clone(), row.slice_index)) {
            issues.push(format!("{name}: duplicate scan_id/slice_index"));
        }
        let label = match row.label.parse::<Label>() {
            Ok(l) => l,
            Err(e) => {
                issues.push(format!("{name}: {e}"));
                continue;
            }
        };
        let regions = via.regions.get(&row.filename).cloned().unwrap_or_default();
        if label == Label::Negative && !regions.is_empty() {
            issues.push(format!(
                "{name}: labelled negative but has {} annotated region(s)",
                regions.len()
            ));
        }
        let image_path = image_dir.join(&row.filename);
        let mut mask_path = None;
        match image_size(&image_path) {
            Err(e) => issues.push(format!("{name}: {e}")),
            Ok((h, w)) => {
                if let Some(dir) = mask_dir {
                    let path = dir.join(format!("{}_{}.png", row.scan_id, row.slice_index));
                    if issues.is_empty() {
                        if let Err(e) = save_mask_png(&rasterize_regions(&regions, h, w), &path) {
                            issues.push(format!("{name}: {e}"));
                        }
                    }
                    mask_path = Some(path);
                }
            }
        }
        records.push(SliceRecord {
            patient_id: row.patient_id.clone(),
            scan_id: row.scan_id.clone(),
            slice_index: row.slice_index,
            image_path,
            label,
            regions,
            mask_path,
        });
    }
    if issues.is_empty() {
        Ok(records)
    } else {
        Err(DataError::Validation(issues))
    }
}
