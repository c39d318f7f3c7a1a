use std::fs;
use std::path::Path;

use ctseg::data::{load_mask_png, load_slice_image, resize_bilinear, resize_nearest, Mask, SliceRecord};
use ctseg::train::Sample;
use ctseg::{Element, Tensor};

use crate::CliError;

pub(crate) fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Failure(format!("cannot create {}: {e}", path.display())))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}

pub(crate) fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

pub(crate) fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{what} not found: {}", path.display())))
    }
}

/// Manifest paths are used as written, relative to the working directory.
///
/// Loads an image and its ground-truth mask at `size`×`size`. Negative
/// slices without a mask get an empty one.
pub(crate) fn load_sample<T: Element>(rec: &SliceRecord, size: usize) -> Result<Sample<T>, CliError> {
    let img = load_slice_image(&rec.image_path)?;
    let img = resize_bilinear(&img, size, size)?;
    let mask = load_truth_mask(rec, size)?;
    Ok(sample_from(&img.data, &mask, size))
}

pub(crate) fn load_truth_mask(rec: &SliceRecord, size: usize) -> Result<Mask, CliError> {
    match &rec.mask_path {
        Some(p) => Ok(resize_nearest(&load_mask_png(p)?, size, size)),
        None if !rec.label.is_positive() => Ok(Mask::filled(size, size, 0)),
        None => Err(CliError::Input(format!(
            "positive slice {} {} has no mask",
            rec.scan_id, rec.slice_index
        ))),
    }
}

fn sample_from<T: Element>(img: &[f32], mask: &Mask, size: usize) -> Sample<T> {
    let shape = [1, size, size];
    Sample {
        image: Tensor::from_vec(&shape, img.iter().map(|&v| T::from_f64(f64::from(v))).collect()).expect("shape"),
        mask: Tensor::from_vec(&shape, mask.data.iter().map(|&v| T::from_f64(f64::from(v))).collect()).expect("shape"),
    }
}
