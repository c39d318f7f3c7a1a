//! Slice images, VIA annotations, mask rasterization, stratified splits and
//! manifests.

mod image_io;
mod manifest;
mod raster;
mod split;
mod via;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

pub use image_io::{
    decode_f16, encode_f16, image_size, load_mask_png, load_slice_image, quantize_u8, resize_bilinear, resize_nearest,
    save_mask_png,
};
pub use manifest::{build_manifest, read_labels, read_manifest, write_manifest, LabelRow, MANIFEST_HEADER};
pub use raster::{point_in_polygon, point_in_region, point_on_polygon_boundary, rasterize_region, rasterize_regions};
pub use split::{split_sizes, stratified_split, DatasetSplit, SplitName};
pub use via::{parse_via_json, UnsupportedRegion, ViaAnnotations};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image {path}: {reason}")]
    Image { path: String, reason: String },
    #[error("image {path} has unsupported pixel format {format} (8-bit grayscale or RGB expected)")]
    BitDepth { path: String, format: String },
    #[error("{op}: degenerate {height}×{width} input")]
    Degenerate {
        op: &'static str,
        height: usize,
        width: usize,
    },
    #[error("malformed VIA document: {0}")]
    Via(String),
    #[error("{file}, region {index}: missing attribute {attribute}")]
    MissingAttribute {
        file: String,
        index: usize,
        attribute: String,
    },
    #[error("{file}, region {index}: {reason}")]
    InvalidRegion { file: String, index: usize, reason: String },
    #[error("cannot reach the declared prevalence: {0}")]
    Infeasible(String),
    #[error("{path}, line {line}: {reason}")]
    Csv { path: String, line: u64, reason: String },
    #[error("{} validation problem(s):\n  {}", .0.len(), .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("{0}")]
    Invalid(String),
}

/// A row-major H×W plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self, DataError> {
        if data.len() != height * width {
            return Err(DataError::Invalid(format!(
                "grid {height}×{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Grid { height, width, data })
    }

    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.width + x] = v;
    }
}

/// Grayscale intensities in [0, 1].
pub type GrayImage = Grid<f32>;
/// Binary mask with values in {0, 1}.
pub type Mask = Grid<u8>;

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// An annotated lesion outline in native pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Circle { cx: f64, cy: f64, r: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Polygon { points: Vec<(f64, f64)> },
}

impl Region {
    /// Checks radii and vertex count; returns a reason on failure.
    pub fn validate(&self) -> Result<(), String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Region::Circle { cx, cy, r } => {
                if !finite(&[*cx, *cy, *r]) || *r <= 0.0 {
                    return Err(format!("circle radius must be positive and finite, got {r}"));
                }
            }
            Region::Ellipse { cx, cy, rx, ry } => {
                if !finite(&[*cx, *cy, *rx, *ry]) || *rx <= 0.0 || *ry <= 0.0 {
                    return Err(format!("ellipse radii must be positive and finite, got ({rx}, {ry})"));
                }
            }
            Region::Polygon { points } => {
                if points.len() < 3 {
                    return Err(format!("polygon needs at least 3 vertices, got {}", points.len()));
                }
                if !points.iter().all(|&(x, y)| x.is_finite() && y.is_finite()) {
                    return Err("polygon has non-finite vertices".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "1" | "true" => Ok(Label::Positive),
            "negative" | "0" | "false" => Ok(Label::Negative),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// One CT slice with its provenance. `regions` lives only in memory; the
/// manifest persists the rasterized mask through `mask_path` instead.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRecord {
    pub patient_id: String,
    pub scan_id: String,
    pub slice_index: u32,
    pub image_path: PathBuf,
    pub label: Label,
    pub regions: Vec<Region>,
    pub mask_path: Option<PathBuf>,
}
