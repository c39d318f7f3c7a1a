//! Probability maps to slice verdicts, slice verdicts to scan verdicts.

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::{GrayImage, Grid, Mask};

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("scan {scan}: slice index {index} follows {previous} (indices must strictly increase)")]
    Order { scan: String, previous: u32, index: u32 },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("image is {image:?} but mask is {mask:?}")]
    ShapeMismatch {
        image: (usize, usize),
        mask: (usize, usize),
    },
    #[error("overlay alpha must be in (0, 1], got {0}")]
    Alpha(f32),
    #[error("probability map length {len} does not match {height}×{width}")]
    MapSize { len: usize, height: usize, width: usize },
}

/// 8-connected components labelled 1.. in row-major order of discovery.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub labels: Grid<u32>,
    /// `areas[k]` is the pixel count of label `k + 1`.
    pub areas: Vec<usize>,
}

impl Components {
    pub fn largest(&self) -> usize {
        self.areas.iter().copied().max().unwrap_or(0)
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

/// Two-pass union-find labelling with 8-connectivity.
pub fn connected_components(mask: &Mask) -> Components {
    let (h, w) = (mask.height, mask.width);
    let mut provisional = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            if mask.data[y * w + x] == 0 {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut k = 0;
            let mut look = |yy: usize, xx: usize| {
                let l = provisional[yy * w + xx];
                if l != 0 {
                    neighbours[k] = l;
                    k += 1;
                }
            };
            if x > 0 {
                look(y, x - 1);
            }
            if y > 0 {
                if x > 0 {
                    look(y - 1, x - 1);
                }
                look(y - 1, x);
                if x + 1 < w {
                    look(y - 1, x + 1);
                }
            }
            let label = if k == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let mut root = find(&mut parent, neighbours[0]);
                for &n in &neighbours[1..k] {
                    let r = find(&mut parent, n);
                    if r != root {
                        let (lo, hi) = (root.min(r), root.max(r));
                        parent[hi as usize] = lo;
                        root = lo;
                    }
                }
                root
            };
            provisional[y * w + x] = label;
        }
    }
    // Roots are the smallest provisional label in each set, and provisional
    // labels are issued in row-major order, so renumbering roots by first
    // appearance gives row-major discovery order.
    let mut final_of = vec![0u32; parent.len()];
    let mut areas = Vec::new();
    let mut labels = vec![0u32; h * w];
    for (i, &p) in provisional.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p) as usize;
        if final_of[root] == 0 {
            areas.push(0);
            final_of[root] = areas.len() as u32;
        }
        let l = final_of[root];
        labels[i] = l;
        areas[l as usize - 1] += 1;
    }
    Components {
        labels: Grid {
            height: h,
            width: w,
            data: labels,
        },
        areas,
    }
}

/// Reference minimum lesion area at 512×512.
pub const MIN_AREA_512: usize = 50;

/// `floor(50 · H·W / 512²)`, at least 1.
pub fn scaled_min_area(height: usize, width: usize) -> usize {
    ((MIN_AREA_512 * height * width) / (512 * 512)).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceRule {
    pub pixel_threshold: f32,
    /// Minimum area of the largest component; `None` scales 50 px at 512²
    /// to the map size.
    pub min_area: Option<usize>,
}

impl Default for SliceRule {
    fn default() -> Self {
        SliceRule {
            pixel_threshold: 0.5,
            min_area: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicePrediction {
    pub scan_id: String,
    pub slice_index: u32,
    pub mask: Mask,
    pub positive: bool,
    /// Pixel count of the largest connected component.
    pub lesion_area: usize,
    pub total_positive_area: usize,
}

/// Binarizes `p > threshold` and calls the slice positive when its largest
/// 8-connected component reaches the minimum area.
pub fn classify_slice(
    scan_id: &str,
    slice_index: u32,
    prob: &[f32],
    height: usize,
    width: usize,
    rule: &SliceRule,
) -> Result<SlicePrediction, InferenceError> {
    if prob.len() != height * width {
        return Err(InferenceError::MapSize {
            len: prob.len(),
            height,
            width,
        });
    }
    let mask = Grid {
        height,
        width,
        data: prob.iter().map(|&p| u8::from(p > rule.pixel_threshold)).collect(),
    };
    let comps = connected_components(&mask);
    let lesion_area = comps.largest();
    let min_area = rule.min_area.unwrap_or_else(|| scaled_min_area(height, width)).max(1);
    Ok(SlicePrediction {
        scan_id: scan_id.to_string(),
        slice_index,
        positive: lesion_area >= min_area,
        lesion_area,
        total_positive_area: comps.areas.iter().sum(),
        mask,
    })
}

/// Default run length for the consecutive-slice rule.
pub const DEFAULT_K: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPrediction {
    pub scan_id: String,
    pub flags: Vec<bool>,
    pub longest_run: usize,
    pub positive: bool,
    pub k: usize,
}

pub fn longest_run(flags: &[bool]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for &f in flags {
        run = if f { run + 1 } else { 0 };
        best = best.max(run);
    }
    best
}

/// Scan verdict from `(slice_index, positive)` pairs, which must have
/// strictly increasing indices: positive iff at least `k` consecutive
/// slices are positive.
pub fn aggregate_scan(scan_id: &str, slices: &[(u32, bool)], k: usize) -> Result<ScanPrediction, InferenceError> {
    if k == 0 {
        return Err(InferenceError::ZeroK);
    }
    for w in slices.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(InferenceError::Order {
                scan: scan_id.to_string(),
                previous: w[0].0,
                index: w[1].0,
            });
        }
    }
    let flags: Vec<bool> = slices.iter().map(|s| s.1).collect();
    let run = longest_run(&flags);
    Ok(ScanPrediction {
        scan_id: scan_id.to_string(),
        flags,
        longest_run: run,
        positive: run >= k,
        k,
    })
}

pub const TREND_HEADER: &str = "scan_id,slice_index,positive,total_positive_area";
pub const SCAN_REPORT_HEADER: &str = "scan_id,verdict,longest_run,num_slices,K";

/// Per-slice trend rows in ascending slice order.
pub fn trend_csv(preds: &[SlicePrediction]) -> String {
    let mut sorted: Vec<&SlicePrediction> = preds.iter().collect();
    sorted.sort_by(|a, b| (&a.scan_id, a.slice_index).cmp(&(&b.scan_id, b.slice_index)));
    let mut s = format!("{TREND_HEADER}\n");
    for p in sorted {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            p.scan_id,
            p.slice_index,
            u8::from(p.positive),
            p.total_positive_area
        );
    }
    s
}

pub fn scan_report_csv(scans: &[ScanPrediction]) -> String {
    let mut s = format!("{SCAN_REPORT_HEADER}\n");
    for p in scans {
        let verdict = if p.positive { "positive" } else { "negative" };
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            p.scan_id,
            verdict,
            p.longest_run,
            p.flags.len(),
            p.k
        );
    }
    s
}

/// Overlay colour for predicted lesion pixels.
pub const HIGHLIGHT: [f32; 3] = [1.0, 0.0, 0.0];

/// Grayscale to RGB with masked pixels blended toward [`HIGHLIGHT`]:
/// `out = (1 − α)·gray + α·highlight`.
pub fn overlay_mask(image: &GrayImage, mask: &Mask, alpha: f32) -> Result<Vec<[f32; 3]>, InferenceError> {
    if (image.height, image.width) != (mask.height, mask.width) {
        return Err(InferenceError::ShapeMismatch {
            image: (image.height, image.width),
            mask: (mask.height, mask.width),
        });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(InferenceError::Alpha(alpha));
    }
    Ok(image
        .data
        .iter()
        .zip(&mask.data)
        .map(|(&g, &m)| {
            if m == 0 {
                [g, g, g]
            } else {
                HIGHLIGHT.map(|c| (1.0 - alpha) * g + alpha * c)
            }
        })
        .collect())
}

/// 8-bit RGB bytes for an overlay.
pub fn overlay_to_rgb8(pixels: &[[f32; 3]]) -> Vec<u8> {
    pixels
        .iter()
        .flat_map(|p| p.map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8))
        .collect()
}
