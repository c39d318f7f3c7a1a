//! Seeded stand-ins for CT data: textured slices with bright elliptical
//! lesions, and a 5212-slice patient/slice label table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{rasterize_regions, GrayImage, Grid, Label, Mask, Region, SliceRecord};
use crate::tensor::{Element, Tensor};
use crate::train::Sample;

/// Random axis-aligned ellipses that fit inside a `size`×`size` frame.
pub fn random_lesions(rng: &mut ChaCha8Rng, size: usize, count: usize) -> Vec<Region> {
    let s = size as f64;
    (0..count)
        .map(|_| {
            let rx = rng.random_range(0.06 * s..0.16 * s);
            let ry = rng.random_range(0.06 * s..0.16 * s);
            Region::Ellipse {
                cx: rng.random_range(rx + 2.0..s - rx - 2.0).round(),
                cy: rng.random_range(ry + 2.0..s - ry - 2.0).round(),
                rx,
                ry,
            }
        })
        .collect()
}

/// A slice with a dim body disc, noise, and the given lesions drawn bright.
pub fn render_slice(rng: &mut ChaCha8Rng, size: usize, lesions: &[Region]) -> (GrayImage, Mask) {
    let mask = rasterize_regions(lesions, size, size);
    let noise = Normal::new(0.0, 0.03).expect("valid std");
    let c = (size as f64 - 1.0) / 2.0;
    let body = 0.46 * size as f64;
    let mut img = Grid::filled(size, size, 0.0f32);
    for y in 0..size {
        for x in 0..size {
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            let base = if mask.get(y, x) == 1 {
                0.8
            } else if d <= body {
                0.3 + 0.05 * ((x as f64 * 0.3).sin() * (y as f64 * 0.2).cos())
            } else {
                0.05
            };
            let v: f64 = base + noise.sample(rng);
            img.set(y, x, v.clamp(0.0, 1.0) as f32);
        }
    }
    (img, mask)
}

/// `n` slices of `size`×`size`, each with one or two lesions.
pub fn lesion_slices(n: usize, size: usize, seed: u64) -> Vec<(GrayImage, Mask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let count = rng.random_range(1..=2);
            let lesions = random_lesions(&mut rng, size, count);
            render_slice(&mut rng, size, &lesions)
        })
        .collect()
}

/// Converts an image/mask pair into a 1×H×W training sample.
pub fn to_sample<T: Element>(img: &GrayImage, mask: &Mask) -> Sample<T> {
    let shape = [1, img.height, img.width];
    Sample {
        image: Tensor::from_parts_unchecked(
            shape.to_vec(),
            img.data.iter().map(|&v| T::from_f64(f64::from(v))).collect(),
        ),
        mask: Tensor::from_parts_unchecked(
            shape.to_vec(),
            mask.data.iter().map(|&v| T::from_f64(f64::from(v))).collect(),
        ),
    }
}

pub fn lesion_samples<T: Element>(n: usize, size: usize, seed: u64) -> Vec<Sample<T>> {
    lesion_slices(n, size, seed)
        .iter()
        .map(|(i, m)| to_sample(i, m))
        .collect()
}

/// Slice labels for 5212 slices, 1043 of them positive, spread over
/// patients of mixed sizes. Infected patients carry both positive and
/// negative slices; healthy patients only negatives.
pub fn cohort_records(seed: u64) -> Vec<SliceRecord> {
    const POSITIVES: usize = 1043;
    const NEGATIVES: usize = 4169;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(POSITIVES + NEGATIVES);
    let (mut pos_left, mut neg_left) = (POSITIVES, NEGATIVES);
    let mut patient = 0usize;
    let push = |patient: usize, p: usize, n: usize, records: &mut Vec<SliceRecord>| {
        for i in 0..p + n {
            records.push(SliceRecord {
                patient_id: format!("P{patient:04}"),
                scan_id: format!("S{patient:04}"),
                slice_index: i as u32,
                image_path: format!("P{patient:04}/{i:03}.png").into(),
                label: if i >= n / 2 && i < n / 2 + p {
                    Label::Positive
                } else {
                    Label::Negative
                },
                regions: Vec::new(),
                mask_path: None,
            });
        }
    };
    // Large scans first, then progressively smaller exports.
    while pos_left > 150 {
        let p = rng.random_range(8..30).min(pos_left);
        let n = rng.random_range(10..40).min(neg_left);
        push(patient, p, n, &mut records);
        pos_left -= p;
        neg_left -= n;
        patient += 1;
    }
    while neg_left > 600 {
        let n = rng.random_range(15..45).min(neg_left);
        push(patient, 0, n, &mut records);
        neg_left -= n;
        patient += 1;
    }
    while pos_left + neg_left > 0 {
        let p = rng.random_range(0..=2).min(pos_left);
        let n = rng.random_range(0..=3).min(neg_left);
        if p + n == 0 {
            continue;
        }
        push(patient, p, n, &mut records);
        pos_left -= p;
        neg_left -= n;
        patient += 1;
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_are_seeded_and_in_range() {
        let a = lesion_slices(3, 32, 5);
        assert_eq!(a, lesion_slices(3, 32, 5));
        for (img, mask) in &a {
            assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(mask.count() > 0);
        }
    }

    #[test]
    fn cohort_counts() {
        let r = cohort_records(1);
        assert_eq!(r.len(), 5212);
        assert_eq!(r.iter().filter(|x| x.label.is_positive()).count(), 1043);
    }
}
