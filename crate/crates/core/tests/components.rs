use ctseg::data::Grid;
use ctseg::inference::{classify_slice, connected_components, SliceRule};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Depth-first flood fill, components numbered by first row-major pixel.
fn flood(mask: &[u8], h: usize, w: usize) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; h * w];
    let mut areas = Vec::new();
    for start in 0..h * w {
        if mask[start] == 0 || labels[start] != 0 {
            continue;
        }
        areas.push(0);
        let id = areas.len() as u32;
        let mut stack = vec![start];
        labels[start] = id;
        while let Some(p) = stack.pop() {
            areas[id as usize - 1] += 1;
            let (y, x) = ((p / w) as i64, (p % w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask[q] == 1 && labels[q] == 0 {
                        labels[q] = id;
                        stack.push(q);
                    }
                }
            }
        }
    }
    (labels, areas)
}

#[test]
fn random_masks_match_flood_fill() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..200 {
        let density = rng.random_range(0.05..0.7);
        let data: Vec<u8> = (0..32 * 32).map(|_| u8::from(rng.random_bool(density))).collect();
        let (labels, areas) = flood(&data, 32, 32);
        let c = connected_components(&Grid::new(32, 32, data.clone()).unwrap());
        assert_eq!(c.areas, areas);
        assert_eq!(c.labels.data, labels);
        assert_eq!(c.areas.iter().sum::<usize>(), data.iter().filter(|&&v| v == 1).count());
    }
}

proptest! {
    #[test]
    fn raising_threshold_never_creates_a_positive(
        seed in any::<u64>(), t1 in 0.05f32..0.95, dt in 0.0f32..0.5, min_area in 1usize..20
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prob: Vec<f32> = (0..24 * 24).map(|_| rng.random_range(0.001f32..0.999)).collect();
        let lo = SliceRule { pixel_threshold: t1, min_area: Some(min_area) };
        let hi = SliceRule { pixel_threshold: t1 + dt, min_area: Some(min_area) };
        let a = classify_slice("s", 0, &prob, 24, 24, &lo).unwrap();
        let b = classify_slice("s", 0, &prob, 24, 24, &hi).unwrap();
        prop_assert!(a.positive || !b.positive);
        prop_assert!(b.lesion_area <= b.total_positive_area && b.total_positive_area <= 24 * 24);
    }
}
