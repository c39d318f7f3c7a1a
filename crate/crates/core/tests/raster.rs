use ctseg::data::{rasterize_region, rasterize_regions, Region};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute force: test every pixel centre against the shape directly.
fn brute_force(region: &Region, h: usize, w: usize) -> Vec<u8> {
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64, y as f64);
            let inside = match region {
                Region::Circle { cx, cy, r } => (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r,
                Region::Ellipse { cx, cy, rx, ry } => {
                    let u = (px - cx) / rx;
                    let v = (py - cy) / ry;
                    u * u + v * v <= 1.0
                }
                Region::Polygon { points } => even_odd(points, px, py) || on_boundary(points, px, py),
            };
            out[y * w + x] = u8::from(inside);
        }
    }
    out
}

fn even_odd(p: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut c = false;
    for i in 0..p.len() {
        let (xi, yi) = p[i];
        let (xj, yj) = p[(i + p.len() - 1) % p.len()];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            c = !c;
        }
    }
    c
}

fn on_boundary(p: &[(f64, f64)], x: f64, y: f64) -> bool {
    (0..p.len()).any(|i| {
        let (ax, ay) = p[i];
        let (bx, by) = p[(i + 1) % p.len()];
        (bx - ax) * (y - ay) - (by - ay) * (x - ax) == 0.0
            && ax.min(bx) <= x
            && x <= ax.max(bx)
            && ay.min(by) <= y
            && y <= ay.max(by)
    })
}

fn random_region(rng: &mut ChaCha8Rng) -> Region {
    // Integer-valued coordinates exercise exact boundary hits; the rest
    // are arbitrary reals, some hanging off the frame.
    let integral = rng.random_bool(0.4);
    let kind = rng.random_range(0..3);
    let n = rng.random_range(3..9);
    let mut coord = |lo: f64, hi: f64| {
        let v = rng.random_range(lo..hi);
        if integral {
            v.round()
        } else {
            v
        }
    };
    match kind {
        0 => Region::Circle {
            cx: coord(-5.0, 69.0),
            cy: coord(-5.0, 69.0),
            r: coord(1.0, 20.0).max(1.0),
        },
        1 => Region::Ellipse {
            cx: coord(-5.0, 69.0),
            cy: coord(-5.0, 69.0),
            rx: coord(1.0, 25.0).max(1.0),
            ry: coord(1.0, 25.0).max(1.0),
        },
        _ => Region::Polygon {
            points: (0..n).map(|_| (coord(-8.0, 72.0), coord(-8.0, 72.0))).collect(),
        },
    }
}

#[test]
fn hundred_random_regions_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let mut kinds = [0usize; 3];
    for i in 0..100 {
        let r = random_region(&mut rng);
        kinds[match r {
            Region::Circle { .. } => 0,
            Region::Ellipse { .. } => 1,
            Region::Polygon { .. } => 2,
        }] += 1;
        assert_eq!(
            rasterize_region(&r, 64, 64).data,
            brute_force(&r, 64, 64),
            "region {i}: {r:?}"
        );
    }
    assert!(kinds.iter().all(|&k| k >= 20), "{kinds:?}");
}

#[test]
fn unit_circle_sets_five_pixels() {
    let r = Region::Circle {
        cx: 2.0,
        cy: 2.0,
        r: 1.0,
    };
    let m = rasterize_region(&r, 5, 5);
    assert_eq!(m.count(), 5);
    for (x, y) in [(2, 2), (1, 2), (3, 2), (2, 1), (2, 3)] {
        assert_eq!(m.get(y, x), 1);
    }
    assert_eq!(m.data, brute_force(&r, 5, 5));
}

#[test]
fn square_polygon_matches_brute_force() {
    let r = Region::Polygon {
        points: vec![(1.0, 1.0), (3.0, 1.0), (3.0, 3.0), (1.0, 3.0)],
    };
    assert_eq!(rasterize_region(&r, 5, 5).data, brute_force(&r, 5, 5));
}

proptest! {
    #[test]
    fn union_is_elementwise_or(seed in any::<u64>(), count in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let regions: Vec<Region> = (0..count).map(|_| random_region(&mut rng)).collect();
        let union = rasterize_regions(&regions, 48, 40);
        let mut or = vec![0u8; 48 * 40];
        for r in &regions {
            for (o, v) in or.iter_mut().zip(rasterize_region(r, 48, 40).data) {
                *o |= v;
            }
        }
        prop_assert!(union.data.iter().all(|&v| v <= 1));
        prop_assert_eq!(union.data, or);
    }
}
