//! Pixel `(x, y)` (column x, row y) is sampled at the integer point
//! `(x, y)`, and every shape test includes its boundary.

use super::{Grid, Mask, Region};

/// Even-odd crossing test (W. R. Franklin's PNPOLY).
pub fn point_in_polygon(points: &[(f64, f64)], px: f64, py: f64) -> bool {
    let mut inside = false;
    let mut j = points.len() - 1;
    for i in 0..points.len() {
        let (xi, yi) = points[i];
        let (xj, yj) = points[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn on_segment(a: (f64, f64), b: (f64, f64), px: f64, py: f64) -> bool {
    let cross = (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
    cross == 0.0 && a.0.min(b.0) <= px && px <= a.0.max(b.0) && a.1.min(b.1) <= py && py <= a.1.max(b.1)
}

/// True if `(px, py)` lies exactly on an edge of the closed polygon.
pub fn point_on_polygon_boundary(points: &[(f64, f64)], px: f64, py: f64) -> bool {
    (0..points.len()).any(|i| on_segment(points[i], points[(i + 1) % points.len()], px, py))
}

/// Per-point membership test that [`rasterize_region`] evaluates.
pub fn point_in_region(region: &Region, px: f64, py: f64) -> bool {
    match region {
        Region::Circle { cx, cy, r } => (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r,
        Region::Ellipse { cx, cy, rx, ry } => {
            let u = (px - cx) / rx;
            let v = (py - cy) / ry;
            u * u + v * v <= 1.0
        }
        Region::Polygon { points } => point_in_polygon(points, px, py) || point_on_polygon_boundary(points, px, py),
    }
}

/// Clipped integer range covering `[lo, hi]` padded by one pixel.
fn span(lo: f64, hi: f64, extent: usize) -> std::ops::Range<usize> {
    let a = (lo.floor() - 1.0).max(0.0);
    let b = (hi.ceil() + 2.0).min(extent as f64);
    if b <= a {
        0..0
    } else {
        a as usize..b as usize
    }
}

fn fill_box(mask: &mut Mask, region: &Region, ys: std::ops::Range<usize>, xs: std::ops::Range<usize>) {
    for y in ys {
        for x in xs.clone() {
            if point_in_region(region, x as f64, y as f64) {
                mask.set(y, x, 1);
            }
        }
    }
}

/// ORs one region into `mask`.
fn paint(mask: &mut Mask, region: &Region) {
    let (h, w) = (mask.height, mask.width);
    match region {
        Region::Circle { cx, cy, r } => {
            fill_box(mask, region, span(cy - r, cy + r, h), span(cx - r, cx + r, w));
        }
        Region::Ellipse { cx, cy, rx, ry } => {
            fill_box(mask, region, span(cy - ry, cy + ry, h), span(cx - rx, cx + rx, w));
        }
        Region::Polygon { points } => {
            let n = points.len();
            let mut crossings = Vec::with_capacity(n);
            for y in 0..h {
                let py = y as f64;
                crossings.clear();
                let mut j = n - 1;
                for i in 0..n {
                    let (xi, yi) = points[i];
                    let (xj, yj) = points[j];
                    if (yi > py) != (yj > py) {
                        crossings.push((xj - xi) * (py - yi) / (yj - yi) + xi);
                    }
                    j = i;
                }
                if crossings.is_empty() {
                    continue;
                }
                crossings.sort_by(f64::total_cmp);
                for x in 0..w {
                    let px = x as f64;
                    // PNPOLY toggles once per crossing strictly right of px.
                    let right = crossings.len() - crossings.partition_point(|&c| c <= px);
                    if right % 2 == 1 {
                        mask.set(y, x, 1);
                    }
                }
            }
            for i in 0..n {
                let a = points[i];
                let b = points[(i + 1) % n];
                for y in span(a.1.min(b.1), a.1.max(b.1), h) {
                    for x in span(a.0.min(b.0), a.0.max(b.0), w) {
                        if on_segment(a, b, x as f64, y as f64) {
                            mask.set(y, x, 1);
                        }
                    }
                }
            }
        }
    }
}

pub fn rasterize_region(region: &Region, height: usize, width: usize) -> Mask {
    let mut mask = Grid::filled(height, width, 0u8);
    paint(&mut mask, region);
    mask
}

/// Union of all regions as an H×W {0, 1} mask.
pub fn rasterize_regions(regions: &[Region], height: usize, width: usize) -> Mask {
    let mut mask = Grid::filled(height, width, 0u8);
    for r in regions {
        paint(&mut mask, r);
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_circle_is_a_plus() {
        let m = rasterize_regions(
            &[Region::Circle {
                cx: 2.0,
                cy: 2.0,
                r: 1.0,
            }],
            5,
            5,
        );
        let on: Vec<(usize, usize)> = (0..25).filter(|i| m.data[*i] == 1).map(|i| (i % 5, i / 5)).collect();
        assert_eq!(on, vec![(2, 1), (1, 2), (2, 2), (3, 2), (2, 3)]);
    }

    #[test]
    fn square_includes_boundary() {
        let sq = Region::Polygon {
            points: vec![(1.0, 1.0), (3.0, 1.0), (3.0, 3.0), (1.0, 3.0)],
        };
        let m = rasterize_region(&sq, 5, 5);
        for y in 0..5 {
            for x in 0..5 {
                let expected = (1..=3).contains(&x) && (1..=3).contains(&y);
                assert_eq!(m.get(y, x) == 1, expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn empty_and_outside() {
        assert_eq!(rasterize_regions(&[], 4, 4).count(), 0);
        let far = Region::Ellipse {
            cx: -50.0,
            cy: 100.0,
            rx: 3.0,
            ry: 4.0,
        };
        assert_eq!(rasterize_region(&far, 8, 8).count(), 0);
    }
}
