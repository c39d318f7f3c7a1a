//! `ctseg selftest`: quick built-in checks of the numerical kernels against
//! independent reference computations.

use std::time::Instant;

use clap::{Args, ValueEnum};
use ctseg::data::{rasterize_region, Grid, Region};
use ctseg::gradcheck::op_suite;
use ctseg::inference::{aggregate_scan, connected_components, DEFAULT_K};
use ctseg::metrics::{f1_score, sensitivity, specificity, CiMethod, ConfusionMatrix};
use ctseg::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Perturb the input gradient of the convolution backward pass.
    ConvBackward,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SelftestArgs {
    #[arg(long, hide = true, value_enum)]
    pub inject_fault: Option<Fault>,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "ok  " } else { "FAIL" };
        write!(f, "{status} {:<14} {:>6.2}s  {}", self.name, self.seconds, self.detail)
    }
}

type CheckFn = fn(Option<Fault>) -> Result<String, String>;

/// Runs every check, printing each line as it completes. Fails when any
/// check fails.
pub fn cmd_selftest(args: &SelftestArgs) -> Result<Vec<Check>, CliError> {
    let checks: [(&'static str, CheckFn); 6] = [
        ("gradients", gradients),
        ("adjoint", adjoint),
        ("raster", raster),
        ("aggregation", aggregation),
        ("components", components),
        ("metrics", metrics),
    ];
    let mut out = Vec::new();
    for (name, f) in checks {
        let start = Instant::now();
        let r = f(args.inject_fault);
        let check = Check {
            name,
            passed: r.is_ok(),
            detail: r.unwrap_or_else(|e| e),
            seconds: start.elapsed().as_secs_f64(),
        };
        println!("{check}");
        out.push(check);
    }
    let failed: Vec<&str> = out.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Failure(format!("selftest failed: {}", failed.join(", "))))
    }
}

fn gradients(fault: Option<Fault>) -> Result<String, String> {
    let tape = if fault == Some(Fault::ConvBackward) {
        || {
            let mut t = Tape::new();
            t.inject_conv_backward_fault();
            t
        }
    } else {
        Tape::new
    };
    let reports = op_suite(10, 1e-5, tape).map_err(|e| e.to_string())?;
    let worst = reports
        .iter()
        .max_by(|a, b| a.worst.total_cmp(&b.worst))
        .ok_or("no operations checked")?;
    let msg = format!(
        "{} op/argument pairs, worst {} wrt {}: {:.2e}",
        reports.len(),
        worst.op,
        worst.wrt,
        worst.worst
    );
    if worst.worst < 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn adjoint(_: Option<Fault>) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let (n, c, o) = (
            rng.random_range(1..=2),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        );
        let (h, w) = (2 * rng.random_range(1..=4), 2 * rng.random_range(1..=4));
        let x = Tensor::<f64>::randn_seeded(&[n, c, h, w], 3 * i, 1.0).map_err(|e| e.to_string())?;
        let y = Tensor::<f64>::randn_seeded(&[n, o, h / 2, w / 2], 3 * i + 1, 1.0).map_err(|e| e.to_string())?;
        let k = Tensor::<f64>::randn_seeded(&[o, c, 2, 2], 3 * i + 2, 1.0).map_err(|e| e.to_string())?;
        let mut t = Tape::new();
        let (xv, yv, kv) = (t.constant(x.clone()), t.constant(y.clone()), t.constant(k));
        let conv = t.conv2d(xv, kv, None, 2, 0).map_err(|e| e.to_string())?;
        let back = t.conv_transpose2x2(yv, kv, None).map_err(|e| e.to_string())?;
        let lhs: f64 = t.value(conv).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(t.value(back).data()).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs());
    }
    let msg = format!("20 instances, worst |<Ax,y> - <x,A'y>| = {worst:.1e}");
    if worst < 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn inside(region: &Region, px: f64, py: f64) -> bool {
    match region {
        Region::Circle { cx, cy, r } => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
        Region::Ellipse { cx, cy, rx, ry } => ((px - cx) / rx).powi(2) + ((py - cy) / ry).powi(2) <= 1.0,
        Region::Polygon { points } => {
            let n = points.len();
            let mut odd = false;
            let mut edge = false;
            for i in 0..n {
                let (ax, ay) = points[i];
                let (bx, by) = points[(i + 1) % n];
                if (ay > py) != (by > py) && px < (bx - ax) * (py - ay) / (by - ay) + ax {
                    odd = !odd;
                }
                edge |= (bx - ax) * (py - ay) == (by - ay) * (px - ax)
                    && ax.min(bx) <= px
                    && px <= ax.max(bx)
                    && ay.min(by) <= py
                    && py <= ay.max(by);
            }
            odd || edge
        }
    }
}

fn raster(_: Option<Fault>) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let mut regions = vec![Region::Circle {
        cx: 10.0,
        cy: 10.0,
        r: 1.0,
    }];
    for _ in 0..100 {
        let round = rng.random_bool(0.5);
        let mut v = |lo: f64, hi: f64| {
            let x = rng.random_range(lo..hi);
            if round {
                x.round()
            } else {
                x
            }
        };
        regions.push(match (v(0.0, 3.0) as usize) % 3 {
            0 => Region::Circle {
                cx: v(-4.0, 68.0),
                cy: v(-4.0, 68.0),
                r: v(1.0, 20.0).max(1.0),
            },
            1 => Region::Ellipse {
                cx: v(-4.0, 68.0),
                cy: v(-4.0, 68.0),
                rx: v(1.0, 25.0).max(1.0),
                ry: v(1.0, 25.0).max(1.0),
            },
            _ => Region::Polygon {
                points: (0..5).map(|_| (v(-6.0, 70.0), v(-6.0, 70.0))).collect(),
            },
        });
    }
    for (i, r) in regions.iter().enumerate() {
        let m = rasterize_region(r, 64, 64);
        for y in 0..64 {
            for x in 0..64 {
                if (m.get(y, x) == 1) != inside(r, x as f64, y as f64) {
                    return Err(format!("region {i} differs at ({x}, {y})"));
                }
            }
        }
    }
    let unit = rasterize_region(&regions[0], 64, 64).count();
    if unit != 5 {
        return Err(format!("unit circle covers {unit} pixels, expected 5"));
    }
    Ok(format!("{} regions at 64×64 match the per-pixel test", regions.len()))
}

fn aggregation(_: Option<Fault>) -> Result<String, String> {
    let k = DEFAULT_K;
    let mut count = 0u64;
    for len in 0..=20usize {
        for bits in 0u32..(1 << len) {
            let flags: Vec<bool> = (0..len).map(|i| bits >> i & 1 == 1).collect();
            let want = len >= k && (0..=len - k).any(|s| flags[s..s + k].iter().all(|&b| b));
            let slices: Vec<(u32, bool)> = flags.iter().enumerate().map(|(i, &f)| (i as u32, f)).collect();
            let got = aggregate_scan("s", &slices, k).map_err(|e| e.to_string())?;
            if got.positive != want {
                return Err(format!("sequence {flags:?}"));
            }
            count += 1;
        }
    }
    Ok(format!("{count} sequences up to length 20"))
}

fn components(_: Option<Fault>) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..50 {
        let (h, w) = (rng.random_range(1..40), rng.random_range(1..40));
        let p = rng.random_range(0.1..0.7);
        let data: Vec<u8> = (0..h * w).map(|_| u8::from(rng.random_bool(p))).collect();
        let mut areas = reference_areas(&data, h, w);
        let mut got = connected_components(&Grid::new(h, w, data).map_err(|e| e.to_string())?).areas;
        areas.sort_unstable();
        got.sort_unstable();
        if got != areas {
            return Err(format!("case {case}: component areas differ"));
        }
    }
    Ok("50 random masks match flood fill".into())
}

fn reference_areas(mask: &[u8], h: usize, w: usize) -> Vec<usize> {
    let mut seen = vec![false; mask.len()];
    let mut areas = Vec::new();
    for s in 0..mask.len() {
        if mask[s] == 0 || seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![s];
        let mut area = 0;
        while let Some(p) = stack.pop() {
            area += 1;
            let (y, x) = (p / w, p % w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let q = ny * w + nx;
                    if mask[q] == 1 && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        areas.push(area);
    }
    areas
}

fn metrics(_: Option<Fault>) -> Result<String, String> {
    let cm = ConfusionMatrix::new(27, 1, 99, 13);
    let sens = sensitivity(&cm, CiMethod::WaldClipped).map_err(|e| e.to_string())?;
    let spec = specificity(&cm, CiMethod::WaldClipped).map_err(|e| e.to_string())?;
    let f1 = f1_score(&cm).map_err(|e| e.to_string())?;
    let expect = [
        ("sensitivity", sens.value, 27.0 / 28.0),
        ("specificity", spec.value, 99.0 / 112.0),
        ("f1", f1, 54.0 / 68.0),
        ("specificity low", spec.ci_low, 0.824_606_226),
        ("specificity high", spec.ci_high, 0.943_250_917),
    ];
    for (name, got, want) in expect {
        if (got - want).abs() > 1e-5 {
            return Err(format!("{name}: {got} != {want}"));
        }
    }
    Ok(format!("sens {:.3} spec {:.3} f1 {f1:.3}", sens.value, spec.value))
}
