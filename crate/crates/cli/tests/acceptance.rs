//! Acceptance criteria, one line each. Runs without the libtest harness so
//! every line is printed; exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use ctseg::data::{rasterize_region, stratified_split, Region};
use ctseg::gradcheck::op_suite;
use ctseg::inference::{aggregate_scan, DEFAULT_K};
use ctseg::metrics::{dice_flat, f1_score, sensitivity, specificity, CiMethod, ConfusionMatrix};
use ctseg::synthetic::{cohort_records, lesion_samples};
use ctseg::train::{train_epoch, AdamState, Sample};
use ctseg::{Tape, Tensor, UNet, UNetConfig};
use ctseg_cli::{cmd_predict, cmd_train, PredictArgs, TrainArgs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scan_level_metrics() -> Outcome {
    let cm = ConfusionMatrix::new(27, 1, 99, 13);
    let sens = sensitivity(&cm, CiMethod::WaldClipped)
        .map_err(|e| e.to_string())?
        .value;
    let spec_r = specificity(&cm, CiMethod::WaldClipped).map_err(|e| e.to_string())?;
    let f1 = f1_score(&cm).map_err(|e| e.to_string())?;
    let round2 = |v: f64| (v * 100.0).round() / 100.0;
    let ci = (round2(spec_r.ci_low), round2(spec_r.ci_high));
    check(
        within(sens, 0.964, 0.0005)
            && within(spec_r.value, 0.884, 0.0005)
            && within(f1, 0.794, 0.0005)
            && ci == (0.82, 0.94),
        format!(
            "sens {sens:.4} spec {:.4} f1 {f1:.4} spec CI ({:.4}, {:.4}) -> {ci:?}",
            spec_r.value, spec_r.ci_low, spec_r.ci_high
        ),
    )
}

fn slice_level_metrics() -> Outcome {
    let sens = 256.0 / 266.0;
    let spec = 996.0 / 1064.0;
    check(
        within(sens, 0.963, 0.0005) && within(spec, 0.936, 0.0005),
        format!("256/266 = {sens:.6} (target 0.963 ± 0.0005), 996/1064 = {spec:.6} (target 0.936 ± 0.0005)"),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let reports = op_suite(10, 1e-5, Tape::new).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let ops: BTreeSet<&str> = reports.iter().map(|r| r.op).collect();
    let required = [
        "add",
        "mul",
        "relu",
        "sigmoid",
        "concat",
        "conv2d",
        "conv2d stride 2",
        "separable conv",
        "transposed conv",
        "maxpool",
        "batchnorm train",
        "bce",
    ];
    let missing: Vec<&&str> = required.iter().filter(|o| !ops.contains(**o)).collect();
    let worst = reports.iter().map(|r| r.worst).fold(0.0, f64::max);
    let seeds = reports.iter().map(|r| r.seeds).min().unwrap_or(0);
    check(
        missing.is_empty() && worst < 1e-4 && seeds >= 10 && elapsed < Duration::from_secs(60),
        format!(
            "{} op/argument pairs over {} ops, {seeds} seeds, worst rel err {worst:.2e}, {:.1}s, missing {missing:?}",
            reports.len(),
            ops.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn mean_train_dice(model: &UNet<f32>, data: &[Sample<f32>]) -> Result<f64, String> {
    let mut sum = 0.0;
    for chunk in data.chunks(4) {
        let size = chunk[0].image.shape()[2];
        let mut images = Vec::new();
        for s in chunk {
            images.extend_from_slice(s.image.data());
        }
        let batch = Tensor::from_vec(&[chunk.len(), 1, size, size], images).map_err(|e| e.to_string())?;
        let probs = model.forward(&batch).map_err(|e| e.to_string())?;
        for (s, p) in chunk.iter().zip(probs.data().chunks(size * size)) {
            let pred: Vec<u8> = p.iter().map(|&v| u8::from(v > 0.5)).collect();
            let truth: Vec<u8> = s.mask.data().iter().map(|&v| u8::from(v > 0.5)).collect();
            sum += dice_flat(&pred, &truth);
        }
    }
    Ok(sum / data.len() as f64)
}

/// Returns (epoch at which dice first reached 0.95, dice there).
fn overfit_once() -> Result<Option<(usize, f64)>, String> {
    let cfg = UNetConfig {
        depth: 3,
        base_channels: 16,
        input_size: 64,
        ..UNetConfig::default()
    };
    let data = lesion_samples::<f32>(8, 64, 11);
    let mut model = UNet::<f32>::build(&cfg, 1).map_err(|e| e.to_string())?;
    let mut adam = AdamState::new(1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for epoch in 1..=200 {
        train_epoch(&mut model, &data, 4, &mut adam, &mut rng, epoch).map_err(|e| e.to_string())?;
        if epoch % 5 == 0 {
            let d = mean_train_dice(&model, &data)?;
            if d >= 0.95 {
                return Ok(Some((epoch, d)));
            }
        }
    }
    Ok(None)
}

fn overfit() -> Outcome {
    let timed = || -> Result<(Option<(usize, f64)>, Duration), String> {
        let start = Instant::now();
        Ok((overfit_once()?, start.elapsed()))
    };
    let (first, t1) = timed()?;
    let (second, t2) = timed()?;
    let same = match (first, second) {
        (Some((e1, d1)), Some((e2, d2))) => e1 == e2 && d1.to_bits() == d2.to_bits(),
        _ => false,
    };
    let limit = Duration::from_secs(300);
    check(
        first.is_some() && same && t1 < limit && t2 < limit,
        format!(
            "reached {first:?} in {:.1}s, repeat {second:?} in {:.1}s",
            t1.as_secs_f64(),
            t2.as_secs_f64()
        ),
    )
}

fn aggregation() -> Outcome {
    let verdict =
        |f: &[bool]| f.len() >= DEFAULT_K && (0..=f.len() - DEFAULT_K).any(|i| f[i..i + DEFAULT_K].iter().all(|&b| b));
    let run = |f: &[bool]| {
        aggregate_scan(
            "s",
            &f.iter().enumerate().map(|(i, &b)| (i as u32, b)).collect::<Vec<_>>(),
            DEFAULT_K,
        )
    };
    let mut n = 0u64;
    for len in 0..=20usize {
        for bits in 0u32..(1 << len) {
            let f: Vec<bool> = (0..len).map(|i| bits >> i & 1 == 1).collect();
            if run(&f).map_err(|e| e.to_string())?.positive != verdict(&f) {
                return Err(format!("mismatch on {f:?}"));
            }
            n += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let p = rng.random_range(0.5..0.99);
        let f: Vec<bool> = (0..300).map(|_| rng.random_bool(p)).collect();
        if run(&f).map_err(|e| e.to_string())?.positive != verdict(&f) {
            return Err("mismatch on a length-300 sequence".into());
        }
        n += 1;
    }
    let mut boundary = true;
    for start in [0usize, 50, 285] {
        for (len, want) in [(15, true), (14, false)] {
            let mut f = vec![false; 300];
            f[start..(start + len).min(300)].iter_mut().for_each(|b| *b = true);
            boundary &= run(&f).map_err(|e| e.to_string())?.positive == want;
        }
    }
    check(
        boundary,
        format!("{n} sequences agree with the window oracle; 15/14-run boundaries {boundary}"),
    )
}

fn brute_inside(r: &Region, px: f64, py: f64) -> bool {
    match r {
        Region::Circle { cx, cy, r } => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
        Region::Ellipse { cx, cy, rx, ry } => ((px - cx) / rx).powi(2) + ((py - cy) / ry).powi(2) <= 1.0,
        Region::Polygon { points } => {
            let n = points.len();
            let mut odd = false;
            for i in 0..n {
                let (xi, yi) = points[i];
                let (xj, yj) = points[(i + n - 1) % n];
                if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                    odd = !odd;
                }
                let on = (xj - xi) * (py - yi) - (yj - yi) * (px - xi) == 0.0
                    && xi.min(xj) <= px
                    && px <= xi.max(xj)
                    && yi.min(yj) <= py
                    && py <= yi.max(yj);
                if on {
                    return true;
                }
            }
            odd
        }
    }
}

fn rasterization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut pixels = 0usize;
    for i in 0..100 {
        let snap = rng.random_bool(0.4);
        let kind = i % 3;
        let mut v = |lo: f64, hi: f64| {
            let x: f64 = rng.random_range(lo..hi);
            if snap {
                x.round()
            } else {
                x
            }
        };
        let region = match kind {
            0 => Region::Circle {
                cx: v(-5.0, 69.0),
                cy: v(-5.0, 69.0),
                r: v(1.0, 20.0).max(1.0),
            },
            1 => Region::Ellipse {
                cx: v(-5.0, 69.0),
                cy: v(-5.0, 69.0),
                rx: v(1.0, 25.0).max(1.0),
                ry: v(1.0, 25.0).max(1.0),
            },
            _ => Region::Polygon {
                points: (0..6).map(|_| (v(-8.0, 72.0), v(-8.0, 72.0))).collect(),
            },
        };
        let m = rasterize_region(&region, 64, 64);
        for y in 0..64 {
            for x in 0..64 {
                if (m.get(y, x) == 1) != brute_inside(&region, x as f64, y as f64) {
                    return Err(format!("region {i} ({region:?}) differs at ({x}, {y})"));
                }
            }
        }
        pixels += m.count();
    }
    let unit = rasterize_region(
        &Region::Circle {
            cx: 32.0,
            cy: 32.0,
            r: 1.0,
        },
        64,
        64,
    )
    .count();
    check(
        unit == 5,
        format!("100 regions exact ({pixels} pixels set); unit circle covers {unit}"),
    )
}

fn adjointness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let (n, c, o) = (
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        );
        let (h, w) = (2 * rng.random_range(1..=6), 2 * rng.random_range(1..=6));
        let t = |shape: &[usize], s: u64| Tensor::<f64>::randn_seeded(shape, s, 1.0).map_err(|e| e.to_string());
        let x = t(&[n, c, h, w], 10 * i)?;
        let y = t(&[n, o, h / 2, w / 2], 10 * i + 1)?;
        let k = t(&[o, c, 2, 2], 10 * i + 2)?;
        let mut tape = Tape::new();
        let (xv, yv, kv) = (tape.constant(x.clone()), tape.constant(y.clone()), tape.constant(k));
        let ax = tape.conv2d(xv, kv, None, 2, 0).map_err(|e| e.to_string())?;
        let aty = tape.conv_transpose2x2(yv, kv, None).map_err(|e| e.to_string())?;
        let lhs: f64 = tape.value(ax).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(tape.value(aty).data()).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs());
    }
    check(
        worst < 1e-10,
        format!("20 instances, worst |<Ax,y> - <x,Aᵀy>| = {worst:.2e}"),
    )
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .filter_map(Result::ok)
        .filter(|e| e.path().is_file())
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn reproducible_cli() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (data, cfg) = common::prepared(dir.path());
    let text = fs::read_to_string(&cfg).map_err(|e| e.to_string())?;
    fs::write(&cfg, format!("{text}checkpoint_every = 1\n")).map_err(|e| e.to_string())?;
    let runs: Vec<_> = (0..2).map(|i| dir.path().join(format!("run{i}"))).collect();
    for r in &runs {
        cmd_train(&TrainArgs {
            config: Some(cfg.clone()),
            out: Some(r.clone()),
            ..TrainArgs::default()
        })
        .map_err(|e| e.to_string())?;
    }
    // config.toml records each run's own out_dir, so it is left out.
    let outputs = |dir: &Path| -> Vec<(String, Vec<u8>)> {
        read_all(dir).into_iter().filter(|(n, _)| n != "config.toml").collect()
    };
    let (a, b) = (outputs(&runs[0]), outputs(&runs[1]));
    let train_same = a.len() == 5 && a == b;
    let preds: Vec<_> = (0..2).map(|i| dir.path().join(format!("pred{i}"))).collect();
    for p in &preds {
        cmd_predict(&PredictArgs {
            weights: runs[0].join("best.csegw"),
            manifest: data.join("test.csv"),
            config: Some(cfg.clone()),
            out: p.clone(),
            overlays: false,
            pixel_threshold: None,
            min_area: None,
        })
        .map_err(|e| e.to_string())?;
    }
    let p0 = fs::read(preds[0].join("predictions.csv")).map_err(|e| e.to_string())?;
    let p1 = fs::read(preds[1].join("predictions.csv")).map_err(|e| e.to_string())?;
    let names: Vec<&str> = a.iter().map(|f| f.0.as_str()).collect();
    check(
        train_same && p0 == p1,
        format!(
            "train outputs {names:?} identical: {train_same}; predictions.csv identical: {}",
            p0 == p1
        ),
    )
}

fn cohort_split() -> Outcome {
    let records = cohort_records(0);
    let splits = stratified_split(&records, [3285.0, 597.0, 1330.0], 0.2, 17).map_err(|e| e.to_string())?;
    let got: Vec<(usize, usize)> = splits.iter().map(|s| (s.positives(), s.negatives())).collect();
    let mut home: HashMap<&str, usize> = HashMap::new();
    let mut disjoint = true;
    for (i, s) in splits.iter().enumerate() {
        for r in &s.records {
            disjoint &= *home.entry(r.patient_id.as_str()).or_insert(i) == i;
        }
    }
    check(
        got == [(657, 2628), (120, 477), (266, 1064)] && disjoint,
        format!("positives/negatives {got:?}; patient-disjoint {disjoint}"),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("scan-level metrics from cm(27,1,99,13)", scan_level_metrics),
        ("slice-level 256/266 and 996/1064", slice_level_metrics),
        ("gradient check of every op", gradient_suite),
        ("overfit 8 synthetic slices to dice >= 0.95", overfit),
        ("consecutive-slice aggregation oracle", aggregation),
        ("rasterization oracle", rasterization),
        ("conv / transposed-conv adjointness", adjointness),
        ("byte-identical train and predict reruns", reproducible_cli),
        ("cohort-scale patient-disjoint split", cohort_split),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (status, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{status} criterion {}: {name} [{:.1}s] {detail}",
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
