#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ctseg::data::{quantize_u8, Region};
use ctseg::synthetic::{random_lesions, render_slice};
use ctseg_cli::{cmd_prepare, PrepareArgs};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Dataset {
    pub images: PathBuf,
    pub via: PathBuf,
    pub labels: PathBuf,
}

/// `patients` patients with one scan each of `slices` slices; slices
/// `first_pos..first_pos + n_pos` carry one lesion.
pub fn write_dataset(
    dir: &Path,
    patients: usize,
    slices: usize,
    positive: std::ops::Range<usize>,
    size: usize,
) -> Dataset {
    let images = dir.join("images");
    fs::create_dir_all(&images).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut labels = String::from("filename,patient_id,scan_id,slice_index,label\n");
    let mut via = String::from("{");
    let mut first = true;
    for p in 0..patients {
        for i in 0..slices {
            let name = format!("p{p}_s{i:02}.png");
            let lesions = if positive.contains(&i) {
                random_lesions(&mut rng, size, 1)
            } else {
                Vec::new()
            };
            let (img, _) = render_slice(&mut rng, size, &lesions);
            image::save_buffer(
                images.join(&name),
                &quantize_u8(&img),
                size as u32,
                size as u32,
                image::ExtendedColorType::L8,
            )
            .unwrap();
            let label = if lesions.is_empty() { "negative" } else { "positive" };
            let _ = writeln!(labels, "{name},P{p},S{p},{i},{label}");
            if !first {
                via.push(',');
            }
            first = false;
            let _ = write!(
                via,
                "\"{name}\":{{\"filename\":\"{name}\",\"regions\":[{}]}}",
                regions_json(&lesions)
            );
        }
    }
    via.push('}');
    let ds = Dataset {
        images,
        via: dir.join("via.json"),
        labels: dir.join("labels.csv"),
    };
    fs::write(&ds.via, via).unwrap();
    fs::write(&ds.labels, labels).unwrap();
    ds
}

fn regions_json(regions: &[Region]) -> String {
    regions
        .iter()
        .map(|r| match r {
            Region::Ellipse { cx, cy, rx, ry } => format!(
                "{{\"shape_attributes\":{{\"name\":\"ellipse\",\"cx\":{cx},\"cy\":{cy},\"rx\":{rx},\"ry\":{ry}}},\"region_attributes\":{{}}}}"
            ),
            other => panic!("unexpected region {other:?}"),
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// A tiny network and schedule, fast enough for tests.
pub fn small_config(dir: &Path, data_dir: &Path, out_dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "data_dir = {:?}\nout_dir = {:?}\nseed = 3\ndepth = 2\nbase_channels = 4\ninput_size = 32\n\
         max_epochs = 2\nbatch_size = 4\nlearning_rate = 1e-3\nconsecutive_k = 2\nbootstrap_resamples = 1000\n",
        data_dir.display().to_string(),
        out_dir.display().to_string()
    );
    fs::write(&path, text).unwrap();
    path
}

/// Ten patients with one positive slice in five: every patient-level split
/// hits the target prevalence exactly.
pub fn prepared(dir: &Path) -> (PathBuf, PathBuf) {
    let ds = write_dataset(dir, 10, 5, 2..3, 48);
    let data_dir = dir.join("prepared");
    let cfg = small_config(dir, &data_dir, &dir.join("run"));
    cmd_prepare(&PrepareArgs {
        via: ds.via,
        labels: ds.labels,
        images: ds.images,
        out: Some(data_dir.clone()),
        config: Some(cfg.clone()),
        seed: None,
    })
    .unwrap();
    (data_dir, cfg)
}
