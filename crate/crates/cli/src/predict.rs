//! `ctseg predict`: per-slice masks, positivity calls and trend files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use ctseg::data::{load_slice_image, read_manifest, resize_bilinear, save_mask_png, GrayImage, SliceRecord};
use ctseg::inference::{classify_slice, overlay_mask, overlay_to_rgb8, trend_csv, SlicePrediction, SliceRule};
use ctseg::{ModelWeights, Tensor, UNet};

use crate::config::RunConfig;
use crate::io::{create_dir, require_file, write_file};
use crate::CliError;

/// `mask_path` is relative to the directory holding predictions.csv.
pub const PREDICTIONS_HEADER: [&str; 7] = [
    "scan_id",
    "slice_index",
    "image_path",
    "positive",
    "lesion_area",
    "total_positive_area",
    "mask_path",
];

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Manifest listing the slices to segment.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run configuration; when given, the checkpoint must have been trained
    /// with the same architecture.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write RGB overlays of the predicted masks.
    #[arg(long)]
    pub overlays: bool,
    #[arg(long)]
    pub pixel_threshold: Option<f32>,
    /// Minimum lesion area in pixels; 0 scales with the input size.
    #[arg(long)]
    pub min_area: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PredictSummary {
    pub slices: usize,
    pub positive_slices: usize,
    pub scans: usize,
}

pub fn cmd_predict(args: &PredictArgs) -> Result<PredictSummary, CliError> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(t) = args.pixel_threshold {
        cfg.pixel_threshold = t;
    }
    if let Some(a) = args.min_area {
        cfg.min_area = a;
    }
    if !(cfg.pixel_threshold > 0.0 && cfg.pixel_threshold < 1.0) {
        return Err(CliError::Input(format!(
            "pixel threshold must lie in (0, 1), got {}",
            cfg.pixel_threshold
        )));
    }
    require_file(&args.weights, "weight file")?;
    require_file(&args.manifest, "manifest")?;
    let weights = ModelWeights::<f32>::load(&args.weights)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.weights.display())))?;
    if args.config.is_some() {
        let expected = cfg.unet()?.fingerprint();
        if weights.fingerprint != expected {
            return Err(CliError::Input(format!(
                "{} was trained with a different architecture (fingerprint {:016x}, config gives {:016x})",
                args.weights.display(),
                weights.fingerprint,
                expected
            )));
        }
    }
    let model = UNet::from_weights(&weights)?;
    let size = model.config().input_size;
    let rule = SliceRule {
        pixel_threshold: cfg.pixel_threshold,
        min_area: (cfg.min_area > 0).then_some(cfg.min_area),
    };
    let records = read_manifest(&args.manifest)?;

    let mask_dir = args.out.join("pred_masks");
    let trend_dir = args.out.join("trends");
    create_dir(&mask_dir)?;
    create_dir(&trend_dir)?;
    let overlay_dir = args.out.join("overlays");
    if args.overlays {
        create_dir(&overlay_dir)?;
    }

    let mut rows = Vec::with_capacity(records.len());
    let mut by_scan: BTreeMap<String, Vec<SlicePrediction>> = BTreeMap::new();
    for chunk in records.chunks(cfg.batch_size.max(1)) {
        let images = chunk
            .iter()
            .map(|r| Ok(resize_bilinear(&load_slice_image(&r.image_path)?, size, size)?))
            .collect::<Result<Vec<GrayImage>, CliError>>()?;
        let probs = forward_batch(&model, &images, size)?;
        for ((rec, img), prob) in chunk.iter().zip(&images).zip(probs.chunks(size * size)) {
            let pred = classify_slice(&rec.scan_id, rec.slice_index, prob, size, size, &rule)?;
            let mask_name = format!("{}_{}.png", rec.scan_id, rec.slice_index);
            save_mask_png(&pred.mask, &mask_dir.join(&mask_name))?;
            if args.overlays {
                let path = overlay_dir.join(format!("{}_{}.png", rec.scan_id, rec.slice_index));
                save_overlay(img, &pred, cfg.overlay_alpha, &path)?;
            }
            rows.push(row(rec, &pred, &Path::new("pred_masks").join(mask_name)));
            by_scan.entry(rec.scan_id.clone()).or_default().push(pred);
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PREDICTIONS_HEADER).expect("in-memory write");
    for r in &rows {
        w.write_record(r).expect("in-memory write");
    }
    write_file(
        &args.out.join("predictions.csv"),
        w.into_inner().expect("in-memory write"),
    )?;
    for (scan, preds) in &by_scan {
        write_file(&trend_dir.join(format!("{scan}.csv")), trend_csv(preds))?;
    }
    Ok(PredictSummary {
        slices: rows.len(),
        positive_slices: by_scan.values().flatten().filter(|p| p.positive).count(),
        scans: by_scan.len(),
    })
}

fn forward_batch(model: &UNet<f32>, images: &[GrayImage], size: usize) -> Result<Vec<f32>, CliError> {
    let data: Vec<f32> = images.iter().flat_map(|i| i.data.iter().copied()).collect();
    let batch = Tensor::from_vec(&[images.len(), 1, size, size], data).map_err(|e| CliError::Failure(e.to_string()))?;
    Ok(model.forward(&batch)?.data().to_vec())
}

fn row(rec: &SliceRecord, pred: &SlicePrediction, mask_path: &Path) -> [String; 7] {
    [
        rec.scan_id.clone(),
        rec.slice_index.to_string(),
        rec.image_path.display().to_string(),
        u8::from(pred.positive).to_string(),
        pred.lesion_area.to_string(),
        pred.total_positive_area.to_string(),
        mask_path.display().to_string(),
    ]
}

fn save_overlay(img: &GrayImage, pred: &SlicePrediction, alpha: f32, path: &Path) -> Result<(), CliError> {
    let rgb = overlay_to_rgb8(&overlay_mask(img, &pred.mask, alpha)?);
    image::save_buffer(
        path,
        &rgb,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}
