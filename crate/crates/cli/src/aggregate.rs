//! `ctseg aggregate`: slice calls → scan verdicts.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::Args;
use ctseg::inference::{aggregate_scan, scan_report_csv, ScanPrediction};
use serde::Deserialize;

use crate::config::RunConfig;
use crate::io::{require_file, write_file};
use crate::CliError;

#[derive(Debug, Clone, Args)]
pub struct AggregateArgs {
    /// predictions.csv written by `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Consecutive positive slices needed for a positive scan.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct PredictionRow {
    pub scan_id: String,
    pub slice_index: u32,
    #[allow(dead_code)]
    pub image_path: String,
    pub positive: u8,
    #[allow(dead_code)]
    pub lesion_area: usize,
    #[allow(dead_code)]
    pub total_positive_area: usize,
    pub mask_path: String,
}

pub(crate) fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, CliError> {
    require_file(path, "predictions file")?;
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut r = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for (i, row) in r.deserialize::<PredictionRow>().enumerate() {
        let row = row.map_err(|e| CliError::Input(format!("{}, line {}: {e}", path.display(), i + 2)))?;
        if row.positive > 1 {
            return Err(CliError::Input(format!(
                "{}, line {}: positive must be 0 or 1",
                path.display(),
                i + 2
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Groups rows by scan, orders each scan by slice index and applies the
/// consecutive-slice rule. Scans come back sorted by id.
pub fn aggregate_rows(rows: &[(String, u32, bool)], k: usize) -> Result<Vec<ScanPrediction>, CliError> {
    let mut by_scan: BTreeMap<&str, Vec<(u32, bool)>> = BTreeMap::new();
    for (scan, idx, pos) in rows {
        by_scan.entry(scan).or_default().push((*idx, *pos));
    }
    by_scan
        .into_iter()
        .map(|(scan, mut slices)| {
            slices.sort_by_key(|s| s.0);
            Ok(aggregate_scan(scan, &slices, k)?)
        })
        .collect()
}

pub fn cmd_aggregate(args: &AggregateArgs) -> Result<Vec<ScanPrediction>, CliError> {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let k = args.k.unwrap_or(cfg.consecutive_k);
    let rows: Vec<(String, u32, bool)> = read_predictions(&args.predictions)?
        .into_iter()
        .map(|r| (r.scan_id, r.slice_index, r.positive == 1))
        .collect();
    let scans = aggregate_rows(&rows, k)?;
    write_file(&args.out, scan_report_csv(&scans))?;
    Ok(scans)
}
