//! `ctseg prepare`: annotations + labels → manifest, masks and splits.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::Args;
use ctseg::data::{
    build_manifest, parse_via_json, read_labels, stratified_split, write_manifest, DatasetSplit, SliceRecord,
};

use crate::config::RunConfig;
use crate::io::{create_dir, read_file, require_file};
use crate::CliError;

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    /// VIA project or annotation export (JSON).
    #[arg(long)]
    pub via: PathBuf,
    /// CSV with columns filename,patient_id,scan_id,slice_index,label.
    #[arg(long)]
    pub labels: PathBuf,
    /// Directory the image filenames are relative to.
    #[arg(long)]
    pub images: PathBuf,
    /// Output directory (defaults to `data_dir` from the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct PrepareSummary {
    pub out_dir: PathBuf,
    pub splits: [DatasetSplit; 3],
    pub table: String,
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<PrepareSummary, CliError> {
    let mut cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.data_dir.clone());
    require_file(&args.via, "annotation file")?;
    require_file(&args.labels, "labels file")?;
    if !args.images.is_dir() {
        return Err(CliError::Input(format!(
            "image directory not found: {}",
            args.images.display()
        )));
    }
    let via = parse_via_json(&read_file(&args.via)?)?;
    let labels = read_labels(&args.labels)?;
    let mask_dir = out.join("masks");
    create_dir(&mask_dir)?;
    let records = build_manifest(&args.images, &via, &labels, Some(&mask_dir))?;
    let splits = stratified_split(&records, cfg.split_ratios(), cfg.prevalence, cfg.seed)?;

    write_csv(&out.join("manifest.csv"), &records, None)?;
    for s in &splits {
        write_csv(&out.join(format!("{}.csv", s.name)), &s.records, Some(cfg.seed))?;
    }
    let table = balance_table(&splits);
    Ok(PrepareSummary {
        out_dir: out,
        splits,
        table,
    })
}

fn write_csv(path: &Path, records: &[SliceRecord], seed: Option<u64>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))?;
    write_manifest(records, seed, BufWriter::new(file))
        .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}

/// Per-split counts in the shape of a dataset balance table.
pub fn balance_table(splits: &[DatasetSplit]) -> String {
    let mut s = format!(
        "{:<12}{:>10}{:>10}{:>10}{:>12}{:>10}\n",
        "split", "slices", "positive", "negative", "prevalence", "patients"
    );
    for sp in splits {
        let patients: BTreeSet<&str> = sp.records.iter().map(|r| r.patient_id.as_str()).collect();
        let prev = if sp.is_empty() {
            0.0
        } else {
            sp.positives() as f64 / sp.len() as f64
        };
        let _ = writeln!(
            s,
            "{:<12}{:>10}{:>10}{:>10}{:>12.3}{:>10}",
            sp.name.to_string(),
            sp.len(),
            sp.positives(),
            sp.negatives(),
            prev,
            patients.len()
        );
    }
    s
}
