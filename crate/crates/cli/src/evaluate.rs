//! `ctseg evaluate`: metrics against ground truth at scan or slice level.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ctseg::data::{load_mask_png, read_manifest, Label};
use ctseg::metrics::{confusion, mean_dice_over_positives, report_csv, report_text, scan_report, MetricReport};
use serde::Deserialize;

use crate::aggregate::read_predictions;
use crate::config::RunConfig;
use crate::io::{load_truth_mask, require_file, write_file};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Level {
    /// `scan_report.csv` against a `scan_id,label` truth file.
    Scan,
    /// `predictions.csv` against a manifest, with dice on masks.
    Slice,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum, default_value = "scan")]
    pub level: Level,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Where to write the metric CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for the F1 bootstrap.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub resamples: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reports: Vec<MetricReport>,
    pub dice: Option<f64>,
    pub text: String,
}

#[derive(Debug, Deserialize)]
struct ScanTruth {
    scan_id: String,
    label: String,
}

#[derive(Debug, Deserialize)]
struct ScanVerdict {
    scan_id: String,
    verdict: String,
}

fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<Vec<R>, CliError> {
    require_file(path, what)?;
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(file)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::Input(format!("{}, line {}: {e}", path.display(), i + 2))))
        .collect()
}

fn parse_label(path: &Path, s: &str) -> Result<bool, CliError> {
    s.parse::<Label>()
        .map(Label::is_positive)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Pairs predictions with truth by key; every unmatched key on either side
/// is reported.
fn join<K: Ord + Clone + std::fmt::Display, P, T>(
    preds: BTreeMap<K, P>,
    mut truth: BTreeMap<K, T>,
) -> Result<Vec<(K, P, T)>, CliError> {
    let missing_truth: Vec<String> = preds
        .keys()
        .filter(|k| !truth.contains_key(k))
        .map(|k| k.to_string())
        .collect();
    let pred_keys: BTreeSet<K> = preds.keys().cloned().collect();
    let missing_pred: Vec<String> = truth
        .keys()
        .filter(|k| !pred_keys.contains(k))
        .map(|k| k.to_string())
        .collect();
    if !missing_truth.is_empty() || !missing_pred.is_empty() {
        let mut msg = String::from("predictions and truth do not cover the same ids");
        if !missing_truth.is_empty() {
            let _ = write!(msg, "\n  without truth: {}", missing_truth.join(", "));
        }
        if !missing_pred.is_empty() {
            let _ = write!(msg, "\n  without prediction: {}", missing_pred.join(", "));
        }
        return Err(CliError::Input(msg));
    }
    Ok(preds
        .into_iter()
        .map(|(k, p)| {
            let t = truth.remove(&k).expect("checked above");
            (k, p, t)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct SliceKey(String, u32);

impl std::fmt::Display for SliceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.0, self.1)
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Evaluation, CliError> {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let resamples = args.resamples.unwrap_or(cfg.bootstrap_resamples);
    let (pairs, dice) = match args.level {
        Level::Scan => {
            let truth: Vec<ScanTruth> = read_rows(&args.truth, "truth file")?;
            if truth.is_empty() {
                return Err(CliError::Input(format!(
                    "truth file {} has no rows",
                    args.truth.display()
                )));
            }
            let preds: Vec<ScanVerdict> = read_rows(&args.predictions, "scan report")?;
            let mut t = BTreeMap::new();
            for r in truth {
                let label = parse_label(&args.truth, &r.label)?;
                if t.insert(r.scan_id.clone(), label).is_some() {
                    return Err(CliError::Input(format!(
                        "{}: duplicate scan {}",
                        args.truth.display(),
                        r.scan_id
                    )));
                }
            }
            let mut p = BTreeMap::new();
            for r in preds {
                p.insert(r.scan_id, parse_label(&args.predictions, &r.verdict)?);
            }
            let joined = join(p, t)?;
            (joined.into_iter().map(|(_, p, t)| (p, t)).collect::<Vec<_>>(), None)
        }
        Level::Slice => {
            require_file(&args.truth, "truth manifest")?;
            let truth = read_manifest(&args.truth)?;
            if truth.is_empty() {
                return Err(CliError::Input(format!(
                    "truth file {} has no rows",
                    args.truth.display()
                )));
            }
            let t: BTreeMap<SliceKey, _> = truth
                .into_iter()
                .map(|r| (SliceKey(r.scan_id.clone(), r.slice_index), r))
                .collect();
            let p: BTreeMap<SliceKey, _> = read_predictions(&args.predictions)?
                .into_iter()
                .map(|r| (SliceKey(r.scan_id.clone(), r.slice_index), r))
                .collect();
            let joined = join(p, t)?;
            let base = args.predictions.parent().unwrap_or(Path::new("."));
            let mut masks = Vec::new();
            for (_, p, t) in &joined {
                if t.label.is_positive() {
                    let pred = load_mask_png(&base.join(&p.mask_path))?;
                    let truth = load_truth_mask(t, pred.height)?;
                    masks.push((pred, truth));
                }
            }
            let dice = mean_dice_over_positives(&masks)?;
            let pairs = joined
                .into_iter()
                .map(|(_, p, t)| (p.positive == 1, t.label.is_positive()))
                .collect();
            (pairs, dice)
        }
    };
    let (preds, labels): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
    let cm = confusion(&preds, &labels)?;
    let reports = scan_report(&cm, resamples, seed)?;
    let mut text = format!(
        "tp={} fn={} tn={} fp={}\n{}",
        cm.true_pos,
        cm.false_neg,
        cm.true_neg,
        cm.false_pos,
        report_text(&reports)
    );
    let mut csv = format!("# seed={seed}\n{}", report_csv(&reports));
    if let Some(d) = dice {
        let _ = writeln!(text, "{:<12} {d:.3}", "dice");
        let _ = writeln!(csv, "dice,{d:.6},,,,{}", labels.iter().filter(|&&l| l).count());
    }
    if let Some(out) = &args.out {
        write_file(out, csv)?;
    }
    Ok(Evaluation { reports, dice, text })
}
