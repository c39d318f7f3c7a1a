//! Confusion counts, proportions with 95% intervals, bootstrap F1 and dice.

use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::Mask;
use crate::par;

/// Two-sided 95% normal quantile used by both interval methods.
pub const Z95: f64 = 1.96;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("predictions ({preds}) and labels ({labels}) differ in length")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("{metric} is undefined: {reason}")]
    Undefined { metric: &'static str, reason: String },
    #[error("invalid proportion {successes}/{n}")]
    Proportion { successes: u64, n: u64 },
    #[error("mask shapes differ: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("bootstrap needs at least 1000 resamples, got {0}")]
    TooFewResamples(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub true_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
    pub false_pos: u64,
}

impl ConfusionMatrix {
    pub fn new(true_pos: u64, false_neg: u64, true_neg: u64, false_pos: u64) -> Self {
        ConfusionMatrix {
            true_pos,
            false_neg,
            true_neg,
            false_pos,
        }
    }

    pub fn positives(&self) -> u64 {
        self.true_pos + self.false_neg
    }

    pub fn negatives(&self) -> u64 {
        self.true_neg + self.false_pos
    }

    pub fn total(&self) -> u64 {
        self.positives() + self.negatives()
    }

    /// Case-level (prediction, label) pairs that produce these counts.
    pub fn cases(&self) -> Vec<(bool, bool)> {
        let mut v = Vec::with_capacity(self.total() as usize);
        v.extend(std::iter::repeat_n((true, true), self.true_pos as usize));
        v.extend(std::iter::repeat_n((false, true), self.false_neg as usize));
        v.extend(std::iter::repeat_n((false, false), self.true_neg as usize));
        v.extend(std::iter::repeat_n((true, false), self.false_pos as usize));
        v
    }
}

pub fn confusion(preds: &[bool], labels: &[bool]) -> Result<ConfusionMatrix, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => cm.true_pos += 1,
            (false, true) => cm.false_neg += 1,
            (false, false) => cm.true_neg += 1,
            (true, false) => cm.false_pos += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiMethod {
    WaldClipped,
    Wilson,
    Bootstrap,
}

impl fmt::Display for CiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiMethod::WaldClipped => "wald-clipped",
            CiMethod::Wilson => "wilson",
            CiMethod::Bootstrap => "bootstrap",
        })
    }
}

/// 95% interval for `successes / n`.
///
/// Wald: `p̂ ± 1.96·sqrt(p̂(1−p̂)/n)` clipped to [0, 1].
/// Wilson: `(p̂ + z²/2n ± z·sqrt(p̂(1−p̂)/n + z²/4n²)) / (1 + z²/n)`.
pub fn ci_estimate(successes: u64, n: u64, method: CiMethod) -> Result<(f64, f64), MetricsError> {
    if n == 0 || successes > n {
        return Err(MetricsError::Proportion { successes, n });
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z = Z95;
    match method {
        CiMethod::WaldClipped | CiMethod::Bootstrap => {
            let half = z * (p * (1.0 - p) / nf).sqrt();
            Ok(((p - half).max(0.0), (p + half).min(1.0)))
        }
        CiMethod::Wilson => {
            let z2 = z * z;
            let denom = 1.0 + z2 / nf;
            let center = p + z2 / (2.0 * nf);
            let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
            let low = if successes == 0 { 0.0 } else { (center - half) / denom };
            let high = if successes == n { 1.0 } else { (center + half) / denom };
            Ok((low, high))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_method: CiMethod,
    pub n: u64,
}

fn proportion(
    metric: &'static str,
    successes: u64,
    n: u64,
    method: CiMethod,
    what: &str,
) -> Result<MetricReport, MetricsError> {
    if n == 0 {
        return Err(MetricsError::Undefined {
            metric,
            reason: format!("no {what}"),
        });
    }
    let (ci_low, ci_high) = ci_estimate(successes, n, method)?;
    Ok(MetricReport {
        metric: metric.to_string(),
        value: successes as f64 / n as f64,
        ci_low,
        ci_high,
        ci_method: method,
        n,
    })
}

/// `tp / (tp + fn)`.
pub fn sensitivity(cm: &ConfusionMatrix, method: CiMethod) -> Result<MetricReport, MetricsError> {
    proportion("sensitivity", cm.true_pos, cm.positives(), method, "positive cases")
}

/// `tn / (tn + fp)`.
pub fn specificity(cm: &ConfusionMatrix, method: CiMethod) -> Result<MetricReport, MetricsError> {
    proportion("specificity", cm.true_neg, cm.negatives(), method, "negative cases")
}

/// `tp / (tp + fp)`.
pub fn precision(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let d = cm.true_pos + cm.false_pos;
    if d == 0 {
        return Err(MetricsError::Undefined {
            metric: "precision",
            reason: "no predicted positives".into(),
        });
    }
    Ok(cm.true_pos as f64 / d as f64)
}

/// Harmonic mean of precision and sensitivity; 0 when both are 0.
pub fn f1_score(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if cm.positives() == 0 {
        return Err(MetricsError::Undefined {
            metric: "f1",
            reason: "no positive cases".into(),
        });
    }
    let p = precision(cm).map_err(|_| MetricsError::Undefined {
        metric: "f1",
        reason: "no predicted positives".into(),
    })?;
    let s = cm.true_pos as f64 / cm.positives() as f64;
    Ok(if p + s == 0.0 { 0.0 } else { 2.0 * p * s / (p + s) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub resamples: usize,
    /// Resamples dropped because F1 was undefined on them.
    pub skipped: usize,
}

/// Percentile (2.5%, 97.5%) bootstrap interval for F1 over case
/// resampling. Resample `r` draws from its own ChaCha8 stream `r` under
/// `seed`, so the result does not depend on thread count.
pub fn f1_bootstrap_ci(
    preds: &[bool],
    labels: &[bool],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapCi, MetricsError> {
    if resamples < 1000 {
        return Err(MetricsError::TooFewResamples(resamples));
    }
    confusion(preds, labels)?;
    let n = preds.len();
    if n == 0 {
        return Err(MetricsError::Undefined {
            metric: "f1",
            reason: "no cases".into(),
        });
    }
    let stats: Vec<Option<f64>> = par::map_indexed(resamples, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let mut cm = ConfusionMatrix::default();
        for _ in 0..n {
            let i = rng.random_range(0..n);
            match (preds[i], labels[i]) {
                (true, true) => cm.true_pos += 1,
                (false, true) => cm.false_neg += 1,
                (false, false) => cm.true_neg += 1,
                (true, false) => cm.false_pos += 1,
            }
        }
        f1_score(&cm).ok()
    });
    let mut values: Vec<f64> = stats.iter().flatten().copied().collect();
    let skipped = resamples - values.len();
    if values.is_empty() {
        return Err(MetricsError::Undefined {
            metric: "f1",
            reason: "every bootstrap resample was degenerate".into(),
        });
    }
    values.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        low: percentile(&values, 0.025),
        high: percentile(&values, 0.975),
        resamples,
        skipped,
    })
}

/// Linear interpolation between order statistics of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// F1 with a bootstrap interval computed on the cases that `cm` implies.
pub fn f1(cm: &ConfusionMatrix, resamples: usize, seed: u64) -> Result<MetricReport, MetricsError> {
    let value = f1_score(cm)?;
    let (preds, labels): (Vec<bool>, Vec<bool>) = cm.cases().into_iter().unzip();
    let ci = f1_bootstrap_ci(&preds, &labels, resamples, seed)?;
    Ok(MetricReport {
        metric: "f1".into(),
        value,
        ci_low: ci.low.min(value),
        ci_high: ci.high.max(value),
        ci_method: CiMethod::Bootstrap,
        n: cm.total(),
    })
}

/// Sensitivity, specificity and F1. Proportions use Wald-clipped
/// intervals; a Wilson row follows whenever either bound differs from the
/// Wald one by more than 0.01.
pub fn scan_report(cm: &ConfusionMatrix, resamples: usize, seed: u64) -> Result<Vec<MetricReport>, MetricsError> {
    let mut out = Vec::new();
    for f in [sensitivity, specificity] {
        let wald = f(cm, CiMethod::WaldClipped)?;
        let wilson = f(cm, CiMethod::Wilson)?;
        let differs = (wald.ci_low - wilson.ci_low).abs() > 0.01 || (wald.ci_high - wilson.ci_high).abs() > 0.01;
        out.push(wald);
        if differs {
            out.push(wilson);
        }
    }
    out.push(f1(cm, resamples, seed)?);
    Ok(out)
}

pub const REPORT_HEADER: &str = "metric,value,ci_low,ci_high,ci_method,n";

pub fn report_csv(reports: &[MetricReport]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{},{}",
            r.metric, r.value, r.ci_low, r.ci_high, r.ci_method, r.n
        );
    }
    s
}

pub fn report_text(reports: &[MetricReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let _ = writeln!(
            s,
            "{:<12} {:.3}  95% CI ({:.2}, {:.2})  [{}, n={}]",
            r.metric, r.value, r.ci_low, r.ci_high, r.ci_method, r.n
        );
    }
    s
}

/// `2|A∩B| / (|A|+|B|)` over flat {0, 1} buffers; two empty masks score 1.
pub fn dice_flat(a: &[u8], b: &[u8]) -> f64 {
    assert_eq!(a.len(), b.len(), "dice operands differ in length");
    let (mut inter, mut sa, mut sb) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x != 0, y != 0);
        inter += u64::from(x && y);
        sa += u64::from(x);
        sb += u64::from(y);
    }
    if sa + sb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (sa + sb) as f64
    }
}

pub fn dice(a: &Mask, b: &Mask) -> Result<f64, MetricsError> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(MetricsError::ShapeMismatch {
            left: (a.height, a.width),
            right: (b.height, b.width),
        });
    }
    Ok(dice_flat(&a.data, &b.data))
}

/// Mean dice over the pairs whose ground truth (second element) is
/// non-empty; `None` when there are none.
pub fn mean_dice_over_positives(pairs: &[(Mask, Mask)]) -> Result<Option<f64>, MetricsError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pred, truth) in pairs {
        if truth.count() == 0 {
            continue;
        }
        sum += dice(pred, truth)?;
        count += 1;
    }
    Ok((count > 0).then(|| sum / count as f64))
}
