use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, SliceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub records: Vec<SliceRecord>,
    pub prevalence: f64,
}

impl DatasetSplit {
    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label.is_positive()).count()
    }

    pub fn negatives(&self) -> usize {
        self.records.len() - self.positives()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Apportions `total` by `weights` with the largest-remainder method; ties
/// in the fractional part go to the earlier entry.
pub fn split_sizes(total: usize, weights: &[f64; 3]) -> [usize; 3] {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut sizes = [0usize; 3];
    for (s, q) in sizes.iter_mut().zip(&quotas) {
        *s = q.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = sizes.iter().sum();
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Splits records into train/validation/test keeping every patient inside a
/// single split.
///
/// Split sizes come from `ratios` (weights, any positive scale) and the
/// positives are apportioned in proportion to split size, both by largest
/// remainder. Patients are shuffled by `seed`, ordered largest first, and
/// each is placed in the split with the largest unfilled fraction that can
/// still take all of its positive and negative slices; single moves and
/// pairwise swaps then close any remaining gap. Every split must end within
/// one record of `prevalence · size`.
pub fn stratified_split(
    records: &[SliceRecord],
    ratios: [f64; 3],
    prevalence: f64,
    seed: u64,
) -> Result<[DatasetSplit; 3], DataError> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(DataError::Invalid(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    if !(0.0..=1.0).contains(&prevalence) {
        return Err(DataError::Invalid(format!(
            "prevalence must be in [0, 1], got {prevalence}"
        )));
    }
    let total = records.len();
    let positives = records.iter().filter(|r| r.label.is_positive()).count();
    let sizes = split_sizes(total, &ratios);
    let pos_target = if total == 0 {
        [0; 3]
    } else {
        split_sizes(positives, &sizes.map(|s| s as f64))
    };
    for (i, name) in SplitName::ALL.iter().enumerate() {
        let want = prevalence * sizes[i] as f64;
        if (pos_target[i] as f64 - want).abs() > 1.0 + 1e-9 {
            return Err(DataError::Infeasible(format!(
                "{positives} positives in {total} records cannot give {name} ({} records) a prevalence of {prevalence}",
                sizes[i]
            )));
        }
    }

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.patient_id.as_str()).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));

    let counts: Vec<(i64, i64)> = groups
        .iter()
        .map(|g| {
            let p = g.iter().filter(|&&i| records[i].label.is_positive()).count() as i64;
            (p, g.len() as i64 - p)
        })
        .collect();
    let mut rem_pos: [i64; 3] = pos_target.map(|v| v as i64);
    let mut rem_neg: [i64; 3] = [0, 1, 2].map(|i| (sizes[i] - pos_target[i]) as i64);
    let mut home = vec![0usize; groups.len()];
    for (g, &(p, n)) in counts.iter().enumerate() {
        let fraction = |s: usize| (rem_pos[s] + rem_neg[s]) as f64 / sizes[s].max(1) as f64;
        let fitting = (0..3).filter(|&s| p <= rem_pos[s] && n <= rem_neg[s]);
        let choice = fitting
            .fold(None::<usize>, |best, s| match best {
                Some(b) if fraction(b) >= fraction(s) => Some(b),
                _ => Some(s),
            })
            .unwrap_or_else(|| {
                let overshoot = |s: usize| (p - rem_pos[s]).max(0) + (n - rem_neg[s]).max(0);
                (0..3)
                    .min_by(|&a, &b| {
                        overshoot(a)
                            .cmp(&overshoot(b))
                            .then(fraction(b).total_cmp(&fraction(a)))
                    })
                    .expect("three splits")
            });
        rem_pos[choice] -= p;
        rem_neg[choice] -= n;
        home[g] = choice;
    }
    repair(&counts, &mut home, &mut rem_pos, &mut rem_neg);
    let mut members: [Vec<usize>; 3] = Default::default();
    for (g, idx) in groups.into_iter().enumerate() {
        members[home[g]].extend(idx);
    }

    let mut out: Vec<DatasetSplit> = Vec::with_capacity(3);
    for (name, mut idx) in SplitName::ALL.into_iter().zip(members) {
        idx.sort_unstable();
        let split = DatasetSplit {
            name,
            records: idx.into_iter().map(|i| records[i].clone()).collect(),
            prevalence,
        };
        let want = prevalence * split.len() as f64;
        if (split.positives() as f64 - want).abs() > 1.0 + 1e-9 {
            return Err(DataError::Infeasible(format!(
                "patient grouping leaves {name} with {} positives in {} records",
                split.positives(),
                split.len()
            )));
        }
        out.push(split);
    }
    Ok(out.try_into().expect("three splits"))
}

/// Hill-climbs on `Σ |remaining positives| + |remaining negatives|` by
/// moving single patients, then swapping pairs, until neither helps.
fn repair(counts: &[(i64, i64)], home: &mut [usize], rem_pos: &mut [i64; 3], rem_neg: &mut [i64; 3]) {
    let cost = |rp: i64, rn: i64| rp.abs() + rn.abs();
    for _ in 0..10_000 {
        if rem_pos.iter().chain(rem_neg.iter()).all(|&r| r == 0) {
            return;
        }
        let mut improved = false;
        for g in 0..counts.len() {
            let (p, n) = counts[g];
            let s = home[g];
            for t in 0..3 {
                if t == s {
                    continue;
                }
                let before = cost(rem_pos[s], rem_neg[s]) + cost(rem_pos[t], rem_neg[t]);
                let after = cost(rem_pos[s] + p, rem_neg[s] + n) + cost(rem_pos[t] - p, rem_neg[t] - n);
                if after < before {
                    rem_pos[s] += p;
                    rem_neg[s] += n;
                    rem_pos[t] -= p;
                    rem_neg[t] -= n;
                    home[g] = t;
                    improved = true;
                    break;
                }
            }
        }
        if improved {
            continue;
        }
        'swaps: for a in 0..counts.len() {
            for b in a + 1..counts.len() {
                let (s, t) = (home[a], home[b]);
                if s == t {
                    continue;
                }
                let dp = counts[a].0 - counts[b].0;
                let dn = counts[a].1 - counts[b].1;
                if dp == 0 && dn == 0 {
                    continue;
                }
                let before = cost(rem_pos[s], rem_neg[s]) + cost(rem_pos[t], rem_neg[t]);
                let after = cost(rem_pos[s] + dp, rem_neg[s] + dn) + cost(rem_pos[t] - dp, rem_neg[t] - dn);
                if after < before {
                    rem_pos[s] += dp;
                    rem_neg[s] += dn;
                    rem_pos[t] -= dp;
                    rem_neg[t] -= dn;
                    home.swap(a, b);
                    improved = true;
                    break 'swaps;
                }
            }
        }
        if !improved {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;

    fn rec(patient: usize, i: usize, positive: bool) -> SliceRecord {
        SliceRecord {
            patient_id: format!("p{patient}"),
            scan_id: format!("s{patient}"),
            slice_index: i as u32,
            image_path: format!("{patient}_{i}.png").into(),
            label: if positive { Label::Positive } else { Label::Negative },
            regions: Vec::new(),
            mask_path: None,
        }
    }

    #[test]
    fn largest_remainder_sizes() {
        assert_eq!(split_sizes(50, &[0.6, 0.2, 0.2]), [30, 10, 10]);
        assert_eq!(split_sizes(10, &[1.0, 1.0, 1.0]), [4, 3, 3]);
        assert_eq!(split_sizes(5212, &[3285.0, 597.0, 1330.0]), [3285, 597, 1330]);
        assert_eq!(split_sizes(0, &[1.0, 1.0, 1.0]), [0, 0, 0]);
    }

    #[test]
    fn ten_forty_example() {
        let records: Vec<SliceRecord> = (0..50).map(|i| rec(i, 0, i < 10)).collect();
        let s = stratified_split(&records, [0.6, 0.2, 0.2], 0.2, 3).unwrap();
        let counts: Vec<(usize, usize)> = s.iter().map(|d| (d.len(), d.positives())).collect();
        assert_eq!(counts, vec![(30, 6), (10, 2), (10, 2)]);
        assert_eq!(stratified_split(&records, [0.6, 0.2, 0.2], 0.2, 3).unwrap(), s);
    }

    #[test]
    fn infeasible_prevalence() {
        let records: Vec<SliceRecord> = (0..50).map(|i| rec(i, 0, i < 25)).collect();
        assert!(matches!(
            stratified_split(&records, [0.6, 0.2, 0.2], 0.2, 0),
            Err(DataError::Infeasible(_))
        ));
    }
}
