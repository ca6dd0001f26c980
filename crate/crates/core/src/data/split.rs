//! Stratified train/validation/test splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::error::{contract_err, Result};
use crate::nn::seeded_rng;

/// Disjoint index sets into a corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Largest-remainder rounding of `weights · total`, ties to the earliest.
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &j in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[j] += 1;
        left -= 1;
    }
    counts
}

/// Splits `corpus` by video label so that every class is divided in
/// proportion to `fractions` (train, val, test) within one video, while the
/// overall split sizes follow largest-remainder rounding of the corpus size.
pub fn split(corpus: &[FeatureSequence], fractions: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return contract_err(format!("split fractions {fractions:?} must be in [0,1] and sum to 1"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.iter().enumerate() {
        by_class.entry(s.video_label).or_default().push(i);
    }
    let active = fractions.iter().filter(|&&f| f > 0.0).count();
    for (class, members) in &by_class {
        if members.len() < active {
            log::warn!(
                "class {class} has {} videos for {active} splits; assignment is best-effort",
                members.len()
            );
        }
    }

    let targets = apportion(&fractions, corpus.len());
    let mut per_class: Vec<(usize, [usize; 3], [f64; 3])> = Vec::new();
    let mut deficit = targets.clone();
    for (&class, members) in &by_class {
        let n = members.len() as f64;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for j in 0..3 {
            let q = fractions[j] * n;
            base[j] = q.floor() as usize;
            frac[j] = q - q.floor();
            deficit[j] -= base[j].min(deficit[j]);
        }
        per_class.push((class, base, frac));
    }
    // Hand out each class's leftover videos, one per split at most, to the
    // splits still furthest below their global target.
    per_class.sort_by_key(|(class, base, _)| {
        let n = by_class[class].len();
        (std::cmp::Reverse(n - base.iter().sum::<usize>()), *class)
    });
    for (class, base, frac) in per_class.iter_mut() {
        let n = by_class[class].len();
        let mut extra = n - base.iter().sum::<usize>();
        let mut candidates: Vec<usize> = (0..3).filter(|&j| fractions[j] > 0.0).collect();
        candidates.sort_by(|&a, &b| {
            deficit[b]
                .cmp(&deficit[a])
                .then(frac[b].partial_cmp(&frac[a]).unwrap())
                .then(a.cmp(&b))
        });
        for &j in &candidates {
            if extra == 0 {
                break;
            }
            base[j] += 1;
            deficit[j] = deficit[j].saturating_sub(1);
            extra -= 1;
        }
        // More leftovers than active splits only happens with one split.
        if extra > 0 {
            base[candidates[0]] += extra;
        }
    }
    per_class.sort_by_key(|(class, _, _)| *class);

    let mut rng = seeded_rng(seed);
    let mut out = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (class, counts, _) in &per_class {
        let mut members = by_class[class].clone();
        members.shuffle(&mut rng);
        let (a, rest) = members.split_at(counts[0]);
        let (b, c) = rest.split_at(counts[1]);
        out.train.extend_from_slice(a);
        out.val.extend_from_slice(b);
        out.test.extend_from_slice(c);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}
