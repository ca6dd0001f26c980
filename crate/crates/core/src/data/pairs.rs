//! Synchronized / mismatched segment pairs for distance learning.

use rand::Rng;

use super::FeatureSequence;
use crate::error::{contract_err, Result};
use crate::nn::seeded_rng;

/// A segment position inside a corpus: `(video index, timestep)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SegmentRef {
    pub video: usize,
    pub t: usize,
}

/// A visual segment paired with an audio segment.
///
/// `visual` is the region-pooled visual vector, `audio` the audio vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub visual: Vec<f64>,
    pub audio: Vec<f64>,
    pub synchronized: bool,
    pub visual_ref: SegmentRef,
    pub audio_ref: SegmentRef,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<Pair>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.synchronized).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }
}

fn pair(corpus: &[FeatureSequence], v: SegmentRef, a: SegmentRef) -> Pair {
    Pair {
        visual: corpus[v.video].pooled_visual(v.t),
        audio: corpus[a.video].audio[a.t].data().to_vec(),
        synchronized: v == a,
        visual_ref: v,
        audio_ref: a,
    }
}

/// Builds one positive pair per `(video, t)` segment and
/// `round(negatives_per_positive · positives)` negatives.
///
/// Negatives alternate between hard ones (same video, other timestep) and
/// easy ones (other video, any timestep). If only one kind is possible for
/// this corpus the other is used throughout.
pub fn make_pairs(
    corpus: &[FeatureSequence],
    negatives_per_positive: f64,
    seed: u64,
) -> Result<PairBatch> {
    if corpus.is_empty() {
        return contract_err("cannot form pairs from an empty corpus");
    }
    if !(negatives_per_positive >= 0.0 && negatives_per_positive.is_finite()) {
        return contract_err("negative ratio must be finite and non-negative");
    }
    let mut rng = seeded_rng(seed);
    let mut pairs = Vec::new();
    let mut segments = Vec::new();
    for (video, seq) in corpus.iter().enumerate() {
        for t in 0..seq.len() {
            let r = SegmentRef { video, t };
            segments.push(r);
            pairs.push(pair(corpus, r, r));
        }
    }
    let n_neg = (negatives_per_positive * pairs.len() as f64).round() as usize;
    let hard_possible = corpus.iter().any(|s| s.len() >= 2);
    let easy_possible = corpus.len() >= 2;
    if n_neg > 0 && !hard_possible && !easy_possible {
        return contract_err("corpus too small to form negative pairs");
    }
    if n_neg > 0 && !(hard_possible && easy_possible) {
        log::warn!("only {} negatives can be formed", if hard_possible { "hard" } else { "easy" });
    }
    for i in 0..n_neg {
        let hard = if hard_possible && easy_possible {
            i % 2 == 0
        } else {
            hard_possible
        };
        let (v, a) = if hard {
            let v = loop {
                let v = segments[rng.gen_range(0..segments.len())];
                if corpus[v.video].len() >= 2 {
                    break v;
                }
            };
            let len = corpus[v.video].len();
            let mut t = rng.gen_range(0..len - 1);
            if t >= v.t {
                t += 1;
            }
            (v, SegmentRef { video: v.video, t })
        } else {
            let v = segments[rng.gen_range(0..segments.len())];
            let mut other = rng.gen_range(0..corpus.len() - 1);
            if other >= v.video {
                other += 1;
            }
            let t = rng.gen_range(0..corpus[other].len());
            (v, SegmentRef { video: other, t })
        };
        pairs.push(pair(corpus, v, a));
    }
    Ok(PairBatch { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthSpec};

    fn corpus(n: usize) -> Vec<FeatureSequence> {
        generate_synthetic(&SynthSpec {
            n_videos: n,
            visual_channels: 4,
            regions: 4,
            audio_dim: 4,
            event_region_cells: 1,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn balanced_one_to_one() {
        let c = corpus(100);
        let batch = make_pairs(&c, 1.0, 3).unwrap();
        assert_eq!(batch.positives(), 1000);
        assert_eq!(batch.negatives(), 1000);
    }

    #[test]
    fn pair_labels_are_constructive() {
        let c = corpus(20);
        let batch = make_pairs(&c, 2.0, 1).unwrap();
        let mut hard = 0;
        for p in &batch.pairs {
            assert_eq!(p.synchronized, p.visual_ref == p.audio_ref);
            if !p.synchronized && p.visual_ref.video == p.audio_ref.video {
                hard += 1;
            }
        }
        assert_eq!(hard, batch.negatives() / 2);
    }

    #[test]
    fn tiny_corpus_cannot_form_negatives() {
        let mut c = corpus(1);
        let seq = &mut c[0];
        seq.visual.truncate(1);
        seq.audio.truncate(1);
        seq.segment_labels.truncate(1);
        assert!(matches!(make_pairs(&c, 1.0, 0), Err(crate::Error::Contract(_))));
        assert!(make_pairs(&[], 1.0, 0).is_err());
    }
}
