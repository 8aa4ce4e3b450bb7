//! Pair and triplet sampling for the distance-based losses.
//!
//! Every anchor instance gets one partner from the same frame (any other
//! instance of that frame) and one from a different frame, drawn
//! uniformly. Anchors whose frame has a single instance get no positive.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub anchor: usize,
    pub other: usize,
    pub same_class: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Instance indices grouped by frame.
struct FrameIndex {
    frame_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl FrameIndex {
    fn new(ds: &Dataset) -> Result<Self> {
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        for r in ds.records() {
            let next = ids.len();
            ids.entry(&r.gold_frame).or_insert(next);
        }
        if ids.len() < 2 {
            return Err(Error::TooFewFrames(ids.len()));
        }
        let mut members = vec![Vec::new(); ids.len()];
        let frame_of: Vec<usize> = ds
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let f = ids[r.gold_frame.as_str()];
                members[f].push(i);
                f
            })
            .collect();
        Ok(FrameIndex { frame_of, members })
    }

    fn positive<R: Rng>(&self, anchor: usize, rng: &mut R) -> Option<usize> {
        let same = &self.members[self.frame_of[anchor]];
        if same.len() < 2 {
            return None;
        }
        // uniform over same-frame members excluding the anchor
        let pos = same.iter().position(|&i| i == anchor).expect("anchor in its frame");
        let k = rng.random_range(0..same.len() - 1);
        Some(same[if k >= pos { k + 1 } else { k }])
    }

    fn negative<R: Rng>(&self, anchor: usize, rng: &mut R) -> usize {
        let total = self.frame_of.len();
        let own = self.members[self.frame_of[anchor]].len();
        let k = rng.random_range(0..total - own);
        // k-th instance (in dataset order) outside the anchor's frame
        let f = self.frame_of[anchor];
        let mut seen = 0;
        for (i, &fi) in self.frame_of.iter().enumerate() {
            if fi != f {
                if seen == k {
                    return i;
                }
                seen += 1;
            }
        }
        unreachable!("negative index within range")
    }
}

/// One positive and one negative pair per anchor, shuffled.
pub fn sample_pairs(train: &Dataset, seed: u64) -> Result<Vec<Pair>> {
    let index = FrameIndex::new(train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(2 * train.len());
    let mut skipped = 0;
    for anchor in 0..train.len() {
        match index.positive(anchor, &mut rng) {
            Some(other) => pairs.push(Pair {
                anchor,
                other,
                same_class: true,
            }),
            None => skipped += 1,
        }
        pairs.push(Pair {
            anchor,
            other: index.negative(anchor, &mut rng),
            same_class: false,
        });
    }
    if skipped > 0 {
        log::debug!("{skipped} singleton-frame anchors skipped for positive pairs");
    }
    pairs.shuffle(&mut rng);
    Ok(pairs)
}

/// One triplet per anchor with a same-frame partner, shuffled.
pub fn sample_triplets(train: &Dataset, seed: u64) -> Result<Vec<Triplet>> {
    let index = FrameIndex::new(train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triplets = Vec::with_capacity(train.len());
    let mut skipped = 0;
    for anchor in 0..train.len() {
        let Some(positive) = index.positive(anchor, &mut rng) else {
            skipped += 1;
            continue;
        };
        let negative = index.negative(anchor, &mut rng);
        triplets.push(Triplet {
            anchor,
            positive,
            negative,
        });
    }
    if skipped > 0 {
        log::debug!("{skipped} singleton-frame anchors skipped for triplets");
    }
    triplets.shuffle(&mut rng);
    Ok(triplets)
}

/// Shuffled instance order for the classification losses.
pub fn shuffled_indices(len: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}
