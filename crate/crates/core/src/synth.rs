//! Synthetic frame-annotated corpora with known structure.
//!
//! Each frame owns a center in the first half of the dimensions (the frame
//! subspace); each lemma owns an offset in the second half (the nuisance
//! subspace). A word vector is `frame center + lemma offset + noise`,
//! where the noise is much larger along a few fixed directions of the
//! nuisance subspace, so raw distances are dominated by frame-irrelevant
//! variation. The masked
//! vector carries a weaker copy of the frame center, its own per-lemma
//! context offset and the same kind of noise. A head that learns to shrink
//! the nuisance subspace separates frames, also for unseen lemmas.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, InstanceRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_lemmas: usize,
    pub num_frames: usize,
    /// Fraction of lemmas that evoke two frames.
    pub polysemous_fraction: f64,
    /// Zipf exponent of the number of LUs per frame (0 = uniform).
    pub frame_skew: f64,
    pub dim: usize,
    pub instances_per_lu: usize,
    /// Norm of each frame center.
    pub frame_scale: f32,
    /// Norm of each lemma offset.
    pub lemma_scale: f32,
    /// Per-component noise standard deviation in the frame subspace.
    pub noise: f32,
    /// Root-mean-square per-component nuisance noise in the nuisance
    /// subspace, concentrated on `nuisance_rank` shared directions.
    pub nuisance: f32,
    pub nuisance_rank: usize,
    /// Multiplier on the frame center inside the masked vector.
    pub mask_frame_scale: f32,
    /// Norm of the per-lemma context offset inside the masked vector.
    pub mask_lemma_scale: f32,
    pub mask_noise: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_lemmas: 30,
            num_frames: 12,
            polysemous_fraction: 0.25,
            frame_skew: 2.0,
            dim: 16,
            instances_per_lu: 12,
            frame_scale: 1.0,
            lemma_scale: 0.2,
            noise: 0.05,
            nuisance: 0.7,
            nuisance_rank: 1,
            mask_frame_scale: 0.6,
            mask_lemma_scale: 0.5,
            mask_noise: 0.3,
            seed: 7,
        }
    }
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize, range: std::ops::Range<usize>, scale: f32) -> Vec<f32> {
    let mut v = vec![0.0f32; dim];
    let mut norm = 0.0f64;
    for k in range.clone() {
        let g: f64 = rng.sample(StandardNormal);
        v[k] = g as f32;
        norm += g * g;
    }
    let norm = norm.sqrt().max(1e-12);
    for k in range {
        v[k] = (v[k] as f64 / norm * scale as f64) as f32;
    }
    v
}

/// Frame of every LU, grouped by lemma. Every frame is used at least once;
/// the remaining LUs follow a Zipf law over a shuffled frame order, and a
/// polysemous lemma never gets the same frame twice.
fn assign_frames(cfg: &SynthConfig, num_poly: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    let num_lus = cfg.num_lemmas + num_poly;
    if num_lus < cfg.num_frames {
        return Err(Error::Config(format!(
            "{num_lus} LUs cannot cover {} frames",
            cfg.num_frames
        )));
    }
    let mut order: Vec<usize> = (0..cfg.num_frames).collect();
    order.shuffle(rng);
    let weights = (1..=cfg.num_frames).map(|r| (r as f64).powf(-cfg.frame_skew));
    let zipf = WeightedIndex::new(weights).map_err(|e| Error::Config(e.to_string()))?;
    let mut labels = order.clone();
    labels.extend((cfg.num_frames..num_lus).map(|_| order[zipf.sample(rng)]));
    labels.shuffle(rng);

    // slots 2l and 2l+1 belong to polysemous lemma l; later slots are
    // monosemous and can absorb swaps
    for l in 0..num_poly {
        if labels[2 * l] == labels[2 * l + 1] {
            let clash = labels[2 * l];
            let k = (2 * num_poly..num_lus)
                .find(|&k| labels[k] != clash)
                .ok_or_else(|| Error::Config("cannot give polysemous lemmas two frames".into()))?;
            labels.swap(2 * l + 1, k);
        }
    }
    let mut out = Vec::with_capacity(cfg.num_lemmas);
    for l in 0..cfg.num_lemmas {
        if l < num_poly {
            out.push(vec![labels[2 * l], labels[2 * l + 1]]);
        } else {
            out.push(vec![labels[num_poly + l]]);
        }
    }
    Ok(out)
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.dim < 2 || cfg.num_frames < 2 || cfg.num_lemmas < 3 || cfg.instances_per_lu == 0 {
        return Err(Error::Config("synthetic corpus needs dim >= 2, >= 2 frames, >= 3 lemmas".into()));
    }
    if !(0.0..=1.0).contains(&cfg.polysemous_fraction) {
        return Err(Error::Config("polysemous fraction outside [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = cfg.dim / 2;
    let frames: Vec<Vec<f32>> = (0..cfg.num_frames)
        .map(|_| random_direction(&mut rng, cfg.dim, 0..half, cfg.frame_scale))
        .collect();
    let rank = cfg.nuisance_rank.clamp(1, cfg.dim - half);
    let axes: Vec<Vec<f32>> = (0..rank)
        .map(|_| random_direction(&mut rng, cfg.dim, half..cfg.dim, 1.0))
        .collect();
    let normal = |sd: f32| Normal::new(0.0f32, sd).map_err(|e| Error::Config(e.to_string()));
    let (word_noise, mask_noise) = (normal(cfg.noise)?, normal(cfg.mask_noise)?);
    let along = normal(cfg.nuisance * ((cfg.dim - half) as f32 / rank as f32).sqrt())?;
    let nuisance = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        let mut v = vec![0.0f32; cfg.dim];
        for axis in &axes {
            let z = along.sample(rng);
            v.iter_mut().zip(axis).for_each(|(a, u)| *a += z * u);
        }
        v
    };

    let num_poly = (cfg.num_lemmas as f64 * cfg.polysemous_fraction).round() as usize;
    let senses = assign_frames(cfg, num_poly, &mut rng)?;

    let mut records = Vec::new();
    for (l, lemma_senses) in senses.iter().enumerate() {
        let lemma = format!("verb{l:03}");
        let offset = random_direction(&mut rng, cfg.dim, half..cfg.dim, cfg.lemma_scale);
        let context = random_direction(&mut rng, cfg.dim, half..cfg.dim, cfg.mask_lemma_scale);
        for (s, &f) in lemma_senses.iter().enumerate() {
            let lu_id = format!("{lemma}.{}", s + 1);
            for k in 0..cfg.instances_per_lu {
                let nw = nuisance(&mut rng);
                let v_word: Vec<f32> = (0..cfg.dim)
                    .map(|d| frames[f][d] + offset[d] + nw[d] + word_noise.sample(&mut rng))
                    .collect();
                let nm = nuisance(&mut rng);
                let v_mask: Vec<f32> = (0..cfg.dim)
                    .map(|d| {
                        cfg.mask_frame_scale * frames[f][d] + context[d] + nm[d] + mask_noise.sample(&mut rng)
                    })
                    .collect();
                records.push(InstanceRecord {
                    id: format!("{lu_id}.{k:03}"),
                    lemma: lemma.clone(),
                    lu_id: lu_id.clone(),
                    gold_frame: format!("Frame{f:02}"),
                    v_word,
                    v_mask,
                    sentence: None,
                });
            }
        }
    }
    Dataset::from_records(records)
}
