//! Metric-learning fine-tuning of an encoder head.

pub mod checkpoint;
pub mod classifier;
pub mod encoder;
pub mod losses;
pub mod optim;
pub mod sampling;
pub mod train;

pub use checkpoint::{checkpoint_hash, load_checkpoint, parse_checkpoint, Checkpoint};
pub use classifier::ClassifierParams;
pub use encoder::EncoderParams;
pub use losses::{
    adacos_initial_scale, adacos_loss, arcface_loss, contrastive_loss, softmax_loss, triplet_loss,
    LossConfig, LossKind, ARCFACE_SCALE,
};
pub use optim::{AdamW, AdamWConfig};
pub use sampling::{sample_pairs, sample_triplets, Pair, Triplet};
pub use train::{mean_intra_frame_cosine, train, TrainConfig, TrainedModel};

#[cfg(test)]
pub(crate) mod testutil {
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::ClassifierParams;

    pub fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        v.iter().map(|c| c / n).collect()
    }

    pub fn rand_unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        unit(&v)
    }

    /// Rows with random norms in (0.5, 2) and biases in (-bias, bias).
    pub fn rand_classifier<R: Rng>(rng: &mut R, n: usize, d: usize, bias: f64) -> ClassifierParams {
        let rows = (0..n)
            .map(|_| {
                let norm = rng.random_range(0.5..2.0);
                rand_unit(rng, d).into_iter().map(|c| c * norm).collect()
            })
            .collect();
        let b = (0..n).map(|_| rng.random_range(-bias..bias)).collect();
        ClassifierParams::from_rows(rows, b)
    }
}
