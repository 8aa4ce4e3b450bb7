//! Mini-batch AdamW training of the encoder head (and classifier, for
//! classification losses).
//!
//! Training consumes `v_word` only; mixing with `v_mask` happens at
//! clustering time. Per-item gradients may be computed in parallel but are
//! always summed in batch order, so a fixed seed gives bit-identical
//! parameters.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

use super::classifier::ClassifierParams;
use super::encoder::{EncoderGrad, EncoderParams};
use super::losses::{
    adacos_initial_scale, adacos_loss, arcface_loss, contrastive_loss, softmax_loss, triplet_loss,
    LossConfig, LossKind,
};
use super::optim::{AdamW, AdamWConfig};
use super::sampling::{sample_pairs, sample_triplets, shuffled_indices};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 5,
            optimizer: AdamWConfig::default(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", o.learning_rate)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::Config("invalid AdamW moments".into()));
        }
        if !(o.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay {}", o.weight_decay)));
        }
        Ok(())
    }
}

/// Output of [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub loss: LossConfig,
    pub encoder: EncoderParams,
    pub classifier: Option<ClassifierParams>,
    /// Frame names indexed by classifier row.
    pub classes: Vec<String>,
    /// Final AdaCos scale.
    pub adacos_scale: Option<f64>,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainedModel {
    /// The untrained identity model.
    pub fn vanilla(dim: usize) -> Self {
        TrainedModel {
            loss: LossConfig::default_for(LossKind::Vanilla),
            encoder: EncoderParams::identity(dim),
            classifier: None,
            classes: Vec::new(),
            adacos_scale: None,
            epoch_losses: Vec::new(),
        }
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Gradient contribution of one batch item.
struct ItemGrad {
    loss: f64,
    encoder: EncoderGrad,
    cls_weight: Option<Vec<f64>>,
    cls_bias: Option<Vec<f64>>,
}

struct Trainer<'a> {
    ds: &'a Dataset,
    loss: LossConfig,
    encoder: EncoderParams,
    classifier: Option<ClassifierParams>,
    labels: Vec<usize>,
    enc_weight_opt: AdamW,
    enc_bias_opt: AdamW,
    cls_weight_opt: Option<AdamW>,
    cls_bias_opt: Option<AdamW>,
    adacos_scale: f64,
}

impl Trainer<'_> {
    fn backprop(&self, idx: usize, grad_unit: &[f64], enc_grad: &mut EncoderGrad) -> Result<()> {
        let v = &self.ds.records()[idx].v_word;
        let fwd = self.encoder.forward(v)?;
        self.encoder.backward(v, &fwd, grad_unit, enc_grad);
        Ok(())
    }

    fn item_pair(&self, a: usize, b: usize, same: bool) -> Result<ItemGrad> {
        let xa = self.encoder.encode(&self.ds.records()[a].v_word)?;
        let xb = self.encoder.encode(&self.ds.records()[b].v_word)?;
        let out = contrastive_loss(&xa, &xb, same, self.loss.margin);
        let mut g = self.encoder.zero_grad();
        if out.loss > 0.0 {
            self.backprop(a, &out.grad_i, &mut g)?;
            self.backprop(b, &out.grad_j, &mut g)?;
        }
        Ok(ItemGrad {
            loss: out.loss,
            encoder: g,
            cls_weight: None,
            cls_bias: None,
        })
    }

    fn item_triplet(&self, a: usize, p: usize, n: usize) -> Result<ItemGrad> {
        let enc = |i: usize| self.encoder.encode(&self.ds.records()[i].v_word);
        let (xa, xp, xn) = (enc(a)?, enc(p)?, enc(n)?);
        let out = triplet_loss(&xa, &xp, &xn, self.loss.margin);
        let mut g = self.encoder.zero_grad();
        if out.loss > 0.0 {
            self.backprop(a, &out.grad_anchor, &mut g)?;
            self.backprop(p, &out.grad_positive, &mut g)?;
            self.backprop(n, &out.grad_negative, &mut g)?;
        }
        Ok(ItemGrad {
            loss: out.loss,
            encoder: g,
            cls_weight: None,
            cls_bias: None,
        })
    }

    fn item_class(&self, i: usize) -> Result<ItemGrad> {
        let cls = self.classifier.as_ref().expect("classification loss has a classifier");
        let x = self.encoder.encode(&self.ds.records()[i].v_word)?;
        let label = self.labels[i];
        let out = match self.loss.kind {
            LossKind::Softmax => softmax_loss(&x, label, cls),
            LossKind::ArcFace => arcface_loss(&x, label, cls, self.loss.margin, self.loss.scale),
            other => unreachable!("{other} is not a per-item classification loss"),
        };
        let mut g = self.encoder.zero_grad();
        self.backprop(i, &out.grad_x, &mut g)?;
        Ok(ItemGrad {
            loss: out.loss,
            encoder: g,
            cls_weight: Some(out.grad_weight),
            cls_bias: (self.loss.kind == LossKind::Softmax).then_some(out.grad_bias),
        })
    }

    /// Mean-reduce item gradients in order and take one optimizer step.
    fn apply(&mut self, items: Vec<ItemGrad>) -> f64 {
        let scale = 1.0 / items.len() as f64;
        let mut enc = self.encoder.zero_grad();
        let mut cls_w: Option<Vec<f64>> = None;
        let mut cls_b: Option<Vec<f64>> = None;
        let mut loss = 0.0;
        for item in &items {
            loss += item.loss;
            enc.add_assign(&item.encoder);
            accumulate(&mut cls_w, item.cls_weight.as_deref());
            accumulate(&mut cls_b, item.cls_bias.as_deref());
        }
        enc.weight.iter_mut().chain(enc.bias.iter_mut()).for_each(|g| *g *= scale);
        self.step(enc, cls_w.map(|g| scaled(g, scale)), cls_b.map(|g| scaled(g, scale)));
        loss * scale
    }

    fn step(&mut self, enc: EncoderGrad, cls_w: Option<Vec<f64>>, cls_b: Option<Vec<f64>>) {
        self.enc_weight_opt.step(&mut self.encoder.weight, &enc.weight);
        self.enc_bias_opt.step(&mut self.encoder.bias, &enc.bias);
        if let Some(cls) = self.classifier.as_mut() {
            if let (Some(g), Some(opt)) = (cls_w, self.cls_weight_opt.as_mut()) {
                opt.step(&mut cls.weight, &g);
            }
            if let (Some(g), Some(opt)) = (cls_b, self.cls_bias_opt.as_mut()) {
                opt.step(&mut cls.bias, &g);
            }
        }
    }

    fn adacos_batch(&mut self, batch: &[usize]) -> Result<f64> {
        let cls = self.classifier.as_ref().expect("adacos has a classifier");
        let xs: Vec<Vec<f64>> = batch
            .par_iter()
            .map(|&i| self.encoder.encode(&self.ds.records()[i].v_word))
            .collect::<Result<_>>()?;
        let pairs: Vec<(&[f64], usize)> = xs
            .iter()
            .zip(batch)
            .map(|(x, &i)| (x.as_slice(), self.labels[i]))
            .collect();
        let out = adacos_loss(&pairs, cls, self.adacos_scale)?;
        let grads: Vec<EncoderGrad> = batch
            .par_iter()
            .zip(&out.grad_x)
            .map(|(&i, gx)| {
                let mut g = self.encoder.zero_grad();
                self.backprop(i, gx, &mut g)?;
                Ok(g)
            })
            .collect::<Result<_>>()?;
        let mut enc = self.encoder.zero_grad();
        for g in &grads {
            enc.add_assign(g);
        }
        self.adacos_scale = out.next_scale;
        self.step(enc, Some(out.grad_weight), None);
        Ok(out.loss)
    }
}

fn accumulate(acc: &mut Option<Vec<f64>>, item: Option<&[f64]>) {
    if let Some(g) = item {
        match acc {
            Some(a) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
            None => *acc = Some(g.to_vec()),
        }
    }
}

fn scaled(mut v: Vec<f64>, s: f64) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x *= s);
    v
}

/// Fine-tune an identity-initialized encoder head on `ds` with `loss`.
pub fn train(ds: &Dataset, cfg: &TrainConfig, loss: &LossConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let dim = ds.dim();
    if loss.kind == LossKind::Vanilla {
        return Ok(TrainedModel::vanilla(dim));
    }

    let classes: Vec<String> = ds.frames().into_iter().map(String::from).collect();
    let class_index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let labels: Vec<usize> = ds
        .records()
        .iter()
        .map(|r| class_index[r.gold_frame.as_str()])
        .collect();

    let encoder = EncoderParams::identity(dim);
    let classifier = loss.kind.uses_classifier().then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        ClassifierParams::random_init(classes.len(), dim, &mut rng)
    });
    let opt = cfg.optimizer;
    let mut t = Trainer {
        ds,
        loss: *loss,
        enc_weight_opt: AdamW::new(encoder.weight.len(), opt, true),
        enc_bias_opt: AdamW::new(encoder.bias.len(), opt, false),
        cls_weight_opt: classifier.as_ref().map(|c| AdamW::new(c.weight.len(), opt, true)),
        cls_bias_opt: (loss.kind == LossKind::Softmax)
            .then(|| AdamW::new(classes.len(), opt, false)),
        encoder,
        classifier,
        labels,
        adacos_scale: adacos_initial_scale(classes.len()),
    };

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let seed = epoch_seed(cfg.seed, epoch);
        let mut batch_losses = Vec::new();
        match loss.kind {
            LossKind::Contrastive => {
                for chunk in sample_pairs(ds, seed)?.chunks(cfg.batch_size) {
                    let items = chunk
                        .par_iter()
                        .map(|p| t.item_pair(p.anchor, p.other, p.same_class))
                        .collect::<Result<Vec<_>>>()?;
                    batch_losses.push(t.apply(items));
                }
            }
            LossKind::Triplet => {
                for chunk in sample_triplets(ds, seed)?.chunks(cfg.batch_size) {
                    let items = chunk
                        .par_iter()
                        .map(|x| t.item_triplet(x.anchor, x.positive, x.negative))
                        .collect::<Result<Vec<_>>>()?;
                    batch_losses.push(t.apply(items));
                }
            }
            LossKind::Softmax | LossKind::ArcFace => {
                for chunk in shuffled_indices(ds.len(), seed).chunks(cfg.batch_size) {
                    let items = chunk
                        .par_iter()
                        .map(|&i| t.item_class(i))
                        .collect::<Result<Vec<_>>>()?;
                    batch_losses.push(t.apply(items));
                }
            }
            LossKind::AdaCos => {
                for chunk in shuffled_indices(ds.len(), seed).chunks(cfg.batch_size) {
                    batch_losses.push(t.adacos_batch(chunk)?);
                }
            }
            LossKind::Vanilla => unreachable!(),
        }
        let mean = if batch_losses.is_empty() {
            0.0
        } else {
            batch_losses.iter().sum::<f64>() / batch_losses.len() as f64
        };
        if !mean.is_finite() {
            return Err(Error::Numerical(format!("epoch {epoch}: training loss {mean}")));
        }
        log::info!("{} epoch {}: mean loss {mean:.6}", loss.kind, epoch + 1);
        epoch_losses.push(mean);
    }
    t.encoder.validate()?;

    Ok(TrainedModel {
        loss: *loss,
        adacos_scale: (loss.kind == LossKind::AdaCos).then_some(t.adacos_scale),
        encoder: t.encoder,
        classifier: t.classifier,
        classes,
        epoch_losses,
    })
}

/// Mean cosine over all same-frame instance pairs after encoding `v_word`.
pub fn mean_intra_frame_cosine(ds: &Dataset, encoder: &EncoderParams) -> Result<f64> {
    let xs: Vec<Vec<f64>> = ds
        .records()
        .iter()
        .map(|r| encoder.encode(&r.v_word))
        .collect::<Result<_>>()?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            if ds.records()[i].gold_frame == ds.records()[j].gold_frame {
                sum += xs[i].iter().zip(&xs[j]).map(|(a, b)| a * b).sum::<f64>();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Config("no same-frame pairs".into()));
    }
    Ok(sum / count as f64)
}
