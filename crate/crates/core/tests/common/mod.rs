//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use frameforge::clustering::{ClusteringMode, Dendrogram};
use frameforge::data::{Dataset, InstanceRecord};
use frameforge::harness::{run_cv, Budget, CvResult, ExperimentConfig};
use frameforge::learning::{
    adacos_loss, arcface_loss, contrastive_loss, softmax_loss, triplet_loss, ClassifierParams,
    EncoderParams, LossKind, ARCFACE_SCALE,
};
use frameforge::synth::{generate, SynthConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub const TRAINED_LOSSES: [LossKind; 5] = [
    LossKind::Contrastive,
    LossKind::Triplet,
    LossKind::Softmax,
    LossKind::ArcFace,
    LossKind::AdaCos,
];

// ---------------------------------------------------------------- gradients

/// One random gradient-check problem: inputs pushed through an affine
/// encoder head into a loss, differentiated w.r.t. every parameter.
#[derive(Debug, Clone)]
pub struct GradProblem {
    pub kind: LossKind,
    pub inputs: Vec<Vec<f32>>,
    pub encoder: EncoderParams,
    pub classifier: Option<ClassifierParams>,
    pub flags: Vec<bool>,
    /// `(anchor, positive, negative)` input indices.
    pub triplets: Vec<(usize, usize, usize)>,
    pub margin: f64,
    pub scale: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize, sd: f64) -> Vec<f64> {
    (0..len).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_of(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl GradProblem {
    fn draw(kind: LossKind, d: usize, n: usize, rng: &mut ChaCha8Rng) -> Self {
        let inputs = (0..n)
            .map(|_| gaussian(rng, d, 1.0).into_iter().map(|x| x as f32).collect())
            .collect();
        let mut weight = gaussian(rng, d * d, 0.5 / (d as f64).sqrt());
        for i in 0..d {
            weight[i * d + i] += 1.0;
        }
        let encoder = EncoderParams::new(d, d, weight, gaussian(rng, d, 0.1)).unwrap();
        let classifier = kind.uses_classifier().then(|| {
            let rows = (0..n)
                .map(|_| {
                    let s = rng.random_range(0.5..2.0);
                    unit_of(&gaussian(rng, d, 1.0)).into_iter().map(|x| x * s).collect()
                })
                .collect();
            let bias = if kind == LossKind::Softmax {
                gaussian(rng, n, 0.5)
            } else {
                vec![0.0; n]
            };
            ClassifierParams::from_rows(rows, bias)
        });
        let flags = (0..n).map(|_| rng.random_bool(0.5)).collect();
        // random rather than cyclic: with three inputs the cyclic triplets
        // sum to a constant
        let triplets = (0..n)
            .map(|_| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(rng);
                (idx[0], idx[1], idx[2])
            })
            .collect();
        let (margin, scale) = match kind {
            LossKind::Contrastive => (rng.random_range(0.2..2.0), 0.0),
            LossKind::Triplet => (rng.random_range(0.05..1.0), 0.0),
            LossKind::ArcFace => (rng.random_range(0.0..0.5), ARCFACE_SCALE),
            LossKind::AdaCos => (0.0, rng.random_range(1.0..10.0)),
            _ => (0.0, 0.0),
        };
        GradProblem {
            kind,
            inputs,
            encoder,
            classifier,
            flags,
            triplets,
            margin,
            scale,
        }
    }

    /// Draw a problem whose hinge terms (if any) sit at least 1e-3 away
    /// from their kink and with at least one term active.
    pub fn random(kind: LossKind, d: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let p = GradProblem::draw(kind, d, n, &mut rng);
            if p.hinge_ok() {
                return p;
            }
        }
    }

    fn units(&self, enc: &EncoderParams) -> Vec<Vec<f64>> {
        self.inputs.iter().map(|v| enc.encode(v).unwrap()).collect()
    }

    fn hinge_args(&self) -> Vec<f64> {
        let x = self.units(&self.encoder);
        let n = x.len();
        match self.kind {
            LossKind::Contrastive => (0..n)
                .filter(|&k| !self.flags[k])
                .map(|k| self.margin - sq_dist(&x[k], &x[(k + 1) % n]))
                .collect(),
            LossKind::Triplet => self
                .triplets
                .iter()
                .map(|&(a, p, q)| sq_dist(&x[a], &x[p]) - sq_dist(&x[a], &x[q]) + self.margin)
                .collect(),
            _ => Vec::new(),
        }
    }

    fn hinge_ok(&self) -> bool {
        let args = self.hinge_args();
        let clear = args.iter().all(|a| a.abs() > 1e-3);
        let active = match self.kind {
            // the loss must depend on the inputs: active triplets whose
            // pair distances cancel exactly give a constant
            LossKind::Triplet => {
                let mut coef = std::collections::BTreeMap::new();
                for (&(a, p, q), &arg) in self.triplets.iter().zip(&args) {
                    if arg > 0.0 {
                        *coef.entry((a.min(p), a.max(p))).or_insert(0i32) += 1;
                        *coef.entry((a.min(q), a.max(q))).or_insert(0i32) -= 1;
                    }
                }
                coef.values().any(|&c| c != 0)
            }
            _ => true,
        };
        clear && active
    }

    /// Total loss for the given parameters.
    pub fn loss(&self, enc: &EncoderParams, cls: Option<&ClassifierParams>) -> f64 {
        self.eval(enc, cls).0
    }

    /// Loss plus analytic gradients `(encoder weight, encoder bias,
    /// classifier weight, classifier bias)`.
    pub fn eval(
        &self,
        enc: &EncoderParams,
        cls: Option<&ClassifierParams>,
    ) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let fwd: Vec<_> = self.inputs.iter().map(|v| enc.forward(v).unwrap()).collect();
        let x: Vec<&[f64]> = fwd.iter().map(|f| f.unit.as_slice()).collect();
        let n = x.len();
        let d = enc.d_out();
        let mut gx = vec![vec![0.0; d]; n];
        let (mut cw, mut cb) = match cls {
            Some(c) => (vec![0.0; c.weight.len()], vec![0.0; c.num_classes()]),
            None => (Vec::new(), Vec::new()),
        };
        let add = |dst: &mut Vec<f64>, src: &[f64]| dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        let mut total = 0.0;
        match self.kind {
            LossKind::Contrastive => {
                for k in 0..n {
                    let j = (k + 1) % n;
                    let l = contrastive_loss(x[k], x[j], self.flags[k], self.margin);
                    total += l.loss;
                    add(&mut gx[k], &l.grad_i);
                    add(&mut gx[j], &l.grad_j);
                }
            }
            LossKind::Triplet => {
                for &(a, p, q) in &self.triplets {
                    let l = triplet_loss(x[a], x[p], x[q], self.margin);
                    total += l.loss;
                    add(&mut gx[a], &l.grad_anchor);
                    add(&mut gx[p], &l.grad_positive);
                    add(&mut gx[q], &l.grad_negative);
                }
            }
            LossKind::Softmax | LossKind::ArcFace => {
                let c = cls.unwrap();
                for k in 0..n {
                    let l = if self.kind == LossKind::Softmax {
                        softmax_loss(x[k], k, c)
                    } else {
                        arcface_loss(x[k], k, c, self.margin, self.scale)
                    };
                    total += l.loss;
                    add(&mut gx[k], &l.grad_x);
                    add(&mut cw, &l.grad_weight);
                    add(&mut cb, &l.grad_bias);
                }
            }
            LossKind::AdaCos => {
                let batch: Vec<(&[f64], usize)> = (0..n).map(|k| (x[k], k)).collect();
                let out = adacos_loss(&batch, cls.unwrap(), self.scale).unwrap();
                total = out.loss;
                for (g, d) in gx.iter_mut().zip(&out.grad_x) {
                    add(g, d);
                }
                add(&mut cw, &out.grad_weight);
            }
            LossKind::Vanilla => unreachable!(),
        }
        let mut g = enc.zero_grad();
        for k in 0..n {
            enc.backward(&self.inputs[k], &fwd[k], &gx[k], &mut g);
        }
        (total, g.weight, g.bias, cw, cb)
    }

    /// Largest relative error between analytic and central-difference
    /// gradients over the parameter tensors, using norm-wise relative
    /// error `|a - f| / max(|a|, |f|)` (0 when both vanish).
    pub fn max_rel_error(&self, h: f64) -> f64 {
        let cls = self.classifier.as_ref();
        let (_, aw, ab, acw, acb) = self.eval(&self.encoder, cls);

        let mut fw = vec![0.0; aw.len()];
        for (i, slot) in fw.iter_mut().enumerate() {
            let mut e = self.encoder.clone();
            e.weight[i] += h;
            let up = self.loss(&e, cls);
            e.weight[i] -= 2.0 * h;
            *slot = (up - self.loss(&e, cls)) / (2.0 * h);
        }
        let mut fb = vec![0.0; ab.len()];
        for (i, slot) in fb.iter_mut().enumerate() {
            let mut e = self.encoder.clone();
            e.bias[i] += h;
            let up = self.loss(&e, cls);
            e.bias[i] -= 2.0 * h;
            *slot = (up - self.loss(&e, cls)) / (2.0 * h);
        }
        let mut errs = vec![rel_error(&aw, &fw), rel_error(&ab, &fb)];
        if let Some(c) = cls {
            let mut fcw = vec![0.0; acw.len()];
            for (i, slot) in fcw.iter_mut().enumerate() {
                let mut cc = c.clone();
                cc.weight[i] += h;
                let up = self.loss(&self.encoder, Some(&cc));
                cc.weight[i] -= 2.0 * h;
                *slot = (up - self.loss(&self.encoder, Some(&cc))) / (2.0 * h);
            }
            errs.push(rel_error(&acw, &fcw));
            if self.kind == LossKind::Softmax {
                let mut fcb = vec![0.0; acb.len()];
                for (i, slot) in fcb.iter_mut().enumerate() {
                    let mut cc = c.clone();
                    cc.bias[i] += h;
                    let up = self.loss(&self.encoder, Some(&cc));
                    cc.bias[i] -= 2.0 * h;
                    *slot = (up - self.loss(&self.encoder, Some(&cc))) / (2.0 * h);
                }
                errs.push(rel_error(&acb, &fcb));
            }
        }
        errs.into_iter().fold(0.0, f64::max)
    }
}

pub fn rel_error(a: &[f64], f: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(f).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(f));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

// ------------------------------------------------------------ reductions

/// Cosine-softmax cross entropy computed from scratch: logits are
/// `s * cos(x, w_j)`.
pub fn cosine_softmax_oracle(x: &[f64], label: usize, cls: &ClassifierParams, s: f64) -> f64 {
    let logits: Vec<f64> = (0..cls.num_classes())
        .map(|j| {
            let w = unit_of(cls.row(j));
            s * w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Random unit input, label and classifier for the reduction checks.
pub fn random_class_input(rng: &mut ChaCha8Rng) -> (Vec<f64>, usize, ClassifierParams) {
    let d = rng.random_range(2..=16);
    let n = rng.random_range(2..=10);
    let x = unit_of(&gaussian(rng, d, 1.0));
    let rows = (0..n)
        .map(|_| {
            let sd = rng.random_range(0.3..3.0);
            gaussian(rng, d, sd)
        })
        .collect();
    let cls = ClassifierParams::from_rows(rows, vec![0.0; n]);
    (x, rng.random_range(0..n), cls)
}

// ---------------------------------------------------------------- metrics

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Exact non-negative fraction, always reduced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frac(pub u128, pub u128);

impl Frac {
    pub fn new(p: u128, q: u128) -> Self {
        let g = gcd(p, q).max(1);
        Frac(p / g, q / g)
    }

    pub fn add(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }

    pub fn div_int(self, k: u128) -> Frac {
        Frac::new(self.0, self.1 * k)
    }

    pub fn to_f64(self) -> f64 {
        assert!(self.0 < 1 << 53 && self.1 < 1 << 53);
        self.0 as f64 / self.1 as f64
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Purity family straight from the definition, by enumerating clusters
/// and labels.
pub fn purity_oracle(pred: &[usize], gold: &[usize]) -> (f64, f64, f64) {
    let n = pred.len();
    let mut clusters: Vec<usize> = pred.to_vec();
    clusters.sort();
    clusters.dedup();
    let mut labels: Vec<usize> = gold.to_vec();
    labels.sort();
    labels.dedup();
    let overlap = |c: usize, l: usize| (0..n).filter(|&i| pred[i] == c && gold[i] == l).count();
    let pu: usize = clusters.iter().map(|&c| labels.iter().map(|&l| overlap(c, l)).max().unwrap()).sum();
    let ipu: usize = labels.iter().map(|&l| clusters.iter().map(|&c| overlap(c, l)).max().unwrap()).sum();
    let (pu, ipu) = (pu as f64 / n as f64, ipu as f64 / n as f64);
    (pu, ipu, harmonic(pu, ipu))
}

/// B-cubed per item, in exact rationals.
pub fn bcubed_oracle(pred: &[usize], gold: &[usize]) -> (f64, f64, f64) {
    let n = pred.len();
    let mut p = Frac(0, 1);
    let mut r = Frac(0, 1);
    for e in 0..n {
        let both = (0..n).filter(|&i| pred[i] == pred[e] && gold[i] == gold[e]).count() as u128;
        let cluster = (0..n).filter(|&i| pred[i] == pred[e]).count() as u128;
        let class = (0..n).filter(|&i| gold[i] == gold[e]).count() as u128;
        p = p.add(Frac::new(both, cluster));
        r = r.add(Frac::new(both, class));
    }
    let bcp = p.div_int(n as u128).to_f64();
    let bcr = r.div_int(n as u128).to_f64();
    (bcp, bcr, harmonic(bcp, bcr))
}

pub fn random_partition(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<usize>, Vec<usize>) {
    let n = rng.random_range(1..=max_n);
    let kp = rng.random_range(1..=n);
    let kg = rng.random_range(1..=n);
    let pred = (0..n).map(|_| rng.random_range(0..kp)).collect();
    let gold = (0..n).map(|_| rng.random_range(0..kg)).collect();
    (pred, gold)
}

// ------------------------------------------------------------- clustering

/// Group-average clustering by brute force: every step recomputes every
/// cluster-pair linkage from the original pairwise distances.
/// Returns `(a, b, distance, size)` per merge.
pub fn naive_group_average(points: &[Vec<f32>]) -> Vec<(usize, usize, f64, usize)> {
    let n = points.len();
    let dist = |i: usize, j: usize| {
        points[i]
            .iter()
            .zip(&points[j])
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut out = Vec::new();
    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let (ia, ma) = &clusters[x];
                let (ib, mb) = &clusters[y];
                let mut s = 0.0;
                for &i in ma {
                    for &j in mb {
                        s += dist(i, j);
                    }
                }
                let link = s / (ma.len() * mb.len()) as f64;
                let (lo, hi) = ((*ia).min(*ib), (*ia).max(*ib));
                let better = match best {
                    None => true,
                    Some((d, l, h, _, _)) => (link, lo, hi) < (d, l, h),
                };
                if better {
                    best = Some((link, lo, hi, x, y));
                }
            }
        }
        let (d, lo, hi, x, y) = best.unwrap();
        let mut merged = clusters[x].1.clone();
        merged.extend(&clusters[y].1);
        out.push((lo, hi, d, merged.len()));
        clusters.remove(y);
        clusters.remove(x);
        clusters.push((n + step, merged));
    }
    out
}

/// Compare a dendrogram with the naive oracle; `Err` describes the first
/// difference.
pub fn matches_naive(dg: &Dendrogram, naive: &[(usize, usize, f64, usize)]) -> Result<(), String> {
    if dg.merges.len() != naive.len() {
        return Err(format!("{} merges vs {}", dg.merges.len(), naive.len()));
    }
    for (k, (m, &(a, b, d, size))) in dg.merges.iter().zip(naive).enumerate() {
        let close = (m.distance - d).abs() <= 1e-9 * d.abs().max(1.0);
        if (m.a, m.b, m.size) != (a, b, size) || !close {
            return Err(format!("merge {k}: {m:?} vs ({a}, {b}, {d}, {size})"));
        }
    }
    Ok(())
}

pub fn is_monotone(dg: &Dendrogram) -> bool {
    dg.merges.windows(2).all(|w| w[1].distance >= w[0].distance)
}

pub fn random_points(rng: &mut ChaCha8Rng, max_n: usize) -> Vec<Vec<f32>> {
    let n = rng.random_range(1..=max_n);
    let d = rng.random_range(1..=8);
    (0..n)
        .map(|_| (0..d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
        .collect()
}

pub fn blob(center: &[f32], sigma: f32, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let noise = Normal::new(0.0f32, sigma).unwrap();
    (0..count)
        .map(|_| center.iter().map(|c| c + noise.sample(rng)).collect())
        .collect()
}

/// Two 20-point blobs (sigma 0.05) with centers 5 apart.
pub fn two_blob_fixture() -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pts = blob(&[0.0, 0.0], 0.05, 20, &mut rng);
    pts.extend(blob(&[5.0, 0.0], 0.05, 20, &mut rng));
    pts
}

/// One tight 20-point blob (sigma 0.01).
pub fn single_blob_fixture() -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    blob(&[1.0, -1.0], 0.01, 20, &mut rng)
}

// ---------------------------------------------------------------- ranking

/// `total` instances on the unit circle: a query of frame `Filling` with
/// `true_count` other Filling instances, `hits` of which are close to
/// it; `true_count - hits` distractors of other frames sit between the
/// close and the far Filling instances.
pub fn ranking_fixture(total: usize, true_count: usize, hits: usize) -> (Dataset, Vec<Vec<f32>>) {
    let at = |cos: f32| {
        let s = (1.0 - cos * cos).sqrt();
        vec![cos, s]
    };
    let mut records = Vec::with_capacity(total);
    let mut emb = Vec::with_capacity(total);
    let mut push = |k: usize, frame: &str, v: Vec<f32>| {
        records.push(InstanceRecord {
            id: format!("i{k:05}"),
            lemma: format!("lemma{}", k % 97),
            lu_id: format!("lemma{}.{frame}", k % 97),
            gold_frame: frame.to_string(),
            v_word: v.clone(),
            v_mask: v.clone(),
            sentence: None,
        });
        emb.push(v);
    };
    let mut k = 0;
    push(k, "Filling", at(1.0));
    for _ in 0..hits {
        k += 1;
        push(k, "Filling", at(0.9));
    }
    for _ in hits..true_count {
        k += 1;
        push(k, "Filling", at(0.1));
    }
    for _ in hits..true_count {
        k += 1;
        push(k, "Removing", at(0.5));
    }
    while k + 1 < total {
        k += 1;
        let frame = if k % 2 == 0 { "Placing" } else { "Topic" };
        push(k, frame, at(-0.5));
    }
    (Dataset::from_records(records).unwrap(), emb)
}

/// Recall by fully sorting the search space.
pub fn ranking_oracle(query: usize, ds: &Dataset, emb: &[Vec<f32>]) -> f64 {
    let recs = ds.records();
    let cos = |a: &[f32], b: &[f32]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut others: Vec<(f64, &str, bool)> = (0..recs.len())
        .filter(|&i| i != query)
        .map(|i| (cos(&emb[query], &emb[i]), recs[i].id.as_str(), recs[i].gold_frame == recs[query].gold_frame))
        .collect();
    others.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    let t = others.iter().filter(|o| o.2).count();
    others[..t].iter().filter(|o| o.2).count() as f64 / t as f64
}

// ------------------------------------------------------------- end to end

/// Learning rate for the encoder head on desk-scale corpora. The
/// published rate (1e-5) is tuned for fine-tuning a full transformer and
/// leaves a 16x16 head almost untouched within five epochs.
pub const DESK_LEARNING_RATE: f64 = 5e-2;

pub const HARNESS_SEED: u64 = 42;

pub fn synthetic_corpus() -> Dataset {
    generate(&SynthConfig::default()).unwrap()
}

pub fn experiment(loss: LossKind, mode: ClusteringMode, budget: Budget) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(loss, mode, HARNESS_SEED);
    cfg.train.optimizer.learning_rate = DESK_LEARNING_RATE;
    cfg.budget = budget;
    cfg
}

pub fn cv(ds: &Dataset, loss: LossKind, mode: ClusteringMode, budget: Budget) -> CvResult {
    run_cv(ds, &experiment(loss, mode, budget)).unwrap()
}
