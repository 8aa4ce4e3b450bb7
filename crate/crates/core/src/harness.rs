//! Cross-validation driver: per-rotation training, dev-set search over
//! (alpha, margin, threshold), a single test-fold evaluation, and the
//! training-instance budget ablation.
//!
//! Selection only ever sees the train and dev folds; the test fold is
//! passed to [`score_test`] after the configuration is fixed.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{embed_dataset, ClusteringMode, InduceConfig, InducedTree, DEFAULT_K_MAX_PER_LEMMA};
use crate::data::{make_splits, Dataset, Rotation, SplitSpec};
use crate::embedding::CombineWeight;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, mean_report, MetricsReport};
use crate::learning::{train, Checkpoint, LossConfig, LossKind, TrainConfig, TrainedModel};

pub const MAX_THRESHOLD_CANDIDATES: usize = 50;

/// Maximum number of training instances kept per LU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    All,
    Max(usize),
}

impl Budget {
    pub const ABLATION: [Budget; 5] = [
        Budget::Max(1),
        Budget::Max(2),
        Budget::Max(5),
        Budget::Max(10),
        Budget::All,
    ];

    pub fn limit(self) -> Option<usize> {
        match self {
            Budget::All => None,
            Budget::Max(n) => Some(n),
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::All => f.write_str("all"),
            Budget::Max(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Budget> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Budget::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Budget::Max(n)),
            _ => Err(Error::Config(format!("budget must be a positive integer or \"all\", got {s:?}"))),
        }
    }
}

/// Keep at most `budget` instances of every LU.
///
/// Each LU's instances are shuffled once (the shuffle does not depend on
/// the budget) and a prefix is kept, so smaller budgets give subsets of
/// larger ones. Kept records stay in dataset order.
pub fn subsample_by_lu(ds: &Dataset, budget: Budget, seed: u64) -> Result<Dataset> {
    let Some(limit) = budget.limit() else {
        return Ok(ds.clone());
    };
    let mut by_lu: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records().iter().enumerate() {
        by_lu.entry(&r.lu_id).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; ds.len()];
    for idx in by_lu.values_mut() {
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(limit) {
            keep[i] = true;
        }
    }
    let mut pos = 0;
    ds.filter(|_| {
        pos += 1;
        keep[pos - 1]
    })
}

/// Hyperparameters searched on the dev fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub alphas: Vec<f64>,
    pub margins: Vec<f64>,
    /// Fixed thresholds; when absent, candidates come from the dev
    /// dendrogram's merge distances.
    pub thresholds: Option<Vec<f64>>,
    pub max_thresholds: usize,
}

impl GridSpec {
    /// 0.0, 0.1, ..., 1.0.
    pub fn alpha_grid() -> Vec<f64> {
        (0..=10).map(|k| k as f64 / 10.0).collect()
    }

    pub fn for_loss(kind: LossKind) -> Self {
        let margins = match kind.margin_candidates() {
            [] => vec![LossConfig::default_for(kind).margin],
            m => m.to_vec(),
        };
        GridSpec {
            alphas: Self::alpha_grid(),
            margins,
            thresholds: None,
            max_thresholds: MAX_THRESHOLD_CANDIDATES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.margins.is_empty() {
            return Err(Error::Config("grid needs at least one alpha and one margin".into()));
        }
        for &a in &self.alphas {
            CombineWeight::new(a)?;
        }
        if self.thresholds.as_ref().is_some_and(Vec::is_empty) || self.max_thresholds == 0 {
            return Err(Error::Config("grid needs at least one threshold".into()));
        }
        Ok(())
    }
}

/// Up to `max` thresholds, one just above each of `max` evenly spaced
/// quantiles of the merge distances. Cutting at a candidate applies every
/// merge up to and including the chosen one.
pub fn threshold_candidates(merge_distances: &[f64], max: usize) -> Vec<f64> {
    let m = merge_distances.len();
    if m == 0 || max == 0 {
        return vec![0.0];
    }
    let mut d = merge_distances.to_vec();
    d.sort_by(f64::total_cmp);
    let count = max.min(m);
    let mut out: Vec<f64> = (0..count)
        .map(|i| {
            let mut k = if count == 1 { m - 1 } else { (i * (m - 1) + (count - 1) / 2) / (count - 1) };
            // tied merges are applied together
            while k + 1 < m && d[k + 1] == d[k] {
                k += 1;
            }
            if k + 1 < m {
                (d[k] + d[k + 1]) / 2.0
            } else {
                d[k] + 1e-9 * d[k].abs().max(1.0)
            }
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevRow {
    pub alpha: f64,
    pub margin: f64,
    pub threshold: f64,
    pub bcf: f64,
}

/// Argmax order: higher BcF first, then smaller alpha, threshold, margin.
fn better(a: &DevRow, b: &DevRow) -> Ordering {
    b.bcf
        .total_cmp(&a.bcf)
        .then(a.alpha.total_cmp(&b.alpha))
        .then(a.threshold.total_cmp(&b.threshold))
        .then(a.margin.total_cmp(&b.margin))
}

/// Everything that defines one cross-validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub loss: LossKind,
    pub mode: ClusteringMode,
    pub grid: GridSpec,
    pub train: TrainConfig,
    pub budget: Budget,
    pub k_max_per_lemma: usize,
    /// Seeds splitting, subsampling and X-means.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(loss: LossKind, mode: ClusteringMode, seed: u64) -> Self {
        ExperimentConfig {
            loss,
            mode,
            grid: GridSpec::for_loss(loss),
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            budget: Budget::All,
            k_max_per_lemma: DEFAULT_K_MAX_PER_LEMMA,
            seed,
        }
    }

    fn induce(&self) -> InduceConfig {
        InduceConfig {
            mode: self.mode,
            k_max_per_lemma: self.k_max_per_lemma,
            seed: self.seed,
        }
    }

    /// Output directory name for the loss, tagged with the budget when
    /// one applies.
    pub fn run_name(&self) -> String {
        match self.budget {
            Budget::All => self.loss.name().to_string(),
            b => format!("{}_budget{b}", self.loss.name()),
        }
    }
}

/// Result of the dev-fold search.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuned {
    pub best: DevRow,
    pub grid: Vec<DevRow>,
    pub model: TrainedModel,
}

fn train_model(train_ds: &Dataset, cfg: &ExperimentConfig, margin: f64) -> Result<TrainedModel> {
    if cfg.loss == LossKind::Vanilla {
        return Ok(TrainedModel::vanilla(train_ds.dim()));
    }
    let mut loss = LossConfig::new(cfg.loss, margin)?;
    loss.scale = LossConfig::default_for(cfg.loss).scale;
    train(train_ds, &cfg.train, &loss)
}

/// Dev BcF of every (alpha, threshold) for one trained model.
fn dev_rows(dev: &Dataset, model: &TrainedModel, margin: f64, cfg: &ExperimentConfig) -> Result<Vec<DevRow>> {
    let gold: Vec<&str> = dev.records().iter().map(|r| r.gold_frame.as_str()).collect();
    let per_alpha: Vec<Vec<DevRow>> = cfg
        .grid
        .alphas
        .par_iter()
        .map(|&alpha| {
            let emb = embed_dataset(dev, &model.encoder, CombineWeight::new(alpha)?)?;
            let tree = InducedTree::build(dev, &emb, &cfg.induce())?;
            let thresholds = match &cfg.grid.thresholds {
                Some(t) => t.clone(),
                None => {
                    let d: Vec<f64> = tree.dendrogram.distances().collect();
                    threshold_candidates(&d, cfg.grid.max_thresholds)
                }
            };
            thresholds
                .into_iter()
                .map(|threshold| {
                    let pred = tree.cut(threshold);
                    let report = evaluate(&pred.labels, &gold, None)?;
                    Ok(DevRow {
                        alpha,
                        margin,
                        threshold,
                        bcf: report.bcf,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_alpha.into_iter().flatten().collect())
}

/// Train one model per margin candidate and pick the best dev config.
pub fn tune(train_ds: &Dataset, dev: &Dataset, cfg: &ExperimentConfig) -> Result<Tuned> {
    cfg.grid.validate()?;
    let mut grid = Vec::new();
    let mut best: Option<(DevRow, TrainedModel)> = None;
    for &margin in &cfg.grid.margins {
        let model = train_model(train_ds, cfg, margin)?;
        let rows = dev_rows(dev, &model, margin, cfg)?;
        let top = *rows.iter().min_by(|a, b| better(a, b)).expect("non-empty grid");
        if best.as_ref().is_none_or(|(b, _)| better(&top, b) == Ordering::Less) {
            best = Some((top, model));
        }
        grid.extend(rows);
    }
    let (best, model) = best.expect("non-empty margin grid");
    log::info!(
        "{} {}: dev BcF {:.4} at alpha {} margin {} threshold {:.4}",
        cfg.loss,
        cfg.mode,
        best.bcf,
        best.alpha,
        best.margin,
        best.threshold
    );
    Ok(Tuned { best, grid, model })
}

/// Apply a fixed configuration to the test fold.
pub fn score_test(test: &Dataset, model: &TrainedModel, best: &DevRow, cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let emb = embed_dataset(test, &model.encoder, CombineWeight::new(best.alpha)?)?;
    let tree = InducedTree::build(test, &emb, &cfg.induce())?;
    let pred = tree.cut(best.threshold);
    let gold: Vec<&str> = test.records().iter().map(|r| r.gold_frame.as_str()).collect();
    evaluate(&pred.labels, &gold, tree.num_plus())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    /// 1-based rotation number.
    pub fold: usize,
    pub rotation: Rotation,
    pub tuned: Tuned,
    pub test: MetricsReport,
}

pub fn run_fold(ds: &Dataset, split: &SplitSpec, r: usize, cfg: &ExperimentConfig) -> Result<FoldResult> {
    let rotation = Rotation::nth(r);
    let train_ds = split.fold_dataset(ds, rotation.train)?;
    let train_ds = subsample_by_lu(&train_ds, cfg.budget, cfg.seed)?;
    let dev = split.fold_dataset(ds, rotation.dev)?;
    let tuned = tune(&train_ds, &dev, cfg)?;
    let test_ds = split.fold_dataset(ds, rotation.test)?;
    let test = score_test(&test_ds, &tuned.model, &tuned.best, cfg)?;
    Ok(FoldResult {
        fold: r + 1,
        rotation,
        tuned,
        test,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub mean: MetricsReport,
}

pub fn run_cv_with_split(ds: &Dataset, split: &SplitSpec, cfg: &ExperimentConfig) -> Result<CvResult> {
    split.validate_against(ds)?;
    let folds = (0..3)
        .map(|r| run_fold(ds, split, r, cfg))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricsReport> = folds.iter().map(|f| f.test).collect();
    let mean = mean_report(&reports).expect("three folds");
    Ok(CvResult { folds, mean })
}

/// Three-fold CV over lemma splits drawn with `cfg.seed`.
pub fn run_cv(ds: &Dataset, cfg: &ExperimentConfig) -> Result<CvResult> {
    let split = make_splits(ds, cfg.seed)?;
    run_cv_with_split(ds, &split, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub selected: DevRow,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub loss: LossKind,
    pub mode: ClusteringMode,
    pub budget: Budget,
    pub seed: u64,
    pub folds: Vec<FoldSummary>,
    pub mean: MetricsReport,
}

impl RunSummary {
    pub fn new(cfg: &ExperimentConfig, res: &CvResult) -> Self {
        RunSummary {
            loss: cfg.loss,
            mode: cfg.mode,
            budget: cfg.budget,
            seed: cfg.seed,
            folds: res
                .folds
                .iter()
                .map(|f| FoldSummary {
                    fold: f.fold,
                    selected: f.tuned.best,
                    test: f.test,
                })
                .collect(),
            mean: res.mean,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Write `<root>/<run>/<mode>/fold<k>/` artifacts and merge this run into
/// `<root>/summary.json`. Returns the run directory.
pub fn write_results(root: &Path, cfg: &ExperimentConfig, res: &CvResult) -> Result<PathBuf> {
    let run_dir = root.join(cfg.run_name()).join(cfg.mode.name());
    for f in &res.folds {
        let dir = run_dir.join(format!("fold{}", f.fold));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let train = (cfg.loss != LossKind::Vanilla).then_some(&cfg.train);
        Checkpoint::from_model(&f.tuned.model, train, cfg.seed).save(dir.join("checkpoint.json"))?;

        let grid_path = dir.join("dev_grid.csv");
        let mut w = csv::Writer::from_path(&grid_path)?;
        for row in &f.tuned.grid {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(&grid_path, e))?;

        let summary = FoldSummary {
            fold: f.fold,
            selected: f.tuned.best,
            test: f.test,
        };
        write_json(&dir.join("test_metrics.json"), &summary)?;
    }

    let manifest_path = root.join("summary.json");
    let mut manifest: BTreeMap<String, RunSummary> = match fs::read_to_string(&manifest_path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| Error::json("summary manifest", e))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
        Err(e) => return Err(Error::io(&manifest_path, e)),
    };
    manifest.insert(
        format!("{}/{}", cfg.run_name(), cfg.mode.name()),
        RunSummary::new(cfg, res),
    );
    write_json(&manifest_path, &manifest)?;
    Ok(run_dir)
}
