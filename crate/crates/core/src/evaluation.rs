//! Clustering metrics (Purity family, B-cubed family) and the similarity
//! ranking recall.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::embedding::cosine;
use crate::error::{Error, Result};

/// Harmonic mean, defined as 0 when both inputs are 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pu: f64,
    pub ipu: f64,
    pub pif: f64,
    pub bcp: f64,
    pub bcr: f64,
    pub bcf: f64,
    pub num_clusters: usize,
    pub num_plus: Option<usize>,
}

/// Co-occurrence counts between predicted clusters and gold classes.
struct Contingency {
    n: usize,
    cells: BTreeMap<(usize, usize), usize>,
    cluster_sizes: Vec<usize>,
    class_sizes: Vec<usize>,
}

impl Contingency {
    fn new<G: Eq + Hash>(pred: &[usize], gold: &[G]) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(Error::InstanceMismatch(format!(
                "{} predicted vs {} gold labels",
                pred.len(),
                gold.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::InstanceMismatch("no instances".into()));
        }
        let mut class_ids: HashMap<&G, usize> = HashMap::new();
        let mut cells = BTreeMap::new();
        let mut cluster_sizes = Vec::new();
        let mut class_sizes = Vec::new();
        for (&p, g) in pred.iter().zip(gold) {
            let next = class_ids.len();
            let c = *class_ids.entry(g).or_insert(next);
            if c == class_sizes.len() {
                class_sizes.push(0);
            }
            if p >= cluster_sizes.len() {
                cluster_sizes.resize(p + 1, 0);
            }
            cluster_sizes[p] += 1;
            class_sizes[c] += 1;
            *cells.entry((p, c)).or_insert(0) += 1;
        }
        Ok(Contingency {
            n: pred.len(),
            cells,
            cluster_sizes,
            class_sizes,
        })
    }
}

/// `(Pu, iPu, PiF)`.
pub fn purity_scores<G: Eq + Hash>(pred: &[usize], gold: &[G]) -> Result<(f64, f64, f64)> {
    let t = Contingency::new(pred, gold)?;
    let mut best_in_cluster = vec![0usize; t.cluster_sizes.len()];
    let mut best_in_class = vec![0usize; t.class_sizes.len()];
    for (&(p, c), &count) in &t.cells {
        best_in_cluster[p] = best_in_cluster[p].max(count);
        best_in_class[c] = best_in_class[c].max(count);
    }
    let n = t.n as f64;
    let pu = best_in_cluster.iter().sum::<usize>() as f64 / n;
    let ipu = best_in_class.iter().sum::<usize>() as f64 / n;
    Ok((pu, ipu, harmonic_mean(pu, ipu)))
}

/// `(1/n) * sum(num / den)`, exact when the rational sum fits in `u128`
/// so the result is the correctly rounded value regardless of term order.
fn mean_of_fractions(terms: &[(usize, usize)], n: usize) -> f64 {
    let exact = terms
        .iter()
        .try_fold(Ratio::<u128>::zero(), |acc, &(num, den)| {
            acc.checked_add(&Ratio::new(num as u128, den as u128))
        })
        .and_then(|s| s.checked_div(&Ratio::from_integer(n as u128)))
        .and_then(|m| m.to_f64());
    exact.unwrap_or_else(|| terms.iter().map(|&(a, b)| a as f64 / b as f64).sum::<f64>() / n as f64)
}

/// `(BcP, BcR, BcF)`.
pub fn bcubed_scores<G: Eq + Hash>(pred: &[usize], gold: &[G]) -> Result<(f64, f64, f64)> {
    let t = Contingency::new(pred, gold)?;
    // every instance in cell (p, c) has overlap = count
    let mut p_terms = Vec::with_capacity(t.cells.len());
    let mut r_terms = Vec::with_capacity(t.cells.len());
    for (&(p, c), &count) in &t.cells {
        p_terms.push((count * count, t.cluster_sizes[p]));
        r_terms.push((count * count, t.class_sizes[c]));
    }
    let bcp = mean_of_fractions(&p_terms, t.n);
    let bcr = mean_of_fractions(&r_terms, t.n);
    Ok((bcp, bcr, harmonic_mean(bcp, bcr)))
}

/// All six metrics for a positional assignment.
pub fn evaluate<G: Eq + Hash>(
    pred: &[usize],
    gold: &[G],
    num_plus: Option<usize>,
) -> Result<MetricsReport> {
    let (pu, ipu, pif) = purity_scores(pred, gold)?;
    let (bcp, bcr, bcf) = bcubed_scores(pred, gold)?;
    let num_clusters = pred.iter().collect::<BTreeSet<_>>().len();
    Ok(MetricsReport {
        pu,
        ipu,
        pif,
        bcp,
        bcr,
        bcf,
        num_clusters,
        num_plus,
    })
}

/// Metrics for id-keyed predictions; both maps must cover the same ids.
pub fn evaluate_maps(
    pred: &BTreeMap<String, usize>,
    gold: &BTreeMap<String, String>,
    num_plus: Option<usize>,
) -> Result<MetricsReport> {
    if pred.len() != gold.len() || pred.keys().zip(gold.keys()).any(|(a, b)| a != b) {
        let missing = gold.keys().find(|k| !pred.contains_key(*k));
        let extra = pred.keys().find(|k| !gold.contains_key(*k));
        return Err(Error::InstanceMismatch(format!(
            "missing prediction for {missing:?}, unknown instance {extra:?}"
        )));
    }
    let p: Vec<usize> = pred.values().copied().collect();
    let g: Vec<&String> = gold.values().collect();
    evaluate(&p, &g, num_plus)
}

/// Plain mean of per-fold reports; cluster counts are rounded.
pub fn mean_report(reports: &[MetricsReport]) -> Option<MetricsReport> {
    if reports.is_empty() {
        return None;
    }
    let k = reports.len() as f64;
    let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    let num_plus = reports
        .iter()
        .map(|r| r.num_plus)
        .collect::<Option<Vec<_>>>()
        .map(|v| (v.iter().sum::<usize>() as f64 / k).round() as usize);
    Some(MetricsReport {
        pu: avg(|r| r.pu),
        ipu: avg(|r| r.ipu),
        pif: avg(|r| r.pif),
        bcp: avg(|r| r.bcp),
        bcr: avg(|r| r.bcr),
        bcf: avg(|r| r.bcf),
        num_clusters: avg(|r| r.num_clusters as f64).round() as usize,
        num_plus,
    })
}

/// Text table with `Pu / iPu / PiF` and `BcP / BcR / BcF` columns, in
/// percent.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let pct = |v: f64| format!("{:.1}", v * 100.0);
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>6}  {:<21}  {:<21}",
        "Model", "#pLU", "#C", "Pu / iPu / PiF", "BcP / BcR / BcF"
    );
    for (label, r) in rows {
        let plus = r.num_plus.map_or("--".to_string(), |p| p.to_string());
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:<21}  {:<21}",
            label,
            plus,
            r.num_clusters,
            format!("{} / {} / {}", pct(r.pu), pct(r.ipu), pct(r.pif)),
            format!("{} / {} / {}", pct(r.bcp), pct(r.bcr), pct(r.bcf)),
        );
    }
    out
}

/// Candidate set for a ranking query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchSpace {
    /// Every other instance.
    All,
    /// Other instances of the query's lemma.
    Same,
    /// Instances of other lemmas.
    Diff,
}

impl SearchSpace {
    pub fn name(self) -> &'static str {
        match self {
            SearchSpace::All => "all",
            SearchSpace::Same => "same",
            SearchSpace::Diff => "diff",
        }
    }
}

/// Fraction of the query's same-frame instances (within `space`) that
/// appear among the top-`t` instances by cosine similarity, `t` being the
/// number of such instances. Ties rank by ascending instance id.
pub fn ranking_recall(
    query: usize,
    ds: &Dataset,
    embeddings: &[Vec<f32>],
    space: SearchSpace,
) -> Result<f64> {
    let recs = ds.records();
    if embeddings.len() != recs.len() {
        return Err(Error::InstanceMismatch(format!(
            "{} embeddings for {} instances",
            embeddings.len(),
            recs.len()
        )));
    }
    let q = &recs[query];
    let in_space = |i: usize| {
        i != query
            && match space {
                SearchSpace::All => true,
                SearchSpace::Same => recs[i].lemma == q.lemma,
                SearchSpace::Diff => recs[i].lemma != q.lemma,
            }
    };
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for i in (0..recs.len()).filter(|&i| in_space(i)) {
        scored.push((cosine(&embeddings[query], &embeddings[i])?, i));
    }
    let t = scored
        .iter()
        .filter(|(_, i)| recs[*i].gold_frame == q.gold_frame)
        .count();
    if t == 0 {
        return Err(Error::NoTrueInstances {
            frame: q.gold_frame.clone(),
            space: space.name().into(),
        });
    }
    let by_rank = |a: &(f64, usize), b: &(f64, usize)| {
        b.0.total_cmp(&a.0).then_with(|| recs[a.1].id.cmp(&recs[b.1].id))
    };
    if t < scored.len() {
        scored.select_nth_unstable_by(t - 1, by_rank);
    }
    let hits = scored[..t]
        .iter()
        .filter(|(_, i)| recs[*i].gold_frame == q.gold_frame)
        .count();
    Ok(hits as f64 / t as f64)
}

/// Recall for every query that has at least one true instance in
/// `space`; queries without one are `None`.
pub fn ranking_recall_all(
    ds: &Dataset,
    embeddings: &[Vec<f32>],
    space: SearchSpace,
) -> Result<Vec<Option<f64>>> {
    (0..ds.len())
        .into_par_iter()
        .map(|q| match ranking_recall(q, ds, embeddings, space) {
            Ok(r) => Ok(Some(r)),
            Err(Error::NoTrueInstances { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Mean recall split by whether the query's frame was seen in training.
/// A side with no queries is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapSplit {
    pub overlap: Option<f64>,
    pub non_overlap: Option<f64>,
}

pub fn overlap_split_mean(recalls: &[(&str, f64)], train_frames: &BTreeSet<String>) -> OverlapSplit {
    let (mut o_sum, mut o_n, mut n_sum, mut n_n) = (0.0, 0usize, 0.0, 0usize);
    for &(frame, r) in recalls {
        if train_frames.contains(frame) {
            o_sum += r;
            o_n += 1;
        } else {
            n_sum += r;
            n_n += 1;
        }
    }
    OverlapSplit {
        overlap: (o_n > 0).then(|| o_sum / o_n as f64),
        non_overlap: (n_n > 0).then(|| n_sum / n_n as f64),
    }
}
