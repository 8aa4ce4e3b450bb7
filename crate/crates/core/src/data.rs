//! Instance records, the line-delimited dataset format, and fold splitting.
//!
//! A dataset file holds one JSON object per line:
//!
//! ```text
//! {"id":"s1","lemma":"cover","lu_id":"cover.v.1","frame":"Filling","v_word":[..],"v_mask":[..]}
//! ```
//!
//! `sentence` is optional. Vectors are parsed as `f32`. Writing a loaded
//! dataset back out reproduces a canonically formatted file byte for byte.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One frame-annotated verb occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub lemma: String,
    pub lu_id: String,
    #[serde(rename = "frame")]
    pub gold_frame: String,
    pub v_word: Vec<f32>,
    pub v_mask: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<InstanceRecord>,
    dim: usize,
}

/// Counts of distinct lemmas, LUs, frames, and the number of instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub num_verbs: usize,
    pub num_lus: usize,
    pub num_frames: usize,
    pub num_instances: usize,
}

impl Dataset {
    /// Validates records in order; `line` in errors is the 1-based index.
    pub fn from_records(records: Vec<InstanceRecord>) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyDataset)?;
        let dim = first.v_word.len();
        let mut ids = HashSet::with_capacity(records.len());
        let mut lu_lemma: HashMap<&str, &str> = HashMap::new();
        for (i, rec) in records.iter().enumerate() {
            let line = i + 1;
            for (field, v) in [("v_word", &rec.v_word), ("v_mask", &rec.v_mask)] {
                if v.len() != dim || dim == 0 {
                    return Err(Error::DatasetDimension {
                        line,
                        expected: dim,
                        found: v.len(),
                    });
                }
                if v.iter().any(|c| !c.is_finite()) {
                    return Err(Error::NonFinite { line, field });
                }
            }
            if !ids.insert(rec.id.as_str()) {
                return Err(Error::DuplicateId {
                    line,
                    id: rec.id.clone(),
                });
            }
            match lu_lemma.get(rec.lu_id.as_str()) {
                Some(&lemma) if lemma != rec.lemma => {
                    return Err(Error::InconsistentLu {
                        lu_id: rec.lu_id.clone(),
                        first: lemma.to_string(),
                        second: rec.lemma.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    lu_lemma.insert(&rec.lu_id, &rec.lemma);
                }
            }
        }
        Ok(Dataset { records, dim })
    }

    pub fn records(&self) -> &[InstanceRecord] {
        &self.records
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn lemmas(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.lemma.as_str()).collect()
    }

    pub fn lu_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.lu_id.as_str()).collect()
    }

    pub fn frames(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.gold_frame.as_str()).collect()
    }

    /// Instance id to gold frame.
    pub fn gold(&self) -> BTreeMap<String, String> {
        self.records
            .iter()
            .map(|r| (r.id.clone(), r.gold_frame.clone()))
            .collect()
    }

    /// Records for which `keep` holds, in original order.
    pub fn filter(&self, mut keep: impl FnMut(&InstanceRecord) -> bool) -> Result<Dataset> {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Dataset::from_records(records)
    }

    pub fn stats(&self) -> DatasetStats {
        dataset_stats(self)
    }

    /// Canonical serialization: one compact JSON object per line, each
    /// line newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("records always serialize"));
            out.push('\n');
        }
        out
    }
}

/// Parse the line-delimited record format. Blank lines are ignored but
/// still counted for error line numbers.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
        lines.push(i + 1);
    }
    // Re-map validation errors from record index to file line.
    Dataset::from_records(records).map_err(|e| remap_line(e, &lines))
}

fn remap_line(err: Error, lines: &[usize]) -> Error {
    let fix = |l: usize| lines.get(l - 1).copied().unwrap_or(l);
    match err {
        Error::DatasetDimension {
            line,
            expected,
            found,
        } => Error::DatasetDimension {
            line: fix(line),
            expected,
            found,
        },
        Error::DuplicateId { line, id } => Error::DuplicateId { line: fix(line), id },
        Error::NonFinite { line, field } => Error::NonFinite {
            line: fix(line),
            field,
        },
        other => other,
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ds.to_jsonl()).map_err(|e| Error::io(path, e))
}

pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    DatasetStats {
        num_verbs: ds.lemmas().len(),
        num_lus: ds.lu_ids().len(),
        num_frames: ds.frames().len(),
        num_instances: ds.len(),
    }
}

/// Role a fold plays within one cross-validation rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rotation {
    pub train: u8,
    pub dev: u8,
    pub test: u8,
}

impl Rotation {
    /// Rotation `r` (0, 1 or 2) trains on fold `r+1`, tunes on the next
    /// fold and tests on the one after.
    pub fn nth(r: usize) -> Rotation {
        let f = |k: usize| ((r + k) % 3 + 1) as u8;
        Rotation {
            train: f(0),
            dev: f(1),
            test: f(2),
        }
    }

    pub fn all() -> [Rotation; 3] {
        [Rotation::nth(0), Rotation::nth(1), Rotation::nth(2)]
    }
}

/// Lemma to fold (1, 2 or 3).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitSpec {
    pub folds: BTreeMap<String, u8>,
}

impl SplitSpec {
    pub fn fold_of(&self, lemma: &str) -> Option<u8> {
        self.folds.get(lemma).copied()
    }

    /// Instances whose lemma is assigned to `fold`.
    pub fn fold_dataset(&self, ds: &Dataset, fold: u8) -> Result<Dataset> {
        ds.filter(|r| self.fold_of(&r.lemma) == Some(fold))
    }

    /// Every lemma of `ds` must be assigned to a fold in 1..=3.
    pub fn validate_against(&self, ds: &Dataset) -> Result<()> {
        if let Some((lemma, fold)) = self.folds.iter().find(|(_, f)| !(1..=3).contains(*f)) {
            return Err(Error::Config(format!(
                "lemma {lemma:?} assigned to fold {fold}"
            )));
        }
        for lemma in ds.lemmas() {
            if !self.folds.contains_key(lemma) {
                return Err(Error::Config(format!("lemma {lemma:?} has no fold")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("split serializes");
        s.push('\n');
        s
    }
}

pub fn parse_split(text: &str) -> Result<SplitSpec> {
    let spec: SplitSpec = serde_json::from_str(text).map_err(|e| Error::json("split file", e))?;
    if let Some((lemma, fold)) = spec.folds.iter().find(|(_, f)| !(1..=3).contains(*f)) {
        return Err(Error::Config(format!(
            "lemma {lemma:?} assigned to fold {fold}"
        )));
    }
    Ok(spec)
}

pub fn load_split(path: impl AsRef<Path>) -> Result<SplitSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_split(&text)
}

/// Lemma to its set of distinct LU ids.
fn lemma_senses(ds: &Dataset) -> BTreeMap<&str, BTreeSet<&str>> {
    let mut senses: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in ds.records() {
        senses.entry(&r.lemma).or_default().insert(&r.lu_id);
    }
    senses
}

/// A lemma is polysemous when it has at least two distinct LUs.
pub fn polysemous_lemmas(ds: &Dataset) -> BTreeSet<String> {
    lemma_senses(ds)
        .into_iter()
        .filter(|(_, s)| s.len() >= 2)
        .map(|(l, _)| l.to_string())
        .collect()
}

/// Partition lemmas into three folds with (near) equal shares of
/// polysemous lemmas.
///
/// Polysemous and monosemous lemmas are shuffled separately and dealt
/// round-robin; the monosemous deal continues from where the polysemous
/// one stopped so fold sizes differ by at most one.
pub fn make_splits(ds: &Dataset, seed: u64) -> Result<SplitSpec> {
    let senses = lemma_senses(ds);
    if senses.len() < 3 {
        return Err(Error::TooFewLemmas {
            needed: 3,
            found: senses.len(),
        });
    }
    let (mut poly, mut mono): (Vec<&str>, Vec<&str>) = (Vec::new(), Vec::new());
    for (lemma, s) in &senses {
        if s.len() >= 2 {
            poly.push(lemma);
        } else {
            mono.push(lemma);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    poly.shuffle(&mut rng);
    mono.shuffle(&mut rng);

    let mut folds = BTreeMap::new();
    for (i, lemma) in poly.iter().chain(mono.iter()).enumerate() {
        folds.insert(lemma.to_string(), (i % 3 + 1) as u8);
    }
    Ok(SplitSpec { folds })
}
