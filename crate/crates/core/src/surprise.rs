//! Embedding-space surprise.
//!
//! Each filling is embedded and unitized; per blank, the cohort centroid is
//! the unitized mean of the cohort's vectors. A model's raw surprise at a
//! blank is its cosine distance to that centroid, normalized by the blank's
//! maximum distance across models. Group surprise is the mean over the
//! group's blanks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::testset::{BlankId, GroupId, TestSet};

/// Below this, a blank's maximum distance is treated as zero.
pub const DEGENERATE_EPSILON: f64 = 1e-9;
const NEAR_ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Precondition("embedding has dimension 0".into()));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64> {
        if self.dimension() != other.dimension() {
            return Err(Error::DimensionMismatch(self.dimension(), other.dimension()));
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, c: f64) -> EmbeddingVector {
        EmbeddingVector(self.0.iter().map(|x| x * c).collect())
    }
}

pub fn unitize(v: &EmbeddingVector) -> Result<EmbeddingVector> {
    let n = v.norm();
    if !(n > NEAR_ZERO_NORM) {
        return Err(Error::NearZeroVector(n));
    }
    Ok(v.scaled(1.0 / n))
}

/// Unitized arithmetic mean of unit vectors.
pub fn centroid<'a>(entries: impl IntoIterator<Item = &'a EmbeddingVector>) -> Result<EmbeddingVector> {
    let mut iter = entries.into_iter();
    let first = iter
        .next()
        .ok_or(Error::TooFew { what: "cohort entries", needed: 1, found: 0 })?;
    let dim = first.dimension();
    let mut sum = first.0.clone();
    let mut count = 1usize;
    for v in iter {
        if v.dimension() != dim {
            return Err(Error::DimensionMismatch(dim, v.dimension()));
        }
        for (s, x) in sum.iter_mut().zip(&v.0) {
            *s += x;
        }
        count += 1;
    }
    let mean = EmbeddingVector(sum.into_iter().map(|s| s / count as f64).collect());
    let n = mean.norm();
    if !(n > NEAR_ZERO_NORM) {
        return Err(Error::DegenerateCentroid(n));
    }
    Ok(mean.scaled(1.0 / n))
}

/// `1 - cos` for unit vectors; in [0, 2].
pub fn cosine_distance(v: &EmbeddingVector, c: &EmbeddingVector) -> Result<f64> {
    let d = 1.0 - v.dot(c)?;
    Ok(d.clamp(0.0, 2.0))
}

/// Divides each distance by the blank's maximum. When the maximum is below
/// [`DEGENERATE_EPSILON`] every model gets zero.
pub fn normalize_per_blank<K: Ord + Clone>(distances: &BTreeMap<K, f64>) -> BTreeMap<K, f64> {
    let max = distances.values().copied().fold(0.0_f64, f64::max);
    distances
        .iter()
        .map(|(k, &d)| {
            let v = if max >= DEGENERATE_EPSILON { d / max } else { 0.0 };
            (k.clone(), v)
        })
        .collect()
}

/// Vectors for one blank, keyed by model. All unit norm.
#[derive(Debug, Clone)]
pub struct BlankCohort {
    pub blank_id: BlankId,
    pub entries: BTreeMap<String, EmbeddingVector>,
}

impl BlankCohort {
    /// Unitizes raw vectors and checks the cohort is well formed.
    pub fn from_raw(blank_id: BlankId, raw: BTreeMap<String, EmbeddingVector>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::TooFew { what: "cohort entries", needed: 1, found: 0 });
        }
        let entries = raw
            .into_iter()
            .map(|(m, v)| Ok((m, unitize(&v)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let dim = entries.values().next().map(EmbeddingVector::dimension).unwrap_or(0);
        if let Some(v) = entries.values().find(|v| v.dimension() != dim) {
            return Err(Error::DimensionMismatch(dim, v.dimension()));
        }
        Ok(BlankCohort { blank_id, entries })
    }

    /// Centroid over every member not in `excluded`.
    pub fn centroid_excluding(&self, excluded: &BTreeSet<String>) -> Result<EmbeddingVector> {
        let members: Vec<&EmbeddingVector> = self
            .entries
            .iter()
            .filter(|(m, _)| !excluded.contains(*m))
            .map(|(_, v)| v)
            .collect();
        if members.is_empty() {
            return Err(Error::Precondition(format!(
                "every model at blank {:02} is excluded from the centroid",
                self.blank_id
            )));
        }
        centroid(members)
    }

    pub fn centroid(&self) -> Result<EmbeddingVector> {
        centroid(self.entries.values())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BlankSurprise {
    pub raw: BTreeMap<String, f64>,
    pub normalized: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SurpriseTable {
    pub blanks: BTreeMap<BlankId, BlankSurprise>,
    /// group -> model -> group surprise
    pub groups: BTreeMap<GroupId, BTreeMap<String, f64>>,
}

pub fn blank_surprise(cohort: &BlankCohort, excluded: &BTreeSet<String>) -> Result<BlankSurprise> {
    let c = cohort.centroid_excluding(excluded)?;
    let raw = cohort
        .entries
        .iter()
        .map(|(m, v)| Ok((m.clone(), cosine_distance(v, &c)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let normalized = normalize_per_blank(&raw);
    Ok(BlankSurprise { raw, normalized })
}

/// Mean normalized surprise of model `m` over `blanks`.
pub fn group_surprise(
    rows: &BTreeMap<BlankId, BlankSurprise>,
    blanks: &[BlankId],
    m: &str,
) -> Result<f64> {
    if blanks.is_empty() {
        return Err(Error::Precondition("group has no blanks".into()));
    }
    let mut sum = 0.0;
    for &k in blanks {
        let v = rows
            .get(&k)
            .and_then(|row| row.normalized.get(m))
            .ok_or_else(|| Error::MissingBlankEntry { blank: k, model: m.to_string() })?;
        sum += v;
    }
    Ok(sum / blanks.len() as f64)
}

/// Builds the full table. Models in `models` that lack a blank (incomplete
/// responses) are scored 0 there, as is every model at a blank with no
/// cohort. Models in `excluded` are scored but do not shape the centroid.
pub fn surprise_table(
    ts: &TestSet,
    cohorts: &[BlankCohort],
    models: &BTreeSet<String>,
    excluded: &BTreeSet<String>,
) -> Result<SurpriseTable> {
    let mut blanks = BTreeMap::new();
    for cohort in cohorts {
        let mut row = blank_surprise(cohort, excluded)?;
        for m in models {
            row.normalized.entry(m.clone()).or_insert(0.0);
        }
        blanks.insert(cohort.blank_id, row);
    }
    // Blanks nobody filled carry no signal.
    for k in ts.blank_ids() {
        blanks.entry(k).or_insert_with(|| BlankSurprise {
            raw: BTreeMap::new(),
            normalized: models.iter().map(|m| (m.clone(), 0.0)).collect(),
        });
    }
    let mut groups = BTreeMap::new();
    for g in &ts.groups {
        let per_model = models
            .iter()
            .map(|m| Ok((m.clone(), group_surprise(&blanks, &g.blank_ids, m)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        groups.insert(g.group_id, per_model);
    }
    Ok(SurpriseTable { blanks, groups })
}
