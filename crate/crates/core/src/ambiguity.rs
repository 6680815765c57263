//! Ambiguity from annotator disagreement.
//!
//! Given `yes`, `no` and `unsure` counts with `n = yes + no + unsure` and
//! `decided = n - unsure`:
//!
//! ```text
//! alpha = 1 - gamma * 2 * |yes / decided - 1/2|   if decided > 0
//!       = 1                                       otherwise
//! gamma = 1 - unsure / n
//! ```
//!
//! so unanimous answers give 0, an even yes/no split gives 1, and a task
//! answered only with "unsure" gives the maximum of 1.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ScoreRecord, ScoreSource};
use crate::model::{AnnotatorAnswers, Dataset, Instance, ProvenanceEntry, TagFamily, TagLevel};

/// Default number of equal-width histogram bins over `[0, 1]`.
pub const DEFAULT_BINS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AmbiguityScore(f64);

impl AmbiguityScore {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!("ambiguity {value} outside [0,1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn ambiguity(answers: &AnnotatorAnswers) -> Result<AmbiguityScore> {
    let n = answers.total();
    if n == 0 {
        return Err(Error::Domain("empty answer set (n = 0)".to_owned()));
    }
    let n = n as f64;
    let unsure = f64::from(answers.unsure);
    let decided = n - unsure;
    if decided <= 0.0 {
        return Ok(AmbiguityScore(1.0));
    }
    let gamma = 1.0 - unsure / n;
    let distance = 2.0 * (f64::from(answers.yes) / decided - 0.5).abs();
    Ok(AmbiguityScore((1.0 - gamma * distance).clamp(0.0, 1.0)))
}

/// Applies imported answer counts or scores to matching instances.
pub fn import_scores(dataset: &Dataset, records: &[ScoreRecord]) -> Result<Dataset> {
    let mut by_id: HashMap<&str, ScoreSource> = HashMap::with_capacity(records.len());
    for rec in records {
        by_id.insert(rec.instance_id.as_str(), rec.score);
    }
    let mut out = dataset.clone();
    let mut applied = 0usize;
    for inst in out.instances_mut() {
        match by_id.get(inst.id.as_str()) {
            Some(ScoreSource::Answers(a)) => {
                inst.answers = Some(*a);
                applied += 1;
            }
            Some(ScoreSource::Ambiguity(v)) => {
                inst.ambiguity = Some(*v);
                applied += 1;
            }
            None => {}
        }
    }
    if applied != by_id.len() {
        let known: std::collections::HashSet<&str> =
            dataset.instances().map(|i| i.id.as_str()).collect();
        let mut unknown: Vec<&str> = by_id.keys().copied().filter(|id| !known.contains(id)).collect();
        unknown.sort_unstable();
        return Err(Error::Validation(format!(
            "score file references unknown instance id(s): {}",
            unknown.join(", ")
        )));
    }
    out.provenance
        .push(ProvenanceEntry::new("import_scores").with("records", records.len()));
    Ok(out)
}

fn score_instance(inst: &mut Instance, overwrite: bool) -> Result<()> {
    if let Some(answers) = inst.answers {
        if inst.ambiguity.is_none() || overwrite {
            inst.ambiguity = Some(ambiguity(&answers)?.value());
        }
    }
    Ok(())
}

/// Returns a copy where every instance with answers carries its ambiguity.
/// Precomputed scores are kept unless `overwrite` is set.
pub fn score_dataset(dataset: &Dataset, overwrite: bool) -> Result<Dataset> {
    let missing: Vec<String> = dataset
        .instances()
        .filter(|i| i.answers.is_none() && i.ambiguity.is_none())
        .map(|i| i.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingScores(missing));
    }
    let mut out = dataset.clone();
    out.images.par_iter_mut().try_for_each(|img| {
        img.instances
            .iter_mut()
            .try_for_each(|inst| score_instance(inst, overwrite))
    })?;
    out.provenance
        .push(ProvenanceEntry::new("score").with("overwrite", overwrite));
    Ok(out)
}

fn require_scored(dataset: &Dataset) -> Result<()> {
    let unscored = dataset.unscored_ids();
    if unscored.is_empty() {
        Ok(())
    } else {
        Err(Error::Unscored(unscored))
    }
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        len => {
            let pos = q.clamp(0.0, 1.0) * (len - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySummary {
    pub instances: usize,
    pub scored: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub q25: Option<f64>,
    pub median: Option<f64>,
    pub q75: Option<f64>,
    pub q90: Option<f64>,
    pub max: Option<f64>,
}

pub fn summarize(dataset: &Dataset) -> AmbiguitySummary {
    let mut values: Vec<f64> = dataset.instances().filter_map(|i| i.ambiguity).collect();
    values.sort_by(f64::total_cmp);
    let q = |p: f64| (!values.is_empty()).then(|| quantile(&values, p));
    AmbiguitySummary {
        instances: dataset.instance_count(),
        scored: values.len(),
        mean: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
        min: values.first().copied(),
        q25: q(0.25),
        median: q(0.5),
        q75: q(0.75),
        q90: q(0.9),
        max: values.last().copied(),
    }
}

/// Scored instances in descending ambiguity; ties keep dataset order.
pub fn ranked_instances(dataset: &Dataset) -> Vec<(&str, &Instance)> {
    let mut ranked: Vec<(&str, &Instance)> = dataset
        .images
        .iter()
        .flat_map(|img| img.instances.iter().map(move |i| (img.image_id.as_str(), i)))
        .filter(|(_, i)| i.ambiguity.is_some())
        .collect();
    ranked.sort_by(|a, b| b.1.ambiguity.unwrap().total_cmp(&a.1.ambiguity.unwrap()));
    ranked
}

/// The `k` most ambiguous instances as `(id, ambiguity)`.
pub fn top_k(dataset: &Dataset, k: usize) -> Vec<(String, f64)> {
    ranked_instances(dataset)
        .into_iter()
        .take(k)
        .map(|(_, i)| (i.id.clone(), i.ambiguity.unwrap()))
        .collect()
}

pub fn bin_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| i as f64 / bins as f64).collect()
}

/// Index of the bin `[edges[i], edges[i+1])` holding `value`; the last bin is closed at 1.
pub fn bin_index(value: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    let mut idx = ((value * bins as f64).floor() as usize).min(bins - 1);
    while idx > 0 && value < edges[idx] {
        idx -= 1;
    }
    while idx + 1 < bins && value >= edges[idx + 1] {
        idx += 1;
    }
    idx
}

/// Per-level instance counts and within-bin proportions for one tag family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyDistribution {
    pub counts: BTreeMap<TagLevel, Vec<usize>>,
    pub proportions: BTreeMap<TagLevel, Vec<f64>>,
}

/// Bin in which a tag level makes up the largest share of instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakBin {
    pub family: TagFamily,
    pub level: TagLevel,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub proportion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub occlusion: FamilyDistribution,
    pub truncation: FamilyDistribution,
    pub peaks: Vec<PeakBin>,
}

impl AmbiguityHistogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn family(&self, family: TagFamily) -> &FamilyDistribution {
        match family {
            TagFamily::Occlusion => &self.occlusion,
            TagFamily::Truncation => &self.truncation,
        }
    }

    pub fn peak(&self, family: TagFamily, level: TagLevel) -> Option<&PeakBin> {
        self.peaks
            .iter()
            .find(|p| p.family == family && p.level == level)
    }
}

fn distribution(
    per_bin: &[[usize; 4]],
    counts: &[usize],
) -> FamilyDistribution {
    let mut level_counts = BTreeMap::new();
    let mut proportions = BTreeMap::new();
    for level in TagLevel::ALL {
        let c: Vec<usize> = per_bin.iter().map(|b| b[level.index()]).collect();
        let p: Vec<f64> = c
            .iter()
            .zip(counts)
            .map(|(&k, &total)| if total == 0 { 0.0 } else { k as f64 / total as f64 })
            .collect();
        level_counts.insert(level, c);
        proportions.insert(level, p);
    }
    FamilyDistribution {
        counts: level_counts,
        proportions,
    }
}

/// Equal-width ambiguity histogram with per-bin occlusion and truncation
/// level proportions, plus the peak bin of each level present.
pub fn histogram(dataset: &Dataset, bins: usize) -> Result<AmbiguityHistogram> {
    if bins == 0 {
        return Err(Error::Domain("histogram needs at least one bin".to_owned()));
    }
    require_scored(dataset)?;
    let edges = bin_edges(bins);
    let mut counts = vec![0usize; bins];
    let mut occ = vec![[0usize; 4]; bins];
    let mut trunc = vec![[0usize; 4]; bins];
    for inst in dataset.instances() {
        let b = bin_index(inst.ambiguity.unwrap(), &edges);
        counts[b] += 1;
        occ[b][inst.occlusion.index()] += 1;
        trunc[b][inst.truncation.index()] += 1;
    }
    let occlusion = distribution(&occ, &counts);
    let truncation = distribution(&trunc, &counts);
    let mut peaks = Vec::new();
    for (family, dist) in [(TagFamily::Occlusion, &occlusion), (TagFamily::Truncation, &truncation)] {
        for level in TagLevel::ALL {
            if dist.counts[&level].iter().all(|&c| c == 0) {
                continue;
            }
            let props = &dist.proportions[&level];
            let mut best = 0;
            for (i, &p) in props.iter().enumerate() {
                if p > props[best] {
                    best = i;
                }
            }
            peaks.push(PeakBin {
                family,
                level,
                bin: best,
                lower: edges[best],
                upper: edges[best + 1],
                proportion: props[best],
            });
        }
    }
    Ok(AmbiguityHistogram {
        bin_edges: edges,
        counts,
        occlusion,
        truncation,
        peaks,
    })
}
