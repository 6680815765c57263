//! Threshold pruning of ambiguous instances and the representativeness
//! report that goes with it.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::SubsetSpec;
use crate::model::{Dataset, Instance, ProvenanceEntry, TagFamily, TagLevel};

/// A tag level is over-pruned when its removal rate exceeds the overall
/// removal rate by more than this factor.
pub const DEFAULT_OVER_PRUNE_FACTOR: f64 = 2.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMode {
    Delete,
    /// Keep the instance but flag it ignore, so it is neither a positive nor background.
    #[default]
    Ignore,
}

impl FromStr for PruneMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "delete" => Ok(PruneMode::Delete),
            "ignore" => Ok(PruneMode::Ignore),
            other => Err(format!("unknown prune mode {other:?} (expected delete|ignore)")),
        }
    }
}

impl fmt::Display for PruneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PruneMode::Delete => "delete",
            PruneMode::Ignore => "ignore",
        })
    }
}

/// Name used for a dataset pruned at `threshold`, e.g. `Amb 0.65`.
pub fn threshold_label(threshold: f64) -> String {
    format!("Amb {threshold}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRemoval {
    pub level: TagLevel,
    pub total: usize,
    pub removed: usize,
    pub rate: f64,
    pub over_pruned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetRetention {
    pub subset: String,
    pub before: usize,
    pub after: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub threshold: Option<f64>,
    pub mode: Option<PruneMode>,
    pub total_count: usize,
    pub removed_count: usize,
    pub kept_count: usize,
    pub removal_rate: f64,
    pub over_prune_factor: f64,
    pub occlusion: Vec<LevelRemoval>,
    pub truncation: Vec<LevelRemoval>,
    pub subsets: Vec<SubsetRetention>,
    /// `family:level` names of over-pruned levels, e.g. `occlusion:gt80`.
    pub over_pruned: Vec<String>,
}

impl PruneReport {
    pub fn levels(&self, family: TagFamily) -> &[LevelRemoval] {
        match family {
            TagFamily::Occlusion => &self.occlusion,
            TagFamily::Truncation => &self.truncation,
        }
    }

    pub fn level(&self, family: TagFamily, level: TagLevel) -> &LevelRemoval {
        &self.levels(family)[level.index()]
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is always serializable");
        s.push('\n');
        s
    }
}

fn rate(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

/// Compares a dataset with one derived from it by pruning. An instance
/// counts as removed when it was active (not ignore) before and is missing
/// or ignore-flagged after.
pub fn representativeness_report(
    before: &Dataset,
    after: &Dataset,
    over_prune_factor: f64,
) -> Result<PruneReport> {
    if before.name != after.name || !after.provenance.starts_with(&before.provenance) {
        return Err(Error::Validation(format!(
            "dataset {:?} is not derived from {:?} (provenance mismatch)",
            after.name, before.name
        )));
    }
    let after_by_id: HashMap<&str, &Instance> =
        after.instances().map(|i| (i.id.as_str(), i)).collect();
    let is_removed = |inst: &Instance| {
        !inst.ignore && after_by_id.get(inst.id.as_str()).is_none_or(|a| a.ignore)
    };

    let total = before.instance_count();
    let mut removed = 0;
    let mut per_level = [[(0usize, 0usize); 4]; 2];
    for inst in before.instances() {
        let gone = is_removed(inst);
        removed += usize::from(gone);
        for (f, family) in TagFamily::ALL.iter().enumerate() {
            let slot = &mut per_level[f][family.level_of(inst).index()];
            slot.0 += 1;
            slot.1 += usize::from(gone);
        }
    }
    let overall = rate(removed, total);
    let mut over_pruned = Vec::new();
    let mut families = TagFamily::ALL.iter().enumerate().map(|(f, family)| {
        TagLevel::ALL
            .iter()
            .map(|&level| {
                let (n, r) = per_level[f][level.index()];
                let level_rate = rate(r, n);
                let flagged = overall > 0.0 && n > 0 && level_rate > over_prune_factor * overall;
                if flagged {
                    over_pruned.push(format!("{}:{}", family.as_str(), level));
                }
                LevelRemoval {
                    level,
                    total: n,
                    removed: r,
                    rate: level_rate,
                    over_pruned: flagged,
                }
            })
            .collect::<Vec<_>>()
    });
    let occlusion = families.next().unwrap();
    let truncation = families.next().unwrap();
    drop(families);

    let active_in = |d: &Dataset, spec: &SubsetSpec| {
        d.instances().filter(|i| !i.ignore && spec.contains(i)).count()
    };
    let subsets = SubsetSpec::builtins()
        .iter()
        .map(|spec| SubsetRetention {
            subset: spec.name.clone(),
            before: active_in(before, spec),
            after: active_in(after, spec),
        })
        .collect();

    Ok(PruneReport {
        threshold: None,
        mode: None,
        total_count: total,
        removed_count: removed,
        kept_count: total - removed,
        removal_rate: overall,
        over_prune_factor,
        occlusion,
        truncation,
        subsets,
        over_pruned,
    })
}

/// Deletes or ignore-flags every instance with ambiguity `>= threshold`.
/// Images are kept even when left empty.
pub fn prune(dataset: &Dataset, threshold: f64, mode: PruneMode) -> Result<(Dataset, PruneReport)> {
    prune_with_factor(dataset, threshold, mode, DEFAULT_OVER_PRUNE_FACTOR)
}

pub fn prune_with_factor(
    dataset: &Dataset,
    threshold: f64,
    mode: PruneMode,
    over_prune_factor: f64,
) -> Result<(Dataset, PruneReport)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Domain(format!("threshold {threshold} outside [0,1]")));
    }
    let unscored = dataset.unscored_ids();
    if !unscored.is_empty() {
        return Err(Error::Unscored(unscored));
    }
    let mut pruned = dataset.clone();
    pruned.images.par_iter_mut().for_each(|img| match mode {
        PruneMode::Delete => img
            .instances
            .retain(|inst| inst.ambiguity.unwrap() < threshold),
        PruneMode::Ignore => {
            for inst in &mut img.instances {
                if inst.ambiguity.unwrap() >= threshold {
                    inst.ignore = true;
                }
            }
        }
    });
    pruned.provenance.push(
        ProvenanceEntry::new("prune")
            .with("threshold", threshold)
            .with("mode", mode.to_string())
            .with("label", threshold_label(threshold)),
    );
    let mut report = representativeness_report(dataset, &pruned, over_prune_factor)?;
    report.threshold = Some(threshold);
    report.mode = Some(mode);
    Ok((pruned, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, ImageRecord};

    fn scored(values: &[f64]) -> Dataset {
        let instances = values
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                Instance::new(format!("i{k}"), BoundingBox::new(0.0, 0.0, 20.0, 60.0), "pedestrian")
                    .with_ambiguity(v)
            })
            .collect();
        Dataset::new(
            "d",
            vec![
                ImageRecord::new("a", 100, 100).with_instances(instances),
                ImageRecord::new("empty", 100, 100),
            ],
        )
    }

    #[test]
    fn boundary_is_removed() {
        let d = scored(&[0.6, 0.65]);
        let (out, report) = prune(&d, 0.65, PruneMode::Delete).unwrap();
        let ids: Vec<_> = out.instances().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, vec!["i0"]);
        assert_eq!(report.removed_count, 1);
    }

    #[test]
    fn threshold_one_keeps_everything_below_one() {
        let d = scored(&[0.0, 0.5, 0.99]);
        let (_, report) = prune(&d, 1.0, PruneMode::Delete).unwrap();
        assert_eq!(report.removed_count, 0);
    }

    #[test]
    fn counts_at_half() {
        let d = scored(&[0.2, 0.5, 0.7, 0.9]);
        let (out, report) = prune(&d, 0.5, PruneMode::Delete).unwrap();
        assert_eq!((report.removed_count, report.kept_count), (3, 1));
        assert_eq!(out.images.len(), 2);
        assert_eq!(out.provenance.last().unwrap().get("label").unwrap(), "Amb 0.5");
    }

    #[test]
    fn ignore_mode_preserves_instances() {
        let d = scored(&[0.2, 0.5, 0.7, 0.9]);
        let (out, report) = prune(&d, 0.5, PruneMode::Ignore).unwrap();
        assert_eq!(out.instance_count(), 4);
        assert_eq!(out.instances().filter(|i| i.ignore).count(), 3);
        assert_eq!(report.removed_count, 3);
        let (_, again) = prune(&out, 0.5, PruneMode::Ignore).unwrap();
        assert_eq!(again.removed_count, 0);
    }

    #[test]
    fn errors() {
        let d = scored(&[0.2]);
        assert!(matches!(prune(&d, 1.5, PruneMode::Ignore), Err(Error::Domain(_))));
        assert!(matches!(prune(&d, f64::NAN, PruneMode::Ignore), Err(Error::Domain(_))));
        let mut unscored = d.clone();
        unscored.images[0].instances[0].ambiguity = None;
        assert!(matches!(prune(&unscored, 0.5, PruneMode::Ignore), Err(Error::Unscored(_))));
    }

    #[test]
    fn identical_datasets_report_nothing() {
        let d = scored(&[0.2, 0.9]);
        let r = representativeness_report(&d, &d, DEFAULT_OVER_PRUNE_FACTOR).unwrap();
        assert_eq!(r.removed_count, 0);
        assert!(r.over_pruned.is_empty());
        assert!(r.occlusion.iter().all(|l| l.rate == 0.0));
    }

    #[test]
    fn unrelated_dataset_is_rejected() {
        let d = scored(&[0.2]);
        let mut other = d.clone();
        other.provenance.push(ProvenanceEntry::new("import"));
        assert!(representativeness_report(&other, &d, 2.0).is_err());
    }

    #[test]
    fn concentrated_removal_is_flagged() {
        let mut d = scored(&[0.1, 0.2, 0.3, 0.4, 0.9, 0.95]);
        for inst in &mut d.images[0].instances[4..] {
            inst.occlusion = TagLevel::Gt80;
        }
        let (_, r) = prune(&d, 0.65, PruneMode::Ignore).unwrap();
        let gt80 = r.level(TagFamily::Occlusion, TagLevel::Gt80);
        assert_eq!(gt80.rate, 1.0);
        assert!(gt80.over_pruned);
        assert_eq!(r.over_pruned, vec!["occlusion:gt80"]);
    }

    #[test]
    fn mode_parses() {
        assert_eq!("delete".parse::<PruneMode>().unwrap(), PruneMode::Delete);
        assert_eq!(PruneMode::default(), PruneMode::Ignore);
        assert!("drop".parse::<PruneMode>().is_err());
    }
}
