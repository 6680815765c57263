//! Benchmark evaluation: subset filtering, greedy IoU matching with ignore
//! handling, miss-rate/FPPI curves, log-average miss rate and
//! precision/recall/F1 at a fixed confidence cutoff.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::DEFAULT_IDENTITY;
use crate::model::{BoundingBox, Dataset, Detection, Instance, ProvenanceEntry, TagLevel};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;
/// Sampled miss rates of exactly zero are replaced by this before taking logs.
pub const MISS_RATE_FLOOR: f64 = 1e-10;
/// Number of log-spaced FPPI reference points in `[1e-2, 1e0]`.
pub const LAMR_REFERENCE_POINTS: usize = 9;

/// Instance filter by pixel height and tag levels. Instances outside the
/// subset are ignore-flagged rather than removed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub name: String,
    pub min_height: f64,
    pub min_height_inclusive: bool,
    pub max_height: Option<f64>,
    pub max_height_inclusive: bool,
    /// Inclusive lower bound on occlusion.
    pub min_occlusion: Option<TagLevel>,
    /// Exclusive upper bound on occlusion; `None` is unbounded.
    pub max_occlusion: Option<TagLevel>,
    /// Exclusive upper bound on truncation; `None` is unbounded.
    pub max_truncation: Option<TagLevel>,
}

impl SubsetSpec {
    pub const BUILTIN_NAMES: [&'static str; 4] = ["reasonable", "small", "occluded", "all"];

    /// Height > 40 px, occlusion and truncation below 40%.
    pub fn reasonable() -> Self {
        Self {
            name: "reasonable".into(),
            min_height: 40.0,
            min_height_inclusive: false,
            max_height: None,
            max_height_inclusive: false,
            min_occlusion: None,
            max_occlusion: Some(TagLevel::Gt40),
            max_truncation: Some(TagLevel::Gt40),
        }
    }

    /// Height 30-60 px (both inclusive), occlusion and truncation below 40%.
    pub fn small() -> Self {
        Self {
            name: "small".into(),
            min_height: 30.0,
            min_height_inclusive: true,
            max_height: Some(60.0),
            max_height_inclusive: true,
            min_occlusion: None,
            max_occlusion: Some(TagLevel::Gt40),
            max_truncation: Some(TagLevel::Gt40),
        }
    }

    /// Height > 40 px, occlusion 40-80%, truncation below 80%.
    pub fn occluded() -> Self {
        Self {
            name: "occluded".into(),
            min_height: 40.0,
            min_height_inclusive: false,
            max_height: None,
            max_height_inclusive: false,
            min_occlusion: Some(TagLevel::Gt40),
            max_occlusion: Some(TagLevel::Gt80),
            max_truncation: Some(TagLevel::Gt80),
        }
    }

    /// Height > 20 px, occlusion and truncation below 80%.
    pub fn all() -> Self {
        Self {
            name: "all".into(),
            min_height: 20.0,
            min_height_inclusive: false,
            max_height: None,
            max_height_inclusive: false,
            min_occlusion: None,
            max_occlusion: Some(TagLevel::Gt80),
            max_truncation: Some(TagLevel::Gt80),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "reasonable" => Some(Self::reasonable()),
            "small" => Some(Self::small()),
            "occluded" => Some(Self::occluded()),
            "all" => Some(Self::all()),
            _ => None,
        }
    }

    pub fn builtins() -> [Self; 4] {
        [Self::reasonable(), Self::small(), Self::occluded(), Self::all()]
    }

    pub fn contains(&self, inst: &Instance) -> bool {
        let h = inst.bbox.height();
        let above_min = if self.min_height_inclusive {
            h >= self.min_height
        } else {
            h > self.min_height
        };
        let below_max = match self.max_height {
            None => true,
            Some(max) if self.max_height_inclusive => h <= max,
            Some(max) => h < max,
        };
        above_min
            && below_max
            && self.min_occlusion.is_none_or(|lo| inst.occlusion >= lo)
            && self.max_occlusion.is_none_or(|hi| inst.occlusion < hi)
            && self.max_truncation.is_none_or(|hi| inst.truncation < hi)
    }
}

impl FromStr for SubsetSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::builtin(s).ok_or_else(|| {
            format!(
                "unknown subset {s:?} (expected one of {})",
                Self::BUILTIN_NAMES.join(", ")
            )
        })
    }
}

impl fmt::Display for SubsetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Ignore-flags every instance outside `spec`. Images are never removed.
pub fn apply_subset(dataset: &Dataset, spec: &SubsetSpec) -> Dataset {
    let mut out = dataset.clone();
    for inst in out.instances_mut() {
        if !spec.contains(inst) {
            inst.ignore = true;
        }
    }
    out
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x1.min(b.x1) - a.x0.max(b.x0);
    let ih = a.y1.min(b.y1) - a.y0.max(b.y0);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStatus {
    Tp,
    Fp,
    Ignored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    /// Position of the detection in the input list.
    pub detection: usize,
    pub confidence: f64,
    pub matched: Option<String>,
    pub status: MatchStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMatch {
    pub image_id: String,
    /// In processing order (descending confidence, ties by input order).
    pub outcomes: Vec<DetectionOutcome>,
    /// Non-ignore instances no detection matched.
    pub missed: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub images: Vec<ImageMatch>,
    /// Number of non-ignore ground truth instances.
    pub ground_truth: usize,
}

impl MatchResult {
    fn count(&self, status: MatchStatus) -> usize {
        self.images
            .iter()
            .flat_map(|m| &m.outcomes)
            .filter(|o| o.status == status)
            .count()
    }

    pub fn tp(&self) -> usize {
        self.count(MatchStatus::Tp)
    }

    pub fn fp(&self) -> usize {
        self.count(MatchStatus::Fp)
    }

    pub fn ignored(&self) -> usize {
        self.count(MatchStatus::Ignored)
    }

    pub fn fn_count(&self) -> usize {
        self.images.iter().map(|m| m.missed.len()).sum()
    }
}

fn match_image(
    image_id: &str,
    instances: &[Instance],
    detections: &[(usize, &Detection)],
    iou_threshold: f64,
) -> ImageMatch {
    let mut order: Vec<&(usize, &Detection)> = detections.iter().collect();
    // stable: equal confidences keep input order
    order.sort_by(|a, b| b.1.confidence.total_cmp(&a.1.confidence));
    let mut taken = vec![false; instances.len()];
    let mut outcomes = Vec::with_capacity(order.len());
    for &&(idx, det) in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, inst) in instances.iter().enumerate() {
            if inst.ignore || taken[g] {
                continue;
            }
            let overlap = iou(&det.bbox, &inst.bbox);
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        let (status, matched) = match best {
            Some((g, _)) => {
                taken[g] = true;
                (MatchStatus::Tp, Some(instances[g].id.clone()))
            }
            None if instances
                .iter()
                .any(|inst| inst.ignore && iou(&det.bbox, &inst.bbox) >= iou_threshold) =>
            {
                (MatchStatus::Ignored, None)
            }
            None => (MatchStatus::Fp, None),
        };
        outcomes.push(DetectionOutcome {
            detection: idx,
            confidence: det.confidence,
            matched,
            status,
        });
    }
    let missed = instances
        .iter()
        .zip(&taken)
        .filter(|(inst, &t)| !inst.ignore && !t)
        .map(|(inst, _)| inst.id.clone())
        .collect();
    ImageMatch {
        image_id: image_id.to_owned(),
        outcomes,
        missed,
    }
}

/// Groups detections by image index, failing on unknown image ids.
fn group_detections<'a>(
    dataset: &Dataset,
    detections: &'a [Detection],
) -> Result<Vec<Vec<(usize, &'a Detection)>>> {
    let index: HashMap<&str, usize> = dataset
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| (img.image_id.as_str(), i))
        .collect();
    let mut grouped = vec![Vec::new(); dataset.images.len()];
    for (i, det) in detections.iter().enumerate() {
        let slot = index
            .get(det.image_id.as_str())
            .ok_or_else(|| Error::UnknownImage(det.image_id.clone()))?;
        grouped[*slot].push((i, det));
    }
    Ok(grouped)
}

/// Greedy per-image matching: each detection, in descending confidence,
/// takes the unmatched non-ignore instance of highest IoU at or above the
/// threshold. Detections that only overlap ignore instances are neither TP
/// nor FP.
pub fn match_detections(
    dataset: &Dataset,
    detections: &[Detection],
    iou_threshold: f64,
) -> Result<MatchResult> {
    let grouped = group_detections(dataset, detections)?;
    let images = dataset
        .images
        .par_iter()
        .zip(grouped.par_iter())
        .map(|(img, dets)| match_image(&img.image_id, &img.instances, dets, iou_threshold))
        .collect();
    let ground_truth = dataset.instances().filter(|i| !i.ignore).count();
    Ok(MatchResult {
        images,
        ground_truth,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct CurvePoint {
    pub fppi: f64,
    pub miss_rate: f64,
}

impl From<[f64; 2]> for CurvePoint {
    fn from(v: [f64; 2]) -> Self {
        Self {
            fppi: v[0],
            miss_rate: v[1],
        }
    }
}

impl From<CurvePoint> for [f64; 2] {
    fn from(p: CurvePoint) -> Self {
        [p.fppi, p.miss_rate]
    }
}

/// Miss rate against false positives per image, one point per distinct
/// confidence cutoff, FPPI strictly increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MrFppiCurve {
    pub points: Vec<CurvePoint>,
}

impl MrFppiCurve {
    fn push(&mut self, point: CurvePoint) {
        match self.points.last_mut() {
            Some(last) if last.fppi == point.fppi => {
                last.miss_rate = last.miss_rate.min(point.miss_rate)
            }
            _ => self.points.push(point),
        }
    }
}

/// Sweeps the confidence cutoff over a completed match. Greedy matching in
/// descending confidence is prefix-stable, so restricting the detections to
/// `confidence >= c` reproduces the first outcomes of the full run.
pub fn curve_from_matches(matches: &MatchResult, image_count: usize) -> Result<MrFppiCurve> {
    if matches.ground_truth == 0 {
        return Err(Error::NoGroundTruth);
    }
    if image_count == 0 {
        return Err(Error::Domain("evaluation needs at least one image".to_owned()));
    }
    let mut outcomes: Vec<(f64, MatchStatus)> = matches
        .images
        .iter()
        .flat_map(|m| m.outcomes.iter().map(|o| (o.confidence, o.status)))
        .collect();
    outcomes.sort_by(|a, b| b.0.total_cmp(&a.0));
    let gt = matches.ground_truth as f64;
    let images = image_count as f64;
    let mut curve = MrFppiCurve { points: Vec::new() };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < outcomes.len() {
        let conf = outcomes[i].0;
        while i < outcomes.len() && outcomes[i].0 == conf {
            match outcomes[i].1 {
                MatchStatus::Tp => tp += 1,
                MatchStatus::Fp => fp += 1,
                MatchStatus::Ignored => {}
            }
            i += 1;
        }
        curve.push(CurvePoint {
            fppi: fp as f64 / images,
            miss_rate: (matches.ground_truth - tp) as f64 / gt,
        });
    }
    if curve.points.is_empty() {
        curve.points.push(CurvePoint {
            fppi: 0.0,
            miss_rate: 1.0,
        });
    }
    Ok(curve)
}

pub fn mr_fppi_curve(
    dataset: &Dataset,
    detections: &[Detection],
    iou_threshold: f64,
) -> Result<MrFppiCurve> {
    let matches = match_detections(dataset, detections, iou_threshold)?;
    curve_from_matches(&matches, dataset.images.len())
}

/// FPPI values `10^(-2 + 2k/8)` for `k = 0..9`.
pub fn lamr_reference_fppi() -> [f64; LAMR_REFERENCE_POINTS] {
    let mut refs = [0.0; LAMR_REFERENCE_POINTS];
    for (k, r) in refs.iter_mut().enumerate() {
        *r = 10f64.powf(-2.0 + 0.25 * k as f64);
    }
    refs
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lamr {
    /// Geometric mean of the sampled miss rates, in `[MISS_RATE_FLOOR, 1]`.
    pub value: f64,
    /// Every sample hit the floor (perfect detector at all reference points).
    pub floor: bool,
}

impl Lamr {
    /// Value for reports: 0.0 when floored.
    pub fn reported(&self) -> f64 {
        if self.floor {
            0.0
        } else {
            self.value
        }
    }
}

pub fn lamr(curve: &MrFppiCurve) -> Lamr {
    let samples = lamr_reference_fppi().map(|f| {
        let mr = curve
            .points
            .iter()
            .take_while(|p| p.fppi <= f)
            .last()
            .map_or(1.0, |p| p.miss_rate);
        if mr == 0.0 {
            MISS_RATE_FLOOR
        } else {
            mr
        }
    });
    if samples.iter().all(|&s| s == MISS_RATE_FLOOR) {
        return Lamr {
            value: MISS_RATE_FLOOR,
            floor: true,
        };
    }
    let mean_log = samples.iter().map(|s| s.ln()).sum::<f64>() / samples.len() as f64;
    Lamr {
        value: mean_log.exp().clamp(MISS_RATE_FLOOR, 1.0),
        floor: false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub ignored: usize,
    /// No detection survived the cutoff; precision is reported as 1.0.
    pub precision_degenerate: bool,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_count: usize, ignored: usize) -> Result<Self> {
        if tp + fn_count == 0 {
            return Err(Error::NoGroundTruth);
        }
        let degenerate = tp + fp == 0;
        let precision = if degenerate {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = tp as f64 / (tp + fn_count) as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Ok(Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_count,
            ignored,
            precision_degenerate: degenerate,
        })
    }
}

pub fn prf(
    dataset: &Dataset,
    detections: &[Detection],
    iou_threshold: f64,
    confidence_threshold: f64,
) -> Result<Prf> {
    let kept: Vec<Detection> = detections
        .iter()
        .filter(|d| d.confidence >= confidence_threshold)
        .cloned()
        .collect();
    let m = match_detections(dataset, &kept, iou_threshold)?;
    Prf::from_counts(m.tp(), m.fp(), m.fn_count(), m.ignored())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
    /// Class under evaluation; ground truth of other classes acts as ignore regions.
    pub identity: String,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            identity: DEFAULT_IDENTITY.to_owned(),
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Domain(format!(
                "IoU threshold {} outside (0,1]",
                self.iou_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Domain(format!(
                "confidence threshold {} outside [0,1]",
                self.confidence_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetProvenance {
    pub name: String,
    pub pruning_threshold: Option<f64>,
    pub entries: Vec<ProvenanceEntry>,
}

impl DatasetProvenance {
    pub fn of(dataset: &Dataset) -> Self {
        Self {
            name: dataset.name.clone(),
            pruning_threshold: dataset.pruning_threshold(),
            entries: dataset.provenance.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub subset: String,
    /// Reported LAMR; 0.0 when `lamr_floor` is set.
    pub lamr: f64,
    pub lamr_floor: bool,
    pub curve: MrFppiCurve,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub dataset_provenance: DatasetProvenance,
    pub ignored: usize,
    pub precision_degenerate: bool,
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
    pub identity: String,
}

impl EvalResult {
    /// Pretty JSON with a trailing newline; the single serialization used by
    /// every output path.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("eval result is always serializable");
        s.push('\n');
        s
    }

    pub fn summary_line(&self) -> String {
        let lamr = if self.lamr_floor {
            "0 (floor)".to_owned()
        } else {
            format!("{:.4}", self.lamr)
        };
        format!(
            "LAMR={lamr} P={:.4} R={:.4} F1={:.4}",
            self.precision, self.recall, self.f1
        )
    }
}

/// Ground truth as seen by the evaluator: other classes and instances
/// outside the subset are ignore-flagged.
pub fn prepare_ground_truth(dataset: &Dataset, subset: &SubsetSpec, identity: &str) -> Dataset {
    let mut out = apply_subset(dataset, subset);
    for inst in out.instances_mut() {
        if inst.identity != identity {
            inst.ignore = true;
        }
    }
    out
}

pub fn evaluate(
    dataset: &Dataset,
    detections: &[Detection],
    subset: &SubsetSpec,
    params: &EvalParams,
) -> Result<EvalResult> {
    params.validate()?;
    // every detection must resolve, whatever its class
    group_detections(dataset, detections)?;
    let gt = prepare_ground_truth(dataset, subset, &params.identity);
    let dets: Vec<Detection> = detections
        .iter()
        .filter(|d| d.identity == params.identity)
        .cloned()
        .collect();
    let matches = match_detections(&gt, &dets, params.iou_threshold)?;
    let curve = curve_from_matches(&matches, gt.images.len())?;
    let lamr = lamr(&curve);
    let prf = prf(&gt, &dets, params.iou_threshold, params.confidence_threshold)?;
    Ok(EvalResult {
        subset: subset.name.clone(),
        lamr: lamr.reported(),
        lamr_floor: lamr.floor,
        curve,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        tp: prf.tp,
        fp: prf.fp,
        fn_count: prf.fn_count,
        dataset_provenance: DatasetProvenance::of(dataset),
        ignored: prf.ignored,
        precision_degenerate: prf.precision_degenerate,
        iou_threshold: params.iou_threshold,
        confidence_threshold: params.confidence_threshold,
        identity: params.identity.clone(),
    })
}
