//! Canonical data model for ground truth and detector output.
//!
//! Everything here is a plain value type. Loading and validation live in
//! [`crate::io`]; the types themselves only enforce what serde can.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Axis-aligned box in pixel coordinates, origin at the top-left image corner.
///
/// Serialized as `[x0, y0, x1, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Finite coordinates with strictly positive width and height.
    pub fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 > self.x0
            && self.y1 > self.y0
    }

    /// Clamps the box to `[0, width] x [0, height]`.
    pub fn clamped(&self, width: f64, height: f64) -> Self {
        Self {
            x0: self.x0.clamp(0.0, width),
            y0: self.y0.clamp(0.0, height),
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
        }
    }
}

impl From<[f64; 4]> for BoundingBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

/// Answer counts to the question "is this a human being?".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatorAnswers {
    pub yes: u32,
    pub no: u32,
    /// Annotators that could not give a definite answer.
    pub unsure: u32,
}

impl AnnotatorAnswers {
    pub fn new(yes: u32, no: u32, unsure: u32) -> Self {
        Self { yes, no, unsure }
    }

    pub fn total(&self) -> u64 {
        u64::from(self.yes) + u64::from(self.no) + u64::from(self.unsure)
    }
}

/// Ordered categorical "more than X% hidden" level.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum TagLevel {
    #[default]
    None,
    Gt10,
    Gt40,
    Gt80,
}

pub type OcclusionTag = TagLevel;
pub type TruncationTag = TagLevel;

impl TagLevel {
    pub const ALL: [TagLevel; 4] = [TagLevel::None, TagLevel::Gt10, TagLevel::Gt40, TagLevel::Gt80];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TagLevel::None => "none",
            TagLevel::Gt10 => "gt10",
            TagLevel::Gt40 => "gt40",
            TagLevel::Gt80 => "gt80",
        }
    }
}

impl fmt::Display for TagLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TagLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(TagLevel::None),
            "gt10" => Ok(TagLevel::Gt10),
            "gt40" => Ok(TagLevel::Gt40),
            "gt80" => Ok(TagLevel::Gt80),
            other => Err(format!("unknown tag level {other:?}")),
        }
    }
}

/// Which tag family a level belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagFamily {
    Occlusion,
    Truncation,
}

impl TagFamily {
    pub const ALL: [TagFamily; 2] = [TagFamily::Occlusion, TagFamily::Truncation];

    pub fn level_of(self, instance: &Instance) -> TagLevel {
        match self {
            TagFamily::Occlusion => instance.occlusion,
            TagFamily::Truncation => instance.truncation,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TagFamily::Occlusion => "occlusion",
            TagFamily::Truncation => "truncation",
        }
    }
}

/// One annotated object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub bbox: BoundingBox,
    pub identity: String,
    #[serde(default)]
    pub occlusion: OcclusionTag,
    #[serde(default)]
    pub truncation: TruncationTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<AnnotatorAnswers>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambiguity: Option<f64>,
    #[serde(default)]
    pub ignore: bool,
    /// Source tags the importer could not map to a level.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw_tags: Vec<String>,
}

impl Instance {
    pub fn new(id: impl Into<String>, bbox: BoundingBox, identity: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            bbox,
            identity: identity.into(),
            occlusion: TagLevel::None,
            truncation: TagLevel::None,
            answers: None,
            ambiguity: None,
            ignore: false,
            raw_tags: Vec::new(),
        }
    }

    pub fn with_tags(mut self, occlusion: OcclusionTag, truncation: TruncationTag) -> Self {
        self.occlusion = occlusion;
        self.truncation = truncation;
        self
    }

    pub fn with_answers(mut self, answers: AnnotatorAnswers) -> Self {
        self.answers = Some(answers);
        self
    }

    pub fn with_ambiguity(mut self, ambiguity: f64) -> Self {
        self.ambiguity = Some(ambiguity);
        self
    }

    pub fn ignored(mut self) -> Self {
        self.ignore = true;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default)]
    pub instances: Vec<Instance>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            image_id: image_id.into(),
            width,
            height,
            image_path: None,
            instances: Vec::new(),
        }
    }

    pub fn with_instances(mut self, instances: Vec<Instance>) -> Self {
        self.instances = instances;
        self
    }
}

/// One step in a dataset's history, e.g. `{"op": "prune", "threshold": 0.65, ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub op: String,
    #[serde(flatten)]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl ProvenanceEntry {
    pub fn new(op: impl Into<String>) -> Self {
        Self {
            op: op.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_owned(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&serde_json::Value> {
        self.params.get(key)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub images: Vec<ImageRecord>,
    #[serde(default)]
    pub provenance: Vec<ProvenanceEntry>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<ImageRecord>) -> Self {
        Self {
            name: name.into(),
            images,
            provenance: Vec::new(),
        }
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.images.iter().flat_map(|img| img.instances.iter())
    }

    pub fn instances_mut(&mut self) -> impl Iterator<Item = &mut Instance> {
        self.images.iter_mut().flat_map(|img| img.instances.iter_mut())
    }

    pub fn instance_count(&self) -> usize {
        self.images.iter().map(|img| img.instances.len()).sum()
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|img| img.image_id == image_id)
    }

    /// Ids of instances without an ambiguity score, in dataset order.
    pub fn unscored_ids(&self) -> Vec<String> {
        self.instances()
            .filter(|inst| inst.ambiguity.is_none())
            .map(|inst| inst.id.clone())
            .collect()
    }

    /// Threshold of the most recent prune step, if any.
    pub fn pruning_threshold(&self) -> Option<f64> {
        self.provenance
            .iter()
            .rev()
            .find(|entry| entry.op == "prune")
            .and_then(|entry| entry.get("threshold"))
            .and_then(|v| v.as_f64())
    }
}

/// One detector output box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub identity: String,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, bbox: BoundingBox, confidence: f64) -> Self {
        Self {
            image_id: image_id.into(),
            bbox,
            confidence,
            identity: "pedestrian".to_owned(),
        }
    }
}
