//! File formats: native dataset JSON, ECP-style per-image JSON import,
//! detection JSON-lines and ambiguity score JSON-lines.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use serde_json::Value;

use crate::ambiguity;
use crate::error::{Error, Result};
use crate::model::{
    AnnotatorAnswers, BoundingBox, Dataset, Detection, ImageRecord, Instance, ProvenanceEntry,
    TagLevel,
};

/// Identity assigned to detections that do not name one.
pub const DEFAULT_IDENTITY: &str = "pedestrian";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DatasetFormat {
    #[default]
    Native,
    Ecp,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "native" => Ok(DatasetFormat::Native),
            "ecp" => Ok(DatasetFormat::Ecp),
            other => Err(format!("unknown dataset format {other:?} (expected native|ecp)")),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::Native => "native",
            DatasetFormat::Ecp => "ecp",
        })
    }
}

/// A loaded value plus the non-fatal issues found while loading it.
#[derive(Clone, Debug)]
pub struct Loaded<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Loaded<T> {
    fn new(value: T, warnings: Vec<String>) -> Self {
        for w in &warnings {
            log::warn!("{w}");
        }
        Self { value, warnings }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Loaded<Dataset>> {
    let path = path.as_ref();
    match format {
        DatasetFormat::Native => {
            let text = read_text(path)?;
            parse_native(&text, path)
        }
        DatasetFormat::Ecp => import_ecp(path),
    }
}

/// Parses and validates a native dataset document. `path` is only used in messages.
pub fn parse_native(text: &str, path: &Path) -> Result<Loaded<Dataset>> {
    let mut dataset: Dataset = serde_json::from_str(text).map_err(|e| Error::parse(path, &e))?;
    let mut warnings = Vec::new();
    validate_dataset(&mut dataset, &mut warnings)?;
    Ok(Loaded::new(dataset, warnings))
}

/// Checks every type invariant, clamping boxes to image bounds and
/// reconciling stored scores with answer counts.
pub fn validate_dataset(dataset: &mut Dataset, warnings: &mut Vec<String>) -> Result<()> {
    let mut image_ids = HashSet::new();
    let mut instance_ids = HashSet::new();
    for image in &mut dataset.images {
        if !image_ids.insert(image.image_id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate image_id {:?}",
                image.image_id
            )));
        }
        if image.width == 0 || image.height == 0 {
            return Err(Error::Validation(format!(
                "image {:?} has zero width or height",
                image.image_id
            )));
        }
        let (w, h) = (f64::from(image.width), f64::from(image.height));
        for inst in &mut image.instances {
            if !instance_ids.insert(inst.id.clone()) {
                return Err(Error::Validation(format!("duplicate instance id {:?}", inst.id)));
            }
            if !inst.bbox.is_valid() {
                return Err(Error::Validation(format!(
                    "instance {:?}: bbox {:?} has non-positive extent",
                    inst.id,
                    <[f64; 4]>::from(inst.bbox)
                )));
            }
            let clamped = inst.bbox.clamped(w, h);
            if clamped != inst.bbox {
                if !clamped.is_valid() {
                    return Err(Error::Validation(format!(
                        "instance {:?}: bbox lies outside image {:?}",
                        inst.id, image.image_id
                    )));
                }
                warnings.push(format!(
                    "instance {:?}: bbox clamped to image bounds {}x{}",
                    inst.id, image.width, image.height
                ));
                inst.bbox = clamped;
            }
            if let Some(score) = inst.ambiguity {
                if !(0.0..=1.0).contains(&score) {
                    return Err(Error::Validation(format!(
                        "instance {:?}: ambiguity {score} outside [0,1]",
                        inst.id
                    )));
                }
            }
            if let Some(answers) = inst.answers {
                let computed = ambiguity::ambiguity(&answers)
                    .map_err(|e| Error::Validation(format!("instance {:?}: {e}", inst.id)))?
                    .value();
                if let Some(stored) = inst.ambiguity {
                    if stored != computed {
                        if (stored - computed).abs() > 1e-9 {
                            warnings.push(format!(
                                "instance {:?}: stored ambiguity {stored} disagrees with answers, recomputed as {computed}",
                                inst.id
                            ));
                        }
                        inst.ambiguity = Some(computed);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Serializes with stable key and element order; the output ends with a newline.
pub fn to_native_json(dataset: &Dataset) -> String {
    let mut text = serde_json::to_string_pretty(dataset).expect("dataset is always serializable");
    text.push('\n');
    text
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_native_json(dataset)).map_err(|e| Error::io(path, e))
}

// ECP-style import

#[derive(Deserialize)]
struct EcpFrame {
    imagewidth: u32,
    imageheight: u32,
    #[serde(default)]
    children: Vec<EcpObject>,
}

#[derive(Deserialize)]
struct EcpObject {
    identity: String,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    children: Vec<EcpObject>,
}

/// Maps one ECP tag string to a (family, level) pair.
///
/// | tag            | family     | level |
/// |----------------|------------|-------|
/// | `occluded>10`  | occlusion  | gt10  |
/// | `occluded>40`  | occlusion  | gt40  |
/// | `occluded>80`  | occlusion  | gt80  |
/// | `truncated>10` | truncation | gt10  |
/// | `truncated>40` | truncation | gt40  |
/// | `truncated>80` | truncation | gt80  |
pub fn map_ecp_tag(tag: &str) -> Option<(crate::model::TagFamily, TagLevel)> {
    use crate::model::TagFamily::*;
    Some(match tag {
        "occluded>10" => (Occlusion, TagLevel::Gt10),
        "occluded>40" => (Occlusion, TagLevel::Gt40),
        "occluded>80" => (Occlusion, TagLevel::Gt80),
        "truncated>10" => (Truncation, TagLevel::Gt10),
        "truncated>40" => (Truncation, TagLevel::Gt40),
        "truncated>80" => (Truncation, TagLevel::Gt80),
        _ => return None,
    })
}

fn ecp_instance(obj: &EcpObject, id: String) -> Instance {
    let mut inst = Instance::new(
        id,
        BoundingBox::new(obj.x0, obj.y0, obj.x1, obj.y1),
        obj.identity.clone(),
    );
    for tag in &obj.tags {
        match map_ecp_tag(tag) {
            Some((crate::model::TagFamily::Occlusion, level)) => {
                inst.occlusion = inst.occlusion.max(level)
            }
            Some((crate::model::TagFamily::Truncation, level)) => {
                inst.truncation = inst.truncation.max(level)
            }
            None => inst.raw_tags.push(tag.clone()),
        }
    }
    inst
}

fn flatten_ecp(objects: &[EcpObject], image_id: &str, out: &mut Vec<Instance>) {
    for obj in objects {
        let id = format!("{image_id}:{}", out.len());
        out.push(ecp_instance(obj, id));
        flatten_ecp(&obj.children, image_id, out);
    }
}

/// Converts one ECP frame document. Nested children (e.g. a rider's vehicle)
/// become instances of their own, in depth-first order.
pub fn parse_ecp_frame(text: &str, image_id: &str, path: &Path) -> Result<ImageRecord> {
    let frame: EcpFrame = serde_json::from_str(text).map_err(|e| Error::parse(path, &e))?;
    let mut instances = Vec::new();
    flatten_ecp(&frame.children, image_id, &mut instances);
    Ok(ImageRecord::new(image_id, frame.imagewidth, frame.imageheight).with_instances(instances))
}

/// Imports a directory of ECP frame files (or a single file). Image ids are
/// the file stems; files are read in name order.
pub fn import_ecp(path: &Path) -> Result<Loaded<Dataset>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files = Vec::new();
        for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            let p = entry.path();
            if p.extension().is_some_and(|ext| ext == "json") {
                files.push(p);
            }
        }
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut images = Vec::with_capacity(files.len());
    for file in &files {
        let stem = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let text = read_text(file)?;
        images.push(parse_ecp_frame(&text, &stem, file)?);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ecp".to_owned());
    let mut dataset = Dataset::new(name, images);
    dataset.provenance.push(
        ProvenanceEntry::new("import")
            .with("format", "ecp")
            .with("files", files.len()),
    );
    let mut warnings = Vec::new();
    validate_dataset(&mut dataset, &mut warnings)?;
    Ok(Loaded::new(dataset, warnings))
}

// Detections

const DETECTION_FIELDS: [&str; 4] = ["image_id", "bbox", "confidence", "identity"];

pub fn load_detections(path: impl AsRef<Path>) -> Result<Loaded<Vec<Detection>>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_detections(&text, path)
}

fn json_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim()))
        .filter(|(_, line)| !line.is_empty())
}

fn line_error(path: &Path, line: usize, err: &serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column: err.column(),
        message: err.to_string(),
    }
}

fn parse_bbox(value: Option<&Value>) -> Option<BoundingBox> {
    let arr = value?.as_array()?;
    if arr.len() != 4 {
        return None;
    }
    let mut v = [0.0; 4];
    for (slot, item) in v.iter_mut().zip(arr) {
        *slot = item.as_f64()?;
    }
    Some(BoundingBox::from(v))
}

/// Parses detection JSON-lines. Blank lines are skipped; unknown fields are
/// counted as warnings. Input order is preserved.
pub fn parse_detections(text: &str, path: &Path) -> Result<Loaded<Vec<Detection>>> {
    let mut detections = Vec::new();
    let mut unknown_fields = 0usize;
    for (line_no, line) in json_lines(text) {
        let obj: serde_json::Map<String, Value> =
            serde_json::from_str(line).map_err(|e| line_error(path, line_no, &e))?;
        unknown_fields += obj
            .keys()
            .filter(|k| !DETECTION_FIELDS.contains(&k.as_str()))
            .count();
        let invalid = |what: &str| Error::Validation(format!("{}:{line_no}: {what}", path.display()));
        let image_id = obj
            .get("image_id")
            .and_then(Value::as_str)
            .ok_or_else(|| invalid("missing string field \"image_id\""))?;
        let bbox = parse_bbox(obj.get("bbox"))
            .ok_or_else(|| invalid("\"bbox\" must be an array of 4 numbers"))?;
        if !bbox.is_valid() {
            return Err(invalid("bbox has non-positive extent"));
        }
        let confidence = obj
            .get("confidence")
            .and_then(Value::as_f64)
            .ok_or_else(|| invalid("missing numeric field \"confidence\""))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(invalid(&format!("confidence {confidence} outside [0,1]")));
        }
        let identity = match obj.get("identity") {
            None => DEFAULT_IDENTITY.to_owned(),
            Some(v) => v
                .as_str()
                .ok_or_else(|| invalid("\"identity\" must be a string"))?
                .to_owned(),
        };
        detections.push(Detection {
            image_id: image_id.to_owned(),
            bbox,
            confidence,
            identity,
        });
    }
    let warnings = if unknown_fields > 0 {
        vec![format!(
            "{}: ignored {unknown_fields} unknown detection field(s)",
            path.display()
        )]
    } else {
        Vec::new()
    };
    Ok(Loaded::new(detections, warnings))
}

pub fn to_detection_lines(detections: &[Detection]) -> String {
    let mut out = String::new();
    for det in detections {
        out.push_str(&serde_json::to_string(det).expect("detection is always serializable"));
        out.push('\n');
    }
    out
}

pub fn save_detections(detections: &[Detection], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_detection_lines(detections)).map_err(|e| Error::io(path, e))
}

// Score import

/// One line of a score import file.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub instance_id: String,
    pub score: ScoreSource,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScoreSource {
    Ambiguity(f64),
    Answers(AnnotatorAnswers),
}

#[derive(Deserialize)]
struct RawScoreRecord {
    instance_id: String,
    #[serde(default)]
    ambiguity: Option<f64>,
    #[serde(default)]
    answers: Option<AnnotatorAnswers>,
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_scores(&text, path)
}

pub fn parse_scores(text: &str, path: &Path) -> Result<Vec<ScoreRecord>> {
    let mut records = Vec::new();
    for (line_no, line) in json_lines(text) {
        let raw: RawScoreRecord =
            serde_json::from_str(line).map_err(|e| line_error(path, line_no, &e))?;
        let invalid = |what: String| Error::Validation(format!("{}:{line_no}: {what}", path.display()));
        let score = match (raw.ambiguity, raw.answers) {
            (Some(a), None) => {
                if !(0.0..=1.0).contains(&a) {
                    return Err(invalid(format!("ambiguity {a} outside [0,1]")));
                }
                ScoreSource::Ambiguity(a)
            }
            (None, Some(answers)) => {
                if answers.total() == 0 {
                    return Err(invalid("answer counts are all zero".to_owned()));
                }
                ScoreSource::Answers(answers)
            }
            _ => {
                return Err(invalid(
                    "exactly one of \"ambiguity\" or \"answers\" is required".to_owned(),
                ))
            }
        };
        records.push(ScoreRecord {
            instance_id: raw.instance_id,
            score,
        });
    }
    Ok(records)
}
