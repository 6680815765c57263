use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ambiprune_core::eval::{
    evaluate, EvalParams, EvalResult, SubsetSpec, DEFAULT_CONFIDENCE_THRESHOLD,
    DEFAULT_IOU_THRESHOLD,
};
use ambiprune_core::prune::{prune, PruneMode};
use ambiprune_core::{BoundingBox, Dataset, Detection, Instance};
use lru::LruCache;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub const CACHE_CAPACITY: usize = 64;

fn default_subset() -> String {
    "reasonable".to_owned()
}

fn default_iou() -> f64 {
    DEFAULT_IOU_THRESHOLD
}

fn default_conf() -> f64 {
    DEFAULT_CONFIDENCE_THRESHOLD
}

/// Body of `POST /whatif`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhatIfRequest {
    pub threshold: f64,
    #[serde(default = "default_subset")]
    pub subset: String,
    #[serde(default = "default_iou")]
    pub iou: f64,
    #[serde(default = "default_conf")]
    pub conf: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct CacheKey {
    threshold: u64,
    subset: String,
    iou: u64,
    conf: u64,
}

impl From<&WhatIfRequest> for CacheKey {
    fn from(r: &WhatIfRequest) -> Self {
        Self {
            threshold: r.threshold.to_bits(),
            subset: r.subset.clone(),
            iou: r.iou.to_bits(),
            conf: r.conf.to_bits(),
        }
    }
}

/// Evaluates `detections` against `dataset` ignore-pruned at the requested threshold.
pub fn whatif(
    dataset: &Dataset,
    detections: &[Detection],
    request: &WhatIfRequest,
    identity: &str,
) -> Result<EvalResult, ApiError> {
    if !(0.0..=1.0).contains(&request.threshold) {
        return Err(ApiError::bad_request(format!(
            "threshold {} outside [0,1]",
            request.threshold
        )));
    }
    let subset = SubsetSpec::builtin(&request.subset)
        .ok_or_else(|| ApiError::bad_request(format!("unknown subset {:?}", request.subset)))?;
    let params = EvalParams {
        iou_threshold: request.iou,
        confidence_threshold: request.conf,
        identity: identity.to_owned(),
    };
    params.validate()?;
    let (pruned, _) = prune(dataset, request.threshold, PruneMode::Ignore)?;
    Ok(evaluate(&pruned, detections, &subset, &params)?)
}

/// Padded crop rectangle `(x, y, width, height)`: the box grown by 20% of
/// its size on every side, clamped to the image and snapped outward to
/// whole pixels.
pub fn crop_rect(bbox: &BoundingBox, image_width: u32, image_height: u32) -> (u32, u32, u32, u32) {
    let (w, h) = (f64::from(image_width), f64::from(image_height));
    let pad_x = 0.2 * bbox.width();
    let pad_y = 0.2 * bbox.height();
    let x0 = (bbox.x0 - pad_x).max(0.0).floor();
    let y0 = (bbox.y0 - pad_y).max(0.0).floor();
    let x1 = (bbox.x1 + pad_x).min(w).ceil();
    let y1 = (bbox.y1 + pad_y).min(h).ceil();
    let x0 = x0.min(w - 1.0).max(0.0);
    let y0 = y0.min(h - 1.0).max(0.0);
    let width = (x1 - x0).max(1.0);
    let height = (y1 - y0).max(1.0);
    (x0 as u32, y0 as u32, width as u32, height as u32)
}

/// Immutable dataset snapshot plus the what-if cache.
pub struct Session {
    dataset: Dataset,
    detections: Option<Vec<Detection>>,
    identity: String,
    image_root: PathBuf,
    /// `(image index, instance index)` of scored instances, descending ambiguity.
    ranked: Vec<(usize, usize)>,
    by_id: HashMap<String, (usize, usize)>,
    cache: Mutex<LruCache<CacheKey, Arc<String>>>,
}

impl Session {
    /// `image_root` resolves relative `image_path` entries.
    pub fn new(
        dataset: Dataset,
        detections: Option<Vec<Detection>>,
        identity: impl Into<String>,
        image_root: impl Into<PathBuf>,
    ) -> Self {
        let mut ranked = Vec::new();
        let mut by_id = HashMap::new();
        for (i, img) in dataset.images.iter().enumerate() {
            for (j, inst) in img.instances.iter().enumerate() {
                by_id.insert(inst.id.clone(), (i, j));
                if inst.ambiguity.is_some() {
                    ranked.push((i, j));
                }
            }
        }
        let alpha = |&(i, j): &(usize, usize)| dataset.images[i].instances[j].ambiguity.unwrap();
        ranked.sort_by(|a, b| alpha(b).total_cmp(&alpha(a)));
        Self {
            dataset,
            detections,
            identity: identity.into(),
            image_root: image_root.into(),
            ranked,
            by_id,
            cache: Mutex::new(LruCache::new(NonZeroUsize::new(CACHE_CAPACITY).unwrap())),
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn detections(&self) -> Option<&[Detection]> {
        self.detections.as_deref()
    }

    /// Scored instances with ambiguity in `[min, max]`, descending.
    pub fn instances_in(&self, min: f64, max: f64) -> Vec<(&str, &Instance)> {
        self.ranked
            .iter()
            .map(|&(i, j)| {
                let img = &self.dataset.images[i];
                (img.image_id.as_str(), &img.instances[j])
            })
            .filter(|(_, inst)| {
                let a = inst.ambiguity.unwrap();
                a >= min && a <= max
            })
            .collect()
    }

    pub fn has_image(&self, instance_id: &str) -> bool {
        self.by_id
            .get(instance_id)
            .is_some_and(|&(i, _)| self.dataset.images[i].image_path.is_some())
    }

    /// Serialized what-if result and whether it came from the cache.
    pub fn whatif_json(&self, request: &WhatIfRequest) -> Result<(Arc<String>, bool), ApiError> {
        let key = CacheKey::from(request);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok((Arc::clone(hit), true));
        }
        let detections = self
            .detections
            .as_deref()
            .ok_or_else(|| ApiError::conflict("no detections loaded"))?;
        let result = whatif(&self.dataset, detections, request, &self.identity)?;
        let body = Arc::new(result.to_json());
        self.cache.lock().unwrap().put(key, Arc::clone(&body));
        Ok((body, false))
    }

    /// PNG bytes of the padded crop around an instance.
    pub fn crop_png(&self, instance_id: &str) -> Result<Vec<u8>, ApiError> {
        let &(i, j) = self
            .by_id
            .get(instance_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown instance {instance_id:?}")))?;
        let img = &self.dataset.images[i];
        let rel = img
            .image_path
            .as_deref()
            .ok_or_else(|| ApiError::conflict(format!("image {:?} has no image path", img.image_id)))?;
        let path = self.resolve(rel);
        let decoded = image::open(&path).map_err(|e| {
            ApiError::conflict(format!("cannot read image {}: {e}", path.display()))
        })?;
        let (x, y, w, h) = crop_rect(&img.instances[j].bbox, decoded.width(), decoded.height());
        let crop = decoded.crop_imm(x, y, w, h);
        let mut out = std::io::Cursor::new(Vec::new());
        crop.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        Ok(out.into_inner())
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.image_root.join(p)
        }
    }
}
